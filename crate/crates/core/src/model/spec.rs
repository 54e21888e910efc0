use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Convolution counts of the five VGG groups.
pub const GROUP_CONVS: [usize; 5] = [2, 2, 4, 4, 4];
/// Full-width channel counts of the five groups.
pub const GROUP_CHANNELS: [usize; 5] = [64, 128, 256, 512, 512];
pub const FC_WIDTH: usize = 2048;
pub const REGION_WIDTH: usize = 150;
pub const INPUT_SIZE: usize = 224;
pub const NUM_OUTPUTS: usize = 12;
/// Groups whose outputs are fused with an attention-modulated skip.
pub const ENHANCED_GROUPS: [usize; 2] = [3, 4];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Fine-tuned VGG baseline.
    Fvgg,
    /// VGG with enhancing layers on groups 3 and 4.
    Enet,
    /// Enhancing plus cropping layers.
    Eac,
}

impl Variant {
    pub fn code(self) -> u8 {
        match self {
            Variant::Fvgg => 0,
            Variant::Enet => 1,
            Variant::Eac => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Variant::Fvgg),
            1 => Some(Variant::Enet),
            2 => Some(Variant::Eac),
            _ => None,
        }
    }

    pub fn uses_attention(self) -> bool {
        !matches!(self, Variant::Fvgg)
    }

    /// Groups kept fixed during training unless configured otherwise.
    pub fn default_frozen(self) -> Vec<usize> {
        match self {
            Variant::Fvgg => vec![1, 2, 3],
            Variant::Enet | Variant::Eac => vec![1, 2],
        }
    }

    /// Number of backbone groups the variant evaluates.
    pub fn groups(self) -> usize {
        match self {
            Variant::Eac => 4,
            _ => 5,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Fvgg => "fvgg",
            Variant::Enet => "enet",
            Variant::Eac => "eac",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fvgg" => Ok(Variant::Fvgg),
            "enet" => Ok(Variant::Enet),
            "eac" => Ok(Variant::Eac),
            _ => Err(Error::invalid("variant", format!("unknown variant {s:?} (fvgg|enet|eac)"))),
        }
    }
}

/// Declarative description of a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub variant: Variant,
    pub width_scale: f64,
    pub input_size: usize,
    pub num_outputs: usize,
    pub freeze_groups: Vec<usize>,
    pub dropout_rate: f64,
}

impl NetworkSpec {
    pub fn new(variant: Variant, width_scale: f64) -> Self {
        Self {
            variant,
            width_scale,
            input_size: INPUT_SIZE,
            num_outputs: NUM_OUTPUTS,
            freeze_groups: variant.default_frozen(),
            dropout_rate: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.width_scale > 0.0 && self.width_scale <= 1.0) {
            problems.push(format!("width_scale {} not in (0, 1]", self.width_scale));
        }
        if self.input_size != INPUT_SIZE {
            problems.push(format!("input_size {} must be {INPUT_SIZE}", self.input_size));
        }
        if self.num_outputs != NUM_OUTPUTS {
            problems.push(format!("num_outputs {} must be {NUM_OUTPUTS}", self.num_outputs));
        }
        if let Some(g) = self.freeze_groups.iter().find(|g| !(1..=5).contains(*g)) {
            problems.push(format!("freeze_groups entry {g} not in 1..=5"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            problems.push(format!("dropout_rate {} not in [0, 1)", self.dropout_rate));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid("network spec", problems.join("; ")))
        }
    }

    pub fn channels(&self) -> [usize; 5] {
        GROUP_CHANNELS.map(|c| ((self.width_scale * c as f64).round() as usize).max(1))
    }

    pub fn fc_width(&self) -> usize {
        ((self.width_scale * FC_WIDTH as f64).round() as usize).max(8)
    }

    pub fn region_width(&self) -> usize {
        ((self.width_scale * REGION_WIDTH as f64).round() as usize).max(8)
    }

    pub fn is_frozen(&self, group: usize) -> bool {
        self.freeze_groups.contains(&group)
    }

    /// Spatial extent of group `g` (1-based) for the fixed input size.
    pub fn group_resolution(&self, g: usize) -> usize {
        self.input_size >> (g - 1)
    }

    pub fn freeze_mask(&self) -> u8 {
        self.freeze_groups.iter().fold(0, |m, g| m | (1 << (g - 1)))
    }

    pub fn freeze_from_mask(mask: u8) -> Vec<usize> {
        (1..=5).filter(|g| mask & (1 << (g - 1)) != 0).collect()
    }
}

/// Closed-form parameter count of the network described by `spec`.
///
/// Convolutions: `Σ cin·cout·9 + cout` per layer over the evaluated groups.
/// Enhancing layers: `C(g-1)·C(g)` for g = 3, 4. VGG head: `C5·49·F + F` and
/// `F·12 + 12`. Cropping head: 20 regions of `C4·C4·9 + C4 + 16·C4·R + R`,
/// then `20R·F + F` and `F·12 + 12`.
pub fn param_count(spec: &NetworkSpec) -> usize {
    let ch = spec.channels();
    let f = spec.fc_width();
    let mut total = 0;
    let mut cin = 3;
    for g in 0..spec.variant.groups() {
        for _ in 0..GROUP_CONVS[g] {
            total += cin * ch[g] * 9 + ch[g];
            cin = ch[g];
        }
    }
    if spec.variant.uses_attention() {
        total += ch[1] * ch[2] + ch[2] * ch[3];
    }
    let head_in = match spec.variant {
        Variant::Eac => {
            let r = spec.region_width();
            total += 20 * (ch[3] * ch[3] * 9 + ch[3] + 16 * ch[3] * r + r);
            20 * r
        }
        _ => ch[4] * 49,
    };
    total + head_in * f + f + f * spec.num_outputs + spec.num_outputs
}
