use std::collections::HashMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{NetworkSpec, Variant, ENHANCED_GROUPS, GROUP_CONVS};
use crate::error::{Error, Result, ShapeError};
use crate::geometry::{attention_map, au_centers, AttentionMap, AuCenterSet, LandmarkSet};
use crate::layers::{
    concat_regions, crop_backward, crop_forward, enhance_backward, enhance_forward, linear, linear_backward, lrn,
    lrn_backward, region_head_backward, region_head_forward, split_regions, EnhanceParams, LrnParams, RegionHead,
    RegionHeadCache,
};
use crate::tensor::{
    conv2d, conv2d_backward, maxpool2, maxpool2_backward, relu, relu_backward, sigmoid, sigmoid_backward, PoolIndex,
    Scalar, Tensor,
};

/// Landmark-derived inputs of the attention-bearing variants for one face.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceGeometry {
    pub centers: AuCenterSet,
    pub attention: AttentionMap,
}

impl FaceGeometry {
    pub fn from_landmarks(l: &LandmarkSet) -> Result<Self> {
        let centers = au_centers(l)?;
        let attention = attention_map(&centers)?;
        Ok(Self { centers, attention })
    }

    /// Same crop centers with the attention replaced by zeros.
    pub fn without_attention(&self) -> Self {
        Self { centers: self.centers.clone(), attention: AttentionMap::zeros() }
    }
}

/// A named trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Backbone group of a convolution parameter, used for freezing.
    pub group: Option<usize>,
}

#[derive(Clone, Copy, Debug)]
struct Pair {
    weight: usize,
    bias: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    convs: Vec<Vec<Pair>>,
    /// Projection parameter for groups 3 and 4.
    enhance: [Option<usize>; 2],
    regions: Vec<[usize; 4]>,
    fc1: Pair,
    fc2: Pair,
}

/// Where a forward pass starts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// Input is the (pooled) input of the given 1-based group.
    Group(usize),
    /// Input is the backbone output consumed by the head: the pooled group-5
    /// output for VGG heads or the enhanced group-4 output for the cropping head.
    Head,
}

pub enum Mode<'a> {
    Eval,
    /// Dropout draws from the given generator.
    Train(&'a mut dyn RngCore),
}

impl Mode<'_> {
    fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

#[derive(Clone, Debug)]
struct GroupCache<T> {
    index: usize,
    input: Tensor<T>,
    acts: Vec<Tensor<T>>,
    output: Tensor<T>,
    pool: Option<PoolIndex>,
}

#[derive(Clone, Debug)]
enum HeadCache<T> {
    Vgg { input: Tensor<T> },
    Crop { input: Tensor<T>, normalized: Tensor<T>, regions: Vec<RegionHeadCache<T>>, region_out: Tensor<T> },
}

/// Activations of one forward pass, retained for backward and inspection.
#[derive(Clone, Debug)]
pub struct ForwardPass<T> {
    start: Stage,
    groups: Vec<GroupCache<T>>,
    head: HeadCache<T>,
    flat: Tensor<T>,
    fc1: Tensor<T>,
    mask: Option<Tensor<T>>,
    hidden: Tensor<T>,
    logits: Tensor<T>,
    pub probs: Tensor<T>,
    faces: Option<Vec<FaceGeometry>>,
}

impl<T: Scalar> ForwardPass<T> {
    /// Output of a group after enhancement, before pooling (`"group1"`..`"group5"`).
    pub fn tap(&self, name: &str) -> Option<&Tensor<T>> {
        let g: usize = name.strip_prefix("group")?.parse().ok()?;
        self.groups.iter().find(|c| c.index == g).map(|c| &c.output)
    }

    /// Input that a pass starting at `stage` would receive.
    pub fn stage_input(&self, stage: Stage) -> Option<&Tensor<T>> {
        match stage {
            Stage::Group(g) => self.groups.iter().find(|c| c.index == g).map(|c| &c.input),
            Stage::Head => Some(match &self.head {
                HeadCache::Vgg { input } | HeadCache::Crop { input, .. } => input,
            }),
        }
    }

    /// Post-relu activations of the penultimate fully connected layer.
    pub fn features(&self) -> &Tensor<T> {
        &self.hidden
    }

    pub fn region_output(&self) -> Option<&Tensor<T>> {
        match &self.head {
            HeadCache::Crop { region_out, .. } => Some(region_out),
            HeadCache::Vgg { .. } => None,
        }
    }

    pub fn region_caches(&self) -> Option<&[RegionHeadCache<T>]> {
        match &self.head {
            HeadCache::Crop { regions, .. } => Some(regions),
            HeadCache::Vgg { .. } => None,
        }
    }

    /// Name of the first layer, in forward order, holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<String> {
        for g in &self.groups {
            for (i, a) in g.acts.iter().enumerate() {
                if !a.all_finite() {
                    return Some(format!("g{}.conv{}", g.index, i + 1));
                }
            }
            if !g.output.all_finite() {
                return Some(format!("g{}.enhance", g.index));
            }
        }
        if let HeadCache::Crop { normalized, regions, .. } = &self.head {
            if !normalized.all_finite() {
                return Some("lrn".into());
            }
            for (r, c) in regions.iter().enumerate() {
                if !c.conv.all_finite() || !c.fc.all_finite() {
                    return Some(format!("region{r:02}"));
                }
            }
        }
        for (name, t) in [("fc1", &self.fc1), ("fc2", &self.logits), ("sigmoid", &self.probs)] {
            if !t.all_finite() {
                return Some(name.into());
            }
        }
        None
    }
}

/// Gradients aligned with [`Model::params`]; `None` for frozen or unreached parameters.
pub type Gradients<T> = Vec<Option<Tensor<T>>>;

#[derive(Clone, Debug)]
pub struct Model<T = f32> {
    spec: NetworkSpec,
    params: Vec<Param<T>>,
    layout: Layout,
    lrn: LrnParams,
}

fn name_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn he_uniform<T: Scalar>(shape: &[usize], fan_in: usize, seed: u64, name: &str) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, name));
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::from_f64(rng.gen_range(-bound..bound)))
}

impl<T: Scalar> Model<T> {
    /// Builds a freshly initialized network; parameters depend only on `(spec, seed, name)`.
    pub fn build(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let ch = spec.channels();
        let mut params: Vec<Param<T>> = Vec::new();
        let push = |params: &mut Vec<Param<T>>, name: String, value: Tensor<T>, group: Option<usize>| {
            params.push(Param { name, value, group });
            params.len() - 1
        };

        let mut convs = Vec::new();
        let mut cin = 3;
        for g in 1..=spec.variant.groups() {
            let cout = ch[g - 1];
            let mut group = Vec::new();
            for i in 1..=GROUP_CONVS[g - 1] {
                let wname = format!("g{g}.conv{i}.weight");
                let w = he_uniform(&[cout, cin, 3, 3], cin * 9, seed, &wname);
                let weight = push(&mut params, wname, w, Some(g));
                let bias = push(&mut params, format!("g{g}.conv{i}.bias"), Tensor::zeros(&[cout]), Some(g));
                group.push(Pair { weight, bias });
                cin = cout;
            }
            convs.push(group);
        }

        let mut enhance = [None, None];
        if spec.variant.uses_attention() {
            for (slot, &g) in ENHANCED_GROUPS.iter().enumerate() {
                let (gin, gout) = (ch[g - 2], ch[g - 1]);
                let name = format!("g{g}.enhance.projection");
                let w = he_uniform(&[gout, gin, 1, 1], gin, seed, &name);
                enhance[slot] = Some(push(&mut params, name, w, None));
            }
        }

        let f = spec.fc_width();
        let mut regions = Vec::new();
        let head_in = if spec.variant == Variant::Eac {
            let c = ch[3];
            let r = spec.region_width();
            for k in 0..20 {
                let cw = format!("region{k:02}.conv.weight");
                let fw = format!("region{k:02}.fc.weight");
                let cwv = he_uniform(&[c, c, 3, 3], c * 9, seed, &cw);
                let fwv = he_uniform(&[c * 16, r], c * 16, seed, &fw);
                let a = push(&mut params, cw, cwv, None);
                let b = push(&mut params, format!("region{k:02}.conv.bias"), Tensor::zeros(&[c]), None);
                let cc = push(&mut params, fw, fwv, None);
                let d = push(&mut params, format!("region{k:02}.fc.bias"), Tensor::zeros(&[r]), None);
                regions.push([a, b, cc, d]);
            }
            20 * r
        } else {
            ch[4] * 49
        };
        let w1 = he_uniform(&[head_in, f], head_in, seed, "fc1.weight");
        let fc1 = Pair {
            weight: push(&mut params, "fc1.weight".into(), w1, None),
            bias: push(&mut params, "fc1.bias".into(), Tensor::zeros(&[f]), None),
        };
        let w2 = he_uniform(&[f, spec.num_outputs], f, seed, "fc2.weight");
        let fc2 = Pair {
            weight: push(&mut params, "fc2.weight".into(), w2, None),
            bias: push(&mut params, "fc2.bias".into(), Tensor::zeros(&[spec.num_outputs]), None),
        };

        Ok(Self {
            spec: spec.clone(),
            params,
            layout: Layout { convs, enhance, regions, fc1, fc2 },
            lrn: LrnParams::default(),
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// True when the optimizer should update parameter `i`.
    pub fn is_trainable(&self, i: usize) -> bool {
        self.params[i].group.is_none_or(|g| !self.spec.is_frozen(g))
    }

    /// Replaces the spec's freezing set.
    pub fn set_frozen(&mut self, groups: Vec<usize>) -> Result<()> {
        let mut spec = self.spec.clone();
        spec.freeze_groups = groups;
        spec.validate()?;
        self.spec = spec;
        Ok(())
    }

    pub fn set_dropout(&mut self, rate: f64) -> Result<()> {
        let mut spec = self.spec.clone();
        spec.dropout_rate = rate;
        spec.validate()?;
        self.spec = spec;
        Ok(())
    }

    /// Copies every parameter of `other` whose name and shape match; returns the copied names.
    pub fn seed_from<U: Scalar>(&mut self, other: &Model<U>) -> Vec<String> {
        let source: HashMap<&str, &Tensor<U>> = other.params.iter().map(|p| (p.name.as_str(), &p.value)).collect();
        let mut copied = Vec::new();
        for p in &mut self.params {
            if let Some(src) = source.get(p.name.as_str()) {
                if src.shape() == p.value.shape() {
                    p.value = src.cast();
                    copied.push(p.name.clone());
                }
            }
        }
        copied
    }

    /// Same network at another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            spec: self.spec.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), value: p.value.cast(), group: p.group })
                .collect(),
            layout: self.layout.clone(),
            lrn: self.lrn,
        }
    }

    pub(crate) fn replace_values(&mut self, values: Vec<Tensor<T>>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::invalid("parameters", "count differs from the model"));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            if p.value.shape() != v.shape() {
                return Err(Error::ParamShape {
                    name: p.name.clone(),
                    expected: p.value.shape().to_vec(),
                    found: v.shape().to_vec(),
                });
            }
            p.value = v;
        }
        Ok(())
    }

    fn p(&self, i: usize) -> &Tensor<T> {
        &self.params[i].value
    }

    fn check_faces(&self, faces: Option<&[FaceGeometry]>, n: usize) -> Result<()> {
        if self.spec.variant.uses_attention() {
            let faces = faces.ok_or_else(|| {
                Error::invalid("landmarks", format!("variant {} needs landmarks for every sample", self.spec.variant))
            })?;
            if faces.len() != n {
                return Err(Error::invalid(
                    "landmarks",
                    format!("{} landmark sets for a batch of {n}", faces.len()),
                ));
            }
        }
        Ok(())
    }

    /// Full forward pass over `images [N,3,224,224]`.
    pub fn forward(&self, images: &Tensor<T>, faces: Option<&[FaceGeometry]>, mode: Mode<'_>) -> Result<ForwardPass<T>> {
        let s = self.spec.input_size;
        let [_, c, h, w] = images.dims4("forward")?;
        if (c, h, w) != (3, s, s) {
            return Err(ShapeError::new("forward", images.shape(), &[3, s, s], "images must be [N,3,224,224]").into());
        }
        self.forward_from(Stage::Group(1), images, faces, mode)
    }

    /// Forward pass starting at an intermediate stage.
    pub fn forward_from(
        &self,
        start: Stage,
        input: &Tensor<T>,
        faces: Option<&[FaceGeometry]>,
        mut mode: Mode<'_>,
    ) -> Result<ForwardPass<T>> {
        let [n, ..] = input.dims4("forward")?;
        self.check_faces(faces, n)?;
        let maps: Option<Vec<AttentionMap>> = faces.map(|f| f.iter().map(|g| g.attention.clone()).collect());
        let groups_total = self.spec.variant.groups();
        let first = match start {
            Stage::Group(g) if (1..=groups_total).contains(&g) => g,
            Stage::Group(g) => return Err(Error::invalid("stage", format!("group {g} not in this variant"))),
            Stage::Head => groups_total + 1,
        };

        let mut caches = Vec::new();
        let mut x = input.clone();
        for g in first..=groups_total {
            let (cache, next) = self.run_group(g, x, maps.as_deref())?;
            caches.push(cache);
            x = next;
        }

        let (head, flat) = if self.spec.variant == Variant::Eac {
            let faces = faces.expect("checked above");
            let centers: Vec<AuCenterSet> = faces.iter().map(|f| f.centers.clone()).collect();
            let normalized = lrn(&x, &self.lrn)?;
            let crops = crop_forward(&normalized, &centers)?;
            let mut outs = Vec::with_capacity(crops.len());
            let mut regions = Vec::with_capacity(crops.len());
            for (crop, idx) in crops.iter().zip(&self.layout.regions) {
                let (o, cache) = region_head_forward(crop, self.region(idx))?;
                outs.push(o);
                regions.push(cache);
            }
            let region_out = concat_regions(&outs)?;
            let flat = region_out.clone();
            (HeadCache::Crop { input: x, normalized, regions, region_out }, flat)
        } else {
            let [n, c, h, w] = x.dims4("head")?;
            let flat = x.clone().reshape(&[n, c * h * w])?;
            (HeadCache::Vgg { input: x }, flat)
        };

        let fc1 = linear(&flat, self.p(self.layout.fc1.weight), self.p(self.layout.fc1.bias))?;
        let rate = self.spec.dropout_rate;
        let mask = match &mut mode {
            Mode::Train(rng) if rate > 0.0 => {
                let keep = T::from_f64(1.0 / (1.0 - rate));
                Some(Tensor::from_fn(fc1.shape(), |_| {
                    if rng.gen::<f64>() < rate {
                        T::zero()
                    } else {
                        keep
                    }
                }))
            }
            _ => None,
        };
        let dropped = match &mask {
            Some(m) => crate::tensor::mul(&fc1, m)?,
            None => fc1.clone(),
        };
        let hidden = relu(&dropped);
        let logits = linear(&hidden, self.p(self.layout.fc2.weight), self.p(self.layout.fc2.bias))?;
        let probs = sigmoid(&logits);
        debug_assert!(mode.is_train() || mask.is_none());
        Ok(ForwardPass {
            start,
            groups: caches,
            head,
            flat,
            fc1,
            mask,
            hidden,
            logits,
            probs,
            faces: faces.map(|f| f.to_vec()),
        })
    }

    fn run_group(&self, g: usize, layer_in: Tensor<T>, maps: Option<&[AttentionMap]>) -> Result<(GroupCache<T>, Tensor<T>)> {
        let mut acts = Vec::with_capacity(GROUP_CONVS[g - 1]);
        let mut a = layer_in.clone();
        for pair in &self.layout.convs[g - 1] {
            a = relu(&conv2d(&a, self.p(pair.weight), Some(self.p(pair.bias)), 1, 1)?);
            acts.push(a.clone());
        }
        let mut output = a;
        if let Some(slot) = ENHANCED_GROUPS.iter().position(|&e| e == g) {
            if let (Some(pi), Some(maps)) = (self.layout.enhance[slot], maps) {
                output = enhance_forward(&layer_in, &output, maps, EnhanceParams::new(self.p(pi))?)?;
            }
        }
        let last_eac = self.spec.variant == Variant::Eac && g == self.spec.variant.groups();
        let (next, pool) = if last_eac {
            (output.clone(), None)
        } else {
            let (p, idx) = maxpool2(&output)?;
            (p, Some(idx))
        };
        Ok((GroupCache { index: g, input: layer_in, acts, output, pool }, next))
    }

    /// Runs the backbone on `images` up to (not including) `stage` and returns that stage's input.
    pub fn stage_input(&self, images: &Tensor<T>, faces: Option<&[FaceGeometry]>, stage: Stage) -> Result<Tensor<T>> {
        let [n, ..] = images.dims4("stage_input")?;
        self.check_faces(faces, n)?;
        let maps: Option<Vec<AttentionMap>> = faces.map(|f| f.iter().map(|g| g.attention.clone()).collect());
        let until = match stage {
            Stage::Group(g) if (1..=self.spec.variant.groups()).contains(&g) => g,
            Stage::Group(g) => return Err(Error::invalid("stage", format!("group {g} not in this variant"))),
            Stage::Head => self.spec.variant.groups() + 1,
        };
        let mut x = images.clone();
        for g in 1..until {
            x = self.run_group(g, x, maps.as_deref())?.1;
        }
        Ok(x)
    }

    /// Earliest stage holding a trainable parameter under the current freezing set.
    pub fn first_trainable_stage(&self) -> Stage {
        (1..=self.spec.variant.groups())
            .find(|&g| !self.spec.is_frozen(g) || (self.spec.variant.uses_attention() && ENHANCED_GROUPS.contains(&g)))
            .map_or(Stage::Head, Stage::Group)
    }

    fn region(&self, idx: &[usize; 4]) -> RegionHead<'_, T> {
        RegionHead {
            conv_weight: self.p(idx[0]),
            conv_bias: self.p(idx[1]),
            fc_weight: self.p(idx[2]),
            fc_bias: self.p(idx[3]),
        }
    }

    /// True when some trainable parameter sits in a group before `g` or in an earlier enhancing layer.
    fn trainable_before(&self, g: usize, first: usize) -> bool {
        (first..g).any(|k| !self.spec.is_frozen(k) || (self.spec.variant.uses_attention() && ENHANCED_GROUPS.contains(&k)))
    }

    /// Gradients of a scalar objective given `∂objective/∂probs`.
    pub fn backward(&self, pass: &ForwardPass<T>, d_probs: &Tensor<T>) -> Result<Gradients<T>> {
        let mut grads: Gradients<T> = vec![None; self.params.len()];
        let d_logits = sigmoid_backward(&pass.logits, d_probs)?;
        let fc2 = linear_backward(&pass.hidden, self.p(self.layout.fc2.weight), &d_logits)?;
        grads[self.layout.fc2.weight] = Some(fc2.weight);
        grads[self.layout.fc2.bias] = Some(fc2.bias);
        let mut d = relu_backward(&pass.hidden, &fc2.x)?;
        if let Some(m) = &pass.mask {
            d = crate::tensor::mul(&d, m)?;
        }
        let fc1 = linear_backward(&pass.flat, self.p(self.layout.fc1.weight), &d)?;
        grads[self.layout.fc1.weight] = Some(fc1.weight);
        grads[self.layout.fc1.bias] = Some(fc1.bias);

        let first = pass.groups.first().map_or(usize::MAX, |c| c.index);
        let groups_total = self.spec.variant.groups();
        let need_backbone = first <= groups_total && self.trainable_before(groups_total + 1, first);

        let mut d_x = match &pass.head {
            HeadCache::Vgg { input } => {
                if !need_backbone {
                    return Ok(grads);
                }
                fc1.x.reshape(input.shape())?
            }
            HeadCache::Crop { input, regions, .. } => {
                let blocks = split_regions(&fc1.x, regions.len())?;
                let mut d_crops = Vec::with_capacity(blocks.len());
                for ((up, cache), idx) in blocks.iter().zip(regions).zip(&self.layout.regions) {
                    let g = region_head_backward(self.region(idx), cache, up)?;
                    grads[idx[0]] = Some(g.conv_weight);
                    grads[idx[1]] = Some(g.conv_bias);
                    grads[idx[2]] = Some(g.fc_weight);
                    grads[idx[3]] = Some(g.fc_bias);
                    d_crops.push(g.crop);
                }
                if !need_backbone {
                    return Ok(grads);
                }
                let faces = pass.faces.as_ref().expect("cropping pass keeps faces");
                let centers: Vec<AuCenterSet> = faces.iter().map(|f| f.centers.clone()).collect();
                let d_norm = crop_backward(input.shape(), &centers, &d_crops)?;
                lrn_backward(input, &self.lrn, &d_norm)?
            }
        };

        let maps: Option<Vec<AttentionMap>> =
            pass.faces.as_ref().map(|f| f.iter().map(|g| g.attention.clone()).collect());
        for cache in pass.groups.iter().rev() {
            let g = cache.index;
            let mut d_out = match &cache.pool {
                Some(idx) => maxpool2_backward(idx, &d_x)?,
                None => d_x,
            };
            let need_input = self.trainable_before(g, first);
            let mut d_skip = None;
            if let Some(slot) = ENHANCED_GROUPS.iter().position(|&e| e == g) {
                if let (Some(pi), Some(maps)) = (self.layout.enhance[slot], maps.as_ref()) {
                    let eg = enhance_backward(&cache.input, maps, EnhanceParams::new(self.p(pi))?, &d_out, need_input)?;
                    grads[pi] = Some(eg.projection);
                    d_skip = eg.x;
                    d_out = eg.group_output;
                }
            }
            let frozen = self.spec.is_frozen(g);
            if frozen && !need_input {
                return Ok(grads);
            }
            let pairs = &self.layout.convs[g - 1];
            for (i, pair) in pairs.iter().enumerate().rev() {
                let act = &cache.acts[i];
                let conv_in = if i == 0 { &cache.input } else { &cache.acts[i - 1] };
                let d_pre = relu_backward(act, &d_out)?;
                let want_input = i > 0 || need_input;
                let cg = conv2d_backward(conv_in, self.p(pair.weight), true, 1, 1, &d_pre, want_input)?;
                if !frozen {
                    grads[pair.weight] = Some(cg.kernel);
                    grads[pair.bias] = cg.bias;
                }
                match cg.input {
                    Some(dx) => d_out = dx,
                    None => break,
                }
            }
            if !need_input {
                return Ok(grads);
            }
            if let Some(skip) = d_skip {
                d_out.add_assign(&skip)?;
            }
            d_x = d_out;
        }
        Ok(grads)
    }

    /// Post-relu activations of the penultimate layer, eval mode.
    pub fn extract_features(&self, images: &Tensor<T>, faces: Option<&[FaceGeometry]>) -> Result<Tensor<T>> {
        Ok(self.forward(images, faces, Mode::Eval)?.hidden)
    }

    /// Start stage of a recorded pass.
    pub fn pass_start(pass: &ForwardPass<T>) -> Stage {
        pass.start
    }
}
