//! Central-difference gradient checks for every differentiable layer and the whole model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{synth_face, SynthSpec};
use crate::error::{Error, Result};
use crate::geometry::AttentionMap;
use crate::layers::{crop_backward, crop_forward, enhance_backward, enhance_forward, linear, linear_backward, lrn, lrn_backward, EnhanceParams, LrnParams};
use crate::model::{FaceGeometry, Mode, Model, NetworkSpec, Stage, Variant};
use crate::tensor::{
    conv2d, conv2d_backward, maxpool2, maxpool2_backward, nearest_upscale2x, nearest_upscale2x_backward, relu, relu_backward,
    sigmoid, sigmoid_backward, Tensor,
};
use crate::training::{loss, loss_term, loss_term_grad, LabelVector};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-5;
pub const LOSS_TOLERANCE: f64 = 1e-7;
pub const MODEL_TOLERANCE: f64 = 1e-4;
/// Random shapes drawn per layer suite.
pub const CASES: usize = 5;

pub const MODULES: [&str; 11] = ["conv", "pool", "fc", "sigmoid", "relu", "enhance", "crop", "upscale", "lrn", "loss", "model"];

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub module: &'static str,
    /// Which tensor was checked and at what shape.
    pub case: String,
    pub max_error: f64,
    pub tolerance: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

/// Largest `|a − n| / max(|a|, |n|, 1e-8)` over all entries.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

/// Central differences of `f` at every entry of `x`.
pub fn numeric_gradient(x: &[f64], mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + STEP;
        let hi = f(&probe)?;
        probe[i] = x[i] - STEP;
        let lo = f(&probe)?;
        probe[i] = x[i];
        out.push((hi - lo) / (2.0 * STEP));
    }
    Ok(out)
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn shape_str(s: &[usize]) -> String {
    s.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

/// Compares `analytic` against central differences of `objective` around `x`.
fn compare(
    module: &'static str,
    what: &str,
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
    tolerance: f64,
    objective: impl Fn(&Tensor<f64>) -> Result<f64>,
) -> Result<CheckOutcome> {
    let shape = x.shape().to_vec();
    let numeric = numeric_gradient(x.data(), |v| objective(&Tensor::new(&shape, v.to_vec())?))?;
    Ok(CheckOutcome {
        module,
        case: format!("{what} {}", shape_str(&shape)),
        max_error: relative_error(analytic.data(), &numeric),
        tolerance,
    })
}

/// `(n, c, h, w)` within `2×3×8×8`; `even` forces even spatial extents.
fn random_dims(rng: &mut ChaCha8Rng, min_hw: usize, even: bool) -> (usize, usize, usize, usize) {
    let mut side = || {
        let v = rng.gen_range(min_hw..=8);
        if even {
            v & !1
        } else {
            v
        }
    };
    let (h, w) = (side(), side());
    (rng.gen_range(1..=2), rng.gen_range(1..=3), h, w)
}

fn random_face(rng: &mut ChaCha8Rng) -> Result<FaceGeometry> {
    let spec = SynthSpec { seed: rng.gen(), ..Default::default() };
    FaceGeometry::from_landmarks(&synth_face(&spec, rng.gen_range(0..100))?.landmarks)
}

fn random_attention(rng: &mut ChaCha8Rng) -> Result<AttentionMap> {
    AttentionMap::from_grid((0..100 * 100).map(|_| rng.gen_range(0.0..1.0)).collect())
}

fn check_conv(rng: &mut ChaCha8Rng) -> Result<Vec<CheckOutcome>> {
    let (n, cin, h, w) = random_dims(rng, 3, false);
    let cout = rng.gen_range(1..=3);
    let ksize = if rng.gen_bool(0.5) { 3 } else { 1 };
    let stride = rng.gen_range(1..=2);
    let padding = if ksize == 3 { rng.gen_range(0..=1) } else { 0 };
    let x = uniform(rng, &[n, cin, h, w]);
    let k = uniform(rng, &[cout, cin, ksize, ksize]);
    let b = uniform(rng, &[cout]);
    let out = conv2d(&x, &k, Some(&b), stride, padding)?;
    let up = uniform(rng, out.shape());
    let g = conv2d_backward(&x, &k, true, stride, padding, &up, true)?;
    let tag = format!("k{ksize} s{stride} p{padding}");
    Ok(vec![
        compare("conv", &format!("input {tag}"), &x, g.input.as_ref().expect("requested"), TOLERANCE, |v| {
            Ok(dot(&conv2d(v, &k, Some(&b), stride, padding)?, &up))
        })?,
        compare("conv", &format!("kernel {tag}"), &k, &g.kernel, TOLERANCE, |v| {
            Ok(dot(&conv2d(&x, v, Some(&b), stride, padding)?, &up))
        })?,
        compare("conv", &format!("bias {tag}"), &b, g.bias.as_ref().expect("requested"), TOLERANCE, |v| {
            Ok(dot(&conv2d(&x, &k, Some(v), stride, padding)?, &up))
        })?,
    ])
}

fn check_pool(rng: &mut ChaCha8Rng) -> Result<Vec<CheckOutcome>> {
    let (n, c, h, w) = random_dims(rng, 2, true);
    let x = uniform(rng, &[n, c, h, w]);
    let (out, index) = maxpool2(&x)?;
    let up = uniform(rng, out.shape());
    let g = maxpool2_backward(&index, &up)?;
    Ok(vec![compare("pool", "input", &x, &g, TOLERANCE, |v| Ok(dot(&maxpool2(v)?.0, &up)))?])
}

fn check_fc(rng: &mut ChaCha8Rng) -> Result<Vec<CheckOutcome>> {
    let (n, k, p) = (rng.gen_range(1..=3), rng.gen_range(1..=12), rng.gen_range(1..=8));
    let x = uniform(rng, &[n, k]);
    let wt = uniform(rng, &[k, p]);
    let b = uniform(rng, &[p]);
    let up = uniform(rng, &[n, p]);
    let g = linear_backward(&x, &wt, &up)?;
    Ok(vec![
        compare("fc", "input", &x, &g.x, TOLERANCE, |v| Ok(dot(&linear(v, &wt, &b)?, &up)))?,
        compare("fc", "weight", &wt, &g.weight, TOLERANCE, |v| Ok(dot(&linear(&x, v, &b)?, &up)))?,
        compare("fc", "bias", &b, &g.bias, TOLERANCE, |v| Ok(dot(&linear(&x, &wt, v)?, &up)))?,
    ])
}

fn check_sigmoid(rng: &mut ChaCha8Rng) -> Result<Vec<CheckOutcome>> {
    let (n, c, h, w) = random_dims(rng, 1, false);
    let x = uniform(rng, &[n, c, h, w]).map(|v| 4.0 * v);
    let up = uniform(rng, x.shape());
    let g = sigmoid_backward(&x, &up)?;
    Ok(vec![compare("sigmoid", "input", &x, &g, TOLERANCE, |v| Ok(dot(&sigmoid(v), &up)))?])
}

fn check_relu(rng: &mut ChaCha8Rng) -> Result<Vec<CheckOutcome>> {
    let (n, c, h, w) = random_dims(rng, 1, false);
    let x = uniform(rng, &[n, c, h, w]).map(|v| if v.abs() < 10.0 * STEP { v + 0.1 } else { v });
    let up = uniform(rng, x.shape());
    let g = relu_backward(&x, &up)?;
    Ok(vec![compare("relu", "input", &x, &g, TOLERANCE, |v| Ok(dot(&relu(v), &up)))?])
}

fn check_enhance(rng: &mut ChaCha8Rng) -> Result<Vec<CheckOutcome>> {
    let (n, cin, h, w) = random_dims(rng, 2, false);
    let cout = rng.gen_range(1..=3);
    let maps: Vec<AttentionMap> = (0..n).map(|_| random_attention(rng)).collect::<Result<_>>()?;
    let x = uniform(rng, &[n, cin, h, w]);
    let group = uniform(rng, &[n, cout, h, w]);
    let proj = uniform(rng, &[cout, cin, 1, 1]);
    let up = uniform(rng, group.shape());
    let g = enhance_backward(&x, &maps, EnhanceParams::new(&proj)?, &up, true)?;
    Ok(vec![
        compare("enhance", "input", &x, g.x.as_ref().expect("requested"), TOLERANCE, |v| {
            Ok(dot(&enhance_forward(v, &group, &maps, EnhanceParams::new(&proj)?)?, &up))
        })?,
        compare("enhance", "group output", &group, &g.group_output, TOLERANCE, |v| {
            Ok(dot(&enhance_forward(&x, v, &maps, EnhanceParams::new(&proj)?)?, &up))
        })?,
        compare("enhance", "projection", &proj, &g.projection, TOLERANCE, |v| {
            Ok(dot(&enhance_forward(&x, &group, &maps, EnhanceParams::new(v)?)?, &up))
        })?,
    ])
}

fn check_crop(rng: &mut ChaCha8Rng) -> Result<Vec<CheckOutcome>> {
    let (n, c, side, _) = random_dims(rng, 3, false);
    let centers: Vec<_> = (0..n).map(|_| Ok(random_face(rng)?.centers)).collect::<Result<_>>()?;
    let x = uniform(rng, &[n, c, side, side]);
    let crops = crop_forward(&x, &centers)?;
    let ups: Vec<Tensor<f64>> = crops.iter().map(|t| uniform(rng, t.shape())).collect();
    let g = crop_backward(x.shape(), &centers, &ups)?;
    Ok(vec![compare("crop", "input", &x, &g, TOLERANCE, |v| {
        Ok(crop_forward(v, &centers)?.iter().zip(&ups).map(|(a, b)| dot(a, b)).sum())
    })?])
}

fn check_upscale(rng: &mut ChaCha8Rng) -> Result<Vec<CheckOutcome>> {
    let (n, c, h, w) = random_dims(rng, 1, false);
    let x = uniform(rng, &[n, c, h, w]);
    let up = uniform(rng, &[n, c, 2 * h, 2 * w]);
    let g = nearest_upscale2x_backward(&up)?;
    Ok(vec![compare("upscale", "input", &x, &g, TOLERANCE, |v| Ok(dot(&nearest_upscale2x(v)?, &up)))?])
}

fn check_lrn(rng: &mut ChaCha8Rng) -> Result<Vec<CheckOutcome>> {
    let (n, _, h, w) = random_dims(rng, 1, false);
    let c = rng.gen_range(1..=8);
    let p = LrnParams { window: [1, 3, 5][rng.gen_range(0..3)], ..LrnParams::default() };
    let x = uniform(rng, &[n, c, h, w]).map(|v| 3.0 * v);
    let up = uniform(rng, x.shape());
    let g = lrn_backward(&x, &p, &up)?;
    Ok(vec![compare("lrn", &format!("input window {}", p.window), &x, &g, TOLERANCE, |v| Ok(dot(&lrn(v, &p)?, &up)))?])
}

fn random_labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<LabelVector> {
    (0..n).map(|_| std::array::from_fn(|_| u8::from(rng.gen_bool(0.5)))).collect()
}

fn check_loss(rng: &mut ChaCha8Rng) -> Result<Vec<CheckOutcome>> {
    let n = rng.gen_range(1..=3);
    let z = uniform(rng, &[n, 12]).map(|v| 4.0 * v);
    let labels = random_labels(rng, n);
    let (_, dp) = loss(&sigmoid(&z), &labels)?;
    let dz = sigmoid_backward(&z, &dp)?;
    Ok(vec![compare("loss", "logits", &z, &dz, LOSS_TOLERANCE, |v| Ok(loss(&sigmoid(v), &labels)?.0))?])
}

/// Loss term gradients at the interval ends and quarter points.
fn check_loss_terms() -> Result<CheckOutcome> {
    let mut worst: f64 = 0.0;
    for l in [0.0, 1.0] {
        for p in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let numeric = (loss_term(l, p + STEP) - loss_term(l, p - STEP)) / (2.0 * STEP);
            worst = worst.max(relative_error(&[loss_term_grad(l, p)], &[numeric]));
        }
    }
    Ok(CheckOutcome { module: "loss", case: "scalar terms p in {0, .25, .5, .75, 1}".into(), max_error: worst, tolerance: LOSS_TOLERANCE })
}

fn param_stage(name: &str) -> Stage {
    name.strip_prefix('g')
        .and_then(|rest| rest.split('.').next())
        .and_then(|g| g.parse().ok())
        .map_or(Stage::Head, Stage::Group)
}

/// Step used by the whole-model check.
pub const MODEL_STEP: f64 = 1e-5;
/// Relative disagreement of one-sided slopes treated as a kink at the probe point.
pub const KINK_SLOPE_JUMP: f64 = 2.0 * MODEL_TOLERANCE;
/// Largest fraction of probed coordinates allowed to straddle a relu or pooling kink.
pub const MAX_KINK_FRACTION: f64 = 0.1;

/// Whole-network check on a random `fraction` of all parameters of a small unfrozen model.
///
/// A coordinate whose central differences at `h` and `2h` disagree beyond the
/// tolerance, or whose one-sided slopes jump, straddles a kink and is skipped;
/// each outcome reports how many were.
pub fn check_model(variant: Variant, seed: u64, fraction: f64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = NetworkSpec::new(variant, 1.0 / 16.0);
    spec.freeze_groups.clear();
    spec.dropout_rate = 0.25;
    let mut model = Model::<f64>::build(&spec, seed)?;
    let faces = [random_face(&mut rng)?];
    let images = Tensor::<f64>::from_fn(&[1, 3, spec.input_size, spec.input_size], |_| rng.gen_range(0.0..1.0));
    let labels = random_labels(&mut rng, 1);
    let faces_arg = variant.uses_attention().then_some(&faces[..]);
    let dropout_seed: u64 = rng.gen();

    let objective = |model: &Model<f64>, stage: Stage, input: &Tensor<f64>| -> Result<f64> {
        let mut drop = ChaCha8Rng::seed_from_u64(dropout_seed);
        let pass = model.forward_from(stage, input, faces_arg, Mode::Train(&mut drop))?;
        Ok(loss(&pass.probs, &labels)?.0)
    };
    let mut drop = ChaCha8Rng::seed_from_u64(dropout_seed);
    let pass = model.forward(&images, faces_arg, Mode::Train(&mut drop))?;
    let (_, dp) = loss(&pass.probs, &labels)?;
    let grads = model.backward(&pass, &dp)?;

    let total = model.param_count();
    let picks = ((total as f64 * fraction).ceil() as usize).clamp(1, total);
    let mut flat: Vec<usize> = rand::seq::index::sample(&mut rng, total, picks).into_vec();
    flat.sort_unstable();
    let mut per_param: Vec<Vec<usize>> = vec![Vec::new(); model.params().len()];
    let mut offset = 0;
    let mut cursor = flat.iter().peekable();
    for (i, p) in model.params().iter().enumerate() {
        let end = offset + p.value.len();
        while let Some(&&f) = cursor.peek() {
            if f >= end {
                break;
            }
            per_param[i].push(f - offset);
            cursor.next();
        }
        offset = end;
    }

    let mut outcomes = Vec::new();
    let mut kinks_total = 0;
    for (i, idx) in per_param.iter().enumerate().filter(|(_, idx)| !idx.is_empty()) {
        let name = model.params()[i].name.clone();
        let analytic = grads[i].as_ref().ok_or_else(|| Error::invalid("gradcheck", format!("{name}: no gradient")))?;
        let stage = param_stage(&name);
        let input = model.stage_input(&images, faces_arg, stage)?;
        let mut a = Vec::with_capacity(idx.len());
        let mut num = Vec::with_capacity(idx.len());
        let mut kinks = 0;
        for &j in idx {
            let orig = model.params()[i].value.data()[j];
            let mut at = |delta: f64| -> Result<f64> {
                model.params_mut()[i].value.data_mut()[j] = orig + delta;
                let v = objective(&model, stage, &input);
                model.params_mut()[i].value.data_mut()[j] = orig;
                v
            };
            let h = MODEL_STEP;
            let (f0, fp, fm, fp2, fm2) = (at(0.0)?, at(h)?, at(-h)?, at(2.0 * h)?, at(-2.0 * h)?);
            let fine = (fp - fm) / (2.0 * h);
            let coarse = (fp2 - fm2) / (4.0 * h);
            let one_sided = relative_error(&[(fp - f0) / h], &[(f0 - fm) / h]);
            if relative_error(&[fine], &[coarse]) > MODEL_TOLERANCE || one_sided > KINK_SLOPE_JUMP {
                kinks += 1;
                continue;
            }
            a.push(analytic.data()[j]);
            num.push(fine);
        }
        kinks_total += kinks;
        outcomes.push(CheckOutcome {
            module: "model",
            case: format!("{variant} {name} ({} probed, {kinks} at kinks)", idx.len()),
            max_error: relative_error(&a, &num),
            tolerance: MODEL_TOLERANCE,
        });
    }
    outcomes.push(CheckOutcome {
        module: "model",
        case: format!("{variant} fraction of {picks} probes at kinks"),
        max_error: kinks_total as f64 / picks as f64,
        tolerance: MAX_KINK_FRACTION,
    });
    Ok(outcomes)
}

/// Runs one named suite; layer suites draw [`CASES`] random shapes.
pub fn run_module(name: &str, seed: u64) -> Result<Vec<CheckOutcome>> {
    let suite: fn(&mut ChaCha8Rng) -> Result<Vec<CheckOutcome>> = match name {
        "conv" => check_conv,
        "pool" => check_pool,
        "fc" => check_fc,
        "sigmoid" => check_sigmoid,
        "relu" => check_relu,
        "enhance" => check_enhance,
        "crop" => check_crop,
        "upscale" => check_upscale,
        "lrn" => check_lrn,
        "loss" => check_loss,
        "model" => {
            let mut out = Vec::new();
            for v in [Variant::Fvgg, Variant::Enet, Variant::Eac] {
                out.extend(check_model(v, seed, 0.01)?);
            }
            return Ok(out);
        }
        other => return Err(Error::invalid("module", format!("unknown gradcheck module {other:?} ({})", MODULES.join("|")))),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name.bytes().fold(0u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64)));
    let mut out = Vec::new();
    for _ in 0..CASES {
        out.extend(suite(&mut rng)?);
    }
    if name == "loss" {
        out.push(check_loss_terms()?);
    }
    Ok(out)
}

pub fn run_all(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for m in MODULES {
        out.extend(run_module(m, seed)?);
    }
    Ok(out)
}
