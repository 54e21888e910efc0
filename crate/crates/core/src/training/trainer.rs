use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::loss::{loss, LabelVector};
use super::optim::Momentum;
use super::sampling::{sample_weights, WeightedSampler};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::{confusion, f1_accuracy, MetricsTable};
use crate::geometry::AU_IDS;
use crate::model::{FaceGeometry, Mode, Model, Stage};
use crate::tensor::{scale, Scalar, Tensor};

const EVAL_CHUNK: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-sample loss over the epoch's draws.
    pub loss: f64,
    pub metrics: Option<MetricsTable>,
}

impl EpochLog {
    pub fn csv_header() -> String {
        let mut h = String::from("epoch,loss,mean_f1,mean_acc");
        for au in AU_IDS {
            h.push_str(&format!(",f1_au{au}"));
        }
        for au in AU_IDS {
            h.push_str(&format!(",acc_au{au}"));
        }
        h
    }

    pub fn csv_row(&self) -> String {
        let mut row = format!("{},{:.6}", self.epoch, self.loss);
        match &self.metrics {
            Some(m) => {
                row.push_str(&format!(",{:.6},{:.6}", m.mean_f1, m.mean_accuracy));
                for v in m.f1.iter().chain(&m.accuracy) {
                    row.push_str(&format!(",{v:.6}"));
                }
            }
            None => row.push_str(&",".repeat(2 + 2 * AU_IDS.len())),
        }
        row
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub stopped_early: bool,
}

/// Backbone activations feeding the first trainable stage, computed once.
struct StageCache<T> {
    stage: Stage,
    inputs: Vec<Tensor<T>>,
    faces: Option<Vec<FaceGeometry>>,
}

impl<T: Scalar> StageCache<T> {
    fn build(model: &Model<T>, data: &Dataset, stage: Stage) -> Result<Self> {
        let attention = model.spec().variant.uses_attention();
        let mut inputs = Vec::with_capacity(data.len());
        let all: Vec<usize> = (0..data.len()).collect();
        for chunk in all.chunks(EVAL_CHUNK) {
            let images = data.batch::<T>(chunk)?;
            let faces = data.faces_at(chunk);
            let x = model.stage_input(&images, attention.then_some(&faces[..]), stage)?;
            let [n, ..] = x.dims4("stage cache")?;
            for i in 0..n {
                inputs.push(x.batch_slice(i, 1)?);
            }
        }
        Ok(Self { stage, inputs, faces: attention.then(|| data.faces.clone()) })
    }

    fn batch(&self, idx: &[usize]) -> Result<(Tensor<T>, Option<Vec<FaceGeometry>>)> {
        let parts: Vec<Tensor<T>> = idx.iter().map(|&i| self.inputs[i].clone()).collect();
        let faces = self.faces.as_ref().map(|f| idx.iter().map(|&i| f[i].clone()).collect());
        Ok((Tensor::stack_batch(&parts)?, faces))
    }
}

/// Probabilities `[N, 12]` for every sample, eval mode.
pub fn predict<T: Scalar>(model: &Model<T>, data: &Dataset) -> Result<Tensor<T>> {
    let attention = model.spec().variant.uses_attention();
    let all: Vec<usize> = (0..data.len()).collect();
    let mut parts = Vec::new();
    for chunk in all.chunks(EVAL_CHUNK) {
        let faces = data.faces_at(chunk);
        let pass = model.forward(&data.batch::<T>(chunk)?, attention.then_some(&faces[..]), Mode::Eval)?;
        parts.push(pass.probs);
    }
    Ok(Tensor::stack_batch(&parts)?)
}

/// Thresholds probabilities at 0.5.
pub fn binarize<T: Scalar>(probs: &Tensor<T>) -> Vec<Vec<u8>> {
    let k = probs.shape()[1];
    probs.data().chunks(k).map(|r| r.iter().map(|v| u8::from(v.as_f64() >= 0.5)).collect()).collect()
}

pub fn metrics_for<T: Scalar>(probs: &Tensor<T>, labels: &[LabelVector]) -> Result<MetricsTable> {
    f1_accuracy(&confusion(&binarize(probs), labels)?, &AU_IDS)
}

fn cached_metrics<T: Scalar>(model: &Model<T>, cache: &StageCache<T>, labels: &[LabelVector]) -> Result<MetricsTable> {
    let all: Vec<usize> = (0..cache.inputs.len()).collect();
    let mut parts = Vec::new();
    for chunk in all.chunks(EVAL_CHUNK) {
        let (x, faces) = cache.batch(chunk)?;
        parts.push(model.forward_from(cache.stage, &x, faces.as_deref(), Mode::Eval)?.probs);
    }
    metrics_for(&Tensor::stack_batch(&parts)?, labels)
}

/// Trains `model` in place. Metrics are computed on `eval_set`, or on the
/// training data when it is `None`; `on_epoch` sees every epoch log.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    data: &Dataset,
    eval_set: Option<&Dataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training data", "dataset is empty"));
    }
    let stage = model.first_trainable_stage();
    let cache = StageCache::build(model, data, stage)?;
    let eval_cache = match eval_set {
        Some(e) if !e.is_empty() => Some((StageCache::build(model, e, stage)?, &e.labels)),
        _ => None,
    };

    let mut sample_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);
    let sampler = WeightedSampler::new(&sample_weights(&data.labels, &cfg.minority_multipliers))?;
    let mut optim = Momentum::new(model);
    let n = data.len();
    let steps = n.div_ceil(cfg.batch_size);
    let mut report = TrainReport::default();

    for epoch in 1..=cfg.epochs {
        let order: Vec<usize> = if cfg.balance {
            (0..steps * cfg.batch_size).map(|_| sampler.draw(&mut sample_rng)).collect()
        } else {
            let mut o: Vec<usize> = (0..n).collect();
            o.shuffle(&mut sample_rng);
            o
        };
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let (x, faces) = cache.batch(idx)?;
            let pass = model.forward_from(stage, &x, faces.as_deref(), Mode::Train(&mut dropout_rng))?;
            let labels: Vec<LabelVector> = idx.iter().map(|&i| data.labels[i]).collect();
            let non_finite = || Error::NonFinite {
                epoch,
                layer: pass.first_non_finite().unwrap_or_else(|| "loss".into()),
            };
            if !pass.probs.all_finite() {
                return Err(non_finite());
            }
            let (value, d_probs) = loss(&pass.probs, &labels)?;
            if !value.is_finite() {
                return Err(non_finite());
            }
            total += value;
            let d_probs = scale(&d_probs, T::from_f64(1.0 / idx.len() as f64));
            let grads = model.backward(&pass, &d_probs)?;
            optim.step(model, &grads, cfg.learning_rate, cfg.momentum)?;
        }
        let metrics = if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            Some(match &eval_cache {
                Some((c, labels)) => cached_metrics(model, c, labels)?,
                None => cached_metrics(model, &cache, &data.labels)?,
            })
        } else {
            None
        };
        let log = EpochLog { epoch, loss: total / order.len() as f64, metrics };
        on_epoch(&log);
        let stop = matches!((&log.metrics, cfg.stop_at_f1), (Some(m), Some(t)) if m.mean_f1 >= t);
        report.epochs.push(log);
        if stop {
            report.stopped_early = epoch < cfg.epochs;
            break;
        }
    }
    Ok(report)
}
