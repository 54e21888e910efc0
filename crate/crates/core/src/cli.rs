//! The `eacnet` command line.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{load_image, load_manifest, Dataset, SynthSpec};
use crate::error::{Error, Result};
use crate::evaluation::{confusion, f1_accuracy, metrics_csv, subject_folds, MetricsTable};
use crate::geometry::{attention_from_landmarks, au_centers, LandmarkSet};
use crate::gradcheck;
use crate::model::{
    apply_weights, dump_feature_map, load_checkpoint, read_weights, save_checkpoint, write_atomic, FaceGeometry, Mode, Model,
    NetworkSpec, Variant,
};
use crate::tensor::Tensor;
use crate::training::{metrics_for, predict, train, EpochLog, TrainConfig};

/// Exit code for bad flags, configs, or inputs.
pub const EXIT_VALIDATION: i32 = 1;
/// Exit code for failures while running.
pub const EXIT_RUNTIME: i32 = 2;

const CHUNK: usize = 16;

#[derive(Parser, Debug)]
#[command(name = "eacnet", version, about = "Facial action unit detection with attention-enhanced and region-cropping CNNs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write the 100x100 attention map of a face as a 16-bit PGM plus a raw f32 grid.
    Attention(AttentionArgs),
    /// Print the 20 AU centers of a face as JSON.
    Centers(CentersArgs),
    /// Generate a synthetic face dataset with a manifest.
    Synth(SynthArgs),
    /// Train a network and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest and print a metrics CSV.
    Eval(EvalArgs),
    /// Run the finite-difference gradient suites.
    Gradcheck(GradcheckArgs),
    /// Dump a tiled feature map of one image.
    Featmap(FeatmapArgs),
    /// Fit a linear head on frozen network features and report held-out metrics.
    Transfer(TransferArgs),
}

#[derive(Args, Debug)]
pub struct AttentionArgs {
    /// Landmark JSON file.
    #[arg(long)]
    pub landmarks: PathBuf,
    /// Output PGM path; the raw grid goes next to it with a `.raw` extension.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CentersArgs {
    /// Landmark JSON file.
    #[arg(long)]
    pub landmarks: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// TOML generator spec; defaults apply to missing keys.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the spec's sample count.
    #[arg(long)]
    pub count: Option<usize>,
    /// Overrides the spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
pub struct TrainArgs {
    /// TOML training config; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training manifest CSV.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Network variant: fvgg, enet, or eac.
    #[arg(long)]
    pub variant: Variant,
    /// Checkpoint to start from; an E-Net checkpoint seeds the shared layers of an EAC network.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Named pretrained weights (EACW file) applied before training.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Output checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch log CSV.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Number of passes over the training data.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// SGD learning rate (>= 0).
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    /// Momentum coefficient in [0, 1).
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Samples per gradient step.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Seed for initialization, sampling, and dropout.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Channel width multiplier in (0, 1].
    #[arg(long)]
    pub width_scale: Option<f64>,
    /// Dropout rate of the penultimate layer.
    #[arg(long)]
    pub dropout_rate: Option<f64>,
    /// Comma-separated 1-based groups to keep fixed.
    #[arg(long, value_delimiter = ',')]
    pub freeze_groups: Option<Vec<usize>>,
    /// Draw minority-weighted batches (true) or shuffled passes (false).
    #[arg(long)]
    pub balance: Option<bool>,
    /// Fraction of subjects held out for per-epoch metrics.
    #[arg(long)]
    pub holdout_fraction: Option<f64>,
    /// Compute metrics every this many epochs.
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Stop once the evaluated mean F1 reaches this value.
    #[arg(long)]
    pub stop_at_f1: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Manifest CSV of the evaluation samples.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Split subjects into this many folds and report each plus the macro average.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Seed for the fold assignment.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// One suite: conv, pool, fc, sigmoid, relu, enhance, crop, upscale, lrn, loss, or model.
    #[arg(long)]
    pub module: Option<String>,
    /// Seed for the random shapes and inputs.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct FeatmapArgs {
    /// Checkpoint providing the network.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// PGM or PPM image.
    #[arg(long)]
    pub image: PathBuf,
    /// Landmark JSON; required for enet and eac checkpoints.
    #[arg(long)]
    pub landmarks: Option<PathBuf>,
    /// Activation to dump, `group1` to `group5`.
    #[arg(long, default_value = "group4")]
    pub tap: String,
    /// Output PGM path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
pub struct TransferArgs {
    /// Checkpoint whose penultimate features are used.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Manifest CSV of the images.
    #[arg(long)]
    pub manifest: PathBuf,
    /// CSV with an `image` column matching the manifest and binary `au<N>` target columns.
    #[arg(long)]
    pub labels: PathBuf,
    /// Subject folds; each is predicted by a head fitted on the others.
    #[arg(long, default_value_t = 3)]
    pub folds: usize,
    /// Ridge penalty on the head weights.
    #[arg(long, default_value_t = 1e-3)]
    pub ridge: f64,
    /// Seed for the fold assignment.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `argv`, runs the subcommand, and returns the process exit code.
pub fn run_from<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

/// Caps rayon's pool at `EAC_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("EAC_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::invalid("EAC_THREADS", format!("{v:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::invalid("EAC_THREADS", e.to_string()))
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Attention(a) => attention(&a),
        Command::Centers(a) => centers(&a),
        Command::Synth(a) => synth(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Eval(a) => eval(&a),
        Command::Gradcheck(a) => gradcheck_cmd(&a),
        Command::Featmap(a) => featmap(&a),
        Command::Transfer(a) => transfer(&a),
    }
}

/// Writes to stdout; a closed pipe ends output quietly.
fn print_out(text: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e)),
        _ => Ok(()),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => print_out(text),
    }
}

fn attention(a: &AttentionArgs) -> Result<()> {
    let map = attention_from_landmarks(&LandmarkSet::read_json(&a.landmarks)?)?;
    write_atomic(&a.out, &map.to_pgm16())?;
    write_atomic(&a.out.with_extension("raw"), &map.to_raw())
}

fn centers(a: &CentersArgs) -> Result<()> {
    let c = au_centers(&LandmarkSet::read_json(&a.landmarks)?)?;
    print_out(&(serde_json::to_string_pretty(&c).expect("centers serialize") + "\n"))
}

fn synth(a: &SynthArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            SynthSpec::from_toml(&text).map_err(|e| match e {
                Error::Invalid { reason, .. } => Error::Parse { path: p.clone(), reason },
                other => other,
            })?
        }
        None => SynthSpec::default(),
    };
    if let Some(c) = a.count {
        spec.count = c;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    spec.validate()?;
    let records = crate::data::generate_synthetic(&spec, &a.out)?;
    log::info!("wrote {} samples to {}", records.len(), a.out.display());
    Ok(())
}

/// Config file values overridden by any flag given on the command line.
fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::from_file(p)?,
        None => TrainConfig::default(),
    };
    macro_rules! flag {
        ($($f:ident),*) => { $(if let Some(v) = a.$f.clone() { cfg.$f = v; })* };
    }
    flag!(epochs, learning_rate, momentum, batch_size, seed, width_scale, balance, holdout_fraction, eval_every);
    if a.stop_at_f1.is_some() {
        cfg.stop_at_f1 = a.stop_at_f1;
    }
    if a.dropout_rate.is_some() {
        cfg.dropout_rate = a.dropout_rate;
    }
    if a.freeze_groups.is_some() {
        cfg.freeze_groups = a.freeze_groups.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Subject-disjoint split holding out `fraction` of the subjects.
fn holdout_split(subjects: &[String], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut unique: Vec<&String> = subjects.iter().collect();
    unique.sort();
    unique.dedup();
    unique.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held = ((unique.len() as f64 * fraction).round() as usize).min(unique.len().saturating_sub(1));
    let held: Vec<&String> = unique[..held].to_vec();
    (0..subjects.len()).partition(|&i| !held.contains(&&subjects[i]))
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let cfg = train_config(a)?;
    let records = load_manifest(&a.manifest)?;
    if records.is_empty() {
        return Err(Error::invalid("--manifest", "no samples to train on"));
    }
    let data = Dataset::load(&records)?;

    let mut spec = NetworkSpec::new(a.variant, cfg.width_scale);
    if let Some(d) = cfg.dropout_rate {
        spec.dropout_rate = d;
    }
    if let Some(f) = &cfg.freeze_groups {
        spec.freeze_groups = f.clone();
    }
    let mut model = Model::<f32>::build(&spec, cfg.seed)?;
    if let Some(p) = &a.weights {
        let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
        let applied = apply_weights(&mut model, &read_weights(&bytes)?)?;
        log::info!("applied {} pretrained tensors", applied.len());
    }
    if let Some(p) = &a.init {
        let init: Model<f32> = load_checkpoint(p)?;
        if init.spec().width_scale != spec.width_scale {
            return Err(Error::invalid(
                "--init",
                format!("checkpoint width_scale {} differs from {}", init.spec().width_scale, spec.width_scale),
            ));
        }
        let copied = model.seed_from(&init);
        log::info!("seeded {} tensors from {} checkpoint", copied.len(), init.spec().variant);
    }

    let (train_idx, hold_idx) = holdout_split(&data.subjects, cfg.holdout_fraction, cfg.seed);
    let (train_set, hold_set) = (data.subset(&train_idx), data.subset(&hold_idx));
    let mut log_text = EpochLog::csv_header() + "\n";
    let report = train(&mut model, &train_set, (!hold_set.is_empty()).then_some(&hold_set), &cfg, |l| {
        let row = l.csv_row();
        log::info!("epoch {} loss {:.5}{}", l.epoch, l.loss, l.metrics.as_ref().map_or(String::new(), |m| format!(" mean F1 {:.4}", m.mean_f1)));
        log_text.push_str(&row);
        log_text.push('\n');
    })?;
    if report.stopped_early {
        log::info!("reached stop_at_f1 after {} epochs", report.epochs.len());
    }
    save_checkpoint(&model, &a.out)?;
    if let Some(p) = &a.log {
        write_atomic(p, log_text.as_bytes())?;
    }
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let model: Model<f32> = load_checkpoint(&a.ckpt)?;
    let records = load_manifest(&a.manifest)?;
    if records.is_empty() {
        return Err(Error::invalid("--manifest", "no samples to evaluate"));
    }
    let data = Dataset::load(&records)?;
    let probs = predict(&model, &data)?;
    let csv = match a.folds {
        None => metrics_csv(&[("all", &metrics_for(&probs, &data.labels)?)]),
        Some(k) => {
            let folds = subject_folds(&data.subjects, k, a.seed)?;
            let mut tables = Vec::with_capacity(k);
            for f in 0..k {
                let idx: Vec<usize> = (0..data.len()).filter(|&i| folds[i] == f).collect();
                let part = Tensor::stack_batch(&idx.iter().map(|&i| probs.batch_slice(i, 1)).collect::<std::result::Result<Vec<_>, _>>()?)?;
                let labels: Vec<_> = idx.iter().map(|&i| data.labels[i]).collect();
                tables.push(metrics_for(&part, &labels)?);
            }
            let avg = MetricsTable::macro_average(&tables)?;
            let names: Vec<String> = (1..=k).map(|f| format!("fold{f}")).collect();
            let mut cols: Vec<(&str, &MetricsTable)> = names.iter().map(String::as_str).zip(&tables).collect();
            cols.push(("macro", &avg));
            metrics_csv(&cols)
        }
    };
    emit(a.out.as_deref(), &csv)
}

fn gradcheck_cmd(a: &GradcheckArgs) -> Result<()> {
    let outcomes = match &a.module {
        Some(m) => gradcheck::run_module(m, a.seed)?,
        None => gradcheck::run_all(a.seed)?,
    };
    let mut failed = 0;
    let mut text = String::new();
    for o in &outcomes {
        let status = if o.passed() { "ok" } else { "FAIL" };
        text.push_str(&format!("{status:4} {:8} {:48} {:.3e} (tol {:.0e})\n", o.module, o.case, o.max_error, o.tolerance));
        failed += usize::from(!o.passed());
    }
    text.push_str(&format!("{} checks, {failed} failed\n", outcomes.len()));
    print_out(&text)?;
    if failed > 0 {
        return Err(Error::Failed(format!("{failed} gradient checks exceed tolerance")));
    }
    Ok(())
}

fn featmap(a: &FeatmapArgs) -> Result<()> {
    let model: Model<f32> = load_checkpoint(&a.ckpt)?;
    let image: Tensor<f32> = load_image(&a.image)?;
    let faces = match (&a.landmarks, model.spec().variant.uses_attention()) {
        (Some(p), _) => Some(vec![FaceGeometry::from_landmarks(&LandmarkSet::read_json(p)?)?]),
        (None, true) => return Err(Error::invalid("--landmarks", format!("required for {} checkpoints", model.spec().variant))),
        (None, false) => None,
    };
    let shape = image.shape().to_vec();
    let batch = image.reshape(&[1, shape[0], shape[1], shape[2]])?;
    let pass = model.forward(&batch, faces.as_deref(), Mode::Eval)?;
    let tap = pass
        .tap(&a.tap)
        .ok_or_else(|| Error::invalid("--tap", format!("{:?} is not an activation of this {} network", a.tap, model.spec().variant)))?;
    let (w, h) = dump_feature_map(tap, &a.out)?;
    log::info!("wrote {w}x{h} feature map to {}", a.out.display());
    Ok(())
}

fn canonical(p: &Path) -> PathBuf {
    std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Binary targets keyed by resolved image path, with their AU ids.
fn read_label_table(path: &Path) -> Result<(Vec<u8>, HashMap<PathBuf, Vec<u8>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let bad = |row: usize, column: &str, reason: String| Error::Manifest { path: path.to_path_buf(), row, column: column.into(), reason };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| bad(1, "header", e.to_string()))?.clone();
    let image_col = headers.iter().position(|h| h == "image").ok_or_else(|| bad(1, "image", "missing column".into()))?;
    let mut aus = Vec::new();
    let mut cols = Vec::new();
    for (i, h) in headers.iter().enumerate().filter(|&(i, _)| i != image_col) {
        let au = h
            .strip_prefix("au")
            .and_then(|n| n.parse::<u8>().ok())
            .ok_or_else(|| bad(1, h, "label columns must be named au<N>".into()))?;
        aus.push(au);
        cols.push(i);
    }
    if aus.is_empty() {
        return Err(bad(1, "header", "no label columns".into()));
    }
    let mut table = HashMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| bad(e.position().map_or(0, |p| p.line() as usize), "*", e.to_string()))?;
        let row = rec.position().map_or(0, |p| p.line() as usize);
        let image = rec.get(image_col).unwrap_or("");
        let p = Path::new(image);
        let key = canonical(&if p.is_absolute() { p.to_path_buf() } else { base.join(p) });
        let mut values = Vec::with_capacity(cols.len());
        for (&c, &au) in cols.iter().zip(&aus) {
            values.push(match rec.get(c).unwrap_or("") {
                "0" => 0,
                "1" => 1,
                other => return Err(bad(row, &format!("au{au}"), format!("label {other:?} is not 0 or 1"))),
            });
        }
        if table.insert(key, values).is_some() {
            return Err(bad(row, "image", format!("duplicate image {image}")));
        }
    }
    Ok((aus, table))
}

fn transfer(a: &TransferArgs) -> Result<()> {
    let model: Model<f32> = load_checkpoint(&a.ckpt)?;
    let records = load_manifest(&a.manifest)?;
    let (aus, table) = read_label_table(&a.labels)?;
    let targets: Vec<Vec<u8>> = records
        .iter()
        .map(|r| {
            table
                .get(&canonical(&r.image_path))
                .cloned()
                .ok_or_else(|| Error::invalid("--labels", format!("no targets for {}", r.image_path.display())))
        })
        .collect::<Result<_>>()?;
    let data = Dataset::load(&records)?;
    let attention = model.spec().variant.uses_attention();
    let all: Vec<usize> = (0..data.len()).collect();
    let mut parts = Vec::new();
    for chunk in all.chunks(CHUNK) {
        let faces = data.faces_at(chunk);
        parts.push(model.extract_features(&data.batch::<f32>(chunk)?, attention.then_some(&faces[..]))?);
    }
    let features = Tensor::stack_batch(&parts)?.cast::<f64>();
    let folds = subject_folds(&data.subjects, a.folds, a.seed)?;
    let mut tables = Vec::with_capacity(a.folds);
    for f in 0..a.folds {
        let (test, fit): (Vec<usize>, Vec<usize>) = all.iter().partition(|&&i| folds[i] == f);
        let rows = |idx: &[usize]| -> Result<Tensor<f64>> {
            Ok(Tensor::stack_batch(&idx.iter().map(|&i| features.batch_slice(i, 1)).collect::<std::result::Result<Vec<_>, _>>()?)?)
        };
        let y: Vec<Vec<f64>> = fit.iter().map(|&i| targets[i].iter().map(|&v| v as f64).collect()).collect();
        let head = crate::training::fit_linear_head(&rows(&fit)?, &y, a.ridge)?;
        let preds = head.predict_binary(&rows(&test)?)?;
        let truth: Vec<&Vec<u8>> = test.iter().map(|&i| &targets[i]).collect();
        tables.push(f1_accuracy(&confusion(&preds, &truth)?, &aus)?);
    }
    let avg = MetricsTable::macro_average(&tables)?;
    let names: Vec<String> = (1..=a.folds).map(|f| format!("fold{f}")).collect();
    let mut cols: Vec<(&str, &MetricsTable)> = names.iter().map(String::as_str).zip(&tables).collect();
    cols.push(("macro", &avg));
    emit(a.out.as_deref(), &metrics_csv(&cols))
}
