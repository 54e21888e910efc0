//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run one criterion with `cargo test --test acceptance -- <n>`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use eacnet::data::{plan, subject_name, synth_face, synthesize_dataset, SynthSpec};
use eacnet::evaluation::{confusion, f1_accuracy, f1_score, subject_folds, AuCounts};
use eacnet::geometry::{attention_from_landmarks, AuCenterSet, LandmarkSet, AU_IDS, BOX_RADIUS, GRID, NUM_CENTERS};
use eacnet::gradcheck::{run_module, CheckOutcome};
use eacnet::layers::{crop_forward, lrn, LrnParams};
use eacnet::model::{read_checkpoint, render_feature_map, write_checkpoint, Mode, Model, NetworkSpec, Variant};
use eacnet::tensor::Tensor;
use eacnet::training::{
    calibrate_multipliers, fit_linear_head, loss_term, metrics_for, predict, sample_weights, synthetic_population, train,
    weighted_marginals, TrainConfig, WeightedSampler, MINORITY_COLUMNS, MULTIPLIER_RANGE,
    REFERENCE_BALANCED_RATES, REFERENCE_COUPLING, REFERENCE_RATES,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LAYER_SUITES: [&str; 10] = ["conv", "pool", "fc", "sigmoid", "relu", "enhance", "crop", "upscale", "lrn", "loss"];
const GRADIENT_BUDGET: Duration = Duration::from_secs(120);
const GOLDEN_TOL: f64 = 1e-12;
const SPOT_TOL: f64 = 1e-5;
const BALANCE_DRAWS: usize = 100_000;
const BALANCE_GAIN: f64 = 0.30;
const BALANCE_AU1: (f64, f64) = (0.39, 0.05);
const BALANCE_BUDGET: Duration = Duration::from_secs(30);
const OVERFIT_F1: f64 = 0.95;
const OVERFIT_LOSS_REDUCTION: f64 = 0.5;
const OVERFIT_BUDGET: Duration = Duration::from_secs(600);
const LOCALIZATION_MARGIN: f64 = 0.02;
const LOCALIZATION_SEEDS: [u64; 3] = [1, 2, 3];
/// Epochs per variant, chosen so both get about the same training time.
const LOCALIZATION_EPOCHS: [(Variant, usize); 2] = [(Variant::Enet, 12), (Variant::Fvgg, 30)];
const HEAD_TOL: f64 = 1e-6;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict { passed, detail: detail.into() }
}

type Criterion = fn() -> eacnet::Result<Verdict>;

fn bundled_landmarks() -> LandmarkSet {
    LandmarkSet::read_json(&Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/face.json")).unwrap()
}

fn gradient_suite() -> eacnet::Result<Verdict> {
    let start = Instant::now();
    let mut worst: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
    let mut failures: Vec<CheckOutcome> = Vec::new();
    for suite in LAYER_SUITES {
        for o in run_module(suite, 0)? {
            let e = worst.entry(o.module).or_insert((0.0, o.tolerance, 0));
            e.0 = e.0.max(o.max_error);
            e.2 += 1;
            if !o.passed() {
                failures.push(o);
            }
        }
    }
    let elapsed = start.elapsed();
    let cases_ok = LAYER_SUITES.iter().all(|s| worst.get(s).is_some_and(|w| w.2 >= 5));
    let summary: Vec<String> = worst.iter().map(|(m, (e, t, n))| format!("{m} {e:.1e}/{t:.0e} ({n})")).collect();
    let mut detail = format!("{}; {:.1?} (budget {:?})", summary.join(", "), elapsed, GRADIENT_BUDGET);
    for f in &failures {
        detail.push_str(&format!("; failed {} {}: {:.2e}", f.module, f.case, f.max_error));
    }
    Ok(verdict(failures.is_empty() && cases_ok && elapsed < GRADIENT_BUDGET, detail))
}

fn attention_golden() -> eacnet::Result<Verdict> {
    let landmarks = bundled_landmarks();
    let map = attention_from_landmarks(&landmarks)?;
    let centers = eacnet::geometry::au_centers(&landmarks)?;
    let rounded: Vec<(i64, i64)> =
        centers.centers.iter().map(|c| (c.position.0.round() as i64, c.position.1.round() as i64)).collect();
    let r = BOX_RADIUS as i64;
    let mut worst = 0.0f64;
    let mut outside = 0usize;
    for row in 0..GRID as i64 {
        for col in 0..GRID as i64 {
            let expected = rounded
                .iter()
                .filter(|&&(cx, cy)| (col - cx).abs() <= r && (row - cy).abs() <= r)
                .map(|&(cx, cy)| 1.0 - 0.095 * ((col - cx).abs() + (row - cy).abs()) as f64)
                .fold(0.0, f64::max);
            if expected == 0.0 {
                outside += 1;
            }
            worst = worst.max((map.at(row as usize, col as usize) - expected).abs());
        }
    }
    let peaks = rounded.iter().all(|&(cx, cy)| (map.at(cy as usize, cx as usize) - 1.0).abs() <= GOLDEN_TOL);
    let mut corners = 0usize;
    let mut corners_ok = true;
    for (i, &(cx, cy)) in rounded.iter().enumerate() {
        for (dx, dy) in [(-r, -r), (-r, r), (r, -r), (r, r)] {
            let (x, y) = (cx + dx, cy + dy);
            if !(0..GRID as i64).contains(&x) || !(0..GRID as i64).contains(&y) {
                continue;
            }
            let shadowed = rounded
                .iter()
                .enumerate()
                .any(|(j, &(ox, oy))| j != i && (x - ox).abs() <= r && (y - oy).abs() <= r);
            if !shadowed {
                corners += 1;
                corners_ok &= (map.at(y as usize, x as usize) - 0.05).abs() <= GOLDEN_TOL;
            }
        }
    }
    Ok(verdict(
        worst <= GOLDEN_TOL && peaks && corners_ok && corners > 0,
        format!(
            "max |map - oracle| {worst:.1e}; 20 peaks at 1.0: {peaks}; {corners} isolated corners at 0.05: {corners_ok}; {outside} cells outside all boxes are 0"
        ),
    ))
}

fn architecture() -> eacnet::Result<Verdict> {
    let face = synth_face(&SynthSpec::default(), 0)?;
    let geometry = eacnet::model::FaceGeometry::from_landmarks(&face.landmarks)?;
    let images = synthesize_dataset(&SynthSpec { count: 1, ..Default::default() })?.batch::<f32>(&[0])?;

    let enet = Model::<f32>::build(&NetworkSpec::new(Variant::Enet, 1.0 / 8.0), 5)?;
    let fvgg = Model::<f32>::build(&NetworkSpec::new(Variant::Fvgg, 1.0 / 8.0), 5)?;
    let zeroed = [geometry.without_attention()];
    let a = enet.forward(&images, Some(&zeroed), Mode::Eval)?;
    let b = fvgg.forward(&images, None, Mode::Eval)?;
    let bit_exact = a.probs.data().iter().zip(b.probs.data()).all(|(x, y)| x.to_bits() == y.to_bits());

    let eac = Model::<f32>::build(&NetworkSpec::new(Variant::Eac, 1.0), 5)?;
    let pass = eac.forward(&images, Some(std::slice::from_ref(&geometry)), Mode::Eval)?;
    let tap = pass.tap("group4").expect("group4 tap").shape().to_vec();
    let crops = crop_forward(pass.tap("group4").expect("group4 tap"), std::slice::from_ref(&geometry.centers))?;
    let regions = pass.region_caches().expect("cropping variant");
    let upscaled = regions[0].upscaled.shape().to_vec();
    let region_fc = regions[0].fc.shape().to_vec();
    let concat = pass.region_output().expect("cropping variant").shape().to_vec();
    let chain_ok = tap == [1, 512, 28, 28]
        && crops.len() == NUM_CENTERS
        && crops.iter().all(|c| c.shape() == [1, 512, 3, 3])
        && regions.len() == NUM_CENTERS
        && upscaled == [1, 512, 6, 6]
        && region_fc == [1, 150]
        && concat == [1, 3000];
    Ok(verdict(
        bit_exact && chain_ok,
        format!(
            "E-Net(zero attention) == FVGG bit-exact: {bit_exact}; s=1 chain tap {tap:?}, {} crops {:?}, upscaled {upscaled:?}, region fc {region_fc:?}, concat {concat:?}",
            crops.len(),
            crops[0].shape()
        ),
    ))
}

fn spot_values() -> eacnet::Result<Verdict> {
    let loss_cases = [(1.0, 0.5, 0.048790), (0.0, 0.5, 0.646627), (1.0, 1.0, -0.356675)];
    let loss_dev = loss_cases.iter().map(|&(l, p, v)| (loss_term(l, p) - v).abs()).fold(0.0, f64::max);

    let p = LrnParams::default();
    let one = lrn(&Tensor::<f64>::full(&[1, 1, 1, 1], 1.0), &p)?.data()[0];
    let five = lrn(&Tensor::<f64>::full(&[1, 5, 1, 1], 1.0), &p)?.data()[2];
    let oracle = |sum_sq: f64| 1.0 / (p.k + p.alpha * sum_sq).powf(p.beta);
    let lrn_dev = (one - oracle(1.0)).abs().max((five - oracle(5.0)).abs());
    let literal_dev = (one - 0.594183).abs().max((five - 0.592416).abs());

    let f1 = f1_score(&AuCounts { tp: 2, fp: 1, tn: 0, fn_: 1 });
    let f1_exact = f1 == 2.0 / 3.0;
    Ok(verdict(
        loss_dev <= SPOT_TOL && lrn_dev <= SPOT_TOL && f1_exact,
        format!(
            "loss max dev {loss_dev:.1e}; LRN {one:.6}, {five:.6} vs formula dev {lrn_dev:.1e} (printed literals differ by {literal_dev:.1e}); F1(2,1,1) == 2/3: {f1_exact}"
        ),
    ))
}

fn balancing() -> eacnet::Result<Verdict> {
    let start = Instant::now();
    let population = synthetic_population(&REFERENCE_RATES, BALANCE_DRAWS, REFERENCE_COUPLING, 7);
    let before = weighted_marginals(&population, &vec![1.0; population.len()]);
    let multipliers = calibrate_multipliers(&population, &MINORITY_COLUMNS, &REFERENCE_BALANCED_RATES, MULTIPLIER_RANGE)?;
    let in_range = MINORITY_COLUMNS.iter().all(|&c| (MULTIPLIER_RANGE.0..=MULTIPLIER_RANGE.1).contains(&multipliers[c]));
    let sampler = WeightedSampler::new(&sample_weights(&population, &multipliers))?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut counts = [0usize; 12];
    for _ in 0..BALANCE_DRAWS {
        let row = &population[sampler.draw(&mut rng)];
        for (c, &v) in counts.iter_mut().zip(row) {
            *c += v as usize;
        }
    }
    let after: Vec<f64> = counts.iter().map(|&c| c as f64 / BALANCE_DRAWS as f64).collect();
    let gains: Vec<f64> = MINORITY_COLUMNS.iter().map(|&c| after[c] / before[c] - 1.0).collect();
    let min_gain = gains.iter().copied().fold(f64::INFINITY, f64::min);
    let au1_ok = (after[0] - BALANCE_AU1.0).abs() <= BALANCE_AU1.1;
    let elapsed = start.elapsed();
    let mults: Vec<String> = MINORITY_COLUMNS.iter().map(|&c| format!("AU{} {:.2}", AU_IDS[c], multipliers[c])).collect();
    Ok(verdict(
        in_range && min_gain >= BALANCE_GAIN && au1_ok && elapsed < BALANCE_BUDGET,
        format!(
            "multipliers [{}]; AU1 {:.3} -> {:.3}; min minority gain {:+.1}%; {:.1?}",
            mults.join(", "),
            before[0],
            after[0],
            100.0 * min_gain,
            elapsed
        ),
    ))
}

fn overfit() -> eacnet::Result<Verdict> {
    let start = Instant::now();
    let data = synthesize_dataset(&SynthSpec { count: 64, seed: 1, au_probabilities: [0.5; 12], ..Default::default() })?;
    let mut spec = NetworkSpec::new(Variant::Eac, 1.0 / 8.0);
    spec.dropout_rate = 0.0;
    let mut model = Model::<f32>::build(&spec, 7)?;
    let cfg = TrainConfig {
        learning_rate: 0.005,
        batch_size: 16,
        epochs: 200,
        balance: false,
        eval_every: 5,
        stop_at_f1: Some(OVERFIT_F1),
        seed: 3,
        ..Default::default()
    };
    let report = train(&mut model, &data, None, &cfg, |_| {})?;
    let first = report.epochs.first().map_or(f64::NAN, |l| l.loss);
    let last = report.epochs.last().expect("at least one epoch");
    let f1 = last.metrics.as_ref().map_or(0.0, |m| m.mean_f1);
    let reduction = (first - last.loss) / first.abs();
    let elapsed = start.elapsed();
    Ok(verdict(
        f1 >= OVERFIT_F1 && reduction >= OVERFIT_LOSS_REDUCTION && elapsed < OVERFIT_BUDGET,
        format!(
            "train mean F1 {f1:.3} at epoch {}; loss {first:.3} -> {:.3} (reduced by {:.0}%); {:.0?}",
            last.epoch,
            last.loss,
            100.0 * reduction,
            elapsed
        ),
    ))
}

fn localization() -> eacnet::Result<Verdict> {
    let start = Instant::now();
    let mut rows = Vec::new();
    let mut baseline_ok = true;
    let mut directional_ok = true;
    for seed in LOCALIZATION_SEEDS {
        let data = synthesize_dataset(&SynthSpec { count: 600, seed, au_probabilities: [0.5; 12], ..Default::default() })?;
        let folds = subject_folds(&data.subjects, 3, seed)?;
        let (train_idx, test_idx): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| folds[i] != 0);
        let (train_set, test_set) = (data.subset(&train_idx), data.subset(&test_idx));
        let zero_acc = 1.0
            - test_set.labels.iter().flat_map(|l| l.iter()).map(|&v| v as f64).sum::<f64>()
                / (12 * test_set.len()) as f64;
        let mut scores = Vec::new();
        for (variant, epochs) in LOCALIZATION_EPOCHS {
            let mut spec = NetworkSpec::new(variant, 1.0 / 16.0);
            spec.dropout_rate = 0.0;
            let mut model = Model::<f32>::build(&spec, seed)?;
            let cfg = TrainConfig {
                learning_rate: 0.002,
                batch_size: 8,
                epochs,
                balance: false,
                eval_every: epochs,
                seed,
                ..Default::default()
            };
            train(&mut model, &train_set, None, &cfg, |_| {})?;
            let m = metrics_for(&predict(&model, &test_set)?, &test_set.labels)?;
            scores.push((m.mean_f1, m.mean_accuracy));
        }
        let ((ef, ea), (ff, fa)) = (scores[0], scores[1]);
        baseline_ok &= ef > 0.0 && ff > 0.0;
        directional_ok &= ef >= ff - LOCALIZATION_MARGIN;
        rows.push(format!("seed {seed}: E-Net F1 {ef:.3} acc {ea:.3} | FVGG F1 {ff:.3} acc {fa:.3} | zero F1 0.000 acc {zero_acc:.3}"));
    }
    println!("    localization table");
    for r in &rows {
        println!("    {r}");
    }
    Ok(verdict(
        baseline_ok,
        format!(
            "both beat the zero predictor: {baseline_ok}; E-Net >= FVGG - {LOCALIZATION_MARGIN} on every seed: {directional_ok} (reported only); {:.0?}",
            start.elapsed()
        ),
    ))
}

fn crop_oracle(f: &Tensor<f64>, centers: &[AuCenterSet]) -> Vec<Vec<f64>> {
    let [n, c, g, _] = f.dims4("oracle").unwrap();
    let place = |v: f64| ((v * g as f64 / GRID as f64).round() as i64).clamp(1, g as i64 - 2) as usize;
    (0..NUM_CENTERS)
        .map(|r| {
            let mut out = Vec::new();
            for (s, set) in centers.iter().enumerate().take(n) {
                let (x, y) = set.centers[r].position;
                let (row, col) = (place(y), place(x));
                for ch in 0..c {
                    for yy in row - 1..=row + 1 {
                        for xx in col - 1..=col + 1 {
                            out.push(f.data()[((s * c + ch) * g + yy) * g + xx]);
                        }
                    }
                }
            }
            out
        })
        .collect()
}

fn oracles() -> eacnet::Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);

    let spec = SynthSpec::default();
    let centers: Vec<AuCenterSet> =
        (0..2).map(|i| eacnet::geometry::au_centers(&synth_face(&spec, i).unwrap().landmarks)).collect::<Result<_, _>>()?;
    let f = Tensor::<f64>::from_fn(&[2, 6, 28, 28], |_| rng.gen_range(-1.0..1.0));
    let crops = crop_forward(&f, &centers)?;
    let crop_exact = crops.iter().zip(crop_oracle(&f, &centers)).all(|(c, o)| c.data() == &o[..]);

    let preds: Vec<[u8; 12]> = (0..97).map(|_| std::array::from_fn(|_| rng.gen_range(0..2))).collect();
    let labels: Vec<[u8; 12]> = (0..97).map(|_| std::array::from_fn(|_| rng.gen_range(0..2))).collect();
    let table = f1_accuracy(&confusion(&preds, &labels)?, &AU_IDS)?;
    let mut metrics_exact = true;
    for k in 0..12 {
        let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
        for (p, l) in preds.iter().zip(&labels) {
            match (p[k], l[k]) {
                (1, 1) => tp += 1,
                (1, 0) => fp += 1,
                (0, 1) => fn_ += 1,
                _ => tn += 1,
            }
        }
        let f1 = if tp + fp + fn_ == 0 { 0.0 } else { (2 * tp) as f64 / (2 * tp + fp + fn_) as f64 };
        metrics_exact &= table.f1[k] == f1 && table.accuracy[k] == (tp + tn) as f64 / preds.len() as f64;
    }

    let (m, nf, k, ridge) = (40, 7, 3, 0.3);
    let feats = Tensor::<f64>::from_fn(&[m, nf], |_| rng.gen_range(-1.0..1.0));
    let targets: Vec<Vec<f64>> = (0..m).map(|_| (0..k).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
    let head = fit_linear_head(&feats, &targets, ridge)?;
    let a = DMatrix::from_fn(m, nf + 1, |i, j| if j < nf { feats.data()[i * nf + j] } else { 1.0 });
    let y = DMatrix::from_fn(m, k, |i, j| targets[i][j]);
    let mut gram = a.transpose() * &a;
    for j in 0..nf {
        gram[(j, j)] += ridge;
    }
    let beta = gram.lu().solve(&(a.transpose() * y)).expect("regularized system is solvable");
    let stacked = head.stacked();
    let head_dev = (0..=nf)
        .flat_map(|j| (0..k).map(move |c| (j, c)))
        .map(|(j, c)| (stacked[j * k + c] - beta[(j, c)]).abs())
        .fold(0.0, f64::max);

    let model = Model::<f32>::build(&NetworkSpec::new(Variant::Eac, 1.0 / 8.0), 9)?;
    let bytes = write_checkpoint(&model);
    let back: Model<f32> = read_checkpoint(&bytes)?;
    let ckpt_exact = back.params().iter().zip(model.params()).all(|(a, b)| {
        a.name == b.name && a.value.shape() == b.value.shape() && a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits())
    }) && back.spec() == model.spec()
        && write_checkpoint(&back) == bytes;

    Ok(verdict(
        crop_exact && metrics_exact && head_dev <= HEAD_TOL && ckpt_exact,
        format!(
            "crop == slicing: {crop_exact}; metrics == recount: {metrics_exact}; linear head vs normal equations {head_dev:.1e}; checkpoint round-trip bit-exact: {ckpt_exact}"
        ),
    ))
}

fn protocol() -> eacnet::Result<Verdict> {
    let spec = SynthSpec { count: 270, ..Default::default() };
    let subjects: Vec<String> = plan(&spec).into_iter().map(|(_, s)| subject_name(s)).collect();
    let folds = subject_folds(&subjects, 3, 0)?;
    let mut fold_of: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
    for (s, &f) in subjects.iter().zip(&folds) {
        fold_of.entry(s).or_default().insert(f);
    }
    let unsplit = fold_of.values().all(|f| f.len() == 1);
    let mut per_fold = [0usize; 3];
    for f in fold_of.values() {
        per_fold[*f.iter().next().expect("non-empty")] += 1;
    }
    let tap = Tensor::<f32>::from_fn(&[512, 28, 28], |i| (i % 251) as f32);
    let (w, h, px) = render_feature_map(&tap)?;
    let size_ok = (h, w) == (896, 448) && px.len() == 896 * 448;
    Ok(verdict(
        unsplit && fold_of.len() == 27 && per_fold == [9, 9, 9] && size_ok,
        format!("{} subjects, none split: {unsplit}; subjects per fold {per_fold:?}; featmap {h}x{w}", fold_of.len()),
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, Criterion); 9] = [
        ("gradient suite", gradient_suite),
        ("attention golden map", attention_golden),
        ("architecture reduction", architecture),
        ("formula spot values", spot_values),
        ("balancing", balancing),
        ("overfit", overfit),
        ("localization", localization),
        ("oracle equivalences", oracles),
        ("protocol checks", protocol),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let v = run().unwrap_or_else(|e| verdict(false, format!("error: {e}")));
        println!("[{}] {id}. {name}: {}", if v.passed { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.passed);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
