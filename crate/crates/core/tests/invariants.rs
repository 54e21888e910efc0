use proptest::prelude::*;

use eacnet::data::{plan, synth_face, SynthSpec};
use eacnet::evaluation::{confusion, f1_accuracy, f1_score, AuCounts};
use eacnet::geometry::{
    attention_map, au_centers, map_center_to_grid, AuCenterSet, LandmarkSet, AU_IDS, CROP_WINDOW, GRID, NUM_CENTERS,
};
use eacnet::layers::{
    crop_backward, crop_forward, enhance_forward, lrn, region_head_forward, EnhanceParams, LrnParams, RegionHead,
};
use eacnet::model::{Mode, Model, NetworkSpec, Variant};
use eacnet::tensor::{bilinear_resize, conv2d, maxpool2, maxpool2_backward, Tensor};
use eacnet::training::{loss_term_grad, sample_weights, synthetic_population, WeightedSampler};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tensor(shape: Vec<usize>) -> impl Strategy<Value = Tensor<f64>> {
    let len = shape.iter().product::<usize>();
    prop::collection::vec(-1.0f64..1.0, len).prop_map(move |d| Tensor::new(&shape, d).unwrap())
}

fn dims(max_hw: usize) -> impl Strategy<Value = Vec<usize>> {
    (1usize..=2, 1usize..=3, 1usize..=max_hw, 1usize..=max_hw).prop_map(|(n, c, h, w)| vec![n, c, h, w])
}

fn face(seed: u64, index: usize) -> LandmarkSet {
    synth_face(&SynthSpec { seed, ..Default::default() }, index).unwrap().landmarks
}

fn centers(seed: u64, index: usize) -> AuCenterSet {
    au_centers(&face(seed, index)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn identity_pointwise_conv_is_exact(x in dims(8).prop_flat_map(tensor)) {
        let c = x.shape()[1];
        let k = Tensor::from_fn(&[c, c, 1, 1], |i| if i / c == i % c { 1.0 } else { 0.0 });
        let y = conv2d(&x, &k, None, 1, 0).unwrap();
        prop_assert_eq!(y.data(), x.data());
    }

    #[test]
    fn pool_gradient_goes_to_argmax_only(x in dims(4).prop_map(|d| vec![d[0], d[1], 2 * d[2], 2 * d[3]]).prop_flat_map(tensor), seed in any::<u64>()) {
        let (out, idx) = maxpool2(&x).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let up: Tensor<f64> = Tensor::from_fn(out.shape(), |_| rand::Rng::gen_range(&mut rng, -1.0..1.0));
        let g = maxpool2_backward(&idx, &up).unwrap();
        prop_assert!((g.sum() - up.sum()).abs() < 1e-12);
        for (i, &v) in g.data().iter().enumerate() {
            if v != 0.0 {
                prop_assert!(idx.positions().contains(&i));
            }
        }
        for (&p, &o) in idx.positions().iter().zip(out.data()) {
            prop_assert_eq!(x.data()[p], o);
        }
    }

    #[test]
    fn bilinear_stays_within_bounds(
        h in 1usize..8, w in 1usize..8, oh in 1usize..20, ow in 1usize..20,
        data in prop::collection::vec(-5.0f64..5.0, 64),
    ) {
        let map = Tensor::new(&[h, w], data[..h * w].to_vec()).unwrap();
        let (lo, hi) = map.data().iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let r = bilinear_resize(&map, (oh, ow)).unwrap();
        prop_assert!(r.data().iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
    }

    #[test]
    fn attention_values_are_zero_or_in_range(seed in 0u64..1000, index in 0usize..50) {
        let map = attention_map(&centers(seed, index)).unwrap();
        prop_assert!(map.grid().iter().all(|&v| v == 0.0 || (0.05 - 1e-12..=1.0).contains(&v)));
    }

    #[test]
    fn attention_ignores_center_order(seed in 0u64..1000, index in 0usize..50, rot in 1usize..NUM_CENTERS) {
        let c = centers(seed, index);
        let mut shuffled = c.clone();
        shuffled.centers.rotate_left(rot);
        shuffled.centers.swap(0, NUM_CENTERS - 1);
        prop_assert_eq!(attention_map(&c).unwrap(), attention_map(&shuffled).unwrap());
    }

    #[test]
    fn centers_translate_with_landmarks(seed in 0u64..1000, index in 0usize..50, fx in 0.0f64..1.0, fy in 0.0f64..1.0) {
        let l = face(seed, index);
        let (w, h) = l.image_size();
        let pts = l.points();
        let (x0, x1) = pts.iter().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.0), b.max(p.0)));
        let (y0, y1) = pts.iter().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.1), b.max(p.1)));
        let dx = -x0 + fx * (w as f64 - 1.0 - x1 + x0);
        let dy = -y0 + fy * (h as f64 - 1.0 - y1 + y0);
        let moved = LandmarkSet::new(pts.iter().map(|&(x, y)| (x + dx, y + dy)).collect(), w, h).unwrap();
        let (a, b) = (au_centers(&l).unwrap(), au_centers(&moved).unwrap());
        let (sx, sy) = (dx * GRID as f64 / w as f64, dy * GRID as f64 / h as f64);
        let edge = |v: f64| v <= 0.0 || v >= (GRID - 1) as f64;
        for (p, q) in a.centers.iter().zip(&b.centers) {
            let (p, q) = (p.position, q.position);
            if edge(p.0) || edge(p.1) || edge(q.0) || edge(q.1) {
                continue;
            }
            prop_assert!((q.0.round() - p.0.round() - sx).abs() <= 1.0);
            prop_assert!((q.1.round() - p.1.round() - sy).abs() <= 1.0);
        }
    }

    #[test]
    fn crop_windows_fit_the_grid(x in 0.0f64..100.0, y in 0.0f64..100.0, grid in CROP_WINDOW..64) {
        let (row, col) = map_center_to_grid((x, y), grid, CROP_WINDOW);
        prop_assert!(row >= 1 && col >= 1 && row + 1 < grid && col + 1 < grid);
    }

    #[test]
    fn zero_attention_enhance_is_bit_identical(x in dims(6).prop_flat_map(tensor), seed in any::<u64>()) {
        let [n, c, h, w] = x.dims4("t").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Tensor::from_fn(&[n, 4, h, w], |_| rand::Rng::gen_range(&mut rng, -1.0..1.0));
        let p = Tensor::from_fn(&[4, c, 1, 1], |_| rand::Rng::gen_range(&mut rng, -1.0..1.0));
        let maps = vec![eacnet::geometry::AttentionMap::zeros(); n];
        let out = enhance_forward(&x, &g, &maps, EnhanceParams::new(&p).unwrap()).unwrap();
        prop_assert!(out.data().iter().zip(g.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn lrn_never_amplifies(x in dims(5).prop_flat_map(tensor), window in prop::sample::select(vec![1usize, 3, 5])) {
        let p = LrnParams { window, ..Default::default() };
        let y = lrn(&x, &p).unwrap();
        let bound = p.k.powf(p.beta);
        prop_assert!(y.data().iter().zip(x.data()).all(|(a, b)| a.abs() <= b.abs() / bound + 1e-15));
    }

    #[test]
    fn crop_scatter_conserves_mass(seed in 0u64..500, n in 1usize..3, grid in 3usize..16) {
        let cs: Vec<AuCenterSet> = (0..n).map(|i| centers(seed, i)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = [n, 2, grid, grid];
        let f = Tensor::<f64>::from_fn(&shape, |_| rand::Rng::gen_range(&mut rng, -1.0..1.0));
        let crops = crop_forward(&f, &cs).unwrap();
        let ups: Vec<Tensor<f64>> = crops.iter().map(|c| Tensor::from_fn(c.shape(), |_| rand::Rng::gen_range(&mut rng, -1.0..1.0))).collect();
        let g = crop_backward(&shape, &cs, &ups).unwrap();
        let total: f64 = ups.iter().map(|u| u.sum()).sum();
        prop_assert!((g.sum() - total).abs() < 1e-10);
    }

    #[test]
    fn loss_is_monotone_in_the_prediction(p in 0.0f64..=1.0) {
        prop_assert!(loss_term_grad(1.0, p) < 0.0);
        prop_assert!(loss_term_grad(0.0, p) > 0.0);
    }

    #[test]
    fn metrics_match_recount_and_ignore_true_negatives(
        rows in prop::collection::vec((prop::array::uniform12(0u8..2), prop::array::uniform12(0u8..2)), 1..60),
        extra_tn in 0usize..50,
    ) {
        let (preds, labels): (Vec<[u8; 12]>, Vec<[u8; 12]>) = rows.into_iter().unzip();
        let c = confusion(&preds, &labels).unwrap();
        let t = f1_accuracy(&c, &AU_IDS).unwrap();
        for (k, counts) in c.per_au.iter().enumerate() {
            let tp = preds.iter().zip(&labels).filter(|(p, l)| p[k] == 1 && l[k] == 1).count();
            let fp = preds.iter().zip(&labels).filter(|(p, l)| p[k] == 1 && l[k] == 0).count();
            let fn_ = preds.iter().zip(&labels).filter(|(p, l)| p[k] == 0 && l[k] == 1).count();
            prop_assert_eq!(*counts, AuCounts { tp, fp, fn_, tn: preds.len() - tp - fp - fn_ });
            let more = AuCounts { tn: counts.tn + extra_tn, ..*counts };
            prop_assert_eq!(f1_score(&more), t.f1[k]);
        }
        prop_assert!((t.mean_f1 - t.f1.iter().sum::<f64>() / 12.0).abs() <= 1e-12);
        prop_assert!((t.mean_accuracy - t.accuracy.iter().sum::<f64>() / 12.0).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn region_head_has_no_cross_batch_coupling(seed in any::<u64>(), n in 2usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = |shape: &[usize]| Tensor::<f64>::from_fn(shape, |_| rand::Rng::gen_range(&mut rng, -1.0..1.0));
        let (cw, cb, fw, fb) = (r(&[3, 3, 3, 3]), r(&[3]), r(&[48, 5]), r(&[5]));
        let crops = r(&[n, 3, 3, 3]);
        let head = || RegionHead { conv_weight: &cw, conv_bias: &cb, fc_weight: &fw, fc_bias: &fb };
        let (all, _) = region_head_forward(&crops, head()).unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        order.reverse();
        let parts: Vec<_> = order.iter().map(|&i| crops.batch_slice(i, 1).unwrap()).collect();
        let (rev, _) = region_head_forward(&Tensor::stack_batch(&parts).unwrap(), head()).unwrap();
        for (j, &i) in order.iter().enumerate() {
            let (a, b) = (rev.batch_slice(j, 1).unwrap(), all.batch_slice(i, 1).unwrap());
            prop_assert_eq!(a.data(), b.data());
        }
    }
}

#[test]
fn eval_forward_is_pure() {
    let model = Model::<f32>::build(&NetworkSpec::new(Variant::Eac, 1.0 / 16.0), 3).unwrap();
    let data = eacnet::data::synthesize_dataset(&SynthSpec { count: 2, ..Default::default() }).unwrap();
    let x = data.batch::<f32>(&[0, 1]).unwrap();
    let faces = data.faces_at(&[0, 1]);
    let a = model.forward(&x, Some(&faces), Mode::Eval).unwrap();
    let b = model.forward(&x, Some(&faces), Mode::Eval).unwrap();
    assert_eq!(a.probs.data(), b.probs.data());
}

#[test]
fn boosted_aus_occur_more_often() {
    let rates = [0.24, 0.18, 0.23, 0.44, 0.52, 0.58, 0.57, 0.43, 0.15, 0.36, 0.19, 0.16];
    let pop = synthetic_population(&rates, 20_000, 0.0, 1);
    let mut mult = [1.0; 12];
    for c in [0, 1, 2, 8, 10, 11] {
        mult[c] = 5.0;
    }
    let sampler = WeightedSampler::new(&sample_weights(&pop, &mult)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut drawn = [0usize; 12];
    for _ in 0..100_000 {
        for (d, &v) in drawn.iter_mut().zip(&pop[sampler.draw(&mut rng)]) {
            *d += v as usize;
        }
    }
    for c in [0, 1, 2, 8, 10, 11] {
        let base = pop.iter().filter(|l| l[c] == 1).count() as f64 / pop.len() as f64;
        assert!(drawn[c] as f64 / 1e5 > base, "AU{} not boosted", AU_IDS[c]);
    }
}

#[test]
fn synthetic_marginals_within_four_sigma() {
    let probs = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.05, 0.5, 0.25];
    let labels: Vec<_> = (0..5u64)
        .flat_map(|seed| plan(&SynthSpec { count: 2000, seed, au_probabilities: probs, ..Default::default() }))
        .collect();
    let n = labels.len() as f64;
    for (k, &p) in probs.iter().enumerate() {
        let rate = labels.iter().filter(|(l, _)| l[k] == 1).count() as f64 / n;
        let sigma = (p * (1.0 - p) / n).sqrt();
        assert!((rate - p).abs() <= 4.0 * sigma, "AU{}: {rate} vs {p}", AU_IDS[k]);
    }
}
