use std::path::Path;

use eacnet::data::{generate_synthetic, load_image, load_manifest, render_face, synth_face, synthesize_dataset, Dataset, SynthSpec, IMAGE_SIZE};
use eacnet::geometry::{attention_from_landmarks, AU_IDS, GRID};
use eacnet::model::{write_checkpoint, Model, NetworkSpec, Variant};
use eacnet::pnm::{encode_pgm, encode_ppm};
use eacnet::tensor::Tensor;
use eacnet::training::{train, TrainConfig};
use eacnet::Error;

fn tiny(count: usize) -> Dataset {
    synthesize_dataset(&SynthSpec { count, seed: 2, au_probabilities: [0.5; 12], ..Default::default() }).unwrap()
}

fn manifest_error(dir: &Path, body: &str) -> Error {
    let path = dir.join("bad.csv");
    std::fs::write(&path, body).unwrap();
    load_manifest(&path).unwrap_err()
}

#[test]
fn generated_manifest_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec { count: 5, seed: 6, ..Default::default() };
    let records = generate_synthetic(&spec, dir.path()).unwrap();
    let loaded = load_manifest(&dir.path().join("manifest.csv")).unwrap();
    assert_eq!(loaded.len(), 5);
    for (a, b) in records.iter().zip(&loaded) {
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.subject_id, b.subject_id);
        assert_eq!(a.image_path.canonicalize().unwrap(), b.image_path.canonicalize().unwrap());
    }
    let from_disk = Dataset::load(&loaded).unwrap();
    let in_memory = synthesize_dataset(&spec).unwrap();
    assert_eq!(from_disk.labels, in_memory.labels);
    assert_eq!(from_disk.faces, in_memory.faces);
    for (a, b) in from_disk.images.iter().zip(&in_memory.images) {
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn manifest_errors_name_row_and_column() {
    let dir = tempfile::tempdir().unwrap();
    generate_synthetic(&SynthSpec { count: 2, ..Default::default() }, dir.path()).unwrap();
    let good = std::fs::read_to_string(dir.path().join("manifest.csv")).unwrap();
    let mut lines: Vec<String> = good.lines().map(String::from).collect();

    let header_only_missing = lines[0].replace(",au24", "");
    let body = format!("{header_only_missing}\n");
    match manifest_error(dir.path(), &body) {
        Error::Manifest { column, .. } => assert_eq!(column, "au24"),
        e => panic!("unexpected {e}"),
    }

    let mut fields: Vec<String> = lines[1].split(',').map(String::from).collect();
    fields[2] = "2".into();
    let bad_label = format!("{}\n{}\n", lines[0], fields.join(","));
    match manifest_error(dir.path(), &bad_label) {
        Error::Manifest { row, column, .. } => assert_eq!((row, column.as_str()), (2, "au1")),
        e => panic!("unexpected {e}"),
    }

    lines.push(lines[1].clone());
    let dup = lines.join("\n") + "\n";
    let msg = manifest_error(dir.path(), &dup).to_string();
    assert!(msg.contains("duplicate"), "{msg}");

    let missing = format!("{}\n{}\n", lines[0], lines[1].replacen("images/", "images/missing_", 1));
    match manifest_error(dir.path(), &missing) {
        Error::Manifest { column, .. } => assert_eq!(column, "image"),
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn images_decode_resize_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let t = Tensor::<f32>::from_fn(&[3, IMAGE_SIZE, IMAGE_SIZE], |i| ((i * 7919) % 1000) as f32 / 999.0);
    let hw = IMAGE_SIZE * IMAGE_SIZE;
    let rgb: Vec<u8> = (0..hw).flat_map(|p| (0..3).map(move |c| (c, p))).map(|(c, p)| (t.data()[c * hw + p] * 255.0).round() as u8).collect();
    let path = dir.path().join("x.ppm");
    std::fs::write(&path, encode_ppm(IMAGE_SIZE, IMAGE_SIZE, &rgb)).unwrap();
    let back = load_image::<f32>(&path).unwrap();
    assert!(back.data().iter().zip(t.data()).all(|(a, b)| (a - b).abs() <= 1.0 / 255.0));

    let small = dir.path().join("small.pgm");
    std::fs::write(&small, encode_pgm(2, 2, &[0, 255, 255, 0])).unwrap();
    let up = load_image::<f64>(&small).unwrap();
    assert_eq!(up.shape(), &[3, IMAGE_SIZE, IMAGE_SIZE]);
    assert_eq!(up.data()[0], 0.0);
    assert_eq!(up.data()[IMAGE_SIZE - 1], 1.0);

    let bad = dir.path().join("bad.pgm");
    std::fs::write(&bad, b"P5\n4 4\n255\nabc").unwrap();
    assert!(matches!(load_image::<f32>(&bad), Err(Error::Parse { .. })));
    std::fs::write(&bad, b"P3\n1 1\n255\n0 0 0").unwrap();
    assert!(matches!(load_image::<f32>(&bad), Err(Error::Parse { .. })));
}

#[test]
fn au_signal_stays_inside_attention_support() {
    for index in 0..6 {
        let face = synth_face(&SynthSpec { seed: 13, ..Default::default() }, index).unwrap();
        let map = attention_from_landmarks(&face.landmarks).unwrap();
        let neutral = render_face(&face, &[0; 12], 1.0, IMAGE_SIZE).unwrap();
        for col in 0..12 {
            let mut active = [0u8; 12];
            active[col] = 1;
            let img = render_face(&face, &active, 1.0, IMAGE_SIZE).unwrap();
            let changed: Vec<usize> = (0..img.len()).filter(|&i| img[i] != neutral[i]).collect();
            assert!(!changed.is_empty(), "AU{} left no trace", AU_IDS[col]);
            for i in changed {
                let (x, y) = (i % IMAGE_SIZE, i / IMAGE_SIZE);
                let (gx, gy) = (x * GRID / IMAGE_SIZE, y * GRID / IMAGE_SIZE);
                assert!(map.at(gy, gx) > 0.0, "AU{} changed pixel ({x}, {y}) outside the attention boxes", AU_IDS[col]);
            }
        }
    }
}

fn quick_config(lr: f64) -> TrainConfig {
    TrainConfig { learning_rate: lr, epochs: 2, batch_size: 2, seed: 4, eval_every: 2, ..Default::default() }
}

#[test]
fn double_precision_training_is_deterministic() {
    let data = tiny(4);
    let spec = NetworkSpec::new(Variant::Eac, 1.0 / 16.0);
    let run = || {
        let mut m = Model::<f64>::build(&spec, 1).unwrap();
        let report = train(&mut m, &data, None, &quick_config(0.01), |_| {}).unwrap();
        (write_checkpoint(&m), report.epochs)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(la, lb);
    assert!(a == b, "checkpoints differ");
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let data = tiny(4);
    let spec = NetworkSpec::new(Variant::Enet, 1.0 / 16.0);
    let mut m = Model::<f32>::build(&spec, 2).unwrap();
    let before = write_checkpoint(&m);
    let report = train(&mut m, &data, None, &quick_config(0.0), |_| {}).unwrap();
    assert_eq!(report.epochs.len(), 2);
    assert!(report.epochs.iter().all(|l| l.loss.is_finite()));
    assert!(write_checkpoint(&m) == before);
}

#[test]
fn training_moves_only_unfrozen_parameters() {
    let data = tiny(4);
    let spec = NetworkSpec::new(Variant::Fvgg, 1.0 / 16.0);
    let mut m = Model::<f32>::build(&spec, 3).unwrap();
    let before = m.clone();
    train(&mut m, &data, None, &quick_config(0.01), |_| {}).unwrap();
    let mut moved = 0;
    for (a, b) in m.params().iter().zip(before.params()) {
        if a.group.is_some_and(|g| spec.freeze_groups.contains(&g)) {
            assert_eq!(a.value, b.value, "{} is frozen", a.name);
        } else if a.value != b.value {
            moved += 1;
        }
    }
    assert!(moved > 0);
    assert_ne!(m.param("fc2.weight"), before.param("fc2.weight"));
}
