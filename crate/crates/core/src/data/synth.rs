use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{write_manifest, Dataset, SampleRecord, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::geometry::{au_centers, centers_for_au, LandmarkSet, AU_IDS, BOX_RADIUS, GRID, NUM_LANDMARKS};
use crate::model::{write_atomic, FaceGeometry};
use crate::pnm::encode_pgm;
use crate::training::LabelVector;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub count: usize,
    pub seed: u64,
    pub image_size: usize,
    pub au_probabilities: [f64; 12],
    /// Scales the brightness pattern and warp of active AUs; 0 renders neutral faces.
    pub deformation_magnitude: f64,
    /// Subjects are assigned round-robin.
    pub subjects: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            count: 100,
            seed: 0,
            image_size: IMAGE_SIZE,
            au_probabilities: [0.3; 12],
            deformation_magnitude: 1.0,
            subjects: 27,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.count == 0 {
            bad.push("count must be >= 1".to_string());
        }
        if self.image_size != IMAGE_SIZE {
            bad.push(format!("image_size {} must be {IMAGE_SIZE}", self.image_size));
        }
        for (au, p) in AU_IDS.iter().zip(&self.au_probabilities) {
            if !(0.0..=1.0).contains(p) {
                bad.push(format!("au_probabilities for AU{au} = {p} not in [0, 1]"));
            }
        }
        if !(self.deformation_magnitude.is_finite() && self.deformation_magnitude >= 0.0) {
            bad.push(format!("deformation_magnitude {} must be >= 0", self.deformation_magnitude));
        }
        if self.subjects == 0 {
            bad.push("subjects must be >= 1".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid("synth spec", bad.join("; ")))
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::invalid("synth spec", e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Mean face in unit coordinates (x right, y down), iBUG-68 order.
fn template() -> [(f64, f64); NUM_LANDMARKS] {
    let mut p = [(0.0, 0.0); NUM_LANDMARKS];
    for (i, q) in p.iter_mut().enumerate().take(17) {
        let t = PI - i as f64 * PI / 16.0;
        *q = (0.5 + 0.40 * t.cos(), 0.40 + 0.45 * t.sin());
    }
    let brow = [(0.18, 0.29), (0.24, 0.265), (0.30, 0.26), (0.36, 0.265), (0.42, 0.28)];
    for (k, &(x, y)) in brow.iter().enumerate() {
        p[17 + k] = (x, y);
        p[26 - k] = (1.0 - x, y);
    }
    for (k, y) in [0.34, 0.40, 0.46, 0.52].into_iter().enumerate() {
        p[27 + k] = (0.5, y);
    }
    for (k, x) in [0.43, 0.465, 0.5, 0.535, 0.57].into_iter().enumerate() {
        p[31 + k] = (x, if k == 2 { 0.575 } else { 0.565 });
    }
    let eye = [(0.22, 0.38), (0.27, 0.355), (0.33, 0.355), (0.38, 0.38), (0.33, 0.40), (0.27, 0.40)];
    for (k, &(x, y)) in eye.iter().enumerate() {
        p[36 + k] = (x, y);
    }
    // right eye: inner corner 42 mirrors 39, 43 mirrors 38, ...
    for k in 0..6 {
        let src = [39, 38, 37, 36, 41, 40][k];
        p[42 + k] = (1.0 - p[src].0, p[src].1);
    }
    let outer = [
        (0.35, 0.70), (0.40, 0.67), (0.45, 0.655), (0.50, 0.66), (0.55, 0.655), (0.60, 0.67),
        (0.65, 0.70), (0.60, 0.74), (0.55, 0.755), (0.50, 0.76), (0.45, 0.755), (0.40, 0.74),
    ];
    p[48..60].copy_from_slice(&outer);
    let inner = [(0.37, 0.70), (0.44, 0.69), (0.50, 0.69), (0.56, 0.69), (0.63, 0.70), (0.56, 0.71), (0.50, 0.715), (0.44, 0.71)];
    p[60..68].copy_from_slice(&inner);
    p
}

/// Per-subject appearance.
#[derive(Clone, Copy, Debug)]
struct Subject {
    sx: f64,
    sy: f64,
    skin: f64,
    background: f64,
    brow_width: f64,
}

fn subject(seed: u64, s: usize) -> Subject {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
    rng.set_stream(s as u64);
    Subject {
        sx: rng.gen_range(0.90..1.04),
        sy: rng.gen_range(0.92..1.04),
        skin: rng.gen_range(150.0..200.0),
        background: rng.gen_range(40.0..90.0),
        brow_width: rng.gen_range(2.0..3.5),
    }
}

/// Geometry and labels of one synthetic sample.
#[derive(Clone, Debug)]
pub struct SynthFace {
    pub landmarks: LandmarkSet,
    pub labels: LabelVector,
    pub subject: usize,
    subject_look: Subject,
    noise_seed: u64,
}

fn sample_rng(spec: &SynthSpec, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Labels and subjects of every sample without rendering.
pub fn plan(spec: &SynthSpec) -> Vec<(LabelVector, usize)> {
    (0..spec.count)
        .map(|i| {
            let mut rng = sample_rng(spec, i);
            (spec.au_probabilities.map(|p| u8::from(rng.gen::<f64>() < p)), i % spec.subjects)
        })
        .collect()
}

/// Draws labels, subject, and landmarks for sample `index`.
pub fn synth_face(spec: &SynthSpec, index: usize) -> Result<SynthFace> {
    let mut rng = sample_rng(spec, index);
    let labels = spec.au_probabilities.map(|p| u8::from(rng.gen::<f64>() < p));
    let s = index % spec.subjects;
    let look = subject(spec.seed, s);
    let size = spec.image_size as f64;
    let jitter = rng.gen_range(0.97..1.03);
    let (tx, ty) = (rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0));
    let points = template()
        .iter()
        .map(|&(x, y)| {
            let px = size / 2.0 + (x - 0.5) * size * look.sx * jitter + tx;
            let py = size / 2.0 + (y - 0.5) * size * look.sy * jitter + ty;
            (px.clamp(0.0, size - 1.0), py.clamp(0.0, size - 1.0))
        })
        .collect();
    let landmarks = LandmarkSet::new(points, spec.image_size as u32, spec.image_size as u32)?;
    Ok(SynthFace { landmarks, labels, subject: s, subject_look: look, noise_seed: rng.gen() })
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) };
    (p.0 - a.0 - t * dx).hypot(p.1 - a.1 - t * dy)
}

fn polyline_distance(p: (f64, f64), pts: &[(f64, f64)]) -> f64 {
    pts.windows(2).map(|w| segment_distance(p, w[0], w[1])).fold(f64::INFINITY, f64::min)
}

fn inside(p: (f64, f64), poly: &[(f64, f64)]) -> bool {
    let mut c = false;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + n - 1) % n]);
        if (a.1 > p.1) != (b.1 > p.1) && p.0 < (b.0 - a.0) * (p.1 - a.1) / (b.1 - a.1) + a.0 {
            c = !c;
        }
    }
    c
}

fn neutral(face: &SynthFace, size: usize) -> Vec<f64> {
    let p = face.landmarks.points();
    let look = face.subject_look;
    let (cx, cy) = ((p[0].0 + p[16].0) / 2.0, (p[0].1 + p[16].1) / 2.0 - 0.05 * size as f64);
    let rx = (p[16].0 - p[0].0) / 2.0 * 1.02;
    let ry = (p[8].1 - cy) * 1.02;
    let mut noise = ChaCha8Rng::seed_from_u64(face.noise_seed);
    let mut img = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let q = (x as f64 + 0.5, y as f64 + 0.5);
            let e = ((q.0 - cx) / rx).powi(2) + ((q.1 - cy) / ry).powi(2);
            let mut v = if e <= 1.0 { look.skin - 20.0 * e } else { look.background };
            if polyline_distance(q, &p[17..22]) < look.brow_width || polyline_distance(q, &p[22..27]) < look.brow_width {
                v = 55.0;
            }
            if polyline_distance(q, &p[27..31]) < 1.2 {
                v -= 25.0;
            }
            for eye in [&p[36..42], &p[42..48]] {
                if inside(q, eye) {
                    let (ex, ey) = eye.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0 / 6.0, a.1 + b.1 / 6.0));
                    v = if (q.0 - ex).hypot(q.1 - ey) < 3.5 { 20.0 } else { 235.0 };
                }
            }
            if inside(q, &p[48..60]) {
                v = if inside(q, &p[60..68]) { 35.0 } else { 110.0 };
            }
            img[y * size + x] = v + noise.gen_range(-4.0..4.0);
        }
    }
    img
}

/// Pattern of one AU: stripe orientation, wavelength, polarity, and warp direction.
fn au_pattern(column: usize) -> (f64, f64, f64, (f64, f64)) {
    let theta = column as f64 * PI / 12.0 * 5.0;
    let wavelength = 6.0 + (column % 4) as f64 * 2.5;
    let sign = if column.is_multiple_of(2) { 1.0 } else { -1.0 };
    let phi = column as f64 * 2.399;
    (theta, wavelength, sign, (phi.cos(), phi.sin()))
}

fn bilinear(img: &[f64], size: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (size - 1) as f64);
    let y = y.clamp(0.0, (size - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(size - 1), (y0 + 1).min(size - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let at = |xx: usize, yy: usize| img[yy * size + xx];
    (1.0 - fy) * ((1.0 - fx) * at(x0, y0) + fx * at(x1, y0)) + fy * ((1.0 - fx) * at(x0, y1) + fx * at(x1, y1))
}

/// Renders a face with the AUs in `active` switched on.
pub fn render_face(face: &SynthFace, active: &LabelVector, magnitude: f64, size: usize) -> Result<Vec<u8>> {
    let mut img = neutral(face, size);
    let centers = au_centers(&face.landmarks)?;
    let rounded = centers.rounded();
    let scale = size as f64 / GRID as f64;
    let half = (BOX_RADIUS as f64 + 0.5) * scale;
    let cell = |p: usize| p * GRID / size;
    for (col, _) in active.iter().enumerate().filter(|(_, &a)| a == 1) {
        if magnitude == 0.0 {
            break;
        }
        let (theta, lambda, sign, dir) = au_pattern(col);
        for c in centers_for_au(AU_IDS[col]) {
            let (gx, gy) = rounded[c];
            let (cx, cy) = ((gx as f64 + 0.5) * scale, (gy as f64 + 0.5) * scale);
            let src = img.clone();
            let x0 = (cx - half).floor().max(0.0) as usize;
            let y0 = (cy - half).floor().max(0.0) as usize;
            let x1 = ((cx + half).ceil() as usize).min(size - 1);
            let y1 = ((cy + half).ceil() as usize).min(size - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                    let outside = |p: usize, g: usize| cell(p).abs_diff(g) > BOX_RADIUS;
                    if dx.abs() >= half || dy.abs() >= half || outside(x, gx) || outside(y, gy) {
                        continue;
                    }
                    let bump = ((PI * dx / (2.0 * half)).cos() * (PI * dy / (2.0 * half)).cos()).powi(2);
                    let shift = 3.0 * magnitude * bump;
                    let warped = bilinear(&src, size, x as f64 - shift * dir.0, y as f64 - shift * dir.1);
                    let stripe = 0.5 + 0.5 * ((dx * theta.cos() + dy * theta.sin()) * 2.0 * PI / lambda).cos();
                    img[y * size + x] = warped + sign * 70.0 * magnitude * bump * stripe;
                }
            }
        }
    }
    Ok(img.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect())
}

/// Renders sample `index` as an 8-bit grayscale image with its landmarks and labels.
pub fn render_sample(spec: &SynthSpec, index: usize) -> Result<(Vec<u8>, SynthFace)> {
    let face = synth_face(spec, index)?;
    let img = render_face(&face, &face.labels, spec.deformation_magnitude, spec.image_size)?;
    Ok((img, face))
}

/// Builds the synthetic set in memory without touching the filesystem.
pub fn synthesize_dataset(spec: &SynthSpec) -> Result<Dataset> {
    use rayon::prelude::*;
    spec.validate()?;
    let rendered: Vec<(Vec<u8>, SynthFace)> =
        (0..spec.count).into_par_iter().map(|i| render_sample(spec, i)).collect::<Result<_>>()?;
    let mut data = Dataset::default();
    for (img, face) in rendered {
        let raster = crate::pnm::Raster { width: spec.image_size, height: spec.image_size, channels: 1, data: img };
        data.images.push(super::raster_to_tensor(&raster));
        data.faces.push(FaceGeometry::from_landmarks(&face.landmarks)?);
        data.labels.push(face.labels);
        data.subjects.push(subject_name(face.subject));
    }
    Ok(data)
}

pub fn subject_name(s: usize) -> String {
    format!("S{s:03}")
}

/// Writes images, landmark files, and `manifest.csv` under `out_dir`.
pub fn generate_synthetic(spec: &SynthSpec, out_dir: &Path) -> Result<Vec<SampleRecord>> {
    spec.validate()?;
    for sub in ["images", "landmarks"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut records = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let (img, face) = render_sample(spec, i)?;
        let image_rel = format!("images/{i:05}.pgm");
        let lm_rel = format!("landmarks/{i:05}.json");
        let image_path = out_dir.join(&image_rel);
        let landmarks_path = out_dir.join(&lm_rel);
        write_atomic(&image_path, &encode_pgm(spec.image_size, spec.image_size, &img))?;
        let json = serde_json::to_string_pretty(&face.landmarks.to_file(&image_rel)).expect("landmarks serialize");
        write_atomic(&landmarks_path, json.as_bytes())?;
        records.push(SampleRecord { image_path, subject_id: subject_name(face.subject), labels: face.labels, landmarks_path });
    }
    write_atomic(&out_dir.join("manifest.csv"), write_manifest(&records, out_dir)?.as_bytes())?;
    Ok(records)
}
