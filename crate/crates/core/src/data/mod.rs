//! Manifests, image decoding, in-memory datasets, and the synthetic face generator.

mod synth;

pub use synth::*;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{LandmarkSet, AU_IDS};
use crate::model::FaceGeometry;
use crate::pnm;
use crate::tensor::{resize_planes, Scalar, Tensor};
use crate::training::LabelVector;

pub const IMAGE_SIZE: usize = 224;

/// Manifest columns in order.
pub fn manifest_header() -> Vec<String> {
    let mut h = vec!["image".to_string(), "subject".to_string()];
    h.extend(AU_IDS.iter().map(|a| format!("au{a}")));
    h.push("landmarks".into());
    h
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleRecord {
    pub image_path: PathBuf,
    pub subject_id: String,
    pub labels: LabelVector,
    pub landmarks_path: PathBuf,
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Reads and validates a manifest; relative paths resolve against its directory.
pub fn load_manifest(path: &Path) -> Result<Vec<SampleRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        log::warn!("{}: empty manifest", path.display());
        return Ok(Vec::new());
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let err = |row: usize, column: &str, reason: String| Error::Manifest {
        path: path.to_path_buf(),
        row,
        column: column.to_string(),
        reason,
    };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| err(1, "header", e.to_string()))?.clone();
    let expected = manifest_header();
    let mut index = Vec::with_capacity(expected.len());
    for name in &expected {
        let i = headers.iter().position(|h| h == name).ok_or_else(|| err(1, name, "missing column".into()))?;
        index.push(i);
    }
    if let Some(extra) = headers.iter().find(|h| !expected.iter().any(|e| e == h)) {
        return Err(err(1, extra, "unknown column".into()));
    }

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let row = e.position().map_or(0, |p| p.line() as usize);
            err(row, "*", e.to_string())
        })?;
        let row = rec.position().map_or(0, |p| p.line() as usize);
        let field = |k: usize| rec.get(index[k]).unwrap_or("");
        let image = field(0);
        if image.is_empty() {
            return Err(err(row, "image", "empty path".into()));
        }
        let subject = field(1);
        if subject.is_empty() {
            return Err(err(row, "subject", "empty subject id".into()));
        }
        let mut labels = [0u8; 12];
        for (j, l) in labels.iter_mut().enumerate() {
            *l = match field(2 + j) {
                "0" => 0,
                "1" => 1,
                other => return Err(err(row, &expected[2 + j], format!("label {other:?} is not 0 or 1"))),
            };
        }
        let image_path = resolve(base, image);
        let landmarks_path = resolve(base, field(14));
        if !seen.insert(image_path.clone()) {
            return Err(err(row, "image", format!("duplicate image path {image}")));
        }
        for (col, p) in [("image", &image_path), ("landmarks", &landmarks_path)] {
            if let Err(e) = std::fs::metadata(p) {
                return Err(err(row, col, format!("{}: {e}", p.display())));
            }
        }
        records.push(SampleRecord { image_path, subject_id: subject.to_string(), labels, landmarks_path });
    }
    Ok(records)
}

/// Writes a manifest with paths relative to `dir` where possible.
pub fn write_manifest(records: &[SampleRecord], dir: &Path) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let rel = |p: &Path| p.strip_prefix(dir).unwrap_or(p).to_string_lossy().into_owned();
    let io = |e: csv::Error| Error::invalid("manifest", e.to_string());
    w.write_record(manifest_header()).map_err(io)?;
    for r in records {
        let mut row = vec![rel(&r.image_path), r.subject_id.clone()];
        row.extend(r.labels.iter().map(|l| l.to_string()));
        row.push(rel(&r.landmarks_path));
        w.write_record(&row).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid("manifest", e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Converts a decoded raster to `[3, H, W]` in `[0, 1]`, replicating grayscale.
pub fn raster_to_tensor<T: Scalar>(r: &pnm::Raster) -> Tensor<T> {
    let (w, h, c) = (r.width, r.height, r.channels);
    Tensor::from_fn(&[3, h, w], |i| {
        let ch = i / (h * w);
        let px = i % (h * w);
        let src = if c == 1 { px } else { px * 3 + ch };
        T::from_f64(r.data[src] as f64 / 255.0)
    })
}

/// Decodes a PGM/PPM into `[3, 224, 224]`, resizing bilinearly when needed.
pub fn load_image<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let raster = pnm::decode(&bytes).map_err(|e| match e {
        Error::ImageParse(reason) | Error::Truncated(reason) => Error::Parse { path: path.to_path_buf(), reason },
        other => other,
    })?;
    let t = raster_to_tensor(&raster);
    if raster.width == IMAGE_SIZE && raster.height == IMAGE_SIZE {
        Ok(t)
    } else {
        Ok(resize_planes(&t, (IMAGE_SIZE, IMAGE_SIZE))?)
    }
}

/// Decoded samples held in memory.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    /// `[3, 224, 224]` each.
    pub images: Vec<Tensor<f32>>,
    pub faces: Vec<FaceGeometry>,
    pub labels: Vec<LabelVector>,
    pub subjects: Vec<String>,
}

impl Dataset {
    pub fn load(records: &[SampleRecord]) -> Result<Self> {
        let loaded: Vec<(Tensor<f32>, FaceGeometry)> = records
            .par_iter()
            .map(|r| {
                let image = load_image(&r.image_path)?;
                let landmarks = LandmarkSet::read_json(&r.landmarks_path)?;
                Ok((image, FaceGeometry::from_landmarks(&landmarks)?))
            })
            .collect::<Result<_>>()?;
        let (images, faces) = loaded.into_iter().unzip();
        Ok(Self {
            images,
            faces,
            labels: records.iter().map(|r| r.labels).collect(),
            subjects: records.iter().map(|r| r.subject_id.clone()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            images: idx.iter().map(|&i| self.images[i].clone()).collect(),
            faces: idx.iter().map(|&i| self.faces[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            subjects: idx.iter().map(|&i| self.subjects[i].clone()).collect(),
        }
    }

    /// Stacks the images at `idx` into `[B, 3, 224, 224]`.
    pub fn batch<T: Scalar>(&self, idx: &[usize]) -> Result<Tensor<T>> {
        let parts: Vec<Tensor<T>> = idx
            .iter()
            .map(|&i| {
                let img = &self.images[i];
                let shape = img.shape().to_vec();
                img.cast::<T>().reshape(&[1, shape[0], shape[1], shape[2]])
            })
            .collect::<std::result::Result<_, _>>()?;
        Ok(Tensor::stack_batch(&parts)?)
    }

    pub fn faces_at(&self, idx: &[usize]) -> Vec<FaceGeometry> {
        idx.iter().map(|&i| self.faces[i].clone()).collect()
    }
}
