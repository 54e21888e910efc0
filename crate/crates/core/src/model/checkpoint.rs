use std::path::Path;

use super::network::Model;
use super::spec::{NetworkSpec, Variant};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"EACN";
pub const CHECKPOINT_VERSION: u32 = 1;
/// Magic of a bare named-weight file (no spec), used for external backbone weights.
pub const WEIGHTS_MAGIC: [u8; 4] = *b"EACW";

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn tensor(&mut self, name: &str, t: &Tensor<f32>) {
        self.u32(name.len());
        self.0.extend_from_slice(name.as_bytes());
        self.u32(t.shape().len());
        for &d in t.shape() {
            self.u32(d);
        }
        for v in t.data() {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated(format!("{what} at byte {} (file has {})", self.pos, self.bytes.len())));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn tensor(&mut self) -> Result<(String, Tensor<f32>)> {
        let len = self.u32("name length")?;
        let name = String::from_utf8(self.take(len, "name")?.to_vec())
            .map_err(|_| Error::invalid("checkpoint", "parameter name is not UTF-8"))?;
        let ndim = self.u32("rank")?;
        if !(1..=4).contains(&ndim) {
            return Err(Error::invalid("checkpoint", format!("{name}: rank {ndim}")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.u32("extent")?);
        }
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let numel = numel.filter(|&n| n > 0).ok_or_else(|| Error::invalid("checkpoint", format!("{name}: shape {shape:?}")))?;
        let raw = self.take(numel.saturating_mul(4), &name)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok((name.clone(), Tensor::new(&shape, data)?))
    }
}

/// Serializes a model; values are stored as 32-bit floats.
pub fn write_checkpoint<T: Scalar>(model: &Model<T>) -> Vec<u8> {
    let spec = model.spec();
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(&CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION as usize);
    w.u8(spec.variant.code());
    w.f64(spec.width_scale);
    w.u32(spec.input_size);
    w.u32(spec.num_outputs);
    w.u8(spec.freeze_mask());
    w.f64(spec.dropout_rate);
    w.u32(model.params().len());
    for p in model.params() {
        w.tensor(&p.name, &p.value.cast());
    }
    w.0
}

pub fn read_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Model<T>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = r.u32("version")? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion { found: version, supported: CHECKPOINT_VERSION });
    }
    let code = r.u8("variant")?;
    let variant =
        Variant::from_code(code).ok_or_else(|| Error::invalid("checkpoint", format!("unknown variant code {code}")))?;
    let spec = NetworkSpec {
        variant,
        width_scale: r.f64("width scale")?,
        input_size: r.u32("input size")?,
        num_outputs: r.u32("output count")?,
        freeze_groups: NetworkSpec::freeze_from_mask(r.u8("freeze mask")?),
        dropout_rate: r.f64("dropout")?,
    };
    let mut model = Model::<T>::build(&spec, 0)?;
    let count = r.u32("parameter count")?;
    if count != model.params().len() {
        return Err(Error::invalid(
            "checkpoint",
            format!("{count} parameters stored, spec implies {}", model.params().len()),
        ));
    }
    let mut values = Vec::with_capacity(count);
    for p in model.params() {
        let (name, t) = r.tensor()?;
        if name != p.name {
            return Err(Error::invalid("checkpoint", format!("expected parameter {}, found {name}", p.name)));
        }
        if t.shape() != p.value.shape() {
            return Err(Error::ParamShape { name, expected: p.value.shape().to_vec(), found: t.shape().to_vec() });
        }
        values.push(t.cast());
    }
    if r.pos != bytes.len() {
        return Err(Error::invalid("checkpoint", format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    model.replace_values(values)?;
    Ok(model)
}

/// Writes atomically: temp file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let file = path.file_name().ok_or_else(|| Error::invalid("output path", format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", file.to_string_lossy(), std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, path: &Path) -> Result<()> {
    write_atomic(path, &write_checkpoint(model))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Model<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}

/// Serializes named tensors without a spec.
pub fn write_weights(tensors: &[(String, Tensor<f32>)]) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(&WEIGHTS_MAGIC);
    w.u32(CHECKPOINT_VERSION as usize);
    w.u32(tensors.len());
    for (name, t) in tensors {
        w.tensor(name, t);
    }
    w.0
}

pub fn read_weights(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if magic != WEIGHTS_MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = r.u32("version")? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion { found: version, supported: CHECKPOINT_VERSION });
    }
    let count = r.u32("tensor count")?;
    (0..count).map(|_| r.tensor()).collect()
}

/// Copies external weights into `model` by layer name; shapes must agree.
/// Returns the names that were applied.
pub fn apply_weights<T: Scalar>(model: &mut Model<T>, tensors: &[(String, Tensor<f32>)]) -> Result<Vec<String>> {
    let mut applied = Vec::new();
    for (name, t) in tensors {
        let p = model
            .params_mut()
            .iter_mut()
            .find(|p| &p.name == name)
            .ok_or_else(|| Error::invalid("weights", format!("no parameter named {name}")))?;
        if p.value.shape() != t.shape() {
            return Err(Error::ParamShape { name: name.clone(), expected: p.value.shape().to_vec(), found: t.shape().to_vec() });
        }
        p.value = t.cast();
        applied.push(name.clone());
    }
    Ok(applied)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Model<f32> {
        let mut spec = NetworkSpec::new(Variant::Eac, 1.0 / 32.0);
        spec.dropout_rate = 0.25;
        Model::build(&spec, 9).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let back: Model<f32> = read_checkpoint(&write_checkpoint(&m)).unwrap();
        assert_eq!(back.spec(), m.spec());
        for (a, b) in m.params().iter().zip(back.params()) {
            assert_eq!(a.name, b.name);
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.value), bits(&b.value));
        }
    }

    #[test]
    fn corrupted_magic_rejected() {
        let mut bytes = write_checkpoint(&model());
        bytes[0] = b'X';
        assert!(matches!(read_checkpoint::<f32>(&bytes), Err(Error::BadMagic(_))));
    }

    #[test]
    fn newer_version_rejected() {
        let mut bytes = write_checkpoint(&model());
        bytes[4..8].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
        assert!(matches!(
            read_checkpoint::<f32>(&bytes),
            Err(Error::UnsupportedVersion { found: 2, supported: 1 })
        ));
    }

    #[test]
    fn truncation_detected() {
        let bytes = write_checkpoint(&model());
        for cut in [3, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(read_checkpoint::<f32>(&bytes[..cut]), Err(Error::Truncated(_))), "cut {cut}");
        }
    }

    #[test]
    fn shape_mismatch_detected() {
        let m = model();
        let mut bytes = write_checkpoint(&m);
        // first tensor: g1.conv1.weight [C,3,3,3]; its first extent follows the header
        let header = 4 + 4 + 1 + 8 + 4 + 4 + 1 + 8 + 4;
        let first_dim = header + 4 + "g1.conv1.weight".len() + 4;
        let c = u32::from_le_bytes(bytes[first_dim..first_dim + 4].try_into().unwrap());
        let in_dim = first_dim + 4;
        bytes[first_dim..first_dim + 4].copy_from_slice(&3u32.to_le_bytes());
        bytes[in_dim..in_dim + 4].copy_from_slice(&c.to_le_bytes());
        assert!(matches!(read_checkpoint::<f32>(&bytes), Err(Error::ParamShape { .. })));
    }

    #[test]
    fn external_weights_apply_by_name() {
        let src = model();
        let mut dst = Model::<f32>::build(src.spec(), 10).unwrap();
        let named: Vec<_> =
            src.params().iter().filter(|p| p.name.starts_with("g1.")).map(|p| (p.name.clone(), p.value.clone())).collect();
        let parsed = read_weights(&write_weights(&named)).unwrap();
        let applied = apply_weights(&mut dst, &parsed).unwrap();
        assert_eq!(applied.len(), 4);
        assert_eq!(dst.param("g1.conv2.weight"), src.param("g1.conv2.weight"));
    }
}
