//! Dense row-major tensors and the numeric primitives the network is built from.
//!
//! Every forward op in [`ops`] has a matching `*_backward` that returns the
//! gradient of each input given the upstream gradient of the output.

mod ops;
mod scalar;

pub use ops::*;
pub use scalar::Scalar;

use crate::error::ShapeError;

/// Dense tensor with up to four axes (batch, channel, height, width).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self, ShapeError> {
        check_shape("tensor", shape)?;
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(ShapeError::new(
                "tensor",
                shape,
                &[data.len()],
                "element count does not match shape",
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        check_shape("tensor", shape).expect("invalid tensor shape");
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    /// Builds a tensor from a function of the flat row-major index.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> T) -> Self {
        check_shape("tensor", shape).expect("invalid tensor shape");
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..numel).map(f).collect(),
        }
    }

    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self, ShapeError> {
        Self::new(shape, values.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self, ShapeError> {
        check_shape("reshape", shape)?;
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(ShapeError::new(
                "reshape",
                &self.shape,
                shape,
                "element count differs",
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// The four extents of a rank-4 tensor.
    pub fn dims4(&self, op: &'static str) -> Result<[usize; 4], ShapeError> {
        match self.shape[..] {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(ShapeError::new(op, &self.shape, &[], "expected a rank-4 tensor")),
        }
    }

    pub fn dims2(&self, op: &'static str) -> Result<[usize; 2], ShapeError> {
        match self.shape[..] {
            [r, c] => Ok([r, c]),
            _ => Err(ShapeError::new(op, &self.shape, &[], "expected a rank-2 tensor")),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, &v| if v.abs() > acc { v.abs() } else { acc })
    }

    /// Slice `count` entries of the leading axis starting at `start`.
    pub fn batch_slice(&self, start: usize, count: usize) -> Result<Self, ShapeError> {
        let lead = *self.shape.first().unwrap_or(&0);
        if count == 0 || start + count > lead {
            return Err(ShapeError::new(
                "batch_slice",
                &self.shape,
                &[start, count],
                "range outside the leading axis",
            ));
        }
        let stride = self.data.len() / lead;
        let mut shape = self.shape.clone();
        shape[0] = count;
        Ok(Self {
            shape,
            data: self.data[start * stride..(start + count) * stride].to_vec(),
        })
    }

    /// Concatenate tensors along the leading axis.
    pub fn stack_batch(parts: &[Tensor<T>]) -> Result<Self, ShapeError> {
        let first = parts
            .first()
            .ok_or_else(|| ShapeError::new("stack_batch", &[], &[], "no tensors to stack"))?;
        let tail = &first.shape[1..];
        let mut lead = 0;
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        for p in parts {
            if &p.shape[1..] != tail {
                return Err(ShapeError::new(
                    "stack_batch",
                    &first.shape,
                    &p.shape,
                    "trailing extents differ",
                ));
            }
            lead += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = lead;
        Ok(Self { shape, data })
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<(), ShapeError> {
        if self.shape != other.shape {
            return Err(ShapeError::new("add_assign", &self.shape, &other.shape, "shapes differ"));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }
}

fn check_shape(op: &'static str, shape: &[usize]) -> Result<(), ShapeError> {
    if shape.is_empty() || shape.len() > 4 || shape.contains(&0) {
        return Err(ShapeError::new(
            op,
            shape,
            &[],
            "shape must have 1 to 4 positive extents",
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_count_mismatch() {
        let err = Tensor::<f64>::new(&[2, 2], vec![1.0; 3]).unwrap_err();
        assert_eq!(err.lhs, vec![2, 2]);
    }

    #[test]
    fn rejects_rank_five_and_zero_extent() {
        assert!(Tensor::<f32>::new(&[1, 1, 1, 1, 1], vec![0.0]).is_err());
        assert!(Tensor::<f32>::new(&[0, 2], vec![]).is_err());
    }

    #[test]
    fn batch_slice_and_stack_round_trip() {
        let t = Tensor::<f64>::from_fn(&[3, 2], |i| i as f64);
        let a = t.batch_slice(0, 1).unwrap();
        let b = t.batch_slice(1, 2).unwrap();
        assert_eq!(Tensor::stack_batch(&[a, b]).unwrap(), t);
    }
}
