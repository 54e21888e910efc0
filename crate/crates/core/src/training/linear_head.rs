use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Affine map from features to label scores, `features·W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearHead {
    /// `[F, K]` row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub inputs: usize,
    pub outputs: usize,
}

impl LinearHead {
    /// The `[F+1, K]` stacked form with the intercept in the last row.
    pub fn stacked(&self) -> Vec<f64> {
        let mut out = self.weights.clone();
        out.extend_from_slice(&self.bias);
        out
    }

    pub fn predict<T: Scalar>(&self, features: &Tensor<T>) -> Result<Vec<Vec<f64>>> {
        let [m, f] = features.dims2("linear head")?;
        if f != self.inputs {
            return Err(Error::invalid("features", format!("{f} columns, head expects {}", self.inputs)));
        }
        let x = features.data();
        Ok((0..m)
            .map(|i| {
                (0..self.outputs)
                    .map(|k| self.bias[k] + (0..f).map(|j| x[i * f + j].as_f64() * self.weights[j * self.outputs + k]).sum::<f64>())
                    .collect()
            })
            .collect())
    }

    /// Scores thresholded at 0.5.
    pub fn predict_binary<T: Scalar>(&self, features: &Tensor<T>) -> Result<Vec<Vec<u8>>> {
        Ok(self.predict(features)?.into_iter().map(|r| r.into_iter().map(|v| u8::from(v >= 0.5)).collect()).collect())
    }
}

/// Least squares with an unpenalized intercept and ridge penalty on the weights.
pub fn fit_linear_head<T: Scalar>(features: &Tensor<T>, labels: &[Vec<f64>], ridge: f64) -> Result<LinearHead> {
    let [m, f] = features.dims2("fit_linear_head")?;
    if labels.len() != m {
        return Err(Error::invalid("labels", format!("{} rows for {m} feature rows", labels.len())));
    }
    let k = labels.first().map_or(0, Vec::len);
    if k == 0 || labels.iter().any(|r| r.len() != k) {
        return Err(Error::invalid("labels", "rows must share a positive width"));
    }
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(Error::invalid("ridge", format!("{ridge} must be finite and >= 0")));
    }
    if ridge == 0.0 && m <= f {
        return Err(Error::Singular(format!("{m} samples for {f} features")));
    }
    let extra = if ridge > 0.0 { f } else { 0 };
    let rows = m + extra;
    let x = features.data();
    let mut a = DMatrix::<f64>::zeros(rows, f + 1);
    let mut b = DMatrix::<f64>::zeros(rows, k);
    for i in 0..m {
        for j in 0..f {
            a[(i, j)] = x[i * f + j].as_f64();
        }
        a[(i, f)] = 1.0;
        for c in 0..k {
            b[(i, c)] = labels[i][c];
        }
    }
    let s = ridge.sqrt();
    for j in 0..extra {
        a[(m + j, j)] = s;
    }
    let qr = a.qr();
    let r = qr.r();
    let max_diag = (0..=f).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..=f).any(|i| r[(i, i)].abs() <= 1e-12 * max_diag.max(1.0)) {
        return Err(Error::Singular("design matrix is rank deficient".into()));
    }
    let qtb = qr.q().transpose() * b;
    let w = r.solve_upper_triangular(&qtb).ok_or_else(|| Error::Singular("triangular solve failed".into()))?;
    let mut weights = Vec::with_capacity(f * k);
    for j in 0..f {
        for c in 0..k {
            weights.push(w[(j, c)]);
        }
    }
    Ok(LinearHead { weights, bias: (0..k).map(|c| w[(f, c)]).collect(), inputs: f, outputs: k })
}
