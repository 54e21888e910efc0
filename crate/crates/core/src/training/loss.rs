use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Twelve binary labels ordered AU 1, 2, 4, 6, 7, 10, 12, 14, 15, 17, 23, 24.
pub type LabelVector = [u8; 12];

/// Per-entry loss without domain checks.
pub fn loss_term(l: f64, p: f64) -> f64 {
    -(l * ((p + 0.5) / 1.05).ln() + (1.0 - l) * ((1.05 - p) / 1.05).ln())
}

/// `∂ loss_term / ∂p`.
pub fn loss_term_grad(l: f64, p: f64) -> f64 {
    -l / (p + 0.5) + (1.0 - l) / (1.05 - p)
}

/// Summed offset log loss over all samples and AUs, with its gradient in `p`.
pub fn loss<T: Scalar>(p: &Tensor<T>, labels: &[LabelVector]) -> Result<(f64, Tensor<T>)> {
    let [n, k] = p.dims2("loss")?;
    if n != labels.len() || k != 12 {
        return Err(Error::invalid("loss", format!("predictions {:?} for {} label rows", p.shape(), labels.len())));
    }
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(n * k);
    for (i, (row, lab)) in p.data().chunks(k).zip(labels).enumerate() {
        for (j, (&v, &l)) in row.iter().zip(lab).enumerate() {
            let v = v.as_f64();
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!("prediction [{i}, {j}] = {v} outside [0, 1]")));
            }
            if l > 1 {
                return Err(Error::invalid("labels", format!("row {i}, column {j}: {l} is not binary")));
            }
            let l = l as f64;
            total += loss_term(l, v);
            grad.push(T::from_f64(loss_term_grad(l, v)));
        }
    }
    Ok((total, Tensor::new(p.shape(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spot_values() {
        assert!((loss_term(1.0, 0.5) - 0.048_790).abs() < 1e-6);
        assert!((loss_term(0.0, 0.5) - 0.646_627).abs() < 1e-6);
        assert!((loss_term(1.0, 1.0) + 0.356_675).abs() < 1e-6);
    }

    #[test]
    fn domain_checked() {
        let p = Tensor::<f64>::full(&[1, 12], 1.2);
        assert!(matches!(loss(&p, &[[0; 12]]), Err(Error::Domain(_))));
    }

    #[test]
    fn sum_over_entries() {
        let p = Tensor::<f64>::full(&[2, 12], 0.5);
        let (v, g) = loss(&p, &[[1; 12], [0; 12]]).unwrap();
        assert!((v - 12.0 * (loss_term(1.0, 0.5) + loss_term(0.0, 0.5))).abs() < 1e-12);
        assert_eq!(g.data()[0], -1.0);
        assert!((g.data()[12] - 1.0 / 0.55).abs() < 1e-15);
    }
}
