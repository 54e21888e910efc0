use crate::error::{Error, Result};
use crate::model::{Gradients, Model};
use crate::tensor::{Scalar, Tensor};

/// One classical-momentum update: `v ← μ·v − lr·g`, `θ ← θ + v`.
pub fn sgd_step<T: Scalar>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    velocity: &mut Tensor<T>,
    learning_rate: f64,
    momentum: f64,
) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != velocity.shape() {
        return Err(Error::invalid(
            "sgd step",
            format!("parameter {:?}, gradient {:?}, velocity {:?}", param.shape(), grad.shape(), velocity.shape()),
        ));
    }
    let (lr, mu) = (T::from_f64(learning_rate), T::from_f64(momentum));
    for ((p, &g), v) in param.data_mut().iter_mut().zip(grad.data()).zip(velocity.data_mut()) {
        *v = mu * *v - lr * g;
        *p += *v;
    }
    Ok(())
}

/// Velocity state for every parameter of a model.
#[derive(Clone, Debug)]
pub struct Momentum<T> {
    velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> Momentum<T> {
    pub fn new(model: &Model<T>) -> Self {
        Self { velocity: model.params().iter().map(|p| Tensor::zeros(p.value.shape())).collect() }
    }

    /// Updates every trainable parameter that received a gradient.
    pub fn step(&mut self, model: &mut Model<T>, grads: &Gradients<T>, learning_rate: f64, momentum: f64) -> Result<()> {
        if grads.len() != self.velocity.len() {
            return Err(Error::invalid("sgd step", "gradient count differs from the model"));
        }
        for i in 0..grads.len() {
            if !model.is_trainable(i) {
                continue;
            }
            if let Some(g) = &grads[i] {
                sgd_step(&mut model.params_mut()[i].value, g, &mut self.velocity[i], learning_rate, momentum)?;
            }
        }
        Ok(())
    }
}
