use serde::{Deserialize, Serialize};

use super::network::{ForwardPass, Gradients, Network};
use super::spec::LayerSpec;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Mean over every output element of `(pred - target)^2`.
    Mse,
    /// Mean binary cross-entropy; the network output is a probability.
    BinaryCrossEntropy,
}

/// Loss value and its gradient w.r.t. the predictions.
pub fn mse<T: Scalar>(pred: &[T], target: &[T]) -> (T, Vec<T>) {
    let count = T::from_usize_lossy(pred.len().max(1));
    let two = T::lit(2.0);
    let mut value = T::zero();
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let e = p - t;
            value += e * e;
            two * e / count
        })
        .collect();
    (value / count, grad)
}

/// MSE restricted to entries where `mask` is set, averaged over the number of
/// rows. Used for Q-regression where only the taken action has a target.
pub fn masked_mse<T: Scalar>(pred: &[T], target: &[T], mask: &[bool], rows: usize) -> (T, Vec<T>) {
    let count = T::from_usize_lossy(rows.max(1));
    let two = T::lit(2.0);
    let mut value = T::zero();
    let grad = pred
        .iter()
        .zip(target)
        .zip(mask)
        .map(|((&p, &t), &m)| {
            if m {
                let e = p - t;
                value += e * e;
                two * e / count
            } else {
                T::zero()
            }
        })
        .collect();
    (value / count, grad)
}

fn check_binary<T: Scalar>(targets: &[T]) -> Result<()> {
    if let Some(t) = targets.iter().find(|&&t| t != T::zero() && t != T::one()) {
        return Err(Error::Contract(format!(
            "cross-entropy target {t} is not 0 or 1"
        )));
    }
    Ok(())
}

fn softplus<T: Scalar>(z: T) -> T {
    if z > T::zero() {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl<T: Scalar> Network<T> {
    /// Mean loss over the batch and the gradient of that mean w.r.t. every weight.
    pub fn loss_and_grad(
        &self,
        input: &Tensor<T>,
        targets: &[T],
        loss: Loss,
    ) -> Result<(T, Gradients<T>)> {
        let pass = self.forward_pass(input)?;
        self.loss_and_grad_from_pass(&pass, targets, loss)
    }

    pub fn loss_and_grad_from_pass(
        &self,
        pass: &ForwardPass<T>,
        targets: &[T],
        loss: Loss,
    ) -> Result<(T, Gradients<T>)> {
        let pred = pass.output();
        if pred.len() != targets.len() {
            return Err(Error::Shape(format!(
                "{} predictions but {} targets",
                pred.len(),
                targets.len()
            )));
        }
        match loss {
            Loss::Mse => {
                let (v, d) = mse(pred, targets);
                Ok((v, self.backward(pass, &d)?))
            }
            Loss::BinaryCrossEntropy => {
                check_binary(targets)?;
                let count = T::from_usize_lossy(pred.len().max(1));
                let layers = &self.spec().layers;
                if layers.len() >= 2 && matches!(layers.last(), Some(LayerSpec::Sigmoid)) {
                    // work on logits: d/dz = sigmoid(z) - y
                    let top = layers.len() - 1;
                    let logits = pass.layer_output(top - 1);
                    let mut value = T::zero();
                    let d: Vec<T> = logits
                        .iter()
                        .zip(pred)
                        .zip(targets)
                        .map(|((&z, &p), &y)| {
                            value += softplus(z) - y * z;
                            (p - y) / count
                        })
                        .collect();
                    Ok((value / count, self.backward_from(pass, top, &d)?))
                } else {
                    let eps = T::lit(1e-7);
                    let mut value = T::zero();
                    let d: Vec<T> = pred
                        .iter()
                        .zip(targets)
                        .map(|(&p, &y)| {
                            let p = p.max(eps).min(T::one() - eps);
                            value -= y * p.ln() + (T::one() - y) * (T::one() - p).ln();
                            (p - y) / (p * (T::one() - p) * count)
                        })
                        .collect();
                    Ok((value / count, self.backward(pass, &d)?))
                }
            }
        }
    }

    /// Mean loss only, no gradient.
    pub fn loss(&self, input: &Tensor<T>, targets: &[T], loss: Loss) -> Result<T> {
        let pass = self.forward_pass(input)?;
        let pred = pass.output();
        if pred.len() != targets.len() {
            return Err(Error::Shape(format!(
                "{} predictions but {} targets",
                pred.len(),
                targets.len()
            )));
        }
        match loss {
            Loss::Mse => Ok(mse(pred, targets).0),
            Loss::BinaryCrossEntropy => {
                check_binary(targets)?;
                let count = T::from_usize_lossy(pred.len().max(1));
                let layers = &self.spec().layers;
                if layers.len() >= 2 && matches!(layers.last(), Some(LayerSpec::Sigmoid)) {
                    let logits = pass.layer_output(layers.len() - 2);
                    let v: T = logits
                        .iter()
                        .zip(targets)
                        .map(|(&z, &y)| softplus(z) - y * z)
                        .sum();
                    Ok(v / count)
                } else {
                    let eps = T::lit(1e-7);
                    let v: T = pred
                        .iter()
                        .zip(targets)
                        .map(|(&p, &y)| {
                            let p = p.max(eps).min(T::one() - eps);
                            -(y * p.ln() + (T::one() - y) * (T::one() - p).ln())
                        })
                        .sum();
                    Ok(v / count)
                }
            }
        }
    }
}
