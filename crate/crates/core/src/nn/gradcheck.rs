//! Central-difference verification of the analytic backward pass.

use serde::Serialize;

use super::loss::Loss;
use super::network::{Gradients, Network};
use super::spec::LayerSpec;
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter with the largest relative error, as (layer, index).
    pub worst: Option<(usize, usize)>,
    pub compared: usize,
    /// Parameters whose perturbation crossed a ReLU kink.
    pub skipped: usize,
    pub tolerance: f64,
    pub passed: bool,
}

const STEP: f64 = 1e-5;
const FLOOR: f64 = 1e-6;

/// Compare analytic gradients to central differences for every parameter.
pub fn grad_check(
    net: &Network<f64>,
    input: &Tensor<f64>,
    targets: &[f64],
    loss: Loss,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let (_, analytic) = net.loss_and_grad(input, targets, loss)?;
    compare_gradients(net, input, targets, loss, &analytic, tolerance)
}

/// Same as [`grad_check`] but against caller-supplied gradients.
pub fn compare_gradients(
    net: &Network<f64>,
    input: &Tensor<f64>,
    targets: &[f64],
    loss: Loss,
    analytic: &Gradients<f64>,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let base = relu_pattern(net, input)?;
    let base_on_kink = base.contains(&0);
    let mut probe = net.clone();
    let mut max_rel = 0.0f64;
    let mut worst = None;
    let mut compared = 0;
    let mut skipped = 0;
    for layer in 0..net.params().len() {
        for idx in 0..net.params()[layer].len() {
            let w0 = net.params()[layer][idx];
            probe.params_mut()[layer][idx] = w0 + STEP;
            let kink_plus = relu_pattern(&probe, input)? != base;
            let lp = probe.loss(input, targets, loss)?;
            probe.params_mut()[layer][idx] = w0 - STEP;
            let kink_minus = relu_pattern(&probe, input)? != base;
            let lm = probe.loss(input, targets, loss)?;
            probe.params_mut()[layer][idx] = w0;
            if base_on_kink || kink_plus || kink_minus {
                skipped += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * STEP);
            let a = analytic[layer][idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            compared += 1;
            if rel > max_rel {
                max_rel = rel;
                worst = Some((layer, idx));
            }
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        worst,
        compared,
        skipped,
        tolerance,
        passed: max_rel <= tolerance,
    })
}

/// Sign pattern of every ReLU input; zero marks an input sitting on the kink.
fn relu_pattern(net: &Network<f64>, input: &Tensor<f64>) -> Result<Vec<i8>> {
    let pass = net.forward_pass(input)?;
    let mut pattern = Vec::new();
    for (i, layer) in net.spec().layers.iter().enumerate() {
        if matches!(layer, LayerSpec::Relu) {
            let x = if i == 0 {
                input.data()
            } else {
                pass.layer_output(i - 1)
            };
            pattern.extend(x.iter().map(|&v| {
                if v > 0.0 {
                    1
                } else if v < 0.0 {
                    -1
                } else {
                    0
                }
            }));
        }
    }
    Ok(pattern)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::spec::{NetworkSpec, SampleShape};

    fn setup() -> (Network<f64>, Tensor<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Network::init(NetworkSpec::mlp(4, &[6], 2).unwrap(), &mut rng).unwrap();
        let x = Tensor::new(
            vec![5, 4],
            (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let y = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (net, x, y)
    }

    #[test]
    fn dense_relu_dense_passes() {
        let (net, x, y) = setup();
        let r = grad_check(&net, &x, &y, Loss::Mse, 1e-4).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.compared > 0);
    }

    #[test]
    fn doubled_gradient_fails() {
        let (net, x, y) = setup();
        let (_, mut g) = net.loss_and_grad(&x, &y, Loss::Mse).unwrap();
        for v in g.iter_mut().flatten() {
            *v *= 2.0;
        }
        let r = compare_gradients(&net, &x, &y, Loss::Mse, &g, 1e-4).unwrap();
        assert!(!r.passed);
    }

    #[test]
    fn relu_inputs_at_zero_are_excluded() {
        // every hidden pre-activation is exactly zero: all weights zero
        let spec = NetworkSpec::new(
            SampleShape::Flat(2),
            vec![
                LayerSpec::Dense { out_dim: 3 },
                LayerSpec::Relu,
                LayerSpec::Dense { out_dim: 1 },
            ],
        )
        .unwrap();
        let net = Network::from_params(spec, vec![vec![0.0; 9], vec![], vec![0.5; 4]]).unwrap();
        let x = Tensor::new(vec![1, 2], vec![1.0, -1.0]).unwrap();
        let r = grad_check(&net, &x, &[1.0], Loss::Mse, 1e-4).unwrap();
        assert_eq!(r.compared, 0);
        assert_eq!(r.skipped, net.num_params());
    }
}
