use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::auc::auc;
use super::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Loss, Network, NetworkSpec, Optimizer, SampleShape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NnProbeHyperparams {
    /// Dense hidden widths.
    pub hidden: Vec<usize>,
    /// Stride-2 3x3 conv channels, used only for image inputs.
    #[serde(default)]
    pub conv_channels: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without eval-AUC improvement tolerated before stopping.
    pub patience: usize,
}

impl Default for NnProbeHyperparams {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            conv_channels: vec![8],
            learning_rate: 3e-3,
            batch_size: 16,
            max_epochs: 100,
            patience: 10,
        }
    }
}

impl NnProbeHyperparams {
    pub fn network_spec(&self, sample_shape: &[usize]) -> Result<NetworkSpec> {
        let mut layers = Vec::new();
        let input = match *sample_shape {
            [channels, height, width] => {
                for &c in &self.conv_channels {
                    layers.push(LayerSpec::Conv2d {
                        out_channels: c,
                        kernel: 3,
                        stride: 2,
                    });
                    layers.push(LayerSpec::Relu);
                }
                layers.push(LayerSpec::Flatten);
                SampleShape::Image {
                    channels,
                    height,
                    width,
                }
            }
            [d] => SampleShape::Flat(d),
            _ => {
                return Err(Error::Shape(format!(
                    "unsupported probe input shape {sample_shape:?}"
                )))
            }
        };
        for &h in &self.hidden {
            layers.push(LayerSpec::Dense { out_dim: h });
            layers.push(LayerSpec::Relu);
        }
        layers.push(LayerSpec::Dense { out_dim: 1 });
        layers.push(LayerSpec::Sigmoid);
        NetworkSpec::new(input, layers)
    }
}

/// Per-feature affine map fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f32>,
    pub scale: Vec<f32>,
}

impl Standardizer {
    pub fn fit(x: &Tensor<f32>) -> Self {
        let (n, d) = (x.batch(), x.sample_len());
        let mut mean = vec![0.0f64; d];
        let mut sq = vec![0.0f64; d];
        for i in 0..n {
            for (j, &v) in x.row(i).iter().enumerate() {
                mean[j] += v as f64;
                sq[j] += (v as f64) * (v as f64);
            }
        }
        let mut scale = vec![1.0f32; d];
        for j in 0..d {
            mean[j] /= n as f64;
            let var = (sq[j] / n as f64 - mean[j] * mean[j]).max(0.0);
            // constant features pass through centered
            scale[j] = if var > 1e-12 {
                (1.0 / var.sqrt()) as f32
            } else {
                1.0
            };
        }
        Self {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            scale,
        }
    }

    pub fn apply(&self, x: &Tensor<f32>) -> Tensor<f32> {
        let d = self.mean.len();
        let mut out = x.clone();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            let j = k % d;
            *v = (*v - self.mean[j]) * self.scale[j];
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct NnProbe {
    pub network: Network<f32>,
    /// Present for flat inputs; images are already in `[0, 1]`.
    pub standardizer: Option<Standardizer>,
    pub best_eval_auc: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

impl NnProbe {
    /// Probability that each sample is labeled 1.
    pub fn score(&self, x: &Tensor<f32>) -> Result<Vec<f32>> {
        let input = match &self.standardizer {
            Some(s) => s.apply(x),
            None => x.clone(),
        };
        Ok(self.network.forward(&input, None)?.0.into_data())
    }
}

/// BCE-trained sigmoid network with early stopping on eval AUC. The returned
/// weights are those of the best eval epoch.
pub fn train_nn_probe(
    train: &LabeledDataset,
    eval: &LabeledDataset,
    hp: &NnProbeHyperparams,
    seed: u64,
) -> Result<NnProbe> {
    if hp.batch_size == 0 || hp.max_epochs == 0 {
        return Err(Error::Config(
            "probe batch_size and max_epochs must be positive".into(),
        ));
    }
    if !eval.has_both_classes() {
        let (neg, pos) = eval.class_counts();
        return Err(Error::UndefinedAuc(format!(
            "eval split has {pos} positives and {neg} negatives"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = hp.network_spec(train.sample_shape())?;
    let mut net = Network::<f32>::init(spec, &mut rng)?;
    let mut opt = Optimizer::adam(hp.learning_rate)?;
    let standardizer =
        (train.sample_shape().len() == 1).then(|| Standardizer::fit(train.features()));
    let prep = |x: &Tensor<f32>| match &standardizer {
        Some(s) => s.apply(x),
        None => x.clone(),
    };
    let train_x = prep(train.features());
    let eval_x = prep(eval.features());
    let targets: Vec<f32> = train.labels().iter().map(|&l| l as f32).collect();

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = (f64::NEG_INFINITY, 0usize, net.clone());
    let mut stale = 0;
    let mut epochs_run = 0;
    for epoch in 1..=hp.max_epochs {
        epochs_run = epoch;
        order.shuffle(&mut rng);
        for chunk in order.chunks(hp.batch_size) {
            let mut data = Vec::with_capacity(chunk.len() * train_x.sample_len());
            for &i in chunk {
                data.extend_from_slice(train_x.row(i));
            }
            let mut shape = train_x.shape().to_vec();
            shape[0] = chunk.len();
            let batch = Tensor::new(shape, data)?;
            let y: Vec<f32> = chunk.iter().map(|&i| targets[i]).collect();
            let (loss, grads) = net.loss_and_grad(&batch, &y, Loss::BinaryCrossEntropy)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "probe loss became {loss} in epoch {epoch}"
                )));
            }
            opt.step(net.params_mut(), &grads)?;
        }
        let scores = net.forward(&eval_x, None)?.0.into_data();
        let eval_auc = auc(&scores, eval.labels())?;
        if eval_auc > best.0 {
            best = (eval_auc, epoch, net.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale > hp.patience {
                break;
            }
        }
    }
    Ok(NnProbe {
        network: best.2,
        standardizer,
        best_eval_auc: best.0,
        best_epoch: best.1,
        epochs_run,
    })
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::probe::dataset::{InputSource, SourceTag, Variant};

    fn tag() -> SourceTag {
        SourceTag {
            input: InputSource::Activations,
            variant: Variant::Penalized,
        }
    }

    fn separable(n: usize, seed: u64) -> LabeledDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let l = (i % 2) as u8;
            let off = if l == 1 { 1.0 } else { -1.0 };
            data.push(off + rng.gen_range(-0.5..0.5));
            data.push(rng.gen_range(-1.0..1.0));
            labels.push(l);
        }
        LabeledDataset::new(tag(), Tensor::new(vec![n, 2], data).unwrap(), labels).unwrap()
    }

    #[test]
    fn separable_data_reaches_auc_one() {
        let hp = NnProbeHyperparams {
            max_epochs: 200,
            ..Default::default()
        };
        let p = train_nn_probe(&separable(40, 1), &separable(60, 2), &hp, 0).unwrap();
        assert_eq!(p.best_eval_auc, 1.0);
    }

    #[test]
    fn flipped_labels_flip_the_auc() {
        let hp = NnProbeHyperparams {
            max_epochs: 200,
            patience: 200,
            ..Default::default()
        };
        let (tr, ev) = (separable(40, 1), separable(60, 2));
        let flip = |d: &LabeledDataset| {
            d.relabeled(d.labels().iter().map(|l| 1 - l).collect())
                .unwrap()
        };
        let p = train_nn_probe(&flip(&tr), &flip(&ev), &hp, 0).unwrap();
        assert_eq!(p.best_eval_auc, 1.0);
        let scores = p.score(ev.features()).unwrap();
        assert_eq!(auc(&scores, ev.labels()).unwrap(), 0.0);
    }

    #[test]
    fn zero_patience_stops_at_first_stall_and_keeps_best() {
        // noise labels make a stall almost immediate
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = |n: usize, rng: &mut ChaCha8Rng| {
            let data = (0..n * 8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let labels = (0..n).map(|i| (i % 2) as u8).collect();
            LabeledDataset::new(tag(), Tensor::new(vec![n, 8], data).unwrap(), labels).unwrap()
        };
        let (tr, ev) = (noise(50, &mut rng), noise(100, &mut rng));
        let hp = NnProbeHyperparams {
            patience: 0,
            max_epochs: 500,
            ..Default::default()
        };
        let p = train_nn_probe(&tr, &ev, &hp, 3).unwrap();
        assert_eq!(p.epochs_run, p.best_epoch + 1);
        let rescored = auc(&p.score(ev.features()).unwrap(), ev.labels()).unwrap();
        assert_eq!(rescored, p.best_eval_auc);
    }

    #[test]
    fn single_class_eval_is_rejected() {
        let tr = separable(10, 1);
        let ev = tr.relabeled(vec![1; 10]).unwrap();
        let r = train_nn_probe(&tr, &ev, &NnProbeHyperparams::default(), 0);
        assert!(matches!(r, Err(Error::UndefinedAuc(_))));
    }

    #[test]
    fn image_inputs_get_a_conv_stack() {
        let hp = NnProbeHyperparams::default();
        let spec = hp.network_spec(&[3, 16, 28]).unwrap();
        assert!(matches!(spec.layers[0], LayerSpec::Conv2d { .. }));
        assert_eq!(spec.output_shape().unwrap(), SampleShape::Flat(1));
    }
}
