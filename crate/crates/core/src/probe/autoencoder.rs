use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{
    EnvConfig, EnvState, GridWorld, Palette, RandomPolicy, ScriptedPolicy, TimedFence,
};
use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Loss, Network, NetworkSpec, Optimizer, SampleShape, Tensor};

pub const MIN_IMAGES: usize = 1_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoencoderHyperparams {
    pub conv_channels: [usize; 2],
    pub bottleneck: usize,
    pub decoder_hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// The learning rate drops tenfold for this trailing fraction of epochs.
    pub anneal_fraction: f64,
    /// Fraction of images held out to measure reconstruction error.
    pub holdout: f64,
}

impl Default for AutoencoderHyperparams {
    fn default() -> Self {
        Self {
            conv_channels: [8, 16],
            bottleneck: 64,
            decoder_hidden: 512,
            learning_rate: 2e-3,
            batch_size: 32,
            epochs: 40,
            anneal_fraction: 0.25,
            holdout: 0.1,
        }
    }
}

impl AutoencoderHyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.conv_channels.contains(&0)
            || self.bottleneck == 0
            || self.decoder_hidden == 0
            || self.batch_size == 0
            || self.epochs == 0
        {
            return Err(Error::Config(
                "autoencoder widths, batch_size and epochs must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(
                "autoencoder learning_rate must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.anneal_fraction)
            || !(self.holdout > 0.0 && self.holdout < 1.0)
        {
            return Err(Error::Config(
                "autoencoder needs anneal_fraction in [0, 1] and holdout in (0, 1)".into(),
            ));
        }
        Ok(())
    }

    /// Conv encoder, dense bottleneck, dense decoder with a sigmoid output.
    /// There is no transposed convolution in the kernel, so the decoder is dense.
    pub fn network_spec(&self, image: [usize; 3]) -> Result<NetworkSpec> {
        let [channels, height, width] = image;
        NetworkSpec::new(
            SampleShape::Image {
                channels,
                height,
                width,
            },
            vec![
                LayerSpec::Conv2d {
                    out_channels: self.conv_channels[0],
                    kernel: 3,
                    stride: 2,
                },
                LayerSpec::Relu,
                LayerSpec::Conv2d {
                    out_channels: self.conv_channels[1],
                    kernel: 3,
                    stride: 2,
                },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    out_dim: self.bottleneck,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    out_dim: self.decoder_hidden,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    out_dim: channels * height * width,
                },
                LayerSpec::Sigmoid,
            ],
        )
    }
}

#[derive(Debug, Clone)]
pub struct Autoencoder {
    pub network: Network<f32>,
    /// Layer whose output is the code (post-ReLU bottleneck).
    pub code_layer: usize,
}

pub const CODE_LAYER: usize = 6;

impl Autoencoder {
    pub fn encode(&self, images: &Tensor<f32>) -> Result<Tensor<f32>> {
        let (_, code) = self.network.forward(images, Some(self.code_layer))?;
        Ok(code.expect("capture layer requested"))
    }

    pub fn reconstruct(&self, images: &Tensor<f32>) -> Result<Tensor<f32>> {
        let out = self.network.forward(images, None)?.0;
        Tensor::new(images.shape().to_vec(), out.into_data())
    }

    /// Mean squared error per pixel.
    pub fn reconstruction_mse(&self, images: &Tensor<f32>) -> Result<f64> {
        let mut total = 0.0f64;
        for chunk in batches(images, 256) {
            let rec = self.reconstruct(&chunk)?;
            total += rec
                .data()
                .iter()
                .zip(chunk.data())
                .map(|(&a, &b)| ((a - b) as f64).powi(2))
                .sum::<f64>();
        }
        Ok(total / images.len() as f64)
    }
}

fn batches(x: &Tensor<f32>, size: usize) -> Vec<Tensor<f32>> {
    let idx: Vec<usize> = (0..x.batch()).collect();
    idx.chunks(size).map(|c| gather(x, c)).collect()
}

fn gather(x: &Tensor<f32>, rows: &[usize]) -> Tensor<f32> {
    let mut data = Vec::with_capacity(rows.len() * x.sample_len());
    for &i in rows {
        data.extend_from_slice(x.row(i));
    }
    let mut shape = x.shape().to_vec();
    shape[0] = rows.len();
    Tensor::new(shape, data).expect("gathered rows")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub initial_mse: f64,
    pub holdout_mse: f64,
    pub train_images: usize,
    pub holdout_images: usize,
}

pub fn train_autoencoder(
    images: &Tensor<f32>,
    hp: &AutoencoderHyperparams,
    seed: u64,
) -> Result<(Autoencoder, ReconstructionReport)> {
    hp.validate()?;
    let dims: [usize; 3] = images.shape()[1..].try_into().map_err(|_| {
        Error::Shape("autoencoder expects [n, channels, height, width] images".into())
    })?;
    if images.batch() < MIN_IMAGES {
        return Err(Error::Contract(format!(
            "autoencoder needs at least {MIN_IMAGES} images, got {}",
            images.batch()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Network::<f32>::init(hp.network_spec(dims)?, &mut rng)?;
    let mut ae = Autoencoder {
        network: net,
        code_layer: CODE_LAYER,
    };
    let mut order: Vec<usize> = (0..images.batch()).collect();
    order.shuffle(&mut rng);
    let n_hold = ((images.batch() as f64 * hp.holdout) as usize).max(1);
    let holdout = gather(images, &order[..n_hold]);
    let mut train_idx = order[n_hold..].to_vec();
    let initial_mse = ae.reconstruction_mse(&holdout)?;

    let mut opt = Optimizer::adam(hp.learning_rate)?;
    let anneal_from =
        hp.epochs - (hp.epochs as f64 * hp.anneal_fraction.clamp(0.0, 1.0)).round() as usize;
    for epoch in 0..hp.epochs {
        if epoch == anneal_from {
            opt.set_learning_rate(hp.learning_rate * 0.1)?;
        }
        train_idx.shuffle(&mut rng);
        for chunk in train_idx.chunks(hp.batch_size) {
            let batch = gather(images, chunk);
            let (loss, grads) = ae.network.loss_and_grad(&batch, batch.data(), Loss::Mse)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "autoencoder loss became {loss} in epoch {epoch}"
                )));
            }
            opt.step(ae.network.params_mut(), &grads)?;
        }
    }
    let holdout_mse = ae.reconstruction_mse(&holdout)?;
    let report = ReconstructionReport {
        initial_mse,
        holdout_mse,
        train_images: train_idx.len(),
        holdout_images: n_hold,
    };
    Ok((ae, report))
}

/// Counts top-zone cells drawn as vertical stripes: in some channel the mean
/// of the even pixel columns and the mean of the odd ones differ by at least
/// half the minimum palette distance. Averaging whole columns keeps pixel noise
/// in reconstructions from reading as stripes.
pub fn count_striped_cells(cfg: &EnvConfig, pixels: &[f32]) -> usize {
    let (h, w, px) = (cfg.image_height(), cfg.image_width(), cfg.cell_px);
    let threshold = 0.5 * Palette::MIN_DISTANCE;
    let mut count = 0;
    for r in 0..cfg.top_rows {
        for col in 0..cfg.grid_width {
            let contrast = (0..3)
                .map(|c| {
                    let mut sums = [0.0f32; 2];
                    for dy in 0..px {
                        for dx in 0..px {
                            sums[dx % 2] += pixels[c * h * w + (r * px + dy) * w + col * px + dx];
                        }
                    }
                    let per_parity = (px * px.div_ceil(2)) as f32;
                    let odd = (px * (px / 2)) as f32;
                    (sums[0] / per_parity - sums[1] / odd).abs()
                })
                .fold(0.0f32, f32::max);
            if contrast >= threshold {
                count += 1;
            }
        }
    }
    count
}

/// States with 0..=8 apples on the pile, gathered from random-policy rollouts
/// on the given episode seeds so every one is reachable. At most one state per
/// (seed, apple count) pair is kept.
pub fn readback_states(world: &GridWorld, seeds: &[u64]) -> Result<Vec<EnvState>> {
    let mut out = Vec::new();
    for &seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen = [false; 9];
        // a fence-timing farmer reaches high counts within one episode
        let mut farmer = TimedFence {
            anger_threshold: world.config().anger_threshold,
        };
        let mut s = world.initial_state(seed);
        loop {
            let n = s.apples_collected as usize;
            if n < seen.len() && !seen[n] {
                seen[n] = true;
                out.push(s.clone());
            }
            if s.is_done() {
                break;
            }
            let action = if rng.gen_bool(0.8) {
                farmer.act(&s, &mut rng)
            } else {
                RandomPolicy.act(&s, &mut rng)
            };
            s = world.transition(&s, action)?.0;
        }
    }
    Ok(out)
}

/// Fraction of `states` whose reconstruction shows exactly as many striped
/// cells as the state holds apples.
pub fn apple_count_readback(
    ae: &Autoencoder,
    world: &GridWorld,
    states: &[EnvState],
) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::Contract("readback needs at least one state".into()));
    }
    let mut hits = 0;
    for s in states {
        let obs = world.render(s);
        let x = Tensor::new(vec![1, 3, obs.height(), obs.width()], obs.into_pixels())?;
        let rec = ae.reconstruct(&x)?;
        hits += usize::from(
            count_striped_cells(world.config(), rec.data()) == s.apples_collected as usize,
        );
    }
    Ok(hits as f64 / states.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detector_counts_rendered_apples_exactly() {
        let world = GridWorld::new(EnvConfig::default()).unwrap();
        for seed in 0..50 {
            for apples in 0..=8 {
                let mut s = world.initial_state(seed);
                s.apples_collected = apples;
                s.forgiven_apples = apples / 2;
                let obs = world.render(&s);
                assert_eq!(
                    count_striped_cells(world.config(), obs.pixels()),
                    apples as usize,
                    "seed {seed}"
                );
            }
        }
    }

    #[test]
    fn readback_states_cover_every_count() {
        let world = GridWorld::new(EnvConfig::default()).unwrap();
        let states = readback_states(&world, &(0..20).collect::<Vec<_>>()).unwrap();
        for n in 0..=8 {
            assert!(
                states.iter().filter(|s| s.apples_collected == n).count() >= 10,
                "count {n}"
            );
        }
        for s in &states {
            assert_eq!(
                count_striped_cells(world.config(), world.render(s).pixels()),
                s.apples_collected as usize
            );
        }
    }

    #[test]
    fn too_few_images_is_rejected() {
        let x = Tensor::new(vec![10, 3, 16, 28], vec![0.5; 10 * 1344]).unwrap();
        assert!(matches!(
            train_autoencoder(&x, &AutoencoderHyperparams::default(), 0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn code_is_the_bottleneck_width() {
        let hp = AutoencoderHyperparams::default();
        let spec = hp.network_spec([3, 16, 28]).unwrap();
        assert_eq!(spec.shapes().unwrap()[CODE_LAYER], SampleShape::Flat(64));
    }
}
