use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, EnvConfig, EnvState, GridWorld, Observation};
use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Network, NetworkSpec, SampleShape, Tensor};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DqnHyperparams {
    pub learning_rate: f64,
    pub discount: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Env steps between target-network syncs.
    pub target_sync: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Env steps over which epsilon falls linearly from start to end.
    pub epsilon_decay_steps: u64,
    pub total_steps: u64,
    /// Env steps per gradient update.
    pub train_every: u64,
    /// Env steps collected before the first update.
    pub learning_starts: u64,
    pub conv_channels: [usize; 2],
    /// Width of the last hidden layer.
    pub hidden: usize,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
}

impl Default for DqnHyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            discount: 0.97,
            replay_capacity: 50_000,
            batch_size: 32,
            target_sync: 1_000,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 50_000,
            total_steps: 150_000,
            train_every: 4,
            learning_starts: 1_000,
            conv_channels: [8, 16],
            hidden: 64,
            grad_clip: 10.0,
        }
    }
}

impl DqnHyperparams {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("dqn: {m}")));
        if !(self.learning_rate > 0.0) {
            return fail("learning_rate must be positive");
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return fail("discount must lie in (0, 1]");
        }
        if self.replay_capacity == 0
            || self.batch_size == 0
            || self.target_sync == 0
            || self.train_every == 0
        {
            return fail(
                "replay_capacity, batch_size, target_sync and train_every must be positive",
            );
        }
        if self.epsilon_decay_steps == 0 {
            return fail("epsilon_decay_steps must be positive");
        }
        if !(self.epsilon_start <= 1.0
            && self.epsilon_start >= self.epsilon_end
            && self.epsilon_end >= 0.0)
        {
            return fail("need 1 >= epsilon_start >= epsilon_end >= 0");
        }
        if self.conv_channels.contains(&0) || self.hidden == 0 {
            return fail("layer widths must be positive");
        }
        if !(self.grad_clip >= 0.0) {
            return fail("grad_clip must be non-negative");
        }
        Ok(())
    }

    pub fn epsilon_at(&self, step: u64) -> f64 {
        let frac = (step as f64 / self.epsilon_decay_steps as f64).min(1.0);
        self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)
    }

    /// Two stride-2 3x3 convolutions, a dense hidden layer and the Q head.
    pub fn network_spec(&self, env: &EnvConfig) -> Result<NetworkSpec> {
        let [channels, height, width] = env.image_dims();
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
                    out_dim: self.hidden,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    out_dim: Action::ALL.len(),
                },
            ],
        )
    }
}

/// Epsilon-greedy over Q values; greedy ties go to the lowest action index.
pub fn select_action<T: Scalar, R: Rng + ?Sized>(q: &[T], epsilon: f64, rng: &mut R) -> Action {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return Action::ALL[rng.gen_range(0..Action::ALL.len())];
    }
    Action::from_index(greedy_index(q)).expect("Q head has one output per action")
}

pub fn greedy_index<T: Scalar>(q: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// `y = r` for terminal transitions, else `r + discount * max_a Q_target(s', a)`.
/// `next_q` is row-major, one row of action values per transition.
pub fn td_targets<T: Scalar>(rewards: &[T], dones: &[bool], next_q: &[T], discount: T) -> Vec<T> {
    let actions = next_q.len() / rewards.len().max(1);
    rewards
        .iter()
        .zip(dones)
        .enumerate()
        .map(|(i, (&r, &done))| {
            if done {
                r
            } else {
                let row = &next_q[i * actions..(i + 1) * actions];
                r + discount * row.iter().copied().fold(T::neg_infinity(), T::max)
            }
        })
        .collect()
}

pub fn observation_tensor(obs: &Observation) -> Tensor<f32> {
    Tensor::new(vec![1, 3, obs.height(), obs.width()], obs.pixels().to_vec())
        .expect("observation dims")
}

/// Q values and optional captured layer for a single observation.
pub fn q_values(net: &Network<f32>, obs: &Observation) -> Result<Vec<f32>> {
    Ok(net.forward(&observation_tensor(obs), None)?.0.into_data())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub mean: f64,
    pub std: f64,
    pub episodes: usize,
    pub returns: Vec<f64>,
}

impl EvalStats {
    pub fn from_returns(returns: Vec<f64>) -> Self {
        let (mean, std) = crate::stats::mean_std(&returns);
        Self {
            mean,
            std,
            episodes: returns.len(),
            returns,
        }
    }
}

/// Run `episodes` episodes drawn from `seed`, each with its own env seed, and
/// return the undiscounted native returns. The same seed yields the same
/// episode layouts for every actor, so comparisons are paired.
pub fn rollout_returns<F>(
    world: &GridWorld,
    episodes: usize,
    seed: u64,
    mut act: F,
) -> Result<EvalStats>
where
    F: FnMut(&EnvState, &Observation, &mut ChaCha8Rng) -> Result<Action>,
{
    let mut layouts = ChaCha8Rng::seed_from_u64(seed);
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let env_seed: u64 = layouts.gen();
        let mut rng = ChaCha8Rng::seed_from_u64(env_seed ^ 0x5eed_0f_ac7);
        let (mut state, mut obs) = world.reset(env_seed);
        let mut total = 0.0;
        while !state.is_done() {
            let a = act(&state, &obs, &mut rng)?;
            let r = world.step(&state, a)?;
            total += r.reward as f64;
            state = r.next_state;
            obs = r.observation;
        }
        returns.push(total);
    }
    Ok(EvalStats::from_returns(returns))
}

/// Epsilon-greedy evaluation of a Q network on the native reward.
pub fn evaluate(
    net: &Network<f32>,
    world: &GridWorld,
    episodes: usize,
    epsilon: f64,
    seed: u64,
) -> Result<EvalStats> {
    rollout_returns(world, episodes, seed, |_, obs, rng| {
        Ok(select_action(&q_values(net, obs)?, epsilon, rng))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_picks_argmax_and_lowest_tie() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            select_action(&[0.1f32, 0.9, 0.3], 0.0, &mut rng),
            Action::Right
        );
        assert_eq!(
            select_action(&[0.5f32, 0.5, 0.1], 0.0, &mut rng),
            Action::Left
        );
    }

    #[test]
    fn full_exploration_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0f64; 3];
        for _ in 0..10_000 {
            counts[select_action(&[0.0f32, 1.0, 0.0], 1.0, &mut rng).index()] += 1.0;
        }
        let expected = 10_000.0 / 3.0;
        let chi2: f64 = counts
            .iter()
            .map(|c| (c - expected).powi(2) / expected)
            .sum();
        // 99.9th percentile of chi-square with 2 dof
        assert!(chi2 < 13.82, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn td_target_cases() {
        assert_eq!(
            td_targets(&[-1.0f64], &[true], &[5.0, 6.0, 7.0], 0.9),
            vec![-1.0]
        );
        assert_eq!(
            td_targets(&[0.5f64], &[false], &[5.0, 6.0, 7.0], 0.0),
            vec![0.5]
        );
        let y = td_targets(&[1.0f64], &[false], &[2.0, -1.0, 0.0], 0.9);
        assert!((y[0] - 2.8).abs() < 1e-12);
    }

    #[test]
    fn default_architecture_has_64_unit_last_hidden_layer() {
        let hp = DqnHyperparams::default();
        hp.validate().unwrap();
        let spec = hp.network_spec(&EnvConfig::default()).unwrap();
        let hidden = spec.last_hidden_layer().unwrap();
        assert_eq!(spec.shapes().unwrap()[hidden], SampleShape::Flat(64));
    }

    #[test]
    fn epsilon_schedule_is_linear_then_flat() {
        let hp = DqnHyperparams {
            epsilon_decay_steps: 100,
            ..Default::default()
        };
        assert_eq!(hp.epsilon_at(0), 1.0);
        assert!((hp.epsilon_at(50) - 0.525).abs() < 1e-12);
        assert!((hp.epsilon_at(1000) - 0.05).abs() < 1e-12);
    }
}
