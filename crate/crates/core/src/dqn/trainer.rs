use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::agent::{
    evaluate, observation_tensor, select_action, td_targets, DqnHyperparams, EvalStats,
};
use super::replay::ReplayBuffer;
use crate::env::{Action, EnvState, GridWorld, StepInfo};
use crate::error::{Error, Result};
use crate::nn::loss::masked_mse;
use crate::nn::{clip_grad_norm, Network, Optimizer, Tensor};

/// A replayed step. Observations are a pure function of the state, so the
/// buffer keeps states and re-renders at sample time.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: EnvState,
    pub action: Action,
    pub reward: f32,
    pub next_state: EnvState,
    pub done: bool,
}

/// Reward the learner optimizes. The native reward is always what evaluation reports.
pub trait RewardModel: Sync {
    fn reward(
        &self,
        state: &EnvState,
        action: Action,
        next: &EnvState,
        native: f32,
        info: &StepInfo,
    ) -> Result<f32>;

    fn describe(&self) -> String;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NativeReward;

impl RewardModel for NativeReward {
    fn reward(
        &self,
        _: &EnvState,
        _: Action,
        _: &EnvState,
        native: f32,
        _: &StepInfo,
    ) -> Result<f32> {
        Ok(native)
    }

    fn describe(&self) -> String {
        "native".into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetrics {
    pub step: u64,
    pub epsilon: f64,
    pub episodes: u64,
    /// Mean native return of episodes finished since the previous row.
    pub recent_return: f64,
    /// Mean TD loss over updates since the previous row.
    pub recent_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub episodes: usize,
    pub epsilon: f64,
    /// Layout seed shared by every agent so evaluations are paired.
    pub seed: u64,
}

impl EvalSettings {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 || !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(
                "eval needs episodes >= 1 and epsilon in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            episodes: 100,
            epsilon: 0.01,
            seed: 0xe7a1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedAgent {
    pub id: String,
    pub network: Network<f32>,
    pub hyperparams: DqnHyperparams,
    pub seed: u64,
    pub eval: EvalStats,
    pub metrics: Vec<TrainingMetrics>,
}

const LOG_EVERY: u64 = 5_000;

/// Train a DQN from scratch on the native reward.
pub fn train_agent(
    world: &GridWorld,
    hp: &DqnHyperparams,
    seed: u64,
    eval: &EvalSettings,
    id: &str,
) -> Result<TrainedAgent> {
    train_agent_with(world, hp, seed, eval, id, None, &NativeReward)
}

/// Train a DQN, optionally continuing from `init`, on the reward given by `reward`.
pub fn train_agent_with(
    world: &GridWorld,
    hp: &DqnHyperparams,
    seed: u64,
    eval: &EvalSettings,
    id: &str,
    init: Option<&Network<f32>>,
    reward: &dyn RewardModel,
) -> Result<TrainedAgent> {
    hp.validate()?;
    let spec = hp.network_spec(world.config())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut online = match init {
        Some(net) => {
            if net.spec() != &spec {
                return Err(Error::Config(
                    "initial network does not match the hyperparameters' architecture".into(),
                ));
            }
            net.clone()
        }
        None => Network::init(spec, &mut rng)?,
    };
    let mut target = online.clone();
    let mut opt = Optimizer::adam(hp.learning_rate)?;
    let mut replay: ReplayBuffer<Transition> = ReplayBuffer::new(hp.replay_capacity);
    let discount = hp.discount as f32;

    let (mut state, mut obs) = world.reset(rng.gen());
    let mut episodes = 0u64;
    let mut episode_return = 0.0f64;
    let (mut window_returns, mut window_episodes) = (0.0f64, 0u64);
    let (mut window_loss, mut window_updates) = (0.0f64, 0u64);
    let mut metrics = Vec::new();

    for step in 0..hp.total_steps {
        let epsilon = hp.epsilon_at(step);
        let q = online.forward(&observation_tensor(&obs), None)?.0;
        let action = select_action(q.data(), epsilon, &mut rng);
        let result = world.step(&state, action)?;
        let learn_reward = reward.reward(
            &state,
            action,
            &result.next_state,
            result.reward,
            &result.info,
        )?;
        if !learn_reward.is_finite() {
            return Err(Error::Training(format!(
                "{id}: reward model returned {learn_reward} at step {step}"
            )));
        }
        episode_return += result.reward as f64;
        replay.push(Transition {
            state: state.clone(),
            action,
            reward: learn_reward,
            next_state: result.next_state.clone(),
            done: result.done,
        });
        if result.done {
            episodes += 1;
            window_episodes += 1;
            window_returns += episode_return;
            episode_return = 0.0;
            let fresh = world.reset(rng.gen());
            state = fresh.0;
            obs = fresh.1;
        } else {
            state = result.next_state;
            obs = result.observation;
        }

        if step >= hp.learning_starts && step % hp.train_every == 0 {
            let loss = update(
                world,
                &mut online,
                &target,
                &mut opt,
                &replay,
                hp,
                discount,
                &mut rng,
            )
            .map_err(|e| Error::Training(format!("{id}: update at env step {step} failed: {e}")))?;
            window_loss += loss;
            window_updates += 1;
        }
        if (step + 1) % hp.target_sync == 0 {
            target.copy_weights_from(&online)?;
        }
        if (step + 1) % LOG_EVERY == 0 || step + 1 == hp.total_steps {
            metrics.push(TrainingMetrics {
                step: step + 1,
                epsilon,
                episodes,
                recent_return: if window_episodes > 0 {
                    window_returns / window_episodes as f64
                } else {
                    f64::NAN
                },
                recent_loss: if window_updates > 0 {
                    window_loss / window_updates as f64
                } else {
                    f64::NAN
                },
            });
            (window_returns, window_episodes, window_loss, window_updates) = (0.0, 0, 0.0, 0);
        }
    }

    let eval_stats = evaluate(&online, world, eval.episodes, eval.epsilon, eval.seed)?;
    Ok(TrainedAgent {
        id: id.to_string(),
        network: online,
        hyperparams: hp.clone(),
        seed,
        eval: eval_stats,
        metrics,
    })
}

pub fn render_batch(world: &GridWorld, states: &[&EnvState]) -> Tensor<f32> {
    let [c, h, w] = world.config().image_dims();
    let mut data = Vec::with_capacity(states.len() * c * h * w);
    for s in states {
        data.extend_from_slice(world.render(s).pixels());
    }
    Tensor::new(vec![states.len(), c, h, w], data).expect("rendered batch dims")
}

#[allow(clippy::too_many_arguments)]
fn update(
    world: &GridWorld,
    online: &mut Network<f32>,
    target: &Network<f32>,
    opt: &mut Optimizer<f32>,
    replay: &ReplayBuffer<Transition>,
    hp: &DqnHyperparams,
    discount: f32,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let batch = replay.sample(hp.batch_size, rng);
    let states: Vec<&EnvState> = batch.iter().map(|t| &t.state).collect();
    let next_states: Vec<&EnvState> = batch.iter().map(|t| &t.next_state).collect();
    let next_q = target.forward(&render_batch(world, &next_states), None)?.0;
    let rewards: Vec<f32> = batch.iter().map(|t| t.reward).collect();
    let dones: Vec<bool> = batch.iter().map(|t| t.done).collect();
    let y = td_targets(&rewards, &dones, next_q.data(), discount);

    let pass = online.forward_pass(&render_batch(world, &states))?;
    let n_actions = Action::ALL.len();
    let mut targets = pass.output().to_vec();
    let mut mask = vec![false; targets.len()];
    for (i, t) in batch.iter().enumerate() {
        targets[i * n_actions + t.action.index()] = y[i];
        mask[i * n_actions + t.action.index()] = true;
    }
    let (loss, d_out) = masked_mse(pass.output(), &targets, &mask, batch.len());
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("TD loss is {loss}")));
    }
    let mut grads = online.backward(&pass, &d_out)?;
    if hp.grad_clip > 0.0 {
        clip_grad_norm(&mut grads, hp.grad_clip);
    }
    opt.step(online.params_mut(), &grads)?;
    Ok(loss as f64)
}
