use serde::{Deserialize, Serialize};

use super::collect::{collect_states, features, labels_of, CollectionSettings};
use crate::dqn::agent::observation_tensor;
use crate::dqn::{train_agent_with, EvalSettings, RewardModel, TrainedAgent};
use crate::env::{preference_label, Action, EnvState, GridWorld, StepInfo};
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::probe::{
    auc, train_nn_probe, InputSource, LabeledDataset, NnProbe, NnProbeHyperparams, SourceTag,
};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapSettings {
    /// Report rows including the natively trained round 0.
    pub rounds: usize,
    /// Weight of the preference score in the wrapped reward.
    pub lambda: f64,
    pub retrain_steps: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: u64,
    pub probe_train_size: usize,
    /// Early-stopping split for the extracted probe.
    pub probe_stop_size: usize,
    /// Fresh ground-truth samples the probe AUC is measured on each round.
    pub auc_check_size: usize,
    pub min_probe_auc: f64,
    /// Probe configuration; the pipeline substitutes the grid's best
    /// activation-network hyperparameters when available.
    pub probe: NnProbeHyperparams,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        Self {
            rounds: 2,
            lambda: 1.0,
            retrain_steps: 100_000,
            epsilon_start: 0.3,
            epsilon_end: 0.05,
            epsilon_decay_steps: 20_000,
            probe_train_size: 500,
            probe_stop_size: 200,
            auc_check_size: 1_000,
            min_probe_auc: 0.6,
            probe: NnProbeHyperparams {
                conv_channels: Vec::new(),
                ..Default::default()
            },
        }
    }
}

impl BootstrapSettings {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("bootstrap rounds must be at least 1".into()));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::Config(
                "bootstrap lambda must be finite and non-negative".into(),
            ));
        }
        if !(1.0 >= self.epsilon_start
            && self.epsilon_start >= self.epsilon_end
            && self.epsilon_end >= 0.0)
            || self.epsilon_decay_steps == 0
        {
            return Err(Error::Config(
                "bootstrap needs 1 >= epsilon_start >= epsilon_end >= 0 and a positive decay"
                    .into(),
            ));
        }
        if self.probe_train_size < 2 || self.probe_stop_size < 2 || self.auc_check_size < 2 {
            return Err(Error::Config(
                "bootstrap probe splits need at least two samples".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.min_probe_auc) {
            return Err(Error::Config(
                "bootstrap min_probe_auc must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Where the wrapped reward's preference term comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreferenceSource {
    /// A probe extracted from the previous round's agent.
    Probe,
    /// The simulator's ground-truth label; an upper-bound control.
    Oracle,
}

/// Native reward without the take penalty, plus `lambda` times a preference
/// score of the next state.
pub struct PreferenceReward {
    lambda: f32,
    r_take: f32,
    scorer: Scorer,
}

enum Scorer {
    Oracle,
    Probe {
        network: Network<f32>,
        layer: usize,
        probe: NnProbe,
        world: GridWorld,
    },
}

impl PreferenceReward {
    pub fn oracle(world: &GridWorld, lambda: f64) -> Self {
        Self {
            lambda: lambda as f32,
            r_take: world.config().take_reward(),
            scorer: Scorer::Oracle,
        }
    }

    /// `network` is frozen: the probe reads the activations it was fitted on.
    pub fn probe(
        world: &GridWorld,
        lambda: f64,
        network: Network<f32>,
        probe: NnProbe,
    ) -> Result<Self> {
        let layer = network
            .spec()
            .last_hidden_layer()
            .ok_or_else(|| Error::Contract("agent network has no hidden layer".into()))?;
        Ok(Self {
            lambda: lambda as f32,
            r_take: world.config().take_reward(),
            scorer: Scorer::Probe {
                network,
                layer,
                probe,
                world: world.clone(),
            },
        })
    }

    fn score(&self, next: &EnvState) -> Result<f32> {
        match &self.scorer {
            Scorer::Oracle => Ok(preference_label(next).0 as f32),
            Scorer::Probe {
                network,
                layer,
                probe,
                world,
            } => {
                let obs = world.render(next);
                let acts = network
                    .forward(&observation_tensor(&obs), Some(*layer))?
                    .1
                    .expect("capture requested");
                Ok(probe.score(&acts)?[0])
            }
        }
    }
}

impl RewardModel for PreferenceReward {
    fn reward(
        &self,
        _: &EnvState,
        _: Action,
        next: &EnvState,
        native: f32,
        info: &StepInfo,
    ) -> Result<f32> {
        let without_take = native - self.r_take * info.apples_taken_this_step as f32;
        Ok(without_take + self.lambda * self.score(next)?)
    }

    fn describe(&self) -> String {
        match self.scorer {
            Scorer::Oracle => format!("oracle label x {}", self.lambda),
            Scorer::Probe { .. } => format!("probe score x {}", self.lambda),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub agent_id: String,
    pub reward: String,
    /// AUC of this round's probe on fresh ground-truth labels.
    pub probe_auc: Option<f64>,
    pub eval_mean: f64,
    pub eval_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub source: PreferenceSource,
    pub lambda: f64,
    pub rounds: Vec<RoundReport>,
}

impl BootstrapReport {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "round",
            "agent_id",
            "reward",
            "probe_auc",
            "eval_mean",
            "eval_std",
        ])?;
        for r in &self.rounds {
            w.write_record([
                r.round.to_string(),
                r.agent_id.clone(),
                r.reward.clone(),
                r.probe_auc.map(|a| format!("{a:.6}")).unwrap_or_default(),
                format!("{:.6}", r.eval_mean),
                format!("{:.6}", r.eval_std),
            ])?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

fn activation_set(
    agent: &Network<f32>,
    world: &GridWorld,
    n: usize,
    collection: &CollectionSettings,
    seed: u64,
) -> Result<LabeledDataset> {
    let states = collect_states(agent, world, n, collection, seed)?;
    let tag = SourceTag {
        input: InputSource::Activations,
        variant: super::collect::variant_of(world),
    };
    LabeledDataset::new(
        tag,
        features(agent, world, &states, InputSource::Activations)?,
        labels_of(&states),
    )
}

/// Fit a probe on the agent's activations and measure it on fresh labels.
pub fn extract_probe(
    agent: &Network<f32>,
    world: &GridWorld,
    settings: &BootstrapSettings,
    collection: &CollectionSettings,
    seed: u64,
) -> Result<(NnProbe, f64)> {
    let pool = activation_set(
        agent,
        world,
        settings.probe_train_size + settings.probe_stop_size,
        collection,
        derive_seed(seed, "probe-data"),
    )?;
    let train = pool.subset(&(0..settings.probe_train_size).collect::<Vec<_>>())?;
    let stop = pool.subset(&(settings.probe_train_size..pool.len()).collect::<Vec<_>>())?;
    let probe = train_nn_probe(
        &train,
        &stop,
        &settings.probe,
        derive_seed(seed, "probe-fit"),
    )?;
    let check = activation_set(
        agent,
        world,
        settings.auc_check_size,
        collection,
        derive_seed(seed, "auc-check"),
    )?;
    let probe_auc = auc(&probe.score(check.features())?, check.labels())?;
    Ok((probe, probe_auc))
}

/// Starting from a natively trained agent (round 0), repeatedly extract a
/// preference signal, wrap the reward with it and continue training. Every row
/// reports the native-reward evaluation of that round's agent.
pub fn bootstrap_loop(
    world: &GridWorld,
    initial: TrainedAgent,
    source: PreferenceSource,
    settings: &BootstrapSettings,
    collection: &CollectionSettings,
    eval: &EvalSettings,
    seed: u64,
) -> Result<(TrainedAgent, BootstrapReport)> {
    settings.validate()?;
    let mut rounds = vec![RoundReport {
        round: 0,
        agent_id: initial.id.clone(),
        reward: "native".into(),
        probe_auc: None,
        eval_mean: initial.eval.mean,
        eval_std: initial.eval.std,
    }];
    let mut current = initial;
    for round in 1..settings.rounds {
        let round_seed = derive_seed(seed, &format!("round/{round}"));
        let (reward, probe_auc) = match source {
            PreferenceSource::Oracle => (PreferenceReward::oracle(world, settings.lambda), None),
            PreferenceSource::Probe => {
                let (probe, probe_auc) =
                    extract_probe(&current.network, world, settings, collection, round_seed)?;
                if probe_auc < settings.min_probe_auc {
                    return Err(Error::Training(format!(
                        "bootstrap round {round}: probe AUC {probe_auc:.3} on fresh labels is below {}; the extracted preference is too weak to use as a reward",
                        settings.min_probe_auc
                    )));
                }
                (
                    PreferenceReward::probe(
                        world,
                        settings.lambda,
                        current.network.clone(),
                        probe,
                    )?,
                    Some(probe_auc),
                )
            }
        };
        let mut hp = current.hyperparams.clone();
        hp.total_steps = settings.retrain_steps;
        hp.epsilon_start = settings.epsilon_start;
        hp.epsilon_end = settings.epsilon_end;
        hp.epsilon_decay_steps = settings.epsilon_decay_steps;
        let id = format!(
            "bootstrap-{}-r{round}",
            match source {
                PreferenceSource::Probe => "probe",
                PreferenceSource::Oracle => "oracle",
            }
        );
        let next = train_agent_with(
            world,
            &hp,
            derive_seed(round_seed, "train"),
            eval,
            &id,
            Some(&current.network),
            &reward,
        )?;
        rounds.push(RoundReport {
            round,
            agent_id: id,
            reward: reward.describe(),
            probe_auc,
            eval_mean: next.eval.mean,
            eval_std: next.eval.std,
        });
        current = next;
    }
    Ok((
        current,
        BootstrapReport {
            source,
            lambda: settings.lambda,
            rounds,
        },
    ))
}
