use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::agent::{DqnHyperparams, EvalStats};
use super::trainer::{train_agent, EvalSettings, TrainedAgent, TrainingMetrics};
use crate::env::GridWorld;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::nn::checkpoint::{network_container, network_from_container, Container};
use crate::seed::derive_seed;

pub const AGENT_KIND: &str = "dqn_agent";
pub const TOP_K: usize = 4;

#[derive(Debug, Clone)]
pub struct RankedAgent {
    /// 1-based position by evaluation reward.
    pub rank: usize,
    pub top: bool,
    pub agent: TrainedAgent,
}

/// Candidate grid for one variant's sweep; every combination is one job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSettings {
    pub learning_rates: Vec<f64>,
    pub conv_channels: Vec<[usize; 2]>,
    pub epsilon_decay_steps: Vec<u64>,
    /// Training seeds per combination.
    pub seeds: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            learning_rates: vec![5e-4, 1e-3, 2e-3],
            conv_channels: vec![[8, 16]],
            epsilon_decay_steps: vec![30_000, 60_000],
            seeds: 1,
        }
    }
}

impl SweepSettings {
    pub fn validate(&self) -> Result<()> {
        let n = self.learning_rates.len()
            * self.conv_channels.len()
            * self.epsilon_decay_steps.len()
            * self.seeds;
        if n < TOP_K {
            return Err(Error::Config(format!(
                "sweep must produce at least {TOP_K} candidates, this grid gives {n}"
            )));
        }
        Ok(())
    }

    /// Jobs in a fixed order; ids are `<prefix>-<index>` and seeds derive from `master`.
    pub fn jobs(&self, base: &DqnHyperparams, prefix: &str, master: u64) -> Result<Vec<SweepJob>> {
        self.validate()?;
        let mut jobs = Vec::new();
        for &learning_rate in &self.learning_rates {
            for &conv_channels in &self.conv_channels {
                for &epsilon_decay_steps in &self.epsilon_decay_steps {
                    for _ in 0..self.seeds {
                        let id = format!("{prefix}-{:02}", jobs.len());
                        let hyperparams = DqnHyperparams {
                            learning_rate,
                            conv_channels,
                            epsilon_decay_steps,
                            ..base.clone()
                        };
                        hyperparams.validate()?;
                        jobs.push(SweepJob {
                            seed: derive_seed(master, &format!("sweep/{id}")),
                            id,
                            hyperparams,
                        });
                    }
                }
            }
        }
        Ok(jobs)
    }
}

/// A training job: hyperparameters, seed and agent id.
#[derive(Debug, Clone)]
pub struct SweepJob {
    pub id: String,
    pub hyperparams: DqnHyperparams,
    pub seed: u64,
}

/// Train every job (at most `workers` at a time), rank by evaluation mean
/// descending and flag the best four. Ties keep job order.
pub fn sweep_and_rank(
    world: &GridWorld,
    jobs: &[SweepJob],
    eval: &EvalSettings,
    workers: usize,
) -> Result<Vec<RankedAgent>> {
    if jobs.len() < TOP_K {
        return Err(Error::Sweep(format!(
            "need at least {TOP_K} candidates, got {}",
            jobs.len()
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Sweep(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<Result<TrainedAgent>> = pool.install(|| {
        jobs.par_iter()
            .map(|j| train_agent(world, &j.hyperparams, j.seed, eval, &j.id))
            .collect()
    });
    let mut failures = Vec::new();
    let mut agents = Vec::new();
    for (job, outcome) in jobs.iter().zip(outcomes) {
        match outcome {
            Ok(a) => agents.push(a),
            Err(e) => failures.push(format!("{}: {e}", job.id)),
        }
    }
    if agents.len() < TOP_K {
        return Err(Error::Sweep(format!(
            "only {} of {} trainings succeeded; failures: {}",
            agents.len(),
            jobs.len(),
            failures.join("; ")
        )));
    }
    Ok(rank_agents(agents))
}

pub fn rank_agents(mut agents: Vec<TrainedAgent>) -> Vec<RankedAgent> {
    agents.sort_by(|a, b| b.eval.mean.total_cmp(&a.eval.mean));
    agents
        .into_iter()
        .enumerate()
        .map(|(i, agent)| RankedAgent {
            rank: i + 1,
            top: i < TOP_K,
            agent,
        })
        .collect()
}

pub fn agent_container(agent: &TrainedAgent) -> Container {
    network_container(
        &agent.network,
        AGENT_KIND,
        json!({
            "id": agent.id,
            "hyperparams": agent.hyperparams,
            "seed": agent.seed,
            "eval": agent.eval,
        }),
    )
}

pub fn agent_from_container(c: &Container) -> Result<TrainedAgent> {
    if c.kind != AGENT_KIND {
        return Err(Error::Format(format!(
            "expected a `{AGENT_KIND}` container, found `{}`",
            c.kind
        )));
    }
    let field = |k: &str| {
        c.header
            .get(k)
            .cloned()
            .ok_or_else(|| Error::Format(format!("agent header lacks `{k}`")))
    };
    Ok(TrainedAgent {
        id: serde_json::from_value(field("id")?)?,
        network: network_from_container(c)?,
        hyperparams: serde_json::from_value(field("hyperparams")?)?,
        seed: serde_json::from_value(field("seed")?)?,
        eval: serde_json::from_value::<EvalStats>(field("eval")?)?,
        metrics: Vec::new(),
    })
}

pub fn load_agent(path: &Path) -> Result<TrainedAgent> {
    agent_from_container(&Container::from_bytes(&std::fs::read(path)?)?)
}

/// `agents/<id>/checkpoint.bin` and `agents/<id>/metrics.csv` under `dir`.
pub fn save_agent(dir: &Path, agent: &TrainedAgent) -> Result<()> {
    let base = dir.join("agents").join(&agent.id);
    write_atomic(
        &base.join("checkpoint.bin"),
        &agent_container(agent).to_bytes(),
    )?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &agent.metrics {
        w.serialize(row)?;
    }
    if agent.metrics.is_empty() {
        w.write_record([
            "step",
            "epsilon",
            "episodes",
            "recent_return",
            "recent_loss",
        ])?;
    }
    write_atomic(
        &base.join("metrics.csv"),
        &w.into_inner().map_err(|e| Error::Io(e.into_error()))?,
    )?;
    Ok(())
}

pub fn ranking_csv(ranked: &[RankedAgent]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "eval_reward_mean", "eval_reward_std", "hyperparams"])?;
    for r in ranked {
        w.write_record([
            r.agent.id.clone(),
            format!("{:.6}", r.agent.eval.mean),
            format!("{:.6}", r.agent.eval.std),
            serde_json::to_string(&r.agent.hyperparams)?,
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Persist every checkpoint plus `ranking.csv` into `dir`.
pub fn save_sweep(dir: &Path, ranked: &[RankedAgent]) -> Result<()> {
    for r in ranked {
        save_agent(dir, &r.agent)?;
    }
    write_atomic(&dir.join("ranking.csv"), &ranking_csv(ranked)?)
}

/// Ids listed in `ranking.csv`, best first.
pub fn read_ranking(dir: &Path) -> Result<Vec<String>> {
    let mut r = csv::Reader::from_path(dir.join("ranking.csv"))?;
    r.records()
        .map(|rec| Ok(rec?.get(0).unwrap_or_default().to_string()))
        .collect()
}

/// Metrics rows are kept for completeness when agents are reloaded.
pub fn read_metrics(path: &Path) -> Result<Vec<TrainingMetrics>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}
