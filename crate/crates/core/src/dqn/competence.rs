//! Agent evaluation against the scripted controls.

use serde::{Deserialize, Serialize};

use crate::dqn::agent::{evaluate, rollout_returns, EvalStats};
use crate::env::{FenceImmediately, GridWorld, NeverFence, RandomPolicy, ScriptedPolicy};
use crate::error::Result;
use crate::nn::Network;

/// Native returns of a scripted policy on the same paired layouts as
/// [`evaluate`] with the same seed.
pub fn policy_returns<P: ScriptedPolicy>(
    world: &GridWorld,
    policy: &mut P,
    episodes: usize,
    seed: u64,
) -> Result<EvalStats> {
    // steps_remaining strictly decreases within an episode
    let mut last_remaining = u32::MAX;
    rollout_returns(world, episodes, seed, |state, _, rng| {
        if state.steps_remaining >= last_remaining {
            policy.reset();
        }
        last_remaining = state.steps_remaining;
        Ok(policy.act(state, rng))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlComparison {
    pub control: String,
    pub stats: EvalStats,
    /// Agent mean minus control mean, in standard errors of that difference.
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompetenceReport {
    pub agent: EvalStats,
    pub controls: Vec<ControlComparison>,
}

impl CompetenceReport {
    /// The smallest margin over any control.
    pub fn min_z(&self) -> f64 {
        self.controls
            .iter()
            .map(|c| c.z)
            .fold(f64::INFINITY, f64::min)
    }
}

fn z_score(a: &EvalStats, b: &EvalStats) -> f64 {
    let se = (a.std * a.std / a.episodes as f64 + b.std * b.std / b.episodes as f64).sqrt();
    let diff = a.mean - b.mean;
    if se > 0.0 {
        diff / se
    } else if diff > 0.0 {
        f64::INFINITY
    } else if diff < 0.0 {
        f64::NEG_INFINITY
    } else {
        0.0
    }
}

/// Greedy evaluation of `net` next to never-fence, fence-immediately and the
/// uniform random policy, all on the same episode layouts.
pub fn competence(
    net: &Network<f32>,
    world: &GridWorld,
    episodes: usize,
    seed: u64,
) -> Result<CompetenceReport> {
    let agent = evaluate(net, world, episodes, 0.0, seed)?;
    let controls = [
        (
            "never_fence",
            policy_returns(world, &mut NeverFence, episodes, seed)?,
        ),
        (
            "fence_immediately",
            policy_returns(world, &mut FenceImmediately::default(), episodes, seed)?,
        ),
        (
            "random",
            policy_returns(world, &mut RandomPolicy, episodes, seed)?,
        ),
    ];
    let controls = controls
        .into_iter()
        .map(|(name, stats)| ControlComparison {
            control: name.to_string(),
            z: z_score(&agent, &stats),
            stats,
        })
        .collect();
    Ok(CompetenceReport { agent, controls })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(mean: f64, std: f64, n: usize) -> EvalStats {
        EvalStats {
            mean,
            std,
            episodes: n,
            returns: vec![],
        }
    }

    #[test]
    fn z_is_difference_over_standard_error() {
        // se = sqrt(9/100 + 16/100) = 0.5
        assert!((z_score(&stats(10.0, 3.0, 100), &stats(8.0, 4.0, 100)) - 4.0).abs() < 1e-12);
        assert_eq!(
            z_score(&stats(1.0, 0.0, 5), &stats(0.0, 0.0, 5)),
            f64::INFINITY
        );
    }

    #[test]
    fn scripted_controls_order_as_designed() {
        let world = GridWorld::new(Default::default()).unwrap();
        let never = policy_returns(&world, &mut NeverFence, 50, 9).unwrap();
        let early = policy_returns(&world, &mut FenceImmediately::default(), 50, 9).unwrap();
        let random = policy_returns(&world, &mut RandomPolicy, 50, 9).unwrap();
        assert!(early.mean > never.mean && never.mean > random.mean);
        // paired layouts make the rollout reproducible
        assert_eq!(
            policy_returns(&world, &mut NeverFence, 50, 9).unwrap(),
            never
        );
    }
}
