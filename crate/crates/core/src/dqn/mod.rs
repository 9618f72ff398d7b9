//! Deep Q-learning with a ring replay buffer and a periodically synced target network.

pub mod agent;
pub mod competence;
pub mod replay;
pub mod sweep;
pub mod trainer;

pub use agent::{
    evaluate, greedy_index, q_values, rollout_returns, select_action, td_targets, DqnHyperparams,
    EvalStats,
};
pub use competence::{competence, policy_returns, CompetenceReport, ControlComparison};
pub use replay::ReplayBuffer;
pub use sweep::{sweep_and_rank, RankedAgent, SweepJob, SweepSettings};
pub use trainer::{
    train_agent, train_agent_with, EvalSettings, NativeReward, RewardModel, TrainedAgent,
    TrainingMetrics, Transition,
};
