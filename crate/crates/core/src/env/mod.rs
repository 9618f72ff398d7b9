//! Apple/fence gridworld with a scripted human.

pub mod config;
pub mod policy;
pub mod record;
pub mod render;
pub mod world;

pub use config::EnvConfig;
pub use policy::{FenceImmediately, NeverFence, RandomPolicy, ScriptedPolicy, TimedFence};
pub use render::{render, Observation, Palette};
pub use world::{
    preference_label, Action, EnvState, GridWorld, Mood, PreferenceLabel, StepInfo, StepResult,
};
