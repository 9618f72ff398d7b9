//! Scripted controls that read the latent state directly.

use rand::Rng;

use super::world::{Action, EnvState, Mood};

pub trait ScriptedPolicy {
    fn name(&self) -> &'static str;
    /// Called once per episode before the first action.
    fn reset(&mut self) {}
    fn act<R: Rng + ?Sized>(&mut self, state: &EnvState, rng: &mut R) -> Action;
}

/// Walk toward `target`, pressing once there.
pub fn walk_and_press(state: &EnvState, target: usize) -> Action {
    match state.agent_col.cmp(&target) {
        std::cmp::Ordering::Less => Action::Right,
        std::cmp::Ordering::Greater => Action::Left,
        std::cmp::Ordering::Equal => Action::Press,
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RandomPolicy;

impl ScriptedPolicy for RandomPolicy {
    fn name(&self) -> &'static str {
        "random"
    }

    fn act<R: Rng + ?Sized>(&mut self, _: &EnvState, rng: &mut R) -> Action {
        Action::ALL[rng.gen_range(0..Action::ALL.len())]
    }
}

/// Farms apples and ignores the fence entirely.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeverFence;

impl ScriptedPolicy for NeverFence {
    fn name(&self) -> &'static str {
        "never_fence"
    }

    fn act<R: Rng + ?Sized>(&mut self, state: &EnvState, _: &mut R) -> Action {
        walk_and_press(state, state.apple_button_col)
    }
}

/// Arms the fence once at the start of the episode, then farms apples.
#[derive(Debug, Clone, Copy, Default)]
pub struct FenceImmediately {
    armed: bool,
}

impl ScriptedPolicy for FenceImmediately {
    fn name(&self) -> &'static str {
        "fence_immediately"
    }

    fn reset(&mut self) {
        self.armed = false;
    }

    fn act<R: Rng + ?Sized>(&mut self, state: &EnvState, _: &mut R) -> Action {
        if !self.armed {
            if state.fence_active {
                self.armed = true;
            } else {
                return walk_and_press(state, state.fence_button_col);
            }
        }
        walk_and_press(state, state.apple_button_col)
    }
}

/// Arms the fence just before the press that would anger the human, or as
/// soon as the human is angry.
#[derive(Debug, Clone, Copy)]
pub struct TimedFence {
    pub anger_threshold: u32,
}

impl ScriptedPolicy for TimedFence {
    fn name(&self) -> &'static str {
        "timed_fence"
    }

    fn act<R: Rng + ?Sized>(&mut self, state: &EnvState, _: &mut R) -> Action {
        let imminent = state.human_mood == Mood::Angry
            || (state.human_mood == Mood::Calm
                && state.unforgiven_apples() + 1 >= self.anger_threshold);
        if imminent && !state.fence_active {
            walk_and_press(state, state.fence_button_col)
        } else {
            walk_and_press(state, state.apple_button_col)
        }
    }
}
