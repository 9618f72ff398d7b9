use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::EnvConfig;
use super::render::{render, Observation, Palette};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mood {
    Calm,
    Angry,
    Scared,
}

impl Mood {
    pub fn as_str(self) -> &'static str {
        match self {
            Mood::Calm => "calm",
            Mood::Angry => "angry",
            Mood::Scared => "scared",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Left,
    Right,
    Press,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Left, Action::Right, Action::Press];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Left => "left",
            Action::Right => "right",
            Action::Press => "press",
        }
    }
}

/// Binary ground truth: 1 when the human is calm, 0 when angry or scared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PreferenceLabel(pub u8);

pub fn preference_label(state: &EnvState) -> PreferenceLabel {
    match state.human_mood {
        Mood::Calm => PreferenceLabel(1),
        Mood::Angry | Mood::Scared => PreferenceLabel(0),
    }
}

/// Full latent state. The human lane is top row 0; the agent row sits under the
/// top zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub agent_col: usize,
    pub apple_button_col: usize,
    pub fence_button_col: usize,
    pub apples_collected: u32,
    /// Apples the human has already made peace with; anger is triggered by
    /// `apples_collected - forgiven_apples` reaching the threshold.
    pub forgiven_apples: u32,
    pub human_col: usize,
    pub human_home_col: usize,
    /// Column of the human lane directly above the start of the apple pile.
    pub pile_col: usize,
    pub human_mood: Mood,
    pub scare_timer: u32,
    pub fence_active: bool,
    pub steps_remaining: u32,
    pub episode_len: u32,
    pub palette: Palette,
    pub seed: u64,
}

impl EnvState {
    /// Apples that still count toward the anger threshold.
    pub fn unforgiven_apples(&self) -> u32 {
        self.apples_collected.saturating_sub(self.forgiven_apples)
    }

    pub fn is_done(&self) -> bool {
        self.steps_remaining == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub human_mood: Mood,
    pub apple_pressed: bool,
    pub apples_taken_this_step: u32,
    pub fence_cost_this_step: f32,
    pub scared_this_step: bool,
    /// Armed before this step or by this step's press.
    pub fence_was_active: bool,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub next_state: EnvState,
    pub observation: Observation,
    pub reward: f32,
    pub done: bool,
    pub info: StepInfo,
}

/// Simulator bound to one validated configuration. Cheap to clone and share.
#[derive(Debug, Clone, PartialEq)]
pub struct GridWorld {
    config: EnvConfig,
}

fn toward(from: usize, to: usize) -> usize {
    match from.cmp(&to) {
        std::cmp::Ordering::Less => from + 1,
        std::cmp::Ordering::Greater => from - 1,
        std::cmp::Ordering::Equal => from,
    }
}

impl GridWorld {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.normalized(),
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    /// Draw a fresh episode from `seed`.
    pub fn reset(&self, seed: u64) -> (EnvState, Observation) {
        let state = self.initial_state(seed);
        let obs = self.render(&state);
        (state, obs)
    }

    pub fn initial_state(&self, seed: u64) -> EnvState {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols: Vec<usize> = (0..cfg.grid_width).collect();
        let buttons: Vec<usize> = cols.choose_multiple(&mut rng, 2).copied().collect();
        let agent_col = rng.gen_range(0..cfg.grid_width);
        let lane: Vec<usize> = cols.choose_multiple(&mut rng, 2).copied().collect();
        let [lo, hi] = cfg.episode_len_range;
        let episode_len = rng.gen_range(lo..=hi);
        let palette = Palette::sample(&mut rng);
        EnvState {
            agent_col,
            apple_button_col: buttons[0],
            fence_button_col: buttons[1],
            apples_collected: 0,
            forgiven_apples: 0,
            human_col: lane[0],
            human_home_col: lane[0],
            pile_col: lane[1],
            human_mood: Mood::Calm,
            scare_timer: 0,
            fence_active: false,
            steps_remaining: episode_len,
            episode_len,
            palette,
            seed,
        }
    }

    pub fn render(&self, state: &EnvState) -> Observation {
        render(&self.config, state)
    }

    /// Apply one action. Order: agent action, human update, fence cost, clock.
    pub fn step(&self, state: &EnvState, action: Action) -> Result<StepResult> {
        let next = self.transition(state, action)?;
        let observation = self.render(&next.0);
        let (next_state, reward, info) = next;
        let done = next_state.is_done();
        Ok(StepResult {
            next_state,
            observation,
            reward,
            done,
            info,
        })
    }

    /// [`GridWorld::step`] without rendering.
    pub fn transition(
        &self,
        state: &EnvState,
        action: Action,
    ) -> Result<(EnvState, f32, StepInfo)> {
        if state.steps_remaining == 0 {
            return Err(Error::Contract("step called on a finished episode".into()));
        }
        let cfg = &self.config;
        let mut s = state.clone();
        let mut reward = 0.0f32;
        let mut apple_pressed = false;
        let mut armed = false;

        match action {
            Action::Left => s.agent_col = s.agent_col.saturating_sub(1),
            Action::Right => s.agent_col = (s.agent_col + 1).min(cfg.grid_width - 1),
            Action::Press => {
                if s.agent_col == s.apple_button_col {
                    s.apples_collected += 1;
                    reward += cfg.r_apple;
                    apple_pressed = true;
                } else if s.agent_col == s.fence_button_col && s.human_mood != Mood::Scared {
                    // the fence cannot be re-armed while the human is still fleeing
                    s.fence_active = true;
                    armed = true;
                }
            }
        }

        let mut taken = 0;
        let mut scared = false;
        if s.human_mood == Mood::Calm && s.unforgiven_apples() >= cfg.anger_threshold {
            s.human_mood = Mood::Angry;
        }
        match s.human_mood {
            Mood::Calm => {}
            Mood::Angry => {
                s.human_col = toward(s.human_col, s.pile_col);
                if s.human_col == s.pile_col {
                    if s.fence_active {
                        s.human_mood = Mood::Scared;
                        s.scare_timer = cfg.scare_duration;
                        s.fence_active = false;
                        scared = true;
                    } else if s.apples_collected > 0 {
                        s.apples_collected -= 1;
                        s.forgiven_apples = s.forgiven_apples.min(s.apples_collected);
                        reward += cfg.take_reward();
                        taken = 1;
                    }
                }
            }
            Mood::Scared => {
                s.scare_timer -= 1;
                s.human_col = toward(s.human_col, s.human_home_col);
                if s.scare_timer == 0 {
                    s.forgiven_apples = s.apples_collected;
                    s.human_mood = Mood::Calm;
                }
            }
        }

        let fence_cost = if s.fence_active { cfg.c_fence } else { 0.0 };
        reward += fence_cost;
        s.steps_remaining -= 1;

        let info = StepInfo {
            human_mood: s.human_mood,
            apple_pressed,
            apples_taken_this_step: taken,
            fence_cost_this_step: fence_cost,
            scared_this_step: scared,
            fence_was_active: state.fence_active || armed,
        };
        Ok((s, reward, info))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world() -> GridWorld {
        GridWorld::new(EnvConfig::default()).unwrap()
    }

    fn calm_state(w: &GridWorld) -> EnvState {
        let mut s = w.initial_state(0);
        s.apple_button_col = 1;
        s.fence_button_col = 4;
        s.agent_col = 1;
        s.human_home_col = 6;
        s.human_col = 6;
        s.pile_col = 2;
        s
    }

    #[test]
    fn reset_is_deterministic() {
        let w = world();
        let (s1, o1) = w.reset(0);
        let (s2, o2) = w.reset(0);
        assert_eq!(s1, s2);
        assert_eq!(o1.pixels(), o2.pixels());
    }

    #[test]
    fn seeds_zero_and_one_draw_recorded_layouts() {
        // values recorded from the seeded stream
        let w = world();
        let a = w.initial_state(0);
        let b = w.initial_state(1);
        let layout = |s: &EnvState| {
            (
                s.apple_button_col,
                s.fence_button_col,
                s.agent_col,
                s.human_home_col,
                s.pile_col,
                s.episode_len,
            )
        };
        assert_eq!(layout(&a), SEED0_LAYOUT);
        assert_eq!(layout(&b), SEED1_LAYOUT);
        assert!(layout(&a) != layout(&b) || a.palette != b.palette);
    }

    const SEED0_LAYOUT: (usize, usize, usize, usize, usize, u32) = (4, 5, 3, 4, 0, 36);
    const SEED1_LAYOUT: (usize, usize, usize, usize, usize, u32) = (3, 2, 0, 1, 4, 36);

    #[test]
    fn degenerate_length_interval_is_exact() {
        let w = GridWorld::new(EnvConfig {
            episode_len_range: [30, 30],
            ..Default::default()
        })
        .unwrap();
        for seed in 0..20 {
            assert_eq!(w.initial_state(seed).steps_remaining, 30);
        }
    }

    #[test]
    fn reset_draws_distinct_buttons_and_lane_points() {
        let w = world();
        for seed in 0..200 {
            let s = w.initial_state(seed);
            assert_ne!(s.apple_button_col, s.fence_button_col);
            assert_ne!(s.human_home_col, s.pile_col);
            assert!((30..=60).contains(&s.steps_remaining));
            assert_eq!(s.human_mood, Mood::Calm);
            assert!(!s.fence_active);
        }
    }

    #[test]
    fn pressing_apple_button_below_threshold() {
        let w = world();
        let mut s = calm_state(&w);
        s.apples_collected = 3;
        let r = w.step(&s, Action::Press).unwrap();
        assert_eq!(r.next_state.apples_collected, 4);
        assert_eq!(r.reward, 1.0);
        assert_eq!(r.next_state.human_mood, Mood::Calm);
    }

    #[test]
    fn reaching_threshold_makes_human_angry_and_walk() {
        let w = world();
        let mut s = calm_state(&w);
        s.apples_collected = 4;
        let r = w.step(&s, Action::Press).unwrap();
        assert_eq!(r.next_state.human_mood, Mood::Angry);
        assert_eq!(r.next_state.human_col, 5);
    }

    #[test]
    fn fence_scares_arriving_human_without_loss() {
        let w = world();
        let mut s = calm_state(&w);
        s.apples_collected = 6;
        s.human_mood = Mood::Angry;
        s.human_col = 3;
        s.fence_active = true;
        let r = w.step(&s, Action::Left).unwrap();
        assert_eq!(r.next_state.human_mood, Mood::Scared);
        assert!(!r.next_state.fence_active);
        assert_eq!(r.next_state.apples_collected, 6);
        assert_eq!(r.reward, 0.0);
        assert!(r.info.scared_this_step);
    }

    #[test]
    fn unfenced_take_costs_r_take_only_in_penalized_variant() {
        for (cfg, want) in [(EnvConfig::default(), -1.0), (EnvConfig::no_penalty(), 0.0)] {
            let w = GridWorld::new(cfg).unwrap();
            let mut s = calm_state(&w);
            s.apples_collected = 6;
            s.human_mood = Mood::Angry;
            s.human_col = 2;
            s.agent_col = 3;
            let r = w.step(&s, Action::Press).unwrap();
            assert_eq!(r.next_state.apples_collected, 5);
            assert_eq!(r.reward, want);
            assert_eq!(r.info.apples_taken_this_step, 1);
        }
    }

    #[test]
    fn scare_ends_in_calm_with_pile_forgiven() {
        let w = world();
        let mut s = calm_state(&w);
        s.apples_collected = 7;
        s.human_mood = Mood::Scared;
        s.scare_timer = 1;
        s.human_col = 2;
        let r = w.step(&s, Action::Left).unwrap();
        assert_eq!(r.next_state.human_mood, Mood::Calm);
        assert_eq!(r.next_state.scare_timer, 0);
        assert_eq!(r.next_state.unforgiven_apples(), 0);
        assert_eq!(r.next_state.human_col, 3);
    }

    #[test]
    fn fence_press_is_ignored_while_scared() {
        let w = world();
        let mut s = calm_state(&w);
        s.agent_col = s.fence_button_col;
        s.human_mood = Mood::Scared;
        s.scare_timer = 3;
        let r = w.step(&s, Action::Press).unwrap();
        assert!(!r.next_state.fence_active);
    }

    #[test]
    fn fence_costs_every_active_step() {
        let w = world();
        let mut s = calm_state(&w);
        s.agent_col = s.fence_button_col;
        let r = w.step(&s, Action::Press).unwrap();
        assert!(r.next_state.fence_active);
        assert!((r.reward + 0.05).abs() < 1e-7);
    }

    #[test]
    fn agent_is_clamped_at_edges() {
        let w = world();
        let mut s = calm_state(&w);
        s.agent_col = 0;
        assert_eq!(w.step(&s, Action::Left).unwrap().next_state.agent_col, 0);
        s.agent_col = 6;
        assert_eq!(w.step(&s, Action::Right).unwrap().next_state.agent_col, 6);
    }

    #[test]
    fn stepping_a_finished_episode_is_an_error() {
        let w = world();
        let mut s = calm_state(&w);
        s.steps_remaining = 1;
        let r = w.step(&s, Action::Left).unwrap();
        assert!(r.done);
        assert!(matches!(
            w.step(&r.next_state, Action::Left),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn labels_follow_mood() {
        let w = world();
        let mut s = calm_state(&w);
        assert_eq!(preference_label(&s), PreferenceLabel(1));
        s.human_mood = Mood::Angry;
        assert_eq!(preference_label(&s), PreferenceLabel(0));
        s.human_mood = Mood::Scared;
        assert_eq!(preference_label(&s), PreferenceLabel(0));
    }
}
