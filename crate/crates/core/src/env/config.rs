use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometry, reward constants and human behaviour of the gridworld.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub grid_width: usize,
    /// Rows above the agent row holding the human lane and the apple pile.
    pub top_rows: usize,
    pub cell_px: usize,
    pub r_apple: f32,
    pub r_take: f32,
    pub c_fence: f32,
    pub anger_threshold: u32,
    pub scare_duration: u32,
    /// Inclusive bounds on the episode length.
    pub episode_len_range: [u32; 2],
    pub penalize_take: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            grid_width: 7,
            top_rows: 2,
            cell_px: 4,
            r_apple: 1.0,
            r_take: -1.0,
            c_fence: -0.05,
            anger_threshold: 5,
            scare_duration: 3,
            episode_len_range: [30, 60],
            penalize_take: true,
        }
    }
}

impl EnvConfig {
    pub const CHANNELS: usize = 3;

    /// The variant where the agent loses nothing when the human takes an apple.
    pub fn no_penalty() -> Self {
        Self {
            penalize_take: false,
            r_take: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.grid_width < 2 {
            return fail("grid_width must be at least 2 (two distinct buttons)");
        }
        if self.top_rows < 1 {
            return fail("top_rows must be at least 1");
        }
        if self.cell_px < 2 {
            return fail("cell_px must be at least 2 so stripes are visible");
        }
        if !(self.r_apple > 0.0) {
            return fail("r_apple must be positive");
        }
        if !(self.r_take <= 0.0) {
            return fail("r_take must be non-positive");
        }
        if !(self.c_fence < 0.0) {
            return fail("c_fence must be negative");
        }
        if self.anger_threshold < 1 {
            return fail("anger_threshold must be at least 1");
        }
        if self.scare_duration < 1 {
            return fail("scare_duration must be at least 1");
        }
        let [lo, hi] = self.episode_len_range;
        if lo < 1 || lo > hi {
            return fail("episode_len_range must satisfy 1 <= min <= max");
        }
        Ok(())
    }

    /// Materialize implied values: the no-penalty variant always has `r_take = 0`.
    pub fn normalized(mut self) -> Self {
        if !self.penalize_take {
            self.r_take = 0.0;
        }
        self
    }

    /// Reward applied per apple taken by the human.
    pub fn take_reward(&self) -> f32 {
        if self.penalize_take {
            self.r_take
        } else {
            0.0
        }
    }

    pub fn max_episode_len(&self) -> u32 {
        self.episode_len_range[1]
    }

    /// Rendered image height: top zone, agent row and the time band.
    pub fn image_height(&self) -> usize {
        (self.top_rows + 2) * self.cell_px
    }

    pub fn image_width(&self) -> usize {
        self.grid_width * self.cell_px
    }

    pub fn image_dims(&self) -> [usize; 3] {
        [Self::CHANNELS, self.image_height(), self.image_width()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        EnvConfig::default().validate().unwrap();
        EnvConfig::no_penalty().validate().unwrap();
    }

    #[test]
    fn invariants_are_enforced() {
        let bad = [
            EnvConfig {
                r_apple: -1.0,
                ..Default::default()
            },
            EnvConfig {
                r_take: 0.5,
                ..Default::default()
            },
            EnvConfig {
                c_fence: 0.0,
                ..Default::default()
            },
            EnvConfig {
                anger_threshold: 0,
                ..Default::default()
            },
            EnvConfig {
                scare_duration: 0,
                ..Default::default()
            },
            EnvConfig {
                episode_len_range: [0, 5],
                ..Default::default()
            },
            EnvConfig {
                episode_len_range: [6, 5],
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
    }

    #[test]
    fn no_penalty_zeroes_take_reward() {
        assert_eq!(EnvConfig::no_penalty().take_reward(), 0.0);
        assert_eq!(EnvConfig::default().take_reward(), -1.0);
        let forced = EnvConfig {
            penalize_take: false,
            ..Default::default()
        };
        assert_eq!(forced.take_reward(), 0.0);
        assert_eq!(forced.normalized().r_take, 0.0);
    }
}
