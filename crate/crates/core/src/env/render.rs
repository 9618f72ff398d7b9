use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::EnvConfig;
use super::world::{EnvState, Mood};
use crate::error::{Error, Result};

pub type Rgb = [f32; 3];

/// Per-episode colors. Every pair differs by at least
/// [`Palette::MIN_DISTANCE`] in some channel, and so does the forgiven-apple
/// stripe from both backgrounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    pub background: [Rgb; 2],
    pub agent: Rgb,
    pub human: Rgb,
    pub apple: Rgb,
    pub fence: Rgb,
}

impl Palette {
    pub const MIN_DISTANCE: f32 = 0.25;

    /// Per-channel jitter around each role's base color.
    pub const JITTER: f32 = 0.2;
    const BASE: [Rgb; 6] = [
        [0.15, 0.15, 0.2],
        [0.4, 0.4, 0.35],
        [0.95, 0.9, 0.2],
        [0.8, 0.3, 0.85],
        [0.9, 0.15, 0.1],
        [0.15, 0.85, 0.9],
    ];

    /// Each role's color is drawn uniformly within `JITTER` of its base color
    /// (clamped to `[0, 1]`); the whole palette is redrawn until every pair is
    /// at least `MIN_DISTANCE` apart and forgiven apples stand out from both
    /// backgrounds by the same margin.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let colors: Vec<Rgb> = Self::BASE
                .iter()
                .map(|b| {
                    b.map(|v| (v + rng.gen_range(-Self::JITTER..=Self::JITTER)).clamp(0.0, 1.0))
                })
                .collect();
            let separated = (0..6).all(|i| {
                (i + 1..6).all(|j| channel_distance(&colors[i], &colors[j]) >= Self::MIN_DISTANCE)
            });
            let dim = Self::dim(&colors[4]);
            let dim_visible = colors[..2]
                .iter()
                .all(|bg| channel_distance(&dim, bg) >= Self::MIN_DISTANCE);
            if separated && dim_visible {
                return Self {
                    background: [colors[0], colors[1]],
                    agent: colors[2],
                    human: colors[3],
                    apple: colors[4],
                    fence: colors[5],
                };
            }
        }
    }

    pub fn colors(&self) -> [Rgb; 6] {
        [
            self.background[0],
            self.background[1],
            self.agent,
            self.human,
            self.apple,
            self.fence,
        ]
    }

    /// Stripe color of apples the human has already forgiven.
    pub fn forgiven_apple(&self) -> Rgb {
        Self::dim(&self.apple)
    }

    fn dim(apple: &Rgb) -> Rgb {
        apple.map(|v| v * 0.45)
    }

    /// Second stripe color of the human; shifts with mood.
    pub fn mood_tint(&self, mood: Mood) -> Rgb {
        let base = self.human.map(|v| v * 0.5);
        let shift: Rgb = match mood {
            Mood::Calm => [0.0, 0.0, 0.0],
            Mood::Angry => [0.35, -0.1, -0.1],
            Mood::Scared => [-0.1, -0.1, 0.35],
        };
        [0, 1, 2].map(|i| (base[i] + shift[i]).clamp(0.0, 1.0))
    }
}

pub fn channel_distance(a: &Rgb, b: &Rgb) -> f32 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f32::max)
}

/// Rendered image, channel-major (`3 × height × width`), values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl Observation {
    fn blank(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            pixels: vec![0.0; 3 * height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> [usize; 3] {
        [3, self.height, self.width]
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    pub fn pixel(&self, y: usize, x: usize) -> Rgb {
        let plane = self.height * self.width;
        let i = y * self.width + x;
        [
            self.pixels[i],
            self.pixels[plane + i],
            self.pixels[2 * plane + i],
        ]
    }

    fn set(&mut self, y: usize, x: usize, c: Rgb) {
        let plane = self.height * self.width;
        let i = y * self.width + x;
        self.pixels[i] = c[0];
        self.pixels[plane + i] = c[1];
        self.pixels[2 * plane + i] = c[2];
    }

    /// 8-bit interleaved RGB.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.pixels.len());
        for y in 0..self.height {
            for x in 0..self.width {
                for c in self.pixel(y, x) {
                    out.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
        }
        out
    }

    /// Lossless PNG dump, 8 bits per channel.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.to_rgb8())
            .ok_or_else(|| Error::Format("pixel buffer does not match image size".into()))?;
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }
}

/// Top-zone cells in the order apples fill them: bottom top-row first,
/// starting at the pile column and wrapping, then upward. The human's cell is
/// skipped.
pub fn apple_cells(cfg: &EnvConfig, state: &EnvState) -> Vec<(usize, usize)> {
    let mut cells = Vec::with_capacity(cfg.top_rows * cfg.grid_width);
    for row in (0..cfg.top_rows).rev() {
        for k in 0..cfg.grid_width {
            let col = (state.pile_col + k) % cfg.grid_width;
            if row == 0 && col == state.human_col {
                continue;
            }
            cells.push((row, col));
        }
    }
    cells
}

pub fn render(cfg: &EnvConfig, state: &EnvState) -> Observation {
    let px = cfg.cell_px;
    let mut obs = Observation::blank(cfg.image_height(), cfg.image_width());
    let pal = &state.palette;
    let bg = |r: usize, c: usize| pal.background[(r + c) % 2];

    let fill = |obs: &mut Observation, r: usize, c: usize, f: &dyn Fn(usize, usize) -> Rgb| {
        for dy in 0..px {
            for dx in 0..px {
                obs.set(r * px + dy, c * px + dx, f(dy, dx));
            }
        }
    };

    for r in 0..=cfg.top_rows {
        for c in 0..cfg.grid_width {
            let color = bg(r, c);
            fill(&mut obs, r, c, &|_, _| color);
        }
    }

    // unforgiven apples first so the count that matters is never cut off
    let bright = state.unforgiven_apples() as usize;
    for (i, &(r, c)) in apple_cells(cfg, state)
        .iter()
        .take(state.apples_collected as usize)
        .enumerate()
    {
        let stripe = if i < bright {
            pal.apple
        } else {
            pal.forgiven_apple()
        };
        let back = bg(r, c);
        fill(&mut obs, r, c, &|_, dx| {
            if dx % 2 == 0 {
                stripe
            } else {
                back
            }
        });
    }

    let tint = pal.mood_tint(state.human_mood);
    let human = pal.human;
    fill(&mut obs, 0, state.human_col, &|dy, _| {
        if dy % 2 == 0 {
            human
        } else {
            tint
        }
    });

    let row = cfg.top_rows;
    let apple = pal.apple;
    let fence = pal.fence;
    // buttons differ in pattern as well as color: palettes are random, so color
    // alone cannot tell them apart before any apple exists
    let back = bg(row, state.apple_button_col);
    fill(&mut obs, row, state.apple_button_col, &|_, dx| {
        if dx % 2 == 0 {
            apple
        } else {
            back
        }
    });
    let back = bg(row, state.fence_button_col);
    fill(&mut obs, row, state.fence_button_col, &|dy, dx| {
        if (dy + dx) % 2 == 0 {
            fence
        } else {
            back
        }
    });
    if state.fence_active {
        for x in 0..cfg.image_width() {
            obs.set(row * px, x, fence);
        }
    }
    let (lo, hi) = (px / 4, px - px / 4);
    for dy in lo..hi {
        for dx in lo..hi {
            obs.set(row * px + dy, state.agent_col * px + dx, pal.agent);
        }
    }

    let band_y = (cfg.top_rows + 1) * px;
    let width = cfg.image_width();
    let filled = (state.steps_remaining as usize * width) / cfg.max_episode_len() as usize;
    for dy in 0..px {
        for x in 0..width {
            let c = if x < filled.min(width) {
                pal.agent
            } else {
                pal.background[0]
            };
            obs.set(band_y + dy, x, c);
        }
    }
    obs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::world::GridWorld;

    fn setup() -> (EnvConfig, EnvState) {
        let cfg = EnvConfig::default();
        let w = GridWorld::new(cfg.clone()).unwrap();
        let mut s = w.initial_state(5);
        s.pile_col = 2;
        s.human_col = 6;
        s.human_home_col = 6;
        (cfg, s)
    }

    /// Stripe detector used as an independent oracle: a cell is vertically
    /// striped when every pixel column is constant and neighbouring columns differ.
    pub(crate) fn is_vertical_stripe(obs: &Observation, px: usize, r: usize, c: usize) -> bool {
        let at = |dy: usize, dx: usize| obs.pixel(r * px + dy, c * px + dx);
        let cols_constant =
            (0..px).all(|dx| (1..px).all(|dy| channel_distance(&at(dy, dx), &at(0, dx)) < 0.02));
        let alternates = (1..px).all(|dx| channel_distance(&at(0, dx), &at(0, dx - 1)) > 0.05);
        cols_constant && alternates
    }

    fn count_vertical(cfg: &EnvConfig, obs: &Observation) -> usize {
        let mut n = 0;
        for r in 0..cfg.top_rows {
            for c in 0..cfg.grid_width {
                if is_vertical_stripe(obs, cfg.cell_px, r, c) {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn image_has_expected_size() {
        let (cfg, s) = setup();
        let o = render(&cfg, &s);
        assert_eq!(o.dims(), [3, 16, 28]);
        assert!(o.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn no_apples_means_no_vertical_stripes() {
        let (cfg, s) = setup();
        assert_eq!(count_vertical(&cfg, &render(&cfg, &s)), 0);
    }

    #[test]
    fn each_apple_is_one_vertical_stripe_cell() {
        let (cfg, mut s) = setup();
        for n in 0..=13 {
            s.apples_collected = n;
            s.forgiven_apples = n / 2;
            assert_eq!(count_vertical(&cfg, &render(&cfg, &s)), n as usize);
        }
    }

    #[test]
    fn human_cell_is_horizontally_striped() {
        let (cfg, s) = setup();
        let o = render(&cfg, &s);
        let px = cfg.cell_px;
        let c = s.human_col;
        for dy in 0..px {
            for dx in 1..px {
                assert_eq!(o.pixel(dy, c * px + dx), o.pixel(dy, c * px));
            }
        }
        assert_ne!(o.pixel(0, c * px), o.pixel(1, c * px));
    }

    #[test]
    fn mood_changes_only_the_human_cell() {
        let (cfg, mut s) = setup();
        let calm = render(&cfg, &s);
        s.human_mood = Mood::Angry;
        let angry = render(&cfg, &s);
        let px = cfg.cell_px;
        let mut differing = 0;
        for y in 0..calm.height() {
            for x in 0..calm.width() {
                if calm.pixel(y, x) != angry.pixel(y, x) {
                    differing += 1;
                    assert!(
                        y < px && x / px == s.human_col,
                        "diff outside human cell at ({y},{x})"
                    );
                }
            }
        }
        assert!(differing > 0);
    }

    #[test]
    fn steps_band_tracks_remaining_time() {
        let (cfg, mut s) = setup();
        let band_y = (cfg.top_rows + 1) * cfg.cell_px;
        s.steps_remaining = 0;
        let o = render(&cfg, &s);
        assert!((0..o.width()).all(|x| o.pixel(band_y, x) == s.palette.background[0]));
        s.steps_remaining = 30;
        let o = render(&cfg, &s);
        let filled = (0..o.width())
            .filter(|&x| o.pixel(band_y, x) == s.palette.agent)
            .count();
        assert_eq!(filled, 14);
    }

    #[test]
    fn render_is_deterministic() {
        let (cfg, s) = setup();
        assert_eq!(render(&cfg, &s), render(&cfg, &s));
    }

    #[test]
    fn palette_colors_are_separated() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let p = Palette::sample(&mut rng);
            let cs = p.colors();
            for i in 0..6 {
                for j in i + 1..6 {
                    assert!(channel_distance(&cs[i], &cs[j]) >= Palette::MIN_DISTANCE);
                }
            }
            for bg in &p.background {
                assert!(channel_distance(&p.forgiven_apple(), bg) >= Palette::MIN_DISTANCE);
            }
        }
    }
}
