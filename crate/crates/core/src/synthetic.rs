//! Procedurally drawn faces-that-are-not-faces with labels for all four
//! heads derived from shared latent factors.
//!
//! Each example draws a latent pair `(a, b)` with `a, b ∈ 0..3` and
//! `3b + a < 7`. The emotion class is `3b + a`, race is `a`, the age group
//! is `b` and gender is `(a + b) mod 3`. The image shows a bright square in
//! the left half whose height encodes `a` and one in the right half whose
//! height encodes `b`, over uniform noise and with positional jitter. The
//! emotion is therefore a conjunction of two cues that the race and age
//! heads see separately.

use serde::{Deserialize, Serialize};

use crate::data::LabeledExample;
use crate::error::{Error, Result};
use crate::model::INPUT_SHAPE;
use crate::rng::Rng;
use crate::tensor::Tensor;

const SIDE: usize = 50;
const MARK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub count: usize,
    /// Peak amplitude of the background noise, in `[0, 1)`.
    pub noise: f64,
    /// Maximum offset of each square from its nominal position, in pixels.
    pub jitter: usize,
    /// Keep only the emotion label, as in FER-style data.
    pub emotion_only: bool,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            count: 64,
            noise: 0.3,
            jitter: 2,
            emotion_only: false,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("synthetic.count must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return Err(Error::Config(format!("synthetic.noise {} outside [0, 1)", self.noise)));
        }
        if self.jitter > 4 {
            return Err(Error::Config(format!("synthetic.jitter {} exceeds 4", self.jitter)));
        }
        Ok(())
    }
}

/// Labels `[emotion, gender, race, age]` for the latent pair.
pub fn latent_labels(a: usize, b: usize) -> [usize; 4] {
    [3 * b + a, (a + b) % 3, a, b]
}

fn draw_square(pixels: &mut [f64], top: usize, left: usize) {
    for y in top..top + MARK {
        for x in left..left + MARK {
            pixels[y * SIDE + x] = 1.0;
        }
    }
}

pub fn generate(cfg: &SyntheticConfig) -> Result<Vec<LabeledExample>> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed);
    let j = cfg.jitter;
    let mut out = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let e = rng.below(7);
        let (a, b) = (e % 3, e / 3);
        let mut pixels: Vec<f64> = (0..SIDE * SIDE).map(|_| cfg.noise * rng.next_f64()).collect();
        // nominal rows 6, 21, 36 leave room for ±4 jitter and the square
        let mut place = |nominal: usize| nominal + rng.below(2 * j + 1) - j;
        let (ya, xa) = (place(6 + 15 * a), place(8));
        let (yb, xb) = (place(6 + 15 * b), place(34));
        draw_square(&mut pixels, ya, xa);
        draw_square(&mut pixels, yb, xb);
        let [e, g, r, age] = latent_labels(a, b);
        let labels = if cfg.emotion_only {
            [Some(e), None, None, None]
        } else {
            [Some(e), Some(g), Some(r), Some(age)]
        };
        out.push(LabeledExample::new(
            Tensor::new(INPUT_SHAPE.to_vec(), pixels)?,
            labels,
            format!("synthetic{i}"),
        )?);
    }
    Ok(out)
}
