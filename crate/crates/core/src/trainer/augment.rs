//! Text perturbation for the augmented copy of a positive passage.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Chance of dropping each word.
    pub word_dropout: f64,
    /// Chance of swapping each word with its right neighbour.
    pub adjacent_swap: f64,
    pub lowercase: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            word_dropout: 0.1,
            adjacent_swap: 0.05,
            lowercase: true,
        }
    }
}

/// Perturbed copy of `text`. At least one word always survives dropout.
pub fn augment(text: &str, config: &AugmentConfig, rng: &mut impl Rng) -> String {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.is_empty() {
        return String::new();
    }
    let mut kept: Vec<&str> = words
        .iter()
        .copied()
        .filter(|_| !rng.random_bool(config.word_dropout))
        .collect();
    if kept.is_empty() {
        kept.push(words[rng.random_range(0..words.len())]);
    }
    let mut i = 0;
    while i + 1 < kept.len() {
        if rng.random_bool(config.adjacent_swap) {
            kept.swap(i, i + 1);
            i += 2;
        } else {
            i += 1;
        }
    }
    let out = kept.join(" ");
    if config.lowercase {
        out.to_lowercase()
    } else {
        out
    }
}
