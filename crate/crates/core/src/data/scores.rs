use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::N_TASKS;

/// Standard ADAS-Cog-13 item ranges: word recall 0-10, orientation 0-8,
/// word recognition 0-12, delayed word recall 0-10, all others 0-5.
pub const DEFAULT_MAXIMA: [f64; N_TASKS] = [
    10.0, 5.0, 5.0, 5.0, 5.0, 8.0, 12.0, 5.0, 5.0, 5.0, 5.0, 10.0, 5.0,
];

/// Display names for Q1..Q13. Items are handled purely by index.
pub const ITEM_LABELS: [&str; N_TASKS] = [
    "Word Recall",
    "Commands",
    "Constructional Praxis",
    "Naming Objects and Fingers",
    "Ideational Praxis",
    "Orientation",
    "Word Recognition",
    "Remembering Test Instructions",
    "Spoken Language Ability",
    "Comprehension of Spoken Language",
    "Word-Finding Difficulty",
    "Delayed Word Recall",
    "Digit Cancellation",
];

/// The 13 item scores of one subject. The global score is always derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    q: [f64; N_TASKS],
    max: [f64; N_TASKS],
}

impl ScoreVector {
    pub fn new(q: [f64; N_TASKS], max: [f64; N_TASKS]) -> Result<Self> {
        for (j, (&m, &x)) in max.iter().zip(&q).enumerate() {
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::Data(format!(
                    "q{} maximum must be positive, got {m}",
                    j + 1
                )));
            }
            if !(x.is_finite() && (0.0..=m).contains(&x)) {
                return Err(Error::Data(format!("q{} = {x} outside [0, {m}]", j + 1)));
            }
        }
        Ok(ScoreVector { q, max })
    }

    pub fn with_default_maxima(q: [f64; N_TASKS]) -> Result<Self> {
        Self::new(q, DEFAULT_MAXIMA)
    }

    pub fn items(&self) -> &[f64; N_TASKS] {
        &self.q
    }

    pub fn maxima(&self) -> &[f64; N_TASKS] {
        &self.max
    }

    /// Sum of the item scores, in index order.
    pub fn global(&self) -> f64 {
        self.q.iter().sum()
    }
}
