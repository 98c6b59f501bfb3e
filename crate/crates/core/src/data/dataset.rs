use std::collections::BTreeSet;

use rayon::prelude::*;

use super::cohort::{Cohort, Group};
use super::volume::{normalize_volume, read_volume, Volume};
use crate::error::{Error, Result};
use crate::N_TASKS;

/// A subject ready for the model: normalized volume plus regression targets.
#[derive(Debug, Clone)]
pub struct Sample {
    pub subject_id: String,
    pub group: Group,
    pub volume: Volume,
    pub targets: [f64; N_TASKS],
    /// The raw volume was constant and normalized to zeros.
    pub degenerate: bool,
}

/// Normalized in-memory view of a cohort, in cohort order.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Reads and normalizes every subject's volume file.
    pub fn from_cohort(cohort: &Cohort) -> Result<Self> {
        let volumes = cohort
            .subjects
            .par_iter()
            .map(|s| {
                let mut v = read_volume(&cohort.volume_path(s))?;
                v.subject_id = s.subject_id.clone();
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(cohort, &volumes)
    }

    /// Pairs a cohort with already-loaded raw volumes (same order).
    pub fn from_parts(cohort: &Cohort, volumes: &[Volume]) -> Result<Self> {
        if volumes.len() != cohort.len() {
            return Err(Error::Shape(format!(
                "{} volumes for {} subjects",
                volumes.len(),
                cohort.len()
            )));
        }
        let samples = cohort
            .subjects
            .iter()
            .zip(volumes)
            .map(|(s, v)| {
                let n = normalize_volume(v);
                Sample {
                    subject_id: s.subject_id.clone(),
                    group: s.group,
                    volume: Volume {
                        subject_id: s.subject_id.clone(),
                        ..n.volume
                    },
                    targets: *s.scores_m24.items(),
                    degenerate: n.degenerate,
                }
            })
            .collect();
        Ok(Dataset { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples whose ids are in `ids`, in dataset order. Unknown ids are an error.
    pub fn select(&self, ids: &BTreeSet<String>) -> Result<Vec<&Sample>> {
        let picked: Vec<&Sample> = self
            .samples
            .iter()
            .filter(|s| ids.contains(&s.subject_id))
            .collect();
        if picked.len() != ids.len() {
            let known: BTreeSet<&str> =
                self.samples.iter().map(|s| s.subject_id.as_str()).collect();
            let missing = ids.iter().find(|id| !known.contains(id.as_str())).unwrap();
            return Err(Error::Data(format!(
                "subject {missing:?} is not in the cohort"
            )));
        }
        Ok(picked)
    }
}
