use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cohort::{Cohort, Group};
use crate::error::{Error, Result};

/// Subject-level train/validation partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub ratio: f64,
    pub train_ids: BTreeSet<String>,
    pub val_ids: BTreeSet<String>,
}

impl SplitSpec {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("split serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: SplitSpec = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if let Some(id) = s.train_ids.intersection(&s.val_ids).next() {
            return Err(Error::Data(format!(
                "{}: {id} is in both splits",
                path.display()
            )));
        }
        Ok(s)
    }

    /// Checks the split against a cohort: disjoint, and covering it exactly.
    pub fn check_covers(&self, cohort: &Cohort) -> Result<()> {
        if let Some(id) = self.train_ids.intersection(&self.val_ids).next() {
            return Err(Error::Data(format!("{id} appears in both train and val")));
        }
        let ids: BTreeSet<&str> = cohort.ids().collect();
        let covered = self.train_ids.len() + self.val_ids.len();
        let all_known = self
            .train_ids
            .iter()
            .chain(&self.val_ids)
            .all(|id| ids.contains(id.as_str()));
        if !all_known || covered != ids.len() {
            return Err(Error::Data(
                "split does not cover the cohort's subject ids exactly".into(),
            ));
        }
        Ok(())
    }
}

/// Round half to even, for non-negative inputs.
pub fn round_half_even(x: f64) -> usize {
    let fl = x.floor();
    let frac = x - fl;
    let fl_u = fl as usize;
    if frac > 0.5 || (frac == 0.5 && !fl_u.is_multiple_of(2)) {
        fl_u + 1
    } else {
        fl_u
    }
}

/// Stratified subject-level split: each group present contributes
/// `round_half_even(ratio * n_group)` subjects to train, the rest to val.
pub fn subject_split(cohort: &Cohort, ratio: f64, seed: u64) -> Result<SplitSpec> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!(
            "split ratio must be in (0, 1), got {ratio}"
        )));
    }
    if cohort.len() < 2 {
        return Err(Error::Data(format!(
            "cannot split a cohort of {} subject(s)",
            cohort.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_ids = BTreeSet::new();
    let mut val_ids = BTreeSet::new();
    for group in Group::ALL {
        let mut ids: Vec<&str> = cohort
            .subjects
            .iter()
            .filter(|s| s.group == group)
            .map(|s| s.subject_id.as_str())
            .collect();
        match ids.len() {
            0 => continue,
            1 => {
                return Err(Error::Data(format!(
                    "group {group} has a single subject; stratified split needs at least 2"
                )))
            }
            _ => {}
        }
        ids.shuffle(&mut rng);
        let n_train = round_half_even(ratio * ids.len() as f64).min(ids.len());
        train_ids.extend(ids[..n_train].iter().map(|s| s.to_string()));
        val_ids.extend(ids[n_train..].iter().map(|s| s.to_string()));
    }
    Ok(SplitSpec {
        seed,
        ratio,
        train_ids,
        val_ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Provenance, ScoreVector, Sex, SubjectRecord};

    fn cohort(n_cn: usize, n_mci: usize) -> Cohort {
        let mut subjects = Vec::new();
        for i in 0..n_cn + n_mci {
            subjects.push(SubjectRecord {
                subject_id: format!("S{i:03}"),
                group: if i < n_cn { Group::CN } else { Group::MCI },
                age: 70.0,
                sex: Sex::F,
                volume_path: String::new(),
                scores_m24: ScoreVector::with_default_maxima([0.0; 13]).unwrap(),
            });
        }
        Cohort::new(
            subjects,
            Provenance::Synthetic,
            crate::data::DEFAULT_MAXIMA,
            Default::default(),
        )
        .unwrap()
    }

    #[test]
    fn rounding_rule() {
        assert_eq!(round_half_even(206.4), 206);
        assert_eq!(round_half_even(2.5), 2);
        assert_eq!(round_half_even(3.5), 4);
        assert_eq!(round_half_even(7.6), 8);
        assert_eq!(round_half_even(0.0), 0);
    }

    #[test]
    fn ten_subjects() {
        let s = subject_split(&cohort(10, 0), 0.8, 1).unwrap();
        assert_eq!((s.train_ids.len(), s.val_ids.len()), (8, 2));
        let s = subject_split(&cohort(5, 5), 0.8, 1).unwrap();
        assert_eq!((s.train_ids.len(), s.val_ids.len()), (8, 2));
        assert!(s.train_ids.is_disjoint(&s.val_ids));
    }

    #[test]
    fn paper_sized_cohort() {
        let c = cohort(163, 95);
        let s = subject_split(&c, 0.8, 42).unwrap();
        assert_eq!((s.train_ids.len(), s.val_ids.len()), (206, 52));
        s.check_covers(&c).unwrap();
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let c = cohort(20, 20);
        assert_eq!(
            subject_split(&c, 0.8, 3).unwrap(),
            subject_split(&c, 0.8, 3).unwrap()
        );
        assert_ne!(
            subject_split(&c, 0.8, 3).unwrap().val_ids,
            subject_split(&c, 0.8, 4).unwrap().val_ids
        );
    }

    #[test]
    fn errors() {
        assert!(subject_split(&cohort(1, 0), 0.8, 0).is_err());
        assert!(subject_split(&cohort(5, 1), 0.8, 0).is_err());
        assert!(subject_split(&cohort(5, 5), 1.0, 0).is_err());
        assert!(subject_split(&cohort(5, 5), 0.0, 0).is_err());
    }
}
