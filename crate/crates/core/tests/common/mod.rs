#![allow(dead_code)]

use std::collections::BTreeSet;

use subscore_mtl::data::{generate_synthetic_cohort, Dataset, SplitSpec, SynthConfig};

/// In-memory synthetic cohort at the default 32^3 size.
pub fn small_dataset(n_cn: usize, n_mci: usize, seed: u64) -> Dataset {
    let synth = generate_synthetic_cohort(&SynthConfig::new(n_cn, n_mci, seed)).unwrap();
    Dataset::from_parts(&synth.cohort, &synth.volumes).unwrap()
}

/// Every subject in training, none held out.
pub fn full_split(data: &Dataset) -> SplitSpec {
    SplitSpec {
        seed: 0,
        ratio: 1.0,
        train_ids: data.samples.iter().map(|s| s.subject_id.clone()).collect(),
        val_ids: BTreeSet::new(),
    }
}
