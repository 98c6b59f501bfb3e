//! Cohorts, score manifests, volume files, intensity normalization,
//! subject-level splits and the synthetic cohort generator.

mod cohort;
mod dataset;
mod scores;
mod split;
mod synth;
mod volume;

pub use cohort::{load_cohort, write_manifest, Cohort, Group, Provenance, Sex, SubjectRecord};
pub use dataset::{Dataset, Sample};
pub use scores::{ScoreVector, DEFAULT_MAXIMA, ITEM_LABELS};
pub use split::{round_half_even, subject_split, SplitSpec};
pub use synth::{
    generate_synthetic_cohort, write_synthetic_cohort, SynthConfig, SyntheticCohort,
    REFERENCE_ITEM_CORRELATIONS, REFERENCE_ITEM_SD,
};
pub use volume::{normalize_volume, read_volume, write_volume, Normalized, Volume, VOLUME_MAGIC};
