//! Published results on the original (access-gated) cohort. They are fixed
//! fixtures for report layout, never compared against synthetic results.

use crate::data::Group;

pub const LITERATURE_LABEL: &str = "literature (ADNI, not reproduced)";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceRow {
    pub architecture: &'static str,
    pub weights: &'static str,
    pub group: Option<Group>,
    pub mae: f64,
    /// Not reported for every method.
    pub rmse: Option<f64>,
    pub r: f64,
}

/// Global-score results per weighting strategy.
pub const OVERALL_REFERENCE: [ReferenceRow; 3] = [
    ReferenceRow {
        architecture: "Strong weighted ViT",
        weights: "Q1,Q4,Q8=0.32; others=0.004",
        group: None,
        mae: 4.49,
        rmse: Some(5.29),
        r: 0.21,
    },
    ReferenceRow {
        architecture: "Moderate weighted ViT",
        weights: "Q1,Q4,Q8=0.16; others=0.052",
        group: None,
        mae: 4.52,
        rmse: Some(5.16),
        r: 0.24,
    },
    ReferenceRow {
        architecture: "Uniform weighted ViT",
        weights: "all=1",
        group: None,
        mae: 4.58,
        rmse: Some(5.28),
        r: 0.13,
    },
];

/// Per-group results, including the regional grey-matter "Dirty Model"
/// baseline (RMSE not reported).
pub const SUBGROUP_REFERENCE: [ReferenceRow; 6] = [
    ReferenceRow {
        architecture: "Strong weighted ViT",
        weights: "Q1,Q4,Q8=0.32; others=0.004",
        group: Some(Group::CN),
        mae: 3.94,
        rmse: Some(4.74),
        r: 0.10,
    },
    ReferenceRow {
        architecture: "Moderate weighted ViT",
        weights: "Q1,Q4,Q8=0.16; others=0.052",
        group: Some(Group::CN),
        mae: 4.08,
        rmse: Some(4.62),
        r: 0.30,
    },
    ReferenceRow {
        architecture: "Dirty Model",
        weights: "n/a",
        group: Some(Group::CN),
        mae: 3.18,
        rmse: None,
        r: 0.08,
    },
    ReferenceRow {
        architecture: "Strong weighted ViT",
        weights: "Q1,Q4,Q8=0.32; others=0.004",
        group: Some(Group::MCI),
        mae: 5.32,
        rmse: Some(6.02),
        r: 0.27,
    },
    ReferenceRow {
        architecture: "Moderate weighted ViT",
        weights: "Q1,Q4,Q8=0.16; others=0.052",
        group: Some(Group::MCI),
        mae: 5.18,
        rmse: Some(5.87),
        r: 0.15,
    },
    ReferenceRow {
        architecture: "Dirty Model",
        weights: "n/a",
        group: Some(Group::MCI),
        mae: 5.06,
        rmse: None,
        r: 0.37,
    },
];
