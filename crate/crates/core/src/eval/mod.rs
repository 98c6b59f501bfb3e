//! Regression metrics, evaluation reports and the weighting ablation.

mod ablation;
mod metrics;
mod reference;
mod report;

pub use ablation::{run_ablation, AblationResult, AblationRow};
pub use metrics::{mae, pearson_r, rmse, Metrics};
pub use reference::{ReferenceRow, LITERATURE_LABEL, OVERALL_REFERENCE, SUBGROUP_REFERENCE};
pub use report::{
    evaluate, evaluate_predictions, fmt4, fmt_opt4, read_scatter_csv, subgroup_report, Evaluation,
    MetricsReport, ScatterPoint,
};
