//! Evaluation metrics and statistical aggregation utilities: coefficient
//! of determination, average precision, relative improvement, method
//! ranking, and paired significance testing.

mod basic;
mod ranks;
mod significance;

pub use basic::{
    average_precision, mean_average_precision, r_squared, relative_improvement, MeanAp,
};
pub use ranks::{mean_and_standard_error, rank_methods};
pub use significance::{holm_bonferroni, wilcoxon_one_sided_greater, HolmOutcome, EXACT_LIMIT};
