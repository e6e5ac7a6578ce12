//! Significance tests, correlation, power analysis, bootstrap error rates
//! and regressions used to compare topic models.

pub mod corr;
pub mod dist;
pub mod fdr;
pub mod hypothesis;
pub mod power;
pub mod regress;

pub use hypothesis::{mann_whitney_u, noninferiority_test, proportion_ztest, welch_t, Alternative, Scores, TestKind, TestResult};
