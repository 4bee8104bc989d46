//! Accuracy, macro ROC-AUC and macro PR-AUC, plus stratified k-fold splits.

mod folds;
mod metrics;
mod report;

pub use folds::{stratified_kfold, validation_carve, FoldAssignment};
pub use metrics::{accuracy, average_precision, pr_auc_macro, roc_auc, roc_auc_macro, MacroScore, PredictionSet};
pub use report::{CvReport, TagReport};
