//! Post-hoc temporal smoothing baselines, causal feature ablation and
//! ridge-based text/video retrieval.

mod ablation;
mod retrieval;
mod smooth;

pub use ablation::{
    ablation_csv, ablation_experiment, ablation_order, causal_ablate, feature_importance,
    AblationMode, AblationRow, AblationSpec,
};
pub use retrieval::{
    retrieval_eval, retrieval_experiment, ridge_fit_cv, ridge_solve, RetrievalReport,
    RetrievalSpec, RidgeModel, DEFAULT_ALPHAS,
};
pub use smooth::{ema_smooth, ema_smooth_codes, temporal_union_topk};
