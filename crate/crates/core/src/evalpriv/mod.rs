//! Evaluation metrics, gradient-inversion privacy auditing and the toy
//! generator visualization.

pub mod csvio;
pub mod metrics;
pub mod pca;
pub mod privacy;
pub mod toyviz;

pub use metrics::{
    accuracy, gd_consistency_loss, global_test_accuracy, local_test_accuracy, virtual_global_model, AbortRecord,
    MetricsLog, RoundMetrics,
};
pub use privacy::{
    audit_client, cosine_similarity, dlg_attack, match_gradients, observed_gradients, psnr, recover_linear_input,
    AttackConfig, AttackReport, AttackResult, PSNR_CAP,
};
pub use pca::{pca_2d, Pca2};
pub use toyviz::{toy_divloss_pipeline, within_class_spread, PointKind, ToyConfig, ToyPoint, ToyResult};
