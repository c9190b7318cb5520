//! Interpretable subspace anomaly detection with sparse principal components.
//!
//! Fits an abnormal subspace (plain PCA or the sparse forward/backward SDP
//! extractions, optionally followed by a global sparsity rotation), scores
//! data by squared prediction error on that subspace and explains each
//! detection through its per-component projections.

pub mod data;
pub mod detector;
pub mod eigen;
pub mod error;
pub mod global_opt;
pub mod interpret;
pub mod matrix;
pub mod models;
pub mod persist;
pub mod sdp;

pub use data::{
    apply_preprocess, fit_preprocess, gen_synthetic, ColumnConfig, DataTable, PreprocessSpec,
    RawTable,
};
pub use detector::{
    choose_threshold, roc_auc, DetectionModel, RocCurve, ScoredInstance, ThresholdRule,
};
pub use eigen::{psd_project, sym_eigen, SymEigen};
pub use error::{Error, Result};
pub use interpret::{
    group_by_signature, interpret, render_component, signature_of, InterpretationReport, Polarity,
    Signature, SignatureGroup,
};
pub use matrix::{card_above, covariance, frobenius, l11_norm, Matrix};
pub use models::{fit, FitConfig, SubspaceModel, Variant};
pub use persist::{load_model, save_model};
