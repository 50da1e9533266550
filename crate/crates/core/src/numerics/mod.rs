//! Dense linear algebra, REML objective evaluation, and smooth maximization
//! shared by the model-based estimators.

pub mod chol;
pub mod optim;
pub mod reml;

pub use chol::{chol_psd, decode_cov, decode_factor, encode_cov, tri_len};
pub use optim::{fd_gradient, minimize, OptOptions, OptResult};
pub use reml::{CovStructure, GlsFit, RemlFit, RemlProblem, SubjectGroup, ZSpec};
