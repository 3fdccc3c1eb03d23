//! Sparse precision-matrix estimation with the graphical horseshoe.
//!
//! The crate fits single Gaussian graphical models and jointly fits several
//! networks that share edge evidence through common latent variables, using
//! expectation conditional maximisation (ECM). Supporting modules simulate
//! scale-free ground truths, select the global shrinkage by AIC, score graph
//! recovery and run Bayesian-bootstrap suitability checks for joint fits.

pub mod bootstrap;
pub mod error;
pub mod harness;
pub mod io;
pub mod joint;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod simulate;
pub mod single;
pub mod tau;

pub use bootstrap::{bootstrap_edge_check, weighted_scatter, BootstrapReport};
pub use error::{GhsError, Result};
pub use joint::{fit_joint, JointConfig, JointFit, JointProblem, MomentMode};
pub use model::{
    extract_graph, objective_value, partial_correlations, Adjacency, Dataset, DatasetOptions,
    GlobalScale, GraphEstimate, LatentSummary, PrecisionMatrix, ScaleMatrix,
    DEFAULT_EDGE_THRESHOLD,
};
pub use simulate::{PartialSign, TrueModel};
pub use single::{fit_single, EcmConfig, EcmFit, TauMode};
pub use tau::{select_tau, TauGrid, TauSelection};
