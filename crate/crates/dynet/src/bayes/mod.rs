//! Bayesian topology identification.
//!
//! A Gaussian prior with a stability-encoding kernel is placed on each
//! connection's AR coefficients; integrating the coefficients out gives a
//! closed-form marginal likelihood per target node, hyperparameters are
//! fitted by EM, and the graph estimate maximizes the summed marginal
//! likelihood via per-node greedy search.

pub mod em;
pub mod evidence;
pub mod kernel;
pub mod search;

pub use em::{em_estimate, em_estimate_traced, EmOptions, NodeBayesState};
pub use evidence::{
    log_marginal_likelihood, marginal_with_posterior, regressor_blocks, NodeProblem, Posterior,
};
pub use kernel::{kernel_matrix, EdgeKernelParams};
pub use search::{
    default_order, exhaustive_search, exhaustive_search_with_options, greedy_search,
    greedy_search_with_options, BayesGraphEstimate, EvidenceCache,
};
