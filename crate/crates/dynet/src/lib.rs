//! Directed topology inference for linear dynamic networks.
//!
//! Given multivariate time series from an interconnected linear system, this
//! crate estimates which directed connections exist between the nodes. Two
//! estimators are provided: conditional Granger-causality analysis
//! ([`granger`]) and Bayesian topology identification by marginal-likelihood
//! model selection ([`bayes`]). On top of the Bayesian estimator, [`group`]
//! tests per-connection hypotheses across groups of repeated recordings and
//! detects connectivity changes over sessions. [`simgen`] and [`bench`]
//! generate random ground-truth networks and reproduce the TPR/FPR method
//! comparison.
//!
//! A guided tour with runnable examples lives in the `book/` directory of the
//! repository; its code blocks are compiled as doc-tests of this crate.

pub mod bayes;
pub mod bench;
pub mod dataset;
pub mod error;
pub mod granger;
pub mod graph;
pub mod group;
pub mod network;
pub mod regression;
pub mod simgen;

pub use dataset::TimeSeriesDataset;
pub use error::{Error, Result};
pub use graph::DirectedGraph;
pub use network::{TransferFunction, TransferNetwork};

// Compile the book's code blocks as doc-tests so the guide cannot drift from
// the library.
#[cfg(doctest)]
mod book {
    macro_rules! book_page {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            pub struct $name;
        };
    }

    book_page!(ModelPage, "../../../book/src/network-model.md");
    book_page!(SimulationPage, "../../../book/src/simulation.md");
    book_page!(GrangerPage, "../../../book/src/granger.md");
    book_page!(BayesPage, "../../../book/src/bayesian-identification.md");
    book_page!(GroupPage, "../../../book/src/group-hypothesis-test.md");
    book_page!(BenchmarkPage, "../../../book/src/benchmark.md");
}
