//! obslab: a simulation-and-learning workbench for binary signal-detection
//! tasks in medical imaging.
//!
//! The crate generates stochastic object ensembles (lumpy and clustered lumpy
//! backgrounds), simulates noisy measurements, and estimates the two classic
//! task-based figures of merit: the Bayesian ideal observer (approximated by a
//! convolutional network trained on cross-entropy) and the Hotelling observer
//! (approximated by a single-layer linear network trained on a constrained
//! quadratic loss). Reference implementations — analytic likelihood ratios,
//! matrix-free conjugate-gradient and Woodbury template solvers, and a
//! Markov-chain Monte Carlo likelihood-ratio estimator — validate the learned
//! observers.
//!
//! Start with the runnable examples:
//!
//! ```text
//! cargo run --release --example phantom_gallery
//! cargo run --release --example analytic_ske_bke
//! cargo run --release --example ho_solvers
//! cargo run --release --example slnn_template_recovery
//! cargo run --release --example cnn_architecture_ladder
//! cargo run --release --example mcmc_likelihood_ratio
//! cargo run --release --example roc_analysis
//! cargo run --release --example end_to_end_lumpy
//! ```
//!
//! A thin `obslab` binary wraps the same pipelines behind subcommands
//! (`generate`, `train-ho`, `train-io`, `mcmc`, `evaluate`, `report`,
//! `self-test`) driven by flat key-value config files.

pub mod evalkit;
pub mod harness;
pub mod imaging;
pub mod mcmc;
pub mod neural;
pub mod observers;
pub mod phantoms;
pub mod rng;
pub mod trainers;
pub(crate) mod vecmath;

pub use rng::{child_rng, child_seed};
