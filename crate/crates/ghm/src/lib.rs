//! Generative hierarchical models on trees: exact inference, explicitly
//! constructed network approximants, training, and diffusion sampling.
//!
//! The crate is organized around one model family: a tree-structured Markov
//! process with per-(layer, rank) transition tables over a finite alphabet.
//! On top of it sit
//!
//! - [`oracle`]: brute-force posteriors by exhaustive enumeration,
//! - [`bp`]: exact belief propagation (classification and denoising),
//! - [`mp`]: the log-domain message-passing reformulation and a generic
//!   engine accepting arbitrary per-edge maps,
//! - [`relu`]: piecewise-linear ReLU approximants of exp/log/indicator and
//!   their assembly into two-hidden-layer blocks,
//! - [`nets`]: ConvNet and U-Net forward passes, weight containers, and the
//!   analytic construction of networks from model parameters,
//! - [`train`]: square-loss empirical risk minimization with hand-rolled
//!   reverse-mode gradients and projected gradient descent,
//! - [`diffusion`]: stochastic-localization sampling driven by time-indexed
//!   denoisers.

pub mod bp;
pub mod diffusion;
pub mod error;
pub mod mp;
pub mod nets;
pub mod oracle;
pub mod params;
pub mod relu;
pub mod seeding;
pub mod topology;
pub mod train;

pub use error::{GhmError, Result};
pub use params::{GhmParams, PsiMode, PsiTable, Sample};
pub use topology::{NodeId, TreeTopology};
