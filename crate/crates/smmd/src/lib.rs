//! Two-party federated transfer learning with a securely computed maximum
//! mean discrepancy (MMD) alignment loss.
//!
//! Two parties hold vertically split views of the same population: a labeled
//! source view and an unlabeled target view. Each trains its own MLP; the
//! later layers are aligned by minimizing the MMD between the parties'
//! hidden representations of co-occurring samples, while a linear translator
//! turns labeled source representations into pseudo-label scores for target
//! samples. In encrypted mode every cross-party quantity is exchanged under
//! additively homomorphic encryption, with uniform ring masks covering the
//! decrypt round, so neither party sees the other's raw representations,
//! labels, or per-sample gradients.
//!
//! Module map:
//!
//! * [`he`] — Paillier-style additive HE plus the fixed-point codec.
//! * [`kernels`] — kernel functions, gradients, and the monomial
//!   decomposition enabling encrypted cross-party kernel sums.
//! * [`mmd`] — the plaintext MMD^2 estimator and its secure counterparts.
//! * [`model`] — the weakly-shared MLPs, translator, Taylor logistic loss,
//!   and manual backpropagation.
//! * [`data`] — CSV ingestion, normalization, vertical feature splits, and
//!   co-occurrence construction.
//! * [`protocol`] — the two-party message schedule, masking, wire format,
//!   and loopback/TCP transports.
//! * [`harness`] — configuration, training loops for all modes, metrics,
//!   and the table experiment runner.
//!
//! The `examples/` directory carries one runnable walkthrough per major
//! capability; the `smmd` binary exposes the same functionality as thin
//! subcommands.

pub mod data;
pub mod error;
pub mod harness;
pub mod he;
pub mod kernels;
pub mod mmd;
pub mod model;
pub mod protocol;

pub use error::{Error, Result};
