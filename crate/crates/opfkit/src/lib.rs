//! opfkit: a self-contained optimal power flow toolkit at desk scale.
//!
//! The crate covers the classic chain from grid data to dispatch decisions:
//!
//! - [`net`] — grid data model, MATPOWER-subset case parsing, admittance and
//!   incidence matrices.
//! - [`powerflow`] — AC power flow residuals/Jacobians with a damped Newton
//!   solver, linear DC power flow, and line-flow evaluation.
//! - [`nlp`] — a dense primal-dual interior-point solver for smooth
//!   constrained programs, an equality-constrained QP solver, and derivative
//!   checking utilities.
//! - [`opf`] — single-stage AC and DC optimal power flow.
//! - [`multistage`] — ramp-constrained multi-stage OPF, one-shot or receding
//!   horizon.
//! - [`dist`] — consensus-based distributed OPF: network partitioning with
//!   auxiliary node pairs, ALADIN, and an ADMM baseline.
//! - [`stoch`] — stochastic DC OPF with affine policies, individual chance
//!   constraints under Gaussian disturbances, and Monte-Carlo validation.
//! - [`cli`] — the command-line front end used by the `opfkit` binary.
//!
//! Everything is dense `f64` linear algebra on networks of a few tens of
//! buses; quantities are per unit on the case power base unless noted.

pub mod cli;
pub mod dist;
pub mod multistage;
pub mod net;
pub mod nlp;
pub mod opf;
pub mod powerflow;
pub mod stoch;

pub use net::{AdmittanceMatrix, Bus, Generator, Line, Network};
pub use nlp::{KktResiduals, NlpOptions, NlpProblem, SolveResult, SolveStatus};

