//! Generic smooth constrained optimization.
//!
//! [`NlpProblem`] is the callback interface consumed by the dense
//! primal-dual interior-point solver in [`solve_nlp`]; [`solve_eq_qp`]
//! solves the equality-constrained QP with penalized slack used by the
//! distributed coordination step, and [`check_derivatives`] compares
//! callbacks against central finite differences.
//!
//! Conventions: equality constraints `c_e(z) = 0`, inequality constraints
//! `g(z) <= 0`, per-variable bounds with infinities allowed. A variable
//! with equal lower and upper bound is held fixed. The Hessian callback
//! receives multipliers and must return the Hessian of the Lagrangian
//! `obj_factor * f + y_eq' c_e + y_ineq' g`; problems may decline (return
//! false), in which case a damped BFGS approximation is maintained.

mod check;
mod ipm;
mod ldl;
mod qp;

pub use check::{check_derivatives, DerivativeReport};
pub use ipm::solve_nlp;
pub use ldl::LdlFactor;
pub use qp::{solve_eq_qp, ConsensusBlock, QpSolution};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

/// Callback interface for a smooth constrained program.
///
/// All callbacks must be reentrant; the solver may evaluate them from
/// worker threads when problems are solved concurrently.
pub trait NlpProblem: Send + Sync {
    fn num_vars(&self) -> usize;

    fn num_eq(&self) -> usize {
        0
    }

    fn num_ineq(&self) -> usize {
        0
    }

    fn objective(&self, z: &DVector<f64>) -> f64;

    fn gradient(&self, z: &DVector<f64>, grad: &mut DVector<f64>);

    fn eq_constraints(&self, _z: &DVector<f64>, _out: &mut DVector<f64>) {}

    fn eq_jacobian(&self, _z: &DVector<f64>, _out: &mut DMatrix<f64>) {}

    fn ineq_constraints(&self, _z: &DVector<f64>, _out: &mut DVector<f64>) {}

    fn ineq_jacobian(&self, _z: &DVector<f64>, _out: &mut DMatrix<f64>) {}

    /// Lower and upper variable bounds; defaults to unbounded.
    fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let n = self.num_vars();
        (
            DVector::from_element(n, f64::NEG_INFINITY),
            DVector::from_element(n, f64::INFINITY),
        )
    }

    /// Hessian of the Lagrangian. Accumulate into `out` (pre-zeroed) and
    /// return true; returning false selects the BFGS fallback.
    fn lagrangian_hessian(
        &self,
        _z: &DVector<f64>,
        _obj_factor: f64,
        _y_eq: &DVector<f64>,
        _y_ineq: &DVector<f64>,
        _out: &mut DMatrix<f64>,
    ) -> bool {
        false
    }
}

/// Infinity norms of the first-order optimality conditions.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub eq_violation: f64,
    pub ineq_violation: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.eq_violation)
            .max(self.ineq_violation)
            .max(self.complementarity)
    }
}

/// Termination state of a solve. Hard failures (singular linear systems,
/// NaNs from callbacks) are reported as [`NlpError`] instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolveStatus {
    Converged,
    MaxIter,
    InfeasibleDetected,
}

/// Primal-dual solution report.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub z: DVector<f64>,
    pub lambda_eq: DVector<f64>,
    pub mu_ineq: DVector<f64>,
    /// Multipliers of active lower/upper bounds.
    pub z_lower: DVector<f64>,
    pub z_upper: DVector<f64>,
    pub status: SolveStatus,
    pub kkt: KktResiduals,
    pub iterations: usize,
    pub objective_value: f64,
    pub trace: Vec<IterationRecord>,
}

/// One row of the optional per-iteration trace.
#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub objective: f64,
    pub stationarity: f64,
    pub eq_violation: f64,
    pub ineq_violation: f64,
    pub complementarity: f64,
    pub step_length: f64,
    pub barrier_mu: f64,
    /// (positive, negative, zero) eigenvalue counts of the factored KKT
    /// matrix after regularization.
    pub inertia: (usize, usize, usize),
}

/// Writes the iteration trace in the documented CSV layout.
pub fn write_trace_csv<W: std::io::Write>(trace: &[IterationRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "# opfkit nlp-trace v1")?;
    writeln!(w, "iter,objective,stationarity,eq_violation,ineq_violation,complementarity,step_length,barrier_mu")?;
    for r in trace {
        writeln!(
            w,
            "{},{:.12e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e}",
            r.iter,
            r.objective,
            r.stationarity,
            r.eq_violation,
            r.ineq_violation,
            r.complementarity,
            r.step_length,
            r.barrier_mu
        )?;
    }
    Ok(())
}

/// Interior-point options.
#[derive(Debug, Clone)]
pub struct NlpOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Initial barrier parameter.
    pub mu0: f64,
    /// Relative push applied to starts sitting on or outside their bounds.
    pub bound_push: f64,
    /// Record a per-iteration trace in the result.
    pub trace: bool,
}

impl Default for NlpOptions {
    fn default() -> Self {
        NlpOptions { tol: 1e-8, max_iter: 200, mu0: 0.1, bound_push: 1e-6, trace: false }
    }
}

/// Hard solver failure.
#[derive(Debug, thiserror::Error)]
pub enum NlpError {
    #[error("linear-system failure after maximal regularization (iteration {0})")]
    LinearSystem(usize),
    #[error("callback returned a non-finite value at iteration {0}")]
    CallbackNaN(usize),
    #[error("singular KKT matrix")]
    SingularKkt,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}
