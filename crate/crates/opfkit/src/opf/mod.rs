//! Single-stage AC and DC optimal power flow.
//!
//! Assembly functions turn a network plus cost data into [`NlpProblem`]s
//! over the decision vector (state, input); the solve functions run the
//! interior-point core and re-verify every returned solution with the
//! independent feasibility certificate in [`verify_ac_solution`] /
//! [`verify_dc_solution`] before reporting it.
//!
//! [`NlpProblem`]: crate::nlp::NlpProblem

mod ac;
mod dc;
pub(crate) mod pair;

pub use ac::{assemble_ac_opf, solve_ac_opf, AcLayout, AcOpfProblem};
pub use dc::{
    assemble_dc_opf, eliminate_dc_state, solve_dc_opf, DcLayout, DcOpfProblem, ReducedDcProblem,
};

use crate::net::Network;
use crate::nlp::{KktResiduals, NlpError, SolveStatus};
use crate::powerflow::{
    ac_residual, line_flows_ac, line_flows_dc, ControlInput, DcState, Disturbance, LineFlow,
    SystemState,
};
use nalgebra::DVector;
use serde::Serialize;

/// Quadratic cost over the stacked input (p entries first, then q entries):
/// `u' diag(quad) u + lin' u + constant`.
#[derive(Debug, Clone, Serialize)]
pub struct CostFunction {
    pub quad: DVector<f64>,
    pub lin: DVector<f64>,
    pub constant: f64,
}

impl CostFunction {
    pub fn new(quad: DVector<f64>, lin: DVector<f64>, constant: f64) -> Self {
        assert_eq!(quad.len(), lin.len(), "cost vectors disagree");
        assert!(quad.iter().all(|&v| v >= 0.0), "quadratic cost must be nonnegative");
        CostFunction { quad, lin, constant }
    }

    /// Cost data as recorded in the case file. Reactive entries are zero.
    pub fn from_network(net: &Network) -> Self {
        let g = net.n_gen();
        let mut quad = DVector::zeros(2 * g);
        let mut lin = DVector::zeros(2 * g);
        let mut constant = 0.0;
        for (k, gen) in net.generators.iter().enumerate() {
            quad[k] = gen.cost_quad;
            lin[k] = gen.cost_lin;
            constant += gen.cost_const;
        }
        CostFunction { quad, lin, constant }
    }

    pub fn n_gen(&self) -> usize {
        self.quad.len() / 2
    }

    /// Stage cost of an input.
    pub fn eval(&self, u: &ControlInput) -> f64 {
        let g = self.n_gen();
        let mut v = self.constant;
        for k in 0..g {
            v += self.quad[k] * u.p_gen[k] * u.p_gen[k] + self.lin[k] * u.p_gen[k];
            v += self.quad[g + k] * u.q_gen[k] * u.q_gen[k] + self.lin[g + k] * u.q_gen[k];
        }
        v
    }

    /// Active-power part, for DC formulations.
    pub fn active_part(&self) -> (DVector<f64>, DVector<f64>, f64) {
        let g = self.n_gen();
        (self.quad.rows(0, g).into_owned(), self.lin.rows(0, g).into_owned(), self.constant)
    }
}

/// State part of an OPF solution.
#[derive(Debug, Clone, Serialize)]
pub enum SolutionState {
    Ac(SystemState),
    Dc(DcState),
}

/// A solved OPF instance with diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct OpfSolution {
    pub state: SolutionState,
    pub u: ControlInput,
    pub objective: f64,
    pub line_flows: Vec<LineFlow>,
    /// `|s| / s_max` per line; `None` for unlimited lines.
    pub line_loading: Vec<Option<f64>>,
    /// Identifiers of constraints active at their bounds.
    pub binding_constraints: Vec<String>,
    pub kkt: KktResiduals,
    pub iterations: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum OpfError {
    #[error("problem reported infeasible by the solver")]
    Infeasible,
    #[error("iteration limit reached (KKT max {0:.3e})")]
    MaxIter(f64),
    #[error("solver failure: {0}")]
    Nlp(#[from] NlpError),
    #[error("solution failed the feasibility certificate: {0}")]
    Certificate(String),
    #[error("{0}")]
    BadInput(String),
}

pub(crate) fn status_to_error(status: SolveStatus, kkt: &KktResiduals) -> Option<OpfError> {
    match status {
        SolveStatus::Converged => None,
        SolveStatus::InfeasibleDetected => Some(OpfError::Infeasible),
        SolveStatus::MaxIter => Some(OpfError::MaxIter(kkt.max())),
    }
}

/// Independent feasibility check of an AC operating point: power-flow
/// residual, box membership, and line limits evaluated directly from the
/// network data.
#[derive(Debug, Clone, Serialize)]
pub struct FeasibilityReport {
    pub ok: bool,
    pub max_pf_residual: f64,
    pub max_bound_violation: f64,
    pub max_line_violation: f64,
}

pub fn verify_ac_solution(
    net: &Network,
    d: &Disturbance,
    x: &SystemState,
    u: &ControlInput,
    tol: f64,
) -> FeasibilityReport {
    let y = crate::net::build_admittance(net);
    let resid = ac_residual(net, &y, x, u, d).map(|r| r.amax()).unwrap_or(f64::INFINITY);

    let mut bound: f64 = 0.0;
    for (i, b) in net.buses.iter().enumerate() {
        bound = bound.max(b.v_min - x.v[i]).max(x.v[i] - b.v_max);
        if b.is_slack {
            bound = bound.max(x.theta[i].abs());
        }
    }
    for (k, gen) in net.generators.iter().enumerate() {
        bound = bound
            .max(gen.p_min - u.p_gen[k])
            .max(u.p_gen[k] - gen.p_max)
            .max(gen.q_min - u.q_gen[k])
            .max(u.q_gen[k] - gen.q_max);
    }

    let flows = line_flows_ac(net, x);
    let mut line: f64 = 0.0;
    for (k, l) in net.lines.iter().enumerate() {
        if let Some(smax) = l.s_max {
            line = line.max(flows[k].s_mag - smax);
        }
    }

    FeasibilityReport {
        ok: resid <= tol && bound <= tol && line <= tol,
        max_pf_residual: resid,
        max_bound_violation: bound,
        max_line_violation: line,
    }
}

/// DC counterpart of [`verify_ac_solution`]: linear balance, boxes, and
/// one-sided line limits.
pub fn verify_dc_solution(
    net: &Network,
    p_dem: &DVector<f64>,
    state: &DcState,
    p_gen: &DVector<f64>,
    tol: f64,
) -> FeasibilityReport {
    let y = crate::net::build_admittance(net);
    let mut p_net = -p_dem.clone();
    for k in 0..net.n_gen() {
        p_net[net.gen_bus_index(k)] += p_gen[k];
    }
    let resid = (&p_net + &y.b_matrix * &state.theta).amax();

    let mut bound: f64 = 0.0;
    for (k, gen) in net.generators.iter().enumerate() {
        bound = bound.max(gen.p_min - p_gen[k]).max(p_gen[k] - gen.p_max);
    }
    bound = bound.max(state.theta[net.slack_index()].abs());

    let flows = line_flows_dc(net, state);
    let mut line: f64 = 0.0;
    for (k, l) in net.lines.iter().enumerate() {
        if let Some(smax) = l.s_max {
            line = line.max(flows[k] - smax);
        }
    }

    FeasibilityReport {
        ok: resid <= tol && bound <= tol && line <= tol,
        max_pf_residual: resid,
        max_bound_violation: bound,
        max_line_violation: line,
    }
}
