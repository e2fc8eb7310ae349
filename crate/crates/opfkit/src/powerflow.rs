//! AC and DC power flow.
//!
//! The AC equations follow the polar bus-injection form: at every bus the
//! net active/reactive power must match what the admittance matrix carries
//! away. States are (v, theta) per bus, controls are (p, q) per generator,
//! disturbances are (p, q) demands per bus. The residual convention is
//! `net injection - network transfer`, so generator columns of the Jacobian
//! are unit vectors.

use crate::net::{build_admittance, remove_row_col, AdmittanceMatrix, Network};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Per-bus voltage magnitudes and phases (radians). Slack phase is 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub v: DVector<f64>,
    pub theta: DVector<f64>,
}

impl SystemState {
    /// Flat profile: unit magnitudes, zero phases.
    pub fn flat(n: usize) -> Self {
        SystemState { v: DVector::from_element(n, 1.0), theta: DVector::zeros(n) }
    }
}

/// Per-generator active and reactive injections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub p_gen: DVector<f64>,
    pub q_gen: DVector<f64>,
}

impl ControlInput {
    pub fn zeros(n_gen: usize) -> Self {
        ControlInput { p_gen: DVector::zeros(n_gen), q_gen: DVector::zeros(n_gen) }
    }
}

/// Per-bus active and reactive demands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub p_dem: DVector<f64>,
    pub q_dem: DVector<f64>,
}

impl Disturbance {
    /// Demands as recorded in the case file.
    pub fn from_network(net: &Network) -> Self {
        Disturbance { p_dem: net.p_demand(), q_dem: net.q_demand() }
    }
}

/// DC state: per-bus phases, slack pinned to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcState {
    pub theta: DVector<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum PfError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("slack bus has no generator")]
    NoSlackGenerator,
    #[error("Newton did not converge after {0} iterations (residual {1:.3e})")]
    NoConvergence(usize, f64),
    #[error("singular Jacobian at iteration {0}")]
    SingularJacobian(usize),
    #[error("net injections do not balance: sum = {0:.3e}")]
    Unbalanced(f64),
    #[error("reduced susceptance matrix is singular")]
    SingularReduced,
}

fn check_dims(
    net: &Network,
    x: &SystemState,
    u: &ControlInput,
    d: &Disturbance,
    y: &AdmittanceMatrix,
) -> Result<(), PfError> {
    let (n, g) = (net.n_bus(), net.n_gen());
    if x.v.len() != n || x.theta.len() != n {
        return Err(PfError::Dimension(format!("state sized {} for {} buses", x.v.len(), n)));
    }
    if u.p_gen.len() != g || u.q_gen.len() != g {
        return Err(PfError::Dimension(format!("input sized {} for {} generators", u.p_gen.len(), g)));
    }
    if d.p_dem.len() != n || d.q_dem.len() != n {
        return Err(PfError::Dimension(format!("disturbance sized {} for {} buses", d.p_dem.len(), n)));
    }
    if y.n() != n {
        return Err(PfError::Dimension(format!("admittance sized {} for {} buses", y.n(), n)));
    }
    Ok(())
}

/// Net power at each bus: generator injection minus demand (demand only at
/// non-generator buses).
fn net_power(net: &Network, u: &ControlInput, d: &Disturbance) -> (DVector<f64>, DVector<f64>) {
    let n = net.n_bus();
    let mut p = -&d.p_dem;
    let mut q = -&d.q_dem;
    for g in 0..net.n_gen() {
        let b = net.gen_bus_index(g);
        p[b] += u.p_gen[g];
        q[b] += u.q_gen[g];
    }
    let _ = n;
    (p, q)
}

/// Power transferred into the network at each bus for the given state:
/// entries l and N+l are the active and reactive transfer.
fn bus_transfer(x: &SystemState, y: &AdmittanceMatrix) -> (DVector<f64>, DVector<f64>) {
    let n = y.n();
    let mut p = DVector::zeros(n);
    let mut q = DVector::zeros(n);
    for l in 0..n {
        let mut ps = 0.0;
        let mut qs = 0.0;
        for m in 0..n {
            let (glm, blm) = (y.g_matrix[(l, m)], y.b_matrix[(l, m)]);
            if glm == 0.0 && blm == 0.0 {
                continue;
            }
            let t = x.theta[l] - x.theta[m];
            let (s, c) = t.sin_cos();
            ps += x.v[m] * (glm * c + blm * s);
            qs += x.v[m] * (glm * s - blm * c);
        }
        p[l] = x.v[l] * ps;
        q[l] = x.v[l] * qs;
    }
    (p, q)
}

/// Power-flow residual, length 2N: `[p_net - p(v,theta); q_net - q(v,theta)]`.
pub fn ac_residual(
    net: &Network,
    y: &AdmittanceMatrix,
    x: &SystemState,
    u: &ControlInput,
    d: &Disturbance,
) -> Result<DVector<f64>, PfError> {
    check_dims(net, x, u, d, y)?;
    let (p_net, q_net) = net_power(net, u, d);
    let (p, q) = bus_transfer(x, y);
    let n = net.n_bus();
    let mut r = DVector::zeros(2 * n);
    for l in 0..n {
        r[l] = p_net[l] - p[l];
        r[n + l] = q_net[l] - q[l];
    }
    Ok(r)
}

/// Analytic Jacobian of [`ac_residual`] with respect to (v, theta, p_gen,
/// q_gen), size 2N x (2N + 2G). Column blocks in that order.
pub fn ac_jacobian(
    net: &Network,
    y: &AdmittanceMatrix,
    x: &SystemState,
    u: &ControlInput,
    d: &Disturbance,
) -> Result<DMatrix<f64>, PfError> {
    check_dims(net, x, u, d, y)?;
    let n = net.n_bus();
    let g = net.n_gen();
    let mut jac = DMatrix::zeros(2 * n, 2 * n + 2 * g);
    let (p, q) = bus_transfer(x, y);

    for l in 0..n {
        for m in 0..n {
            let (glm, blm) = (y.g_matrix[(l, m)], y.b_matrix[(l, m)]);
            if glm == 0.0 && blm == 0.0 && l != m {
                continue;
            }
            if l == m {
                // dP_l/dv_l, dP_l/dtheta_l, dQ_l/dv_l, dQ_l/dtheta_l
                let vl = x.v[l];
                jac[(l, l)] = -(p[l] / vl + glm * vl);
                jac[(l, n + l)] = -(-q[l] - blm * vl * vl);
                jac[(n + l, l)] = -(q[l] / vl - blm * vl);
                jac[(n + l, n + l)] = -(p[l] - glm * vl * vl);
            } else {
                let t = x.theta[l] - x.theta[m];
                let (s, c) = t.sin_cos();
                let (vl, vm) = (x.v[l], x.v[m]);
                // residual = net - transfer, hence the leading minus signs
                jac[(l, m)] = -(vl * (glm * c + blm * s));
                jac[(l, n + m)] = -(vl * vm * (glm * s - blm * c));
                jac[(n + l, m)] = -(vl * (glm * s - blm * c));
                jac[(n + l, n + m)] = vl * vm * (glm * c + blm * s);
            }
        }
    }
    for k in 0..g {
        let b = net.gen_bus_index(k);
        jac[(b, 2 * n + k)] = 1.0;
        jac[(n + b, 2 * n + g + k)] = 1.0;
    }
    Ok(jac)
}

/// Options for the Newton power-flow solver.
#[derive(Debug, Clone)]
pub struct PfOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PfOptions {
    fn default() -> Self {
        PfOptions { tol: 1e-8, max_iter: 20 }
    }
}

/// Output of [`solve_ac_pf`]: the state, the input with the slack
/// generator's injections replaced by whatever balances the network, and
/// the iteration count.
#[derive(Debug, Clone)]
pub struct PfSolution {
    pub x: SystemState,
    pub u_adjusted: ControlInput,
    pub iterations: usize,
}

/// Damped Newton solution of the power-flow equations.
///
/// Every non-slack bus is treated as PQ (its net p and q are fixed by `u`
/// and `d`); the slack bus keeps the magnitude from `x0`, phase 0, and its
/// generator absorbs the network balance. Backtracking halves the step
/// until the residual 2-norm satisfies an Armijo decrease (factor 1e-4,
/// minimum step 2^-20).
pub fn solve_ac_pf(
    net: &Network,
    u: &ControlInput,
    d: &Disturbance,
    x0: &SystemState,
    opts: &PfOptions,
) -> Result<PfSolution, PfError> {
    let y = build_admittance(net);
    check_dims(net, x0, u, d, &y)?;
    let n = net.n_bus();
    let slack = net.slack_index();
    let slack_gen = net.gen_at_bus(slack).ok_or(PfError::NoSlackGenerator)?;

    let mut x = x0.clone();
    x.theta[slack] = 0.0;

    // unknown layout: v then theta at non-slack buses
    let free: Vec<usize> = (0..n).filter(|&l| l != slack).collect();
    let nf = free.len();
    // residual rows: p and q balance at non-slack buses
    let residual_of = |x: &SystemState| -> Result<DVector<f64>, PfError> {
        let full = ac_residual(net, &y, x, u, d)?;
        let mut r = DVector::zeros(2 * nf);
        for (i, &l) in free.iter().enumerate() {
            r[i] = full[l];
            r[nf + i] = full[n + l];
        }
        Ok(r)
    };

    let mut r = residual_of(&x)?;
    for iter in 0..opts.max_iter {
        if r.amax() <= opts.tol {
            let mut u_adj = u.clone();
            let full = ac_residual(net, &y, &x, u, d)?;
            u_adj.p_gen[slack_gen] -= full[slack];
            u_adj.q_gen[slack_gen] -= full[n + slack];
            return Ok(PfSolution { x, u_adjusted: u_adj, iterations: iter });
        }
        let jac_full = ac_jacobian(net, &y, &x, u, d)?;
        let mut jac = DMatrix::zeros(2 * nf, 2 * nf);
        for (i, &l) in free.iter().enumerate() {
            for (j, &m) in free.iter().enumerate() {
                jac[(i, j)] = jac_full[(l, m)];
                jac[(i, nf + j)] = jac_full[(l, n + m)];
                jac[(nf + i, j)] = jac_full[(n + l, m)];
                jac[(nf + i, nf + j)] = jac_full[(n + l, n + m)];
            }
        }
        // Newton step: J dx = -r; residual convention already holds the minus
        let lu = jac.lu();
        let step = lu.solve(&r).ok_or(PfError::SingularJacobian(iter))?;
        // Jacobian is d(residual)/dx, so the Newton update is x - J^{-1} r...
        // solve gave J s = r, update is x := x - s? No: J s = r  =>  r(x - s) ~ 0.
        let norm0 = r.norm();
        let mut alpha = 1.0;
        loop {
            let mut xt = x.clone();
            for (i, &l) in free.iter().enumerate() {
                xt.v[l] -= alpha * step[i];
                xt.theta[l] -= alpha * step[nf + i];
            }
            let rt = residual_of(&xt)?;
            if rt.norm() <= (1.0 - 1e-4 * alpha) * norm0 || alpha < 2f64.powi(-20) {
                x = xt;
                r = rt;
                break;
            }
            alpha *= 0.5;
        }
    }
    if r.amax() <= opts.tol {
        let mut u_adj = u.clone();
        let full = ac_residual(net, &y, &x, u, d)?;
        u_adj.p_gen[slack_gen] -= full[slack];
        u_adj.q_gen[slack_gen] -= full[n + slack];
        return Ok(PfSolution { x, u_adjusted: u_adj, iterations: opts.max_iter });
    }
    Err(PfError::NoConvergence(opts.max_iter, r.amax()))
}

/// Prefactorized DC power-flow solver for repeated right-hand sides.
pub struct DcPfSolver {
    slack: usize,
    n: usize,
    b_full: DMatrix<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl DcPfSolver {
    pub fn new(net: &Network) -> Result<Self, PfError> {
        let y = build_admittance(net);
        let slack = net.slack_index();
        let reduced = remove_row_col(&y.b_matrix, slack);
        let lu = reduced.clone().lu();
        if reduced.nrows() > 0 && !lu.is_invertible() {
            return Err(PfError::SingularReduced);
        }
        Ok(DcPfSolver { slack, n: net.n_bus(), b_full: y.b_matrix, lu })
    }

    /// Solves `p_net = -B theta` with the slack phase pinned to zero.
    /// `p_net` must sum to zero within 1e-9.
    pub fn solve(&self, p_net: &DVector<f64>) -> Result<DcState, PfError> {
        if p_net.len() != self.n {
            return Err(PfError::Dimension(format!(
                "injection sized {} for {} buses",
                p_net.len(),
                self.n
            )));
        }
        let total: f64 = p_net.sum();
        if total.abs() > 1e-9 {
            return Err(PfError::Unbalanced(total));
        }
        let mut rhs = DVector::zeros(self.n - 1);
        let mut k = 0;
        for l in 0..self.n {
            if l != self.slack {
                rhs[k] = -p_net[l];
                k += 1;
            }
        }
        let sol = self.lu.solve(&rhs).ok_or(PfError::SingularReduced)?;
        let mut theta = DVector::zeros(self.n);
        let mut k = 0;
        for l in 0..self.n {
            if l != self.slack {
                theta[l] = sol[k];
                k += 1;
            }
        }
        Ok(DcState { theta })
    }

    /// Residual of the full (unreduced) DC equations for a candidate state.
    pub fn residual(&self, p_net: &DVector<f64>, state: &DcState) -> f64 {
        (p_net + &self.b_full * &state.theta).amax()
    }
}

/// One-shot DC power flow; see [`DcPfSolver`] for the repeated-solve path.
pub fn solve_dc_pf(net: &Network, p_net: &DVector<f64>) -> Result<DcState, PfError> {
    DcPfSolver::new(net)?.solve(p_net)
}

/// Sending-end flow of one line: active, reactive, and apparent magnitude.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LineFlow {
    pub p: f64,
    pub q: f64,
    pub s_mag: f64,
}

/// Sending-end line flows (from-bus side) for an AC state.
pub fn line_flows_ac(net: &Network, x: &SystemState) -> Vec<LineFlow> {
    net.lines
        .iter()
        .map(|line| {
            let l = net.index_of(line.from).expect("valid endpoint");
            let m = net.index_of(line.to).expect("valid endpoint");
            let t = x.theta[l] - x.theta[m];
            let (s, c) = t.sin_cos();
            let (vl, vm) = (x.v[l], x.v[m]);
            let p = vl * vl * line.g - vl * vm * (line.g * c + line.b * s);
            let q = -vl * vl * line.b + vl * vm * (line.b * c - line.g * s);
            LineFlow { p, q, s_mag: p.hypot(q) }
        })
        .collect()
}

/// DC line flows `-B_br A theta` in line-list order. Positive values flow
/// from the from-bus toward the to-bus.
pub fn line_flows_dc(net: &Network, state: &DcState) -> DVector<f64> {
    let m = net.n_line();
    let mut flows = DVector::zeros(m);
    for (k, line) in net.lines.iter().enumerate() {
        let l = net.index_of(line.from).expect("valid endpoint");
        let j = net.index_of(line.to).expect("valid endpoint");
        flows[k] = -line.b * (state.theta[l] - state.theta[j]);
    }
    flows
}
