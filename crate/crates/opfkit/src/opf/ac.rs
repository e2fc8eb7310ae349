//! AC OPF assembly: decision vector (v, theta, p_gen, q_gen), power-flow
//! equalities, squared apparent-power line limits, and box bounds. All
//! first and second derivatives are analytic.

use super::pair::{add_pair_hessian, PairTerm};
use super::{status_to_error, CostFunction, OpfError, OpfSolution, SolutionState};
use crate::net::{build_admittance, AdmittanceMatrix, Network};
use crate::nlp::{solve_nlp, NlpOptions, NlpProblem};
use crate::powerflow::{ac_jacobian, ac_residual, line_flows_ac, ControlInput, Disturbance, SystemState};
use nalgebra::{DMatrix, DVector};

/// Index layout of the AC decision vector.
#[derive(Debug, Clone, Copy)]
pub struct AcLayout {
    pub n_bus: usize,
    pub n_gen: usize,
}

impl AcLayout {
    pub fn dim(&self) -> usize {
        2 * self.n_bus + 2 * self.n_gen
    }
    pub fn v(&self, bus: usize) -> usize {
        bus
    }
    pub fn theta(&self, bus: usize) -> usize {
        self.n_bus + bus
    }
    pub fn p(&self, gen: usize) -> usize {
        2 * self.n_bus + gen
    }
    pub fn q(&self, gen: usize) -> usize {
        2 * self.n_bus + self.n_gen + gen
    }

    pub fn split(&self, z: &DVector<f64>) -> (SystemState, ControlInput) {
        let n = self.n_bus;
        let g = self.n_gen;
        (
            SystemState { v: z.rows(0, n).into_owned(), theta: z.rows(n, n).into_owned() },
            ControlInput {
                p_gen: z.rows(2 * n, g).into_owned(),
                q_gen: z.rows(2 * n + g, g).into_owned(),
            },
        )
    }

    pub fn join(&self, x: &SystemState, u: &ControlInput) -> DVector<f64> {
        let mut z = DVector::zeros(self.dim());
        z.rows_mut(0, self.n_bus).copy_from(&x.v);
        z.rows_mut(self.n_bus, self.n_bus).copy_from(&x.theta);
        z.rows_mut(2 * self.n_bus, self.n_gen).copy_from(&u.p_gen);
        z.rows_mut(2 * self.n_bus + self.n_gen, self.n_gen).copy_from(&u.q_gen);
        z
    }
}

/// Assembled single-stage AC OPF.
pub struct AcOpfProblem {
    pub net: Network,
    pub y: AdmittanceMatrix,
    pub d: Disturbance,
    pub cost: CostFunction,
    pub layout: AcLayout,
    /// Line indices carrying a flow limit, in constraint-row order.
    pub limited_lines: Vec<usize>,
    /// Optional Tikhonov weight on the state distance to the flat profile.
    pub state_regularization: f64,
}

/// Builds the AC OPF over (x, u): 2N power-flow equalities, one squared
/// apparent-power row per limited line, voltage/injection boxes, slack
/// phase pinned at zero.
pub fn assemble_ac_opf(net: &Network, d: &Disturbance, cost: &CostFunction) -> AcOpfProblem {
    assert_eq!(cost.n_gen(), net.n_gen(), "cost dimensioned unlike the generator set");
    let y = build_admittance(net);
    let layout = AcLayout { n_bus: net.n_bus(), n_gen: net.n_gen() };
    let limited_lines =
        net.lines.iter().enumerate().filter(|(_, l)| l.s_max.is_some()).map(|(k, _)| k).collect();
    AcOpfProblem {
        net: net.clone(),
        y,
        d: d.clone(),
        cost: cost.clone(),
        layout,
        limited_lines,
        state_regularization: 0.0,
    }
}

impl AcOpfProblem {
    /// Flat voltage profile with uniform feasible dispatch.
    pub fn initial_guess(&self) -> DVector<f64> {
        let net = &self.net;
        let g = net.n_gen().max(1);
        let p_share = self.d.p_dem.sum() / g as f64;
        let q_share = self.d.q_dem.sum() / g as f64;
        let mut z = DVector::zeros(self.layout.dim());
        for (i, b) in net.buses.iter().enumerate() {
            z[self.layout.v(i)] = 1.0f64.clamp(b.v_min, b.v_max);
        }
        for (k, gen) in net.generators.iter().enumerate() {
            z[self.layout.p(k)] = p_share.clamp(gen.p_min, gen.p_max);
            z[self.layout.q(k)] = q_share.clamp(gen.q_min, gen.q_max);
        }
        z
    }

    fn line_flow_parts(&self, z: &DVector<f64>, k: usize) -> LineFlowDeriv {
        let line = &self.net.lines[k];
        let i = self.net.index_of(line.from).expect("valid endpoint");
        let j = self.net.index_of(line.to).expect("valid endpoint");
        let (vi, vj) = (z[self.layout.v(i)], z[self.layout.v(j)]);
        let t = z[self.layout.theta(i)] - z[self.layout.theta(j)];
        let (s, c) = t.sin_cos();
        let (g, b) = (line.g, line.b);
        let idx = [self.layout.v(i), self.layout.v(j), self.layout.theta(i), self.layout.theta(j)];

        // p = vi^2 g - vi vj (g c + b s); q = -vi^2 b + vi vj (b c - g s)
        let fa = g * c + b * s;
        let fap = -g * s + b * c;
        let ta = PairTerm::new(vi, vj, fa, fap);
        let fb = b * c - g * s;
        let fbp = -b * s - g * c;
        let tb = PairTerm::new(vi, vj, fb, fbp);

        let p = vi * vi * g - ta.value;
        let q = -vi * vi * b + tb.value;
        let mut grad_p = [-ta.grad[0], -ta.grad[1], -ta.grad[2], -ta.grad[3]];
        grad_p[0] += 2.0 * vi * g;
        let mut grad_q = [tb.grad[0], tb.grad[1], tb.grad[2], tb.grad[3]];
        grad_q[0] += -2.0 * vi * b;

        LineFlowDeriv { idx, p, q, grad_p, grad_q, ta, tb, g, b }
    }
}

struct LineFlowDeriv {
    idx: [usize; 4],
    p: f64,
    q: f64,
    grad_p: [f64; 4],
    grad_q: [f64; 4],
    ta: PairTerm,
    tb: PairTerm,
    g: f64,
    b: f64,
}

impl NlpProblem for AcOpfProblem {
    fn num_vars(&self) -> usize {
        self.layout.dim()
    }

    fn num_eq(&self) -> usize {
        2 * self.layout.n_bus
    }

    fn num_ineq(&self) -> usize {
        self.limited_lines.len()
    }

    fn objective(&self, z: &DVector<f64>) -> f64 {
        let (x, u) = self.layout.split(z);
        let mut val = self.cost.eval(&u);
        if self.state_regularization > 0.0 {
            let r = self.state_regularization;
            for i in 0..self.layout.n_bus {
                val += r * ((x.v[i] - 1.0).powi(2) + x.theta[i].powi(2));
            }
        }
        val
    }

    fn gradient(&self, z: &DVector<f64>, grad: &mut DVector<f64>) {
        grad.fill(0.0);
        let lay = &self.layout;
        let g = lay.n_gen;
        for k in 0..g {
            grad[lay.p(k)] = 2.0 * self.cost.quad[k] * z[lay.p(k)] + self.cost.lin[k];
            grad[lay.q(k)] = 2.0 * self.cost.quad[g + k] * z[lay.q(k)] + self.cost.lin[g + k];
        }
        if self.state_regularization > 0.0 {
            let r = self.state_regularization;
            for i in 0..lay.n_bus {
                grad[lay.v(i)] += 2.0 * r * (z[lay.v(i)] - 1.0);
                grad[lay.theta(i)] += 2.0 * r * z[lay.theta(i)];
            }
        }
    }

    fn eq_constraints(&self, z: &DVector<f64>, out: &mut DVector<f64>) {
        let (x, u) = self.layout.split(z);
        let r = ac_residual(&self.net, &self.y, &x, &u, &self.d).expect("consistent dimensions");
        out.copy_from(&r);
    }

    fn eq_jacobian(&self, z: &DVector<f64>, out: &mut DMatrix<f64>) {
        let (x, u) = self.layout.split(z);
        let j = ac_jacobian(&self.net, &self.y, &x, &u, &self.d).expect("consistent dimensions");
        out.copy_from(&j);
    }

    fn ineq_constraints(&self, z: &DVector<f64>, out: &mut DVector<f64>) {
        for (row, &k) in self.limited_lines.iter().enumerate() {
            let lf = self.line_flow_parts(z, k);
            let smax = self.net.lines[k].s_max.expect("limited line");
            out[row] = lf.p * lf.p + lf.q * lf.q - smax * smax;
        }
    }

    fn ineq_jacobian(&self, z: &DVector<f64>, out: &mut DMatrix<f64>) {
        out.fill(0.0);
        for (row, &k) in self.limited_lines.iter().enumerate() {
            let lf = self.line_flow_parts(z, k);
            for a in 0..4 {
                out[(row, lf.idx[a])] += 2.0 * (lf.p * lf.grad_p[a] + lf.q * lf.grad_q[a]);
            }
        }
    }

    fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let lay = &self.layout;
        let mut lo = DVector::from_element(lay.dim(), f64::NEG_INFINITY);
        let mut hi = DVector::from_element(lay.dim(), f64::INFINITY);
        for (i, b) in self.net.buses.iter().enumerate() {
            lo[lay.v(i)] = b.v_min;
            hi[lay.v(i)] = b.v_max;
            if b.is_slack {
                lo[lay.theta(i)] = 0.0;
                hi[lay.theta(i)] = 0.0;
            }
        }
        for (k, gen) in self.net.generators.iter().enumerate() {
            lo[lay.p(k)] = gen.p_min;
            hi[lay.p(k)] = gen.p_max;
            lo[lay.q(k)] = gen.q_min;
            hi[lay.q(k)] = gen.q_max;
        }
        (lo, hi)
    }

    fn lagrangian_hessian(
        &self,
        z: &DVector<f64>,
        obj_factor: f64,
        y_eq: &DVector<f64>,
        y_ineq: &DVector<f64>,
        out: &mut DMatrix<f64>,
    ) -> bool {
        let lay = &self.layout;
        let n = lay.n_bus;
        let g = lay.n_gen;

        for k in 0..g {
            out[(lay.p(k), lay.p(k))] += 2.0 * obj_factor * self.cost.quad[k];
            out[(lay.q(k), lay.q(k))] += 2.0 * obj_factor * self.cost.quad[g + k];
        }
        if self.state_regularization > 0.0 {
            let r = 2.0 * obj_factor * self.state_regularization;
            for i in 0..n {
                out[(lay.v(i), lay.v(i))] += r;
                out[(lay.theta(i), lay.theta(i))] += r;
            }
        }

        // power-flow curvature: residual rows are net - transfer, so the
        // transfer Hessian enters with weight -y
        for line in &self.net.lines {
            let i = self.net.index_of(line.from).expect("valid endpoint");
            let j = self.net.index_of(line.to).expect("valid endpoint");
            let (vi, vj) = (z[lay.v(i)], z[lay.v(j)]);
            let t = z[lay.theta(i)] - z[lay.theta(j)];
            let (s, c) = t.sin_cos();
            let (gs, bs) = (line.g, line.b);
            let wp_i = -y_eq[i];
            let wq_i = -y_eq[n + i];
            let wp_j = -y_eq[j];
            let wq_j = -y_eq[n + j];

            // self terms v^2 * a
            out[(lay.v(i), lay.v(i))] += 2.0 * gs * wp_i + 2.0 * (-bs) * wq_i;
            out[(lay.v(j), lay.v(j))] += 2.0 * gs * wp_j + 2.0 * (-bs) * wq_j;

            // seen from i: theta = theta_i - theta_j
            let idx_ij = [lay.v(i), lay.v(j), lay.theta(i), lay.theta(j)];
            // P pair: f = G c + B s with G = -gs, B = -bs
            let f_p = -gs * c - bs * s;
            let f_p_d = gs * s - bs * c;
            add_pair_hessian(out, &idx_ij, &PairTerm::new(vi, vj, f_p, f_p_d), wp_i);
            // Q pair: f = G s - B c
            let f_q = -gs * s + bs * c;
            let f_q_d = -gs * c - bs * s;
            add_pair_hessian(out, &idx_ij, &PairTerm::new(vi, vj, f_q, f_q_d), wq_i);

            // seen from j: theta = theta_j - theta_i (cos even, sin odd)
            let idx_ji = [lay.v(j), lay.v(i), lay.theta(j), lay.theta(i)];
            let f_p2 = -gs * c + bs * s;
            let f_p2_d = -gs * s - bs * c;
            add_pair_hessian(out, &idx_ji, &PairTerm::new(vj, vi, f_p2, f_p2_d), wp_j);
            let f_q2 = gs * s + bs * c;
            let f_q2_d = f_p2;
            add_pair_hessian(out, &idx_ji, &PairTerm::new(vj, vi, f_q2, f_q2_d), wq_j);
        }

        // line-limit curvature: phi = p^2 + q^2 - smax^2
        for (row, &k) in self.limited_lines.iter().enumerate() {
            let w = y_ineq[row];
            if w == 0.0 {
                continue;
            }
            let lf = self.line_flow_parts(z, k);
            for a in 0..4 {
                for b2 in 0..4 {
                    out[(lf.idx[a], lf.idx[b2])] +=
                        2.0 * w * (lf.grad_p[a] * lf.grad_p[b2] + lf.grad_q[a] * lf.grad_q[b2]);
                }
            }
            // p and q curvature: grad_p = d(vi^2 g) - ta, vi^2 g curves only
            // in (v_i, v_i)
            add_pair_hessian(out, &lf.idx, &lf.ta, -2.0 * w * lf.p);
            add_pair_hessian(out, &lf.idx, &lf.tb, 2.0 * w * lf.q);
            out[(lf.idx[0], lf.idx[0])] += 2.0 * w * (lf.p * 2.0 * lf.g + lf.q * (-2.0 * lf.b));
        }
        true
    }
}

/// Names of constraints within `tol` of a bound at the solution.
pub(crate) fn binding_constraints_ac(
    p: &AcOpfProblem,
    z: &DVector<f64>,
    tol: f64,
) -> Vec<String> {
    let mut out = Vec::new();
    let lay = &p.layout;
    for (i, b) in p.net.buses.iter().enumerate() {
        if (z[lay.v(i)] - b.v_min).abs() <= tol {
            out.push(format!("v_min[bus{}]", b.id));
        }
        if (z[lay.v(i)] - b.v_max).abs() <= tol {
            out.push(format!("v_max[bus{}]", b.id));
        }
    }
    for (k, gen) in p.net.generators.iter().enumerate() {
        if (z[lay.p(k)] - gen.p_min).abs() <= tol {
            out.push(format!("p_min[gen{}]", gen.bus));
        }
        if (z[lay.p(k)] - gen.p_max).abs() <= tol {
            out.push(format!("p_max[gen{}]", gen.bus));
        }
        if (z[lay.q(k)] - gen.q_min).abs() <= tol {
            out.push(format!("q_min[gen{}]", gen.bus));
        }
        if (z[lay.q(k)] - gen.q_max).abs() <= tol {
            out.push(format!("q_max[gen{}]", gen.bus));
        }
    }
    let mut g = DVector::zeros(p.num_ineq());
    p.ineq_constraints(z, &mut g);
    for (row, &k) in p.limited_lines.iter().enumerate() {
        if g[row].abs() <= tol {
            let l = &p.net.lines[k];
            out.push(format!("line_limit[{}-{}]", l.from, l.to));
        }
    }
    out
}

/// Assembles and solves the AC OPF, returning a certified solution.
pub fn solve_ac_opf(
    net: &Network,
    d: &Disturbance,
    cost: &CostFunction,
    opts: &NlpOptions,
) -> Result<OpfSolution, OpfError> {
    let problem = assemble_ac_opf(net, d, cost);
    let z0 = problem.initial_guess();
    let result = solve_nlp(&problem, &z0, opts)?;
    if let Some(err) = status_to_error(result.status, &result.kkt) {
        return Err(err);
    }
    let (x, u) = problem.layout.split(&result.z);
    let report = super::verify_ac_solution(net, d, &x, &u, 1e-6);
    if !report.ok {
        return Err(OpfError::Certificate(format!(
            "pf {:.2e} bounds {:.2e} lines {:.2e}",
            report.max_pf_residual, report.max_bound_violation, report.max_line_violation
        )));
    }
    let flows = line_flows_ac(net, &x);
    let loading = net
        .lines
        .iter()
        .zip(&flows)
        .map(|(l, f)| l.s_max.map(|s| f.s_mag / s))
        .collect();
    Ok(OpfSolution {
        objective: problem.cost.eval(&u),
        binding_constraints: binding_constraints_ac(&problem, &result.z, 1e-6),
        state: SolutionState::Ac(x),
        u,
        line_flows: flows,
        line_loading: loading,
        kkt: result.kkt,
        iterations: result.iterations,
    })
}
