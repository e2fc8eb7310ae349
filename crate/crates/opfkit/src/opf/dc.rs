//! DC OPF assembly: decision (theta, p_gen), linear balance equalities,
//! one-sided line-flow limits, and the state-eliminated reduced form.

use super::{status_to_error, CostFunction, OpfError, OpfSolution, SolutionState};
use crate::net::{build_admittance, incidence_and_branch_susceptance, remove_row_col, Network};
use crate::nlp::{solve_nlp, NlpOptions, NlpProblem};
use crate::powerflow::{line_flows_dc, ControlInput, DcState, LineFlow};
use nalgebra::{DMatrix, DVector};

/// Index layout of the DC decision vector.
#[derive(Debug, Clone, Copy)]
pub struct DcLayout {
    pub n_bus: usize,
    pub n_gen: usize,
}

impl DcLayout {
    pub fn dim(&self) -> usize {
        self.n_bus + self.n_gen
    }
    pub fn theta(&self, bus: usize) -> usize {
        bus
    }
    pub fn p(&self, gen: usize) -> usize {
        self.n_bus + gen
    }
}

/// Assembled single-stage DC OPF over (theta, p_gen).
pub struct DcOpfProblem {
    pub net: Network,
    pub p_dem: DVector<f64>,
    /// Active-power cost coefficients (length G).
    pub quad: DVector<f64>,
    pub lin: DVector<f64>,
    pub constant: f64,
    pub layout: DcLayout,
    pub limited_lines: Vec<usize>,
    b_matrix: DMatrix<f64>,
    gamma: DMatrix<f64>,
}

/// Builds the DC OPF: balance rows `Gamma p - d + B theta = 0`, flow rows
/// `-B_br A theta <= s_max` for limited lines, generator boxes, slack phase
/// pinned.
pub fn assemble_dc_opf(net: &Network, p_dem: &DVector<f64>, cost: &CostFunction) -> DcOpfProblem {
    assert_eq!(p_dem.len(), net.n_bus(), "demand dimensioned unlike the bus set");
    assert_eq!(cost.n_gen(), net.n_gen(), "cost dimensioned unlike the generator set");
    let y = build_admittance(net);
    let mut gamma = DMatrix::zeros(net.n_bus(), net.n_gen());
    for k in 0..net.n_gen() {
        gamma[(net.gen_bus_index(k), k)] = 1.0;
    }
    let (quad, lin, constant) = cost.active_part();
    DcOpfProblem {
        layout: DcLayout { n_bus: net.n_bus(), n_gen: net.n_gen() },
        limited_lines: net
            .lines
            .iter()
            .enumerate()
            .filter(|(_, l)| l.s_max.is_some())
            .map(|(k, _)| k)
            .collect(),
        net: net.clone(),
        p_dem: p_dem.clone(),
        quad,
        lin,
        constant,
        b_matrix: y.b_matrix,
        gamma,
    }
}

impl DcOpfProblem {
    pub fn initial_guess(&self) -> DVector<f64> {
        let mut z = DVector::zeros(self.layout.dim());
        let share = self.p_dem.sum() / self.net.n_gen().max(1) as f64;
        for (k, gen) in self.net.generators.iter().enumerate() {
            z[self.layout.p(k)] = share.clamp(gen.p_min, gen.p_max);
        }
        z
    }

    pub fn split(&self, z: &DVector<f64>) -> (DcState, DVector<f64>) {
        (
            DcState { theta: z.rows(0, self.layout.n_bus).into_owned() },
            z.rows(self.layout.n_bus, self.layout.n_gen).into_owned(),
        )
    }
}

impl NlpProblem for DcOpfProblem {
    fn num_vars(&self) -> usize {
        self.layout.dim()
    }
    fn num_eq(&self) -> usize {
        self.layout.n_bus
    }
    fn num_ineq(&self) -> usize {
        self.limited_lines.len()
    }

    fn objective(&self, z: &DVector<f64>) -> f64 {
        let mut v = self.constant;
        for k in 0..self.layout.n_gen {
            let p = z[self.layout.p(k)];
            v += self.quad[k] * p * p + self.lin[k] * p;
        }
        v
    }

    fn gradient(&self, z: &DVector<f64>, grad: &mut DVector<f64>) {
        grad.fill(0.0);
        for k in 0..self.layout.n_gen {
            grad[self.layout.p(k)] = 2.0 * self.quad[k] * z[self.layout.p(k)] + self.lin[k];
        }
    }

    fn eq_constraints(&self, z: &DVector<f64>, out: &mut DVector<f64>) {
        let (theta, p) = self.split(z);
        out.copy_from(&(&self.gamma * &p - &self.p_dem + &self.b_matrix * &theta.theta));
    }

    fn eq_jacobian(&self, _z: &DVector<f64>, out: &mut DMatrix<f64>) {
        let n = self.layout.n_bus;
        out.view_mut((0, 0), (n, n)).copy_from(&self.b_matrix);
        out.view_mut((0, n), (n, self.layout.n_gen)).copy_from(&self.gamma);
    }

    fn ineq_constraints(&self, z: &DVector<f64>, out: &mut DVector<f64>) {
        for (row, &k) in self.limited_lines.iter().enumerate() {
            let line = &self.net.lines[k];
            let i = self.net.index_of(line.from).expect("valid endpoint");
            let j = self.net.index_of(line.to).expect("valid endpoint");
            let flow = -line.b * (z[self.layout.theta(i)] - z[self.layout.theta(j)]);
            out[row] = flow - line.s_max.expect("limited line");
        }
    }

    fn ineq_jacobian(&self, _z: &DVector<f64>, out: &mut DMatrix<f64>) {
        out.fill(0.0);
        for (row, &k) in self.limited_lines.iter().enumerate() {
            let line = &self.net.lines[k];
            let i = self.net.index_of(line.from).expect("valid endpoint");
            let j = self.net.index_of(line.to).expect("valid endpoint");
            out[(row, self.layout.theta(i))] = -line.b;
            out[(row, self.layout.theta(j))] = line.b;
        }
    }

    fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let mut lo = DVector::from_element(self.layout.dim(), f64::NEG_INFINITY);
        let mut hi = DVector::from_element(self.layout.dim(), f64::INFINITY);
        let slack = self.net.slack_index();
        lo[self.layout.theta(slack)] = 0.0;
        hi[self.layout.theta(slack)] = 0.0;
        for (k, gen) in self.net.generators.iter().enumerate() {
            lo[self.layout.p(k)] = gen.p_min;
            hi[self.layout.p(k)] = gen.p_max;
        }
        (lo, hi)
    }

    fn lagrangian_hessian(
        &self,
        _z: &DVector<f64>,
        obj_factor: f64,
        _y_eq: &DVector<f64>,
        _y_ineq: &DVector<f64>,
        out: &mut DMatrix<f64>,
    ) -> bool {
        for k in 0..self.layout.n_gen {
            out[(self.layout.p(k), self.layout.p(k))] += 2.0 * obj_factor * self.quad[k];
        }
        true
    }
}

/// DC OPF with the phase angles eliminated through the reduced inverse:
/// decision is `p_gen` alone, the balance collapses to one total-power
/// equality, and line limits become affine in the dispatch.
pub struct ReducedDcProblem {
    pub quad: DVector<f64>,
    pub lin: DVector<f64>,
    pub constant: f64,
    pub total_demand: f64,
    pub p_min: DVector<f64>,
    pub p_max: DVector<f64>,
    /// Rows of the affine flow map for limited lines: flow = m p + c.
    pub flow_rows: DMatrix<f64>,
    pub flow_offset: DVector<f64>,
    pub flow_limit: DVector<f64>,
    /// Dense map recovering the reduced angles from the dispatch.
    theta_map: DMatrix<f64>,
    theta_offset: DVector<f64>,
    slack: usize,
    n_bus: usize,
}

/// Eliminates `theta` from an assembled DC OPF. Fails if the reduced bus
/// matrix is singular (disconnected network).
pub fn eliminate_dc_state(p: &DcOpfProblem) -> Result<ReducedDcProblem, OpfError> {
    let net = &p.net;
    let slack = net.slack_index();
    let n = net.n_bus();
    let reduced = remove_row_col(&p.b_matrix, slack);
    let lu = reduced.lu();
    // theta_red = -B_red^{-1} (Gamma p - d)_red
    let keep: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let mut gamma_red = DMatrix::zeros(n - 1, net.n_gen());
    let mut d_red = DVector::zeros(n - 1);
    for (r, &i) in keep.iter().enumerate() {
        for k in 0..net.n_gen() {
            gamma_red[(r, k)] = p.gamma[(i, k)];
        }
        d_red[r] = p.p_dem[i];
    }
    let inv_gamma = lu.solve(&gamma_red).ok_or(OpfError::BadInput("singular reduced matrix".into()))?;
    let inv_d = lu.solve(&d_red).ok_or(OpfError::BadInput("singular reduced matrix".into()))?;
    let theta_map = -inv_gamma;
    let theta_offset = inv_d;

    let (a, b_br) = incidence_and_branch_susceptance(net);
    let a_red = {
        let mut m = DMatrix::zeros(net.n_line(), n - 1);
        for (c, &i) in keep.iter().enumerate() {
            for r in 0..net.n_line() {
                m[(r, c)] = a[(r, i)];
            }
        }
        m
    };
    let full_map = -&b_br * &a_red;
    let mut flow_rows = DMatrix::zeros(p.limited_lines.len(), net.n_gen());
    let mut flow_offset = DVector::zeros(p.limited_lines.len());
    let mut flow_limit = DVector::zeros(p.limited_lines.len());
    for (row, &k) in p.limited_lines.iter().enumerate() {
        let map_row = full_map.row(k) * &theta_map;
        flow_rows.row_mut(row).copy_from(&map_row);
        flow_offset[row] = (full_map.row(k) * &theta_offset)[(0, 0)];
        flow_limit[row] = net.lines[k].s_max.expect("limited line");
    }

    Ok(ReducedDcProblem {
        quad: p.quad.clone(),
        lin: p.lin.clone(),
        constant: p.constant,
        total_demand: p.p_dem.sum(),
        p_min: DVector::from_iterator(net.n_gen(), net.generators.iter().map(|g| g.p_min)),
        p_max: DVector::from_iterator(net.n_gen(), net.generators.iter().map(|g| g.p_max)),
        flow_rows,
        flow_offset,
        flow_limit,
        theta_map,
        theta_offset,
        slack,
        n_bus: n,
    })
}

impl ReducedDcProblem {
    /// Angles implied by a dispatch.
    pub fn recover_theta(&self, p_gen: &DVector<f64>) -> DcState {
        let red = &self.theta_map * p_gen + &self.theta_offset;
        let mut theta = DVector::zeros(self.n_bus);
        let mut r = 0;
        for i in 0..self.n_bus {
            if i != self.slack {
                theta[i] = red[r];
                r += 1;
            }
        }
        DcState { theta }
    }
}

impl NlpProblem for ReducedDcProblem {
    fn num_vars(&self) -> usize {
        self.quad.len()
    }
    fn num_eq(&self) -> usize {
        1
    }
    fn num_ineq(&self) -> usize {
        self.flow_limit.len()
    }

    fn objective(&self, z: &DVector<f64>) -> f64 {
        let mut v = self.constant;
        for k in 0..z.len() {
            v += self.quad[k] * z[k] * z[k] + self.lin[k] * z[k];
        }
        v
    }

    fn gradient(&self, z: &DVector<f64>, grad: &mut DVector<f64>) {
        for k in 0..z.len() {
            grad[k] = 2.0 * self.quad[k] * z[k] + self.lin[k];
        }
    }

    fn eq_constraints(&self, z: &DVector<f64>, out: &mut DVector<f64>) {
        out[0] = z.sum() - self.total_demand;
    }

    fn eq_jacobian(&self, _z: &DVector<f64>, out: &mut DMatrix<f64>) {
        out.fill(1.0);
    }

    fn ineq_constraints(&self, z: &DVector<f64>, out: &mut DVector<f64>) {
        out.copy_from(&(&self.flow_rows * z + &self.flow_offset - &self.flow_limit));
    }

    fn ineq_jacobian(&self, _z: &DVector<f64>, out: &mut DMatrix<f64>) {
        out.copy_from(&self.flow_rows);
    }

    fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
        (self.p_min.clone(), self.p_max.clone())
    }

    fn lagrangian_hessian(
        &self,
        _z: &DVector<f64>,
        obj_factor: f64,
        _y_eq: &DVector<f64>,
        _y_ineq: &DVector<f64>,
        out: &mut DMatrix<f64>,
    ) -> bool {
        for k in 0..self.quad.len() {
            out[(k, k)] += 2.0 * obj_factor * self.quad[k];
        }
        true
    }
}

/// Assembles and solves the DC OPF, returning a certified solution. The
/// problem is a convex QP; a converged KKT point is the global optimum.
pub fn solve_dc_opf(
    net: &Network,
    p_dem: &DVector<f64>,
    cost: &CostFunction,
    opts: &NlpOptions,
) -> Result<OpfSolution, OpfError> {
    let problem = assemble_dc_opf(net, p_dem, cost);
    let z0 = problem.initial_guess();
    let result = solve_nlp(&problem, &z0, opts)?;
    if let Some(err) = status_to_error(result.status, &result.kkt) {
        return Err(err);
    }
    let (state, p_gen) = problem.split(&result.z);
    let report = super::verify_dc_solution(net, p_dem, &state, &p_gen, 1e-6);
    if !report.ok {
        return Err(OpfError::Certificate(format!(
            "balance {:.2e} bounds {:.2e} lines {:.2e}",
            report.max_pf_residual, report.max_bound_violation, report.max_line_violation
        )));
    }
    let flows_p = line_flows_dc(net, &state);
    let flows: Vec<LineFlow> =
        flows_p.iter().map(|&p| LineFlow { p, q: 0.0, s_mag: p.abs() }).collect();
    let loading = net
        .lines
        .iter()
        .zip(&flows)
        .map(|(l, f)| l.s_max.map(|s| f.s_mag / s))
        .collect();

    let mut binding = Vec::new();
    for (k, gen) in net.generators.iter().enumerate() {
        if (p_gen[k] - gen.p_min).abs() <= 1e-6 {
            binding.push(format!("p_min[gen{}]", gen.bus));
        }
        if (p_gen[k] - gen.p_max).abs() <= 1e-6 {
            binding.push(format!("p_max[gen{}]", gen.bus));
        }
    }
    for (k, l) in net.lines.iter().enumerate() {
        if let Some(smax) = l.s_max {
            if (flows_p[k] - smax).abs() <= 1e-6 {
                binding.push(format!("line_limit[{}-{}]", l.from, l.to));
            }
        }
    }

    let objective = problem.objective(&result.z);
    Ok(OpfSolution {
        state: SolutionState::Dc(state),
        u: ControlInput { p_gen, q_gen: DVector::zeros(net.n_gen()) },
        objective,
        line_flows: flows,
        line_loading: loading,
        binding_constraints: binding,
        kkt: result.kkt,
        iterations: result.iterations,
    })
}
