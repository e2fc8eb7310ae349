//! Ramp-constrained multi-stage OPF.
//!
//! The decision per stage is (x(k), u(k), du(k)); inputs follow the
//! discrete-time dynamics `u(k+1) = u(k) + du(k)` with the active-power
//! increments boxed by the ramp limits and reactive increments free. The
//! objective sums the stage costs `J(u(k))` plus an optional quadratic
//! regularization on the increments. One-shot solves and a receding-horizon
//! loop share the same assembly.

use crate::net::Network;
use crate::nlp::{solve_nlp, KktResiduals, NlpOptions, NlpProblem, SolveStatus};
use crate::opf::{assemble_ac_opf, verify_ac_solution, AcOpfProblem, CostFunction, OpfError};

use crate::powerflow::{ac_jacobian, ac_residual, ControlInput, Disturbance, SystemState};
use nalgebra::{DMatrix, DVector};

/// Per-stage demands over the horizon.
#[derive(Debug, Clone)]
pub struct LoadProfile {
    pub stages: Vec<Disturbance>,
}

impl LoadProfile {
    /// Constant profile from the case-file demands.
    pub fn constant(net: &Network, horizon: usize) -> Self {
        LoadProfile { stages: vec![Disturbance::from_network(net); horizon] }
    }

    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    /// Reads `stage,bus,p_demand,q_demand` rows; unlisted (stage, bus)
    /// pairs keep the case-file demand. The horizon is `max stage + 1`.
    pub fn from_csv(text: &str, net: &Network) -> Result<Self, MsError> {
        let mut rows = Vec::new();
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        for rec in rdr.records() {
            let rec = rec.map_err(|e| MsError::Profile(e.to_string()))?;
            if rec.len() < 4 {
                return Err(MsError::Profile("expected stage,bus,p_demand,q_demand".into()));
            }
            let parse_f =
                |s: &str| s.parse::<f64>().map_err(|_| MsError::Profile(format!("bad number `{s}`")));
            let stage: usize =
                rec[0].parse().map_err(|_| MsError::Profile(format!("bad stage `{}`", &rec[0])))?;
            let bus: usize =
                rec[1].parse().map_err(|_| MsError::Profile(format!("bad bus `{}`", &rec[1])))?;
            rows.push((stage, bus, parse_f(&rec[2])?, parse_f(&rec[3])?));
        }
        let horizon = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
        if horizon == 0 {
            return Err(MsError::Profile("empty profile".into()));
        }
        let mut profile = LoadProfile::constant(net, horizon);
        for (stage, bus, p, q) in rows {
            let idx =
                net.index_of(bus).ok_or_else(|| MsError::Profile(format!("unknown bus {bus}")))?;
            profile.stages[stage].p_dem[idx] = p;
            profile.stages[stage].q_dem[idx] = q;
        }
        Ok(profile)
    }

    pub fn to_csv(&self, net: &Network) -> String {
        let mut out = String::from("# opfkit load-profile v1\nstage,bus,p_demand,q_demand\n");
        for (k, d) in self.stages.iter().enumerate() {
            for (i, b) in net.buses.iter().enumerate() {
                out.push_str(&format!("{},{},{},{}\n", k, b.id, d.p_dem[i], d.q_dem[i]));
            }
        }
        out
    }
}

/// Per-generator active-power increment bounds (p.u. per stage).
#[derive(Debug, Clone)]
pub struct RampSpec {
    pub delta_min: DVector<f64>,
    pub delta_max: DVector<f64>,
}

impl RampSpec {
    pub fn unlimited(n_gen: usize) -> Self {
        RampSpec {
            delta_min: DVector::from_element(n_gen, f64::NEG_INFINITY),
            delta_max: DVector::from_element(n_gen, f64::INFINITY),
        }
    }

    /// Limits one generator to `rate` p.u. per stage both ways.
    pub fn with_limit(mut self, gen: usize, rate: f64) -> Self {
        self.delta_min[gen] = -rate;
        self.delta_max[gen] = rate;
        self
    }

    /// Converts a p.u.-per-hour rate to p.u. per stage.
    pub fn per_stage_rate(rate_per_hour: f64, stage_minutes: f64) -> f64 {
        rate_per_hour * stage_minutes / 60.0
    }

    fn validate(&self) -> Result<(), MsError> {
        for k in 0..self.delta_min.len() {
            if !(self.delta_min[k] <= 0.0 && 0.0 <= self.delta_max[k]) {
                return Err(MsError::BadRamp(k));
            }
        }
        Ok(())
    }
}

/// Diagonal PSD weight on the input increments.
#[derive(Debug, Clone)]
pub struct RegularizationSpec {
    pub sigma: DVector<f64>,
}

impl RegularizationSpec {
    pub fn none(n_gen: usize) -> Self {
        RegularizationSpec { sigma: DVector::zeros(2 * n_gen) }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MsError {
    #[error("load profile: {0}")]
    Profile(String),
    #[error("generator {0}: ramp bounds must straddle zero")]
    BadRamp(usize),
    #[error("initial input violates its box")]
    BadInitialInput,
    #[error("initial input is not consistent with the stage-0 demand: {0}")]
    InconsistentInitialInput(String),
    #[error("stage {stage}: {source}")]
    Stage {
        stage: usize,
        #[source]
        source: OpfError,
    },
    #[error(transparent)]
    Opf(#[from] OpfError),
}

/// Index layout of the stacked multi-stage decision vector: per stage
/// (v, theta, p, q, dp, dq), stages contiguous.
#[derive(Debug, Clone, Copy)]
pub struct MsLayout {
    pub n_bus: usize,
    pub n_gen: usize,
    pub horizon: usize,
}

impl MsLayout {
    pub fn stage_dim(&self) -> usize {
        2 * self.n_bus + 4 * self.n_gen
    }
    pub fn dim(&self) -> usize {
        self.horizon * self.stage_dim()
    }
    pub fn stage_offset(&self, k: usize) -> usize {
        k * self.stage_dim()
    }
    /// Offset of the (v, theta, p, q) block consumed by the stage problem.
    pub fn xu_offset(&self, k: usize) -> usize {
        self.stage_offset(k)
    }
    pub fn xu_dim(&self) -> usize {
        2 * self.n_bus + 2 * self.n_gen
    }
    pub fn u_offset(&self, k: usize) -> usize {
        self.stage_offset(k) + 2 * self.n_bus
    }
    pub fn du_offset(&self, k: usize) -> usize {
        self.stage_offset(k) + 2 * self.n_bus + 2 * self.n_gen
    }
}

/// State on the power-flow manifold for a fully pinned input, found by a
/// damped Gauss-Newton iteration on the overdetermined-but-consistent
/// residual (2N equations, 2N-1 free state entries).
fn implied_stage0_state(
    net: &Network,
    u0: &ControlInput,
    d0: &Disturbance,
) -> Result<SystemState, MsError> {
    let y = crate::net::build_admittance(net);
    let n = net.n_bus();
    let slack = net.slack_index();
    let cols: Vec<usize> = (0..n).chain((0..n).filter(|&i| i != slack).map(|i| n + i)).collect();
    let mut x = SystemState::flat(n);
    let mut r = ac_residual(net, &y, &x, u0, d0)
        .map_err(|e| MsError::InconsistentInitialInput(e.to_string()))?;
    for _ in 0..60 {
        if r.amax() <= 1e-10 {
            let report = verify_ac_solution(net, d0, &x, u0, 1e-6);
            if !report.ok {
                return Err(MsError::InconsistentInitialInput(format!(
                    "implied stage-0 state violates limits (bounds {:.2e}, lines {:.2e})",
                    report.max_bound_violation, report.max_line_violation
                )));
            }
            return Ok(x);
        }
        let jac_full = ac_jacobian(net, &y, &x, u0, d0)
            .map_err(|e| MsError::InconsistentInitialInput(e.to_string()))?;
        let mut jac = DMatrix::zeros(2 * n, cols.len());
        for (c, &col) in cols.iter().enumerate() {
            jac.set_column(c, &jac_full.column(col));
        }
        let jt = jac.transpose();
        let normal = &jt * &jac + DMatrix::identity(cols.len(), cols.len()) * 1e-12;
        let rhs = &jt * &r;
        let Some(step) = normal.lu().solve(&rhs) else {
            return Err(MsError::InconsistentInitialInput("singular Gauss-Newton system".into()));
        };
        let norm0 = r.norm();
        let mut alpha = 1.0;
        loop {
            let mut xt = x.clone();
            for (c, &col) in cols.iter().enumerate() {
                if col < n {
                    xt.v[col] -= alpha * step[c];
                } else {
                    xt.theta[col - n] -= alpha * step[c];
                }
            }
            let rt = ac_residual(net, &y, &xt, u0, d0)
                .map_err(|e| MsError::InconsistentInitialInput(e.to_string()))?;
            if rt.norm() <= (1.0 - 1e-4 * alpha) * norm0 || alpha < 2f64.powi(-24) {
                x = xt;
                r = rt;
                break;
            }
            alpha *= 0.5;
        }
        if alpha < 2f64.powi(-24) && r.amax() > 1e-10 {
            break;
        }
    }
    if r.amax() <= 1e-10 {
        return Ok(x);
    }
    Err(MsError::InconsistentInitialInput(format!(
        "no stage-0 state satisfies the power flow for the pinned input (residual {:.3e})",
        r.amax()
    )))
}

/// Assembled multi-stage problem.
pub struct MsProblem {
    pub net: Network,
    pub cost: CostFunction,
    pub ramps: RampSpec,
    pub sigma: DVector<f64>,
    pub u0: Option<ControlInput>,
    pub layout: MsLayout,
    stage_problems: Vec<AcOpfProblem>,
    n_line_rows: usize,
    prev_input: Option<ControlInput>,
    /// Stage-0 state implied by a pinned initial input.
    x0: Option<SystemState>,
}

/// Builds the multi-stage AC OPF over `(x(.), u(.), du(.))`. With
/// `u0 = None` the initial input is a free decision (documented flag).
/// Otherwise `u(0) = u0` is enforced by fixing the stage-0 input block;
/// since a fully pinned input determines the stage-0 state on the
/// power-flow manifold, that state is computed up front by a Newton solve
/// and fixed as well. An initial input that does not admit a consistent
/// stage-0 state is rejected.
pub fn assemble_multistage(
    net: &Network,
    profile: &LoadProfile,
    cost: &CostFunction,
    ramps: &RampSpec,
    reg: &RegularizationSpec,
    u0: Option<&ControlInput>,
) -> Result<MsProblem, MsError> {
    assert!(profile.horizon() >= 1, "horizon must be at least 1");
    ramps.validate()?;
    assert!(reg.sigma.iter().all(|&s| s >= 0.0), "regularization must be PSD");
    if let Some(u) = u0 {
        for (k, gen) in net.generators.iter().enumerate() {
            let ok = u.p_gen[k] >= gen.p_min - 1e-12
                && u.p_gen[k] <= gen.p_max + 1e-12
                && u.q_gen[k] >= gen.q_min - 1e-12
                && u.q_gen[k] <= gen.q_max + 1e-12;
            if !ok {
                return Err(MsError::BadInitialInput);
            }
        }
    }
    let x0 = match u0 {
        None => None,
        Some(u) => Some(implied_stage0_state(net, u, &profile.stages[0])?),
    };
    let stage_problems: Vec<AcOpfProblem> =
        profile.stages.iter().map(|d| assemble_ac_opf(net, d, cost)).collect();
    let n_line_rows = stage_problems[0].limited_lines.len();
    Ok(MsProblem {
        net: net.clone(),
        cost: cost.clone(),
        ramps: ramps.clone(),
        sigma: reg.sigma.clone(),
        u0: u0.cloned(),
        layout: MsLayout { n_bus: net.n_bus(), n_gen: net.n_gen(), horizon: profile.horizon() },
        stage_problems,
        n_line_rows,
        prev_input: None,
        x0,
    })
}

impl MsProblem {
    fn stage_xu(&self, z: &DVector<f64>, k: usize) -> DVector<f64> {
        z.rows(self.layout.xu_offset(k), self.layout.xu_dim()).into_owned()
    }

    pub fn initial_guess(&self) -> DVector<f64> {
        let mut z = DVector::zeros(self.layout.dim());
        for (k, sp) in self.stage_problems.iter().enumerate() {
            let g0 = sp.initial_guess();
            z.rows_mut(self.layout.xu_offset(k), self.layout.xu_dim()).copy_from(&g0);
        }
        if let (Some(u0), Some(x0)) = (&self.u0, &self.x0) {
            let (n, g) = (self.layout.n_bus, self.layout.n_gen);
            for i in 0..n {
                z[self.layout.xu_offset(0) + i] = x0.v[i];
                z[self.layout.xu_offset(0) + n + i] = x0.theta[i];
            }
            for j in 0..g {
                z[self.layout.u_offset(0) + j] = u0.p_gen[j];
                z[self.layout.u_offset(0) + g + j] = u0.q_gen[j];
            }
        }
        z
    }

    /// Replaces the hard `u(0)` pin with a ramp-reachability box around a
    /// previously applied input; used by the receding-horizon loop.
    pub fn set_previous_input(&mut self, prev: &ControlInput) {
        self.prev_input = Some(prev.clone());
    }

    fn stage0_bounds(&self, lo: &mut DVector<f64>, hi: &mut DVector<f64>) {
        let g = self.layout.n_gen;
        if let Some(prev) = &self.prev_input {
            for j in 0..g {
                let idx = self.layout.u_offset(0) + j;
                lo[idx] = lo[idx].max(prev.p_gen[j] + self.ramps.delta_min[j]);
                hi[idx] = hi[idx].min(prev.p_gen[j] + self.ramps.delta_max[j]);
            }
        }
    }
}

impl NlpProblem for MsProblem {
    fn num_vars(&self) -> usize {
        self.layout.dim()
    }

    fn num_eq(&self) -> usize {
        let t = self.layout.horizon;
        let g = self.layout.n_gen;
        t * 2 * self.layout.n_bus + (t - 1) * 2 * g
    }

    fn num_ineq(&self) -> usize {
        self.layout.horizon * self.n_line_rows
    }

    fn objective(&self, z: &DVector<f64>) -> f64 {
        let lay = &self.layout;
        let g = lay.n_gen;
        let mut total = 0.0;
        for k in 0..lay.horizon {
            let u = ControlInput {
                p_gen: z.rows(lay.u_offset(k), g).into_owned(),
                q_gen: z.rows(lay.u_offset(k) + g, g).into_owned(),
            };
            total += self.cost.eval(&u);
            for j in 0..2 * g {
                let du = z[lay.du_offset(k) + j];
                total += self.sigma[j] * du * du;
            }
        }
        total
    }

    fn gradient(&self, z: &DVector<f64>, grad: &mut DVector<f64>) {
        grad.fill(0.0);
        let lay = &self.layout;
        let g = lay.n_gen;
        for k in 0..lay.horizon {
            for j in 0..g {
                let pi = lay.u_offset(k) + j;
                let qi = lay.u_offset(k) + g + j;
                grad[pi] = 2.0 * self.cost.quad[j] * z[pi] + self.cost.lin[j];
                grad[qi] = 2.0 * self.cost.quad[g + j] * z[qi] + self.cost.lin[g + j];
            }
            for j in 0..2 * g {
                let di = lay.du_offset(k) + j;
                grad[di] = 2.0 * self.sigma[j] * z[di];
            }
        }
    }

    fn eq_constraints(&self, z: &DVector<f64>, out: &mut DVector<f64>) {
        let lay = &self.layout;
        let (n, g, t) = (lay.n_bus, lay.n_gen, lay.horizon);
        for k in 0..t {
            let xu = self.stage_xu(z, k);
            let mut stage = DVector::zeros(2 * n);
            self.stage_problems[k].eq_constraints(&xu, &mut stage);
            out.rows_mut(k * 2 * n, 2 * n).copy_from(&stage);
        }
        let mut row = t * 2 * n;
        for k in 0..t - 1 {
            for j in 0..2 * g {
                out[row] =
                    z[lay.u_offset(k + 1) + j] - z[lay.u_offset(k) + j] - z[lay.du_offset(k) + j];
                row += 1;
            }
        }
    }

    fn eq_jacobian(&self, z: &DVector<f64>, out: &mut DMatrix<f64>) {
        out.fill(0.0);
        let lay = &self.layout;
        let (n, g, t) = (lay.n_bus, lay.n_gen, lay.horizon);
        let xu_dim = lay.xu_dim();
        for k in 0..t {
            let xu = self.stage_xu(z, k);
            let mut stage = DMatrix::zeros(2 * n, xu_dim);
            self.stage_problems[k].eq_jacobian(&xu, &mut stage);
            out.view_mut((k * 2 * n, lay.xu_offset(k)), (2 * n, xu_dim)).copy_from(&stage);
        }
        let mut row = t * 2 * n;
        for k in 0..t - 1 {
            for j in 0..2 * g {
                out[(row, lay.u_offset(k + 1) + j)] = 1.0;
                out[(row, lay.u_offset(k) + j)] = -1.0;
                out[(row, lay.du_offset(k) + j)] = -1.0;
                row += 1;
            }
        }
    }

    fn ineq_constraints(&self, z: &DVector<f64>, out: &mut DVector<f64>) {
        let l = self.n_line_rows;
        for k in 0..self.layout.horizon {
            let xu = self.stage_xu(z, k);
            let mut stage = DVector::zeros(l);
            self.stage_problems[k].ineq_constraints(&xu, &mut stage);
            out.rows_mut(k * l, l).copy_from(&stage);
        }
    }

    fn ineq_jacobian(&self, z: &DVector<f64>, out: &mut DMatrix<f64>) {
        out.fill(0.0);
        let l = self.n_line_rows;
        let xu_dim = self.layout.xu_dim();
        for k in 0..self.layout.horizon {
            let xu = self.stage_xu(z, k);
            let mut stage = DMatrix::zeros(l, xu_dim);
            self.stage_problems[k].ineq_jacobian(&xu, &mut stage);
            out.view_mut((k * l, self.layout.xu_offset(k)), (l, xu_dim)).copy_from(&stage);
        }
    }

    fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let lay = &self.layout;
        let g = lay.n_gen;
        let mut lo = DVector::from_element(lay.dim(), f64::NEG_INFINITY);
        let mut hi = DVector::from_element(lay.dim(), f64::INFINITY);
        let (slo, shi) = self.stage_problems[0].bounds();
        for k in 0..lay.horizon {
            lo.rows_mut(lay.xu_offset(k), lay.xu_dim()).copy_from(&slo);
            hi.rows_mut(lay.xu_offset(k), lay.xu_dim()).copy_from(&shi);
            for j in 0..g {
                lo[lay.du_offset(k) + j] = self.ramps.delta_min[j];
                hi[lay.du_offset(k) + j] = self.ramps.delta_max[j];
            }
        }
        if let (Some(u0), Some(x0)) = (&self.u0, &self.x0) {
            // the pinned initial input and its implied state are enforced
            // by fixing the whole stage-0 block, which stays exact even
            // when values sit on box faces
            for j in 0..g {
                lo[lay.u_offset(0) + j] = u0.p_gen[j];
                hi[lay.u_offset(0) + j] = u0.p_gen[j];
                lo[lay.u_offset(0) + g + j] = u0.q_gen[j];
                hi[lay.u_offset(0) + g + j] = u0.q_gen[j];
            }
            for i in 0..lay.n_bus {
                lo[lay.xu_offset(0) + i] = x0.v[i];
                hi[lay.xu_offset(0) + i] = x0.v[i];
                lo[lay.xu_offset(0) + lay.n_bus + i] = x0.theta[i];
                hi[lay.xu_offset(0) + lay.n_bus + i] = x0.theta[i];
            }
        }
        self.stage0_bounds(&mut lo, &mut hi);
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
        let (n, g) = (lay.n_bus, lay.n_gen);
        let l = self.n_line_rows;
        let xu_dim = lay.xu_dim();
        for k in 0..lay.horizon {
            let xu = self.stage_xu(z, k);
            let stage_y_eq = y_eq.rows(k * 2 * n, 2 * n).into_owned();
            let stage_y_ineq = y_ineq.rows(k * l, l).into_owned();
            let mut stage = DMatrix::zeros(xu_dim, xu_dim);
            if !self.stage_problems[k].lagrangian_hessian(
                &xu,
                obj_factor,
                &stage_y_eq,
                &stage_y_ineq,
                &mut stage,
            ) {
                return false;
            }
            let off = lay.xu_offset(k);
            for a in 0..xu_dim {
                for b in 0..xu_dim {
                    let v = stage[(a, b)];
                    if v != 0.0 {
                        out[(off + a, off + b)] += v;
                    }
                }
            }
            for j in 0..2 * g {
                let di = lay.du_offset(k) + j;
                out[(di, di)] += 2.0 * obj_factor * self.sigma[j];
            }
        }
        true
    }
}

/// Solved multi-stage trajectory. `delta_u[k]` is reported as the exact
/// input difference `u(k+1) - u(k)`; the final stage increment is zero.
#[derive(Debug, Clone)]
pub struct MultiStageSolution {
    pub u: Vec<ControlInput>,
    pub delta_u: Vec<ControlInput>,
    pub x: Vec<SystemState>,
    pub objective: f64,
    pub stage_costs: Vec<f64>,
    pub kkt: KktResiduals,
    pub iterations: usize,
}

/// Solves an assembled multi-stage problem and verifies every stage with
/// the single-stage feasibility certificate.
pub fn solve_multistage(
    problem: &MsProblem,
    profile: &LoadProfile,
    opts: &NlpOptions,
) -> Result<MultiStageSolution, MsError> {
    let result = solve_nlp(problem, &problem.initial_guess(), opts).map_err(OpfError::from)?;
    match result.status {
        SolveStatus::Converged => {}
        SolveStatus::InfeasibleDetected => return Err(OpfError::Infeasible.into()),
        SolveStatus::MaxIter => return Err(OpfError::MaxIter(result.kkt.max()).into()),
    }
    let lay = &problem.layout;
    let (n, g, t) = (lay.n_bus, lay.n_gen, lay.horizon);
    let mut u = Vec::with_capacity(t);
    let mut x = Vec::with_capacity(t);
    let mut stage_costs = Vec::with_capacity(t);
    for k in 0..t {
        let z = &result.z;
        let xu = z.rows(lay.xu_offset(k), lay.xu_dim()).into_owned();
        let state =
            SystemState { v: xu.rows(0, n).into_owned(), theta: xu.rows(n, n).into_owned() };
        let input = ControlInput {
            p_gen: xu.rows(2 * n, g).into_owned(),
            q_gen: xu.rows(2 * n + g, g).into_owned(),
        };
        let report = verify_ac_solution(&problem.net, &profile.stages[k], &state, &input, 1e-6);
        if !report.ok {
            return Err(MsError::Stage {
                stage: k,
                source: OpfError::Certificate(format!(
                    "pf {:.2e} bounds {:.2e} lines {:.2e}",
                    report.max_pf_residual, report.max_bound_violation, report.max_line_violation
                )),
            });
        }
        let mut c = problem.cost.eval(&input);
        for j in 0..2 * g {
            let du = z[lay.du_offset(k) + j];
            c += problem.sigma[j] * du * du;
        }
        stage_costs.push(c);
        u.push(input);
        x.push(state);
    }
    let mut delta_u = Vec::with_capacity(t);
    for k in 0..t {
        if k + 1 < t {
            delta_u.push(ControlInput {
                p_gen: &u[k + 1].p_gen - &u[k].p_gen,
                q_gen: &u[k + 1].q_gen - &u[k].q_gen,
            });
        } else {
            delta_u.push(ControlInput::zeros(g));
        }
    }
    Ok(MultiStageSolution {
        u,
        delta_u,
        x,
        objective: result.objective_value,
        stage_costs,
        kkt: result.kkt,
        iterations: result.iterations,
    })
}

/// Closed-loop receding-horizon result.
#[derive(Debug, Clone)]
pub struct RecedingHorizonRun {
    pub applied_u: Vec<ControlInput>,
    pub applied_x: Vec<SystemState>,
    pub stage_costs: Vec<f64>,
    pub total_cost: f64,
    pub solve_iterations: Vec<usize>,
}

/// Receding-horizon solution: at each step a window of at most `window`
/// stages (truncated at the horizon end) is solved, the first input is
/// applied, and the horizon shifts. Ramp feasibility between consecutive
/// applied inputs is enforced through the stage-0 reachability box.
pub fn receding_horizon_run(
    net: &Network,
    profile: &LoadProfile,
    cost: &CostFunction,
    ramps: &RampSpec,
    reg: &RegularizationSpec,
    u0: Option<&ControlInput>,
    window: usize,
) -> Result<RecedingHorizonRun, MsError> {
    let t = profile.horizon();
    assert!(window >= 1 && window <= t, "window must be within the horizon");
    let g = net.n_gen();
    let mut applied_u: Vec<ControlInput> = Vec::with_capacity(t);
    let mut applied_x = Vec::with_capacity(t);
    let mut stage_costs = Vec::with_capacity(t);
    let mut iterations = Vec::with_capacity(t);
    let mut prev: Option<ControlInput> = None;

    for k in 0..t {
        let win = window.min(t - k);
        let sub = LoadProfile { stages: profile.stages[k..k + win].to_vec() };
        let pin = if k == 0 { u0 } else { None };
        let mut problem = assemble_multistage(net, &sub, cost, ramps, reg, pin)?;
        if let Some(p) = &prev {
            problem.set_previous_input(p);
        }
        let sol = solve_multistage(&problem, &sub, &NlpOptions::default()).map_err(|e| match e {
            MsError::Stage { stage, source } => MsError::Stage { stage: stage + k, source },
            MsError::Opf(e) => MsError::Stage { stage: k, source: e },
            other => other,
        })?;
        let u_now = sol.u[0].clone();
        let mut c = cost.eval(&u_now);
        if let Some(p) = &prev {
            for j in 0..g {
                let dp = u_now.p_gen[j] - p.p_gen[j];
                let dq = u_now.q_gen[j] - p.q_gen[j];
                c += reg.sigma[j] * dp * dp + reg.sigma[g + j] * dq * dq;
            }
        }
        stage_costs.push(c);
        iterations.push(sol.iterations);
        applied_x.push(sol.x[0].clone());
        prev = Some(u_now.clone());
        applied_u.push(u_now);
    }

    Ok(RecedingHorizonRun {
        total_cost: stage_costs.iter().sum(),
        applied_u,
        applied_x,
        stage_costs,
        solve_iterations: iterations,
    })
}

/// Writes applied controls as `stage,gen_bus,p,q,delta_p` rows.
pub fn write_controls_csv(net: &Network, u: &[ControlInput]) -> String {
    let mut out = String::from("# opfkit controls v1\nstage,gen_bus,p,q,delta_p\n");
    for (k, input) in u.iter().enumerate() {
        for (j, gen) in net.generators.iter().enumerate() {
            let dp = if k + 1 < u.len() { u[k + 1].p_gen[j] - input.p_gen[j] } else { 0.0 };
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                k, gen.bus, input.p_gen[j], input.q_gen[j], dp
            ));
        }
    }
    out
}

/// Writes the state trajectory as `stage,bus,v,theta` rows.
pub fn write_states_csv(net: &Network, x: &[SystemState]) -> String {
    let mut out = String::from("# opfkit states v1\nstage,bus,v,theta\n");
    for (k, state) in x.iter().enumerate() {
        for (i, b) in net.buses.iter().enumerate() {
            out.push_str(&format!("{},{},{},{}\n", k, b.id, state.v[i], state.theta[i]));
        }
    }
    out
}
