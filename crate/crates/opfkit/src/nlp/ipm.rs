//! Dense primal-dual interior-point method.
//!
//! Monotone Fiacco-McCormick barrier reduction, slack formulation for
//! inequalities, direct barrier handling of variable bounds, inertia-
//! corrected LDL^T solves of the condensed KKT system, and an Armijo line
//! search on an l1 exact-penalty merit function. Exact Lagrangian Hessians
//! come from the problem callbacks; a damped BFGS approximation stands in
//! when a problem declines to provide them.

use super::ldl::LdlFactor;
use super::{
    IterationRecord, KktResiduals, NlpError, NlpOptions, NlpProblem, SolveResult, SolveStatus,
};
use nalgebra::{DMatrix, DVector};

const KAPPA_MU: f64 = 0.2;
const KAPPA_EPS: f64 = 10.0;
const TAU_BOUNDARY: f64 = 0.995;
const ARMIJO_C1: f64 = 1e-4;
const KAPPA_SANDWICH: f64 = 1e10;
const SLACK_MIN: f64 = 1e-6;
const STALL_LIMIT: usize = 10;
const STALL_VIOLATION: f64 = 1e-6;

struct Bounds {
    lower: DVector<f64>,
    upper: DVector<f64>,
    fixed: Vec<bool>,
}

impl Bounds {
    fn has_lower(&self, j: usize) -> bool {
        self.lower[j].is_finite() && !self.fixed[j]
    }
    fn has_upper(&self, j: usize) -> bool {
        self.upper[j].is_finite() && !self.fixed[j]
    }
}

struct Eval {
    f: f64,
    grad: DVector<f64>,
    c_e: DVector<f64>,
    j_e: DMatrix<f64>,
    g: DVector<f64>,
    j_i: DMatrix<f64>,
}

fn evaluate(p: &dyn NlpProblem, z: &DVector<f64>, iter: usize) -> Result<Eval, NlpError> {
    let (n, me, mi) = (p.num_vars(), p.num_eq(), p.num_ineq());
    let f = p.objective(z);
    let mut grad = DVector::zeros(n);
    p.gradient(z, &mut grad);
    let mut c_e = DVector::zeros(me);
    let mut j_e = DMatrix::zeros(me, n);
    if me > 0 {
        p.eq_constraints(z, &mut c_e);
        p.eq_jacobian(z, &mut j_e);
    }
    let mut g = DVector::zeros(mi);
    let mut j_i = DMatrix::zeros(mi, n);
    if mi > 0 {
        p.ineq_constraints(z, &mut g);
        p.ineq_jacobian(z, &mut j_i);
    }
    let finite = f.is_finite()
        && grad.iter().all(|v| v.is_finite())
        && c_e.iter().all(|v| v.is_finite())
        && j_e.iter().all(|v| v.is_finite())
        && g.iter().all(|v| v.is_finite())
        && j_i.iter().all(|v| v.is_finite());
    if !finite {
        return Err(NlpError::CallbackNaN(iter));
    }
    Ok(Eval { f, grad, c_e, j_e, g, j_i })
}

struct Iterate {
    z: DVector<f64>,
    s: DVector<f64>,
    y_e: DVector<f64>,
    y_i: DVector<f64>,
    zl: DVector<f64>,
    zu: DVector<f64>,
}

fn kkt_residuals(ev: &Eval, it: &Iterate, bounds: &Bounds, mu: f64) -> KktResiduals {
    let n = it.z.len();
    let mut stat: f64 = 0.0;
    let lag_grad = &ev.grad
        + ev.j_e.transpose() * &it.y_e
        + ev.j_i.transpose() * &it.y_i
        - &it.zl
        + &it.zu;
    for j in 0..n {
        if !bounds.fixed[j] {
            stat = stat.max(lag_grad[j].abs());
        }
    }
    let eq_violation = if ev.c_e.is_empty() { 0.0 } else { ev.c_e.amax() };
    let ineq_violation = ev.g.iter().fold(0.0f64, |a, &v| a.max(v.max(0.0)));
    let mut comp: f64 = 0.0;
    for j in 0..it.s.len() {
        comp = comp.max((it.s[j] * it.y_i[j] - mu).abs());
    }
    for j in 0..n {
        if bounds.has_lower(j) {
            comp = comp.max(((it.z[j] - bounds.lower[j]) * it.zl[j] - mu).abs());
        }
        if bounds.has_upper(j) {
            comp = comp.max(((bounds.upper[j] - it.z[j]) * it.zu[j] - mu).abs());
        }
    }
    KktResiduals { stationarity: stat, eq_violation, ineq_violation, complementarity: comp }
}

fn barrier_value(ev_f: f64, z: &DVector<f64>, s: &DVector<f64>, bounds: &Bounds, mu: f64) -> f64 {
    let mut phi = ev_f;
    for j in 0..z.len() {
        if bounds.has_lower(j) {
            phi -= mu * (z[j] - bounds.lower[j]).ln();
        }
        if bounds.has_upper(j) {
            phi -= mu * (bounds.upper[j] - z[j]).ln();
        }
    }
    for &sj in s.iter() {
        phi -= mu * sj.ln();
    }
    phi
}

fn constraint_l1(c_e: &DVector<f64>, g: &DVector<f64>, s: &DVector<f64>) -> f64 {
    let mut v = c_e.iter().map(|x| x.abs()).sum::<f64>();
    for j in 0..g.len() {
        v += (g[j] + s[j]).abs();
    }
    v
}

/// Damped BFGS state for problems without Hessian callbacks.
struct BfgsState {
    b: DMatrix<f64>,
    prev: Option<(DVector<f64>, DVector<f64>)>, // (z, lagrangian gradient at z with current duals)
}

/// Solves a smooth constrained program from `z0`. See the module docs for
/// the algorithmic outline and [`NlpOptions`] for the tolerances.
pub fn solve_nlp(
    p: &dyn NlpProblem,
    z0: &DVector<f64>,
    opts: &NlpOptions,
) -> Result<SolveResult, NlpError> {
    let n = p.num_vars();
    let me = p.num_eq();
    let mi = p.num_ineq();
    if z0.len() != n {
        return Err(NlpError::Dimension(format!("start sized {} for {} variables", z0.len(), n)));
    }
    let (lower, upper) = p.bounds();
    if lower.len() != n || upper.len() != n {
        return Err(NlpError::Dimension("bounds sized unlike the variable count".into()));
    }
    let fixed: Vec<bool> = (0..n).map(|j| lower[j] == upper[j]).collect();
    let bounds = Bounds { lower, upper, fixed };

    // strictly interior start
    let mut z = z0.clone();
    for j in 0..n {
        if bounds.fixed[j] {
            z[j] = bounds.lower[j];
            continue;
        }
        if bounds.has_lower(j) && bounds.has_upper(j) {
            let push =
                (opts.bound_push * (bounds.upper[j] - bounds.lower[j])).min(opts.bound_push);
            z[j] = z[j].clamp(bounds.lower[j] + push, bounds.upper[j] - push);
        } else if bounds.has_lower(j) {
            let push = opts.bound_push * bounds.lower[j].abs().max(1.0);
            z[j] = z[j].max(bounds.lower[j] + push);
        } else if bounds.has_upper(j) {
            let push = opts.bound_push * bounds.upper[j].abs().max(1.0);
            z[j] = z[j].min(bounds.upper[j] - push);
        }
    }

    let mut ev = evaluate(p, &z, 0)?;
    let mut mu = opts.mu0;
    let mu_floor = opts.tol / 10.0;
    // slacks start at the constraint magnitude so dual scaling stays sane
    // even when the start badly violates an inequality
    let s0 = |g: f64| g.abs().max(SLACK_MIN);
    let mut it = Iterate {
        s: DVector::from_fn(mi, |j, _| s0(ev.g[j])),
        y_e: DVector::zeros(me),
        y_i: DVector::from_fn(mi, |j, _| mu / s0(ev.g[j])),
        zl: DVector::from_fn(n, |j, _| {
            if bounds.has_lower(j) { mu / (z[j] - bounds.lower[j]) } else { 0.0 }
        }),
        zu: DVector::from_fn(n, |j, _| {
            if bounds.has_upper(j) { mu / (bounds.upper[j] - z[j]) } else { 0.0 }
        }),
        z,
    };

    let has_exact_hessian = {
        let mut probe = DMatrix::zeros(n, n);
        p.lagrangian_hessian(&it.z, 1.0, &it.y_e, &it.y_i, &mut probe)
    };
    let mut bfgs = BfgsState { b: DMatrix::identity(n, n), prev: None };

    let mut nu = 1.0; // merit penalty weight
    let mut delta_w_last = 0.0;
    let mut stall_count = 0usize;
    let mut best_violation = f64::INFINITY;
    let mut trace = Vec::new();
    let mut step_len = 0.0;
    let mut inertia = (0usize, 0usize, 0usize);

    for iter in 0..opts.max_iter {
        let kkt0 = kkt_residuals(&ev, &it, &bounds, 0.0);
        if kkt0.max() <= opts.tol {
            if opts.trace {
                trace.push(IterationRecord {
                    iter,
                    objective: ev.f,
                    stationarity: kkt0.stationarity,
                    eq_violation: kkt0.eq_violation,
                    ineq_violation: kkt0.ineq_violation,
                    complementarity: kkt0.complementarity,
                    step_length: step_len,
                    barrier_mu: mu,
                    inertia,
                });
            }
            return Ok(finish(p, ev, it, SolveStatus::Converged, kkt0, iter, trace));
        }

        // barrier update once the scaled problem is solved well enough
        while mu > mu_floor && kkt_residuals(&ev, &it, &bounds, mu).max() <= KAPPA_EPS * mu {
            mu = (KAPPA_MU * mu).min(mu.powf(1.5)).max(mu_floor);
        }

        // infeasibility heuristic: a stalled violation first forces the
        // barrier down; stalling again at the floor is declared infeasible
        let violation = kkt0.eq_violation.max(kkt0.ineq_violation);
        if violation > STALL_VIOLATION && violation >= best_violation * (1.0 - 1e-3) {
            stall_count += 1;
            if stall_count >= STALL_LIMIT {
                if mu <= mu_floor * (1.0 + 1e-12) {
                    return Ok(finish(p, ev, it, SolveStatus::InfeasibleDetected, kkt0, iter, trace));
                }
                mu = (KAPPA_MU * mu).max(mu_floor);
                stall_count = 0;
            }
        } else {
            stall_count = 0;
        }
        best_violation = best_violation.min(violation);

        // Lagrangian Hessian
        let mut w = DMatrix::zeros(n, n);
        if has_exact_hessian {
            if !p.lagrangian_hessian(&it.z, 1.0, &it.y_e, &it.y_i, &mut w) {
                return Err(NlpError::CallbackNaN(iter));
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(NlpError::CallbackNaN(iter));
            }
        } else {
            let lag_grad =
                &ev.grad + ev.j_e.transpose() * &it.y_e + ev.j_i.transpose() * &it.y_i;
            if let Some((z_prev, lg_prev)) = &bfgs.prev {
                let mut lg_prev_now = DVector::zeros(n);
                p.gradient(z_prev, &mut lg_prev_now);
                let mut ce_p = DVector::zeros(me);
                let mut je_p = DMatrix::zeros(me, n);
                let mut g_p = DVector::zeros(mi);
                let mut ji_p = DMatrix::zeros(mi, n);
                if me > 0 {
                    p.eq_constraints(z_prev, &mut ce_p);
                    p.eq_jacobian(z_prev, &mut je_p);
                }
                if mi > 0 {
                    p.ineq_constraints(z_prev, &mut g_p);
                    p.ineq_jacobian(z_prev, &mut ji_p);
                }
                let lg_prev_current_duals =
                    lg_prev_now + je_p.transpose() * &it.y_e + ji_p.transpose() * &it.y_i;
                let _ = lg_prev;
                let s_vec = &it.z - z_prev;
                let y_vec = &lag_grad - lg_prev_current_duals;
                let sbs = (s_vec.transpose() * &bfgs.b * &s_vec)[(0, 0)];
                let sty = s_vec.dot(&y_vec);
                if sbs > 1e-16 && s_vec.norm() > 1e-14 {
                    let y_used = if sty < 0.2 * sbs {
                        let theta = 0.8 * sbs / (sbs - sty);
                        theta * &y_vec + (1.0 - theta) * (&bfgs.b * &s_vec)
                    } else {
                        y_vec.clone()
                    };
                    let bs = &bfgs.b * &s_vec;
                    bfgs.b -= &bs * bs.transpose() / sbs;
                    bfgs.b += &y_used * y_used.transpose() / s_vec.dot(&y_used);
                }
            }
            bfgs.prev = Some((it.z.clone(), lag_grad));
            w.copy_from(&bfgs.b);
        }

        // condensed primal-dual system
        let mut w_tilde = w;
        for j in 0..n {
            if bounds.has_lower(j) {
                w_tilde[(j, j)] += it.zl[j] / (it.z[j] - bounds.lower[j]);
            }
            if bounds.has_upper(j) {
                w_tilde[(j, j)] += it.zu[j] / (bounds.upper[j] - it.z[j]);
            }
        }
        if mi > 0 {
            for r in 0..mi {
                let scale = it.y_i[r] / it.s[r];
                let row = ev.j_i.row(r);
                for a in 0..n {
                    let ra = row[a];
                    if ra == 0.0 {
                        continue;
                    }
                    for b in 0..n {
                        w_tilde[(a, b)] += scale * ra * row[b];
                    }
                }
            }
        }

        let r_i = &ev.g + &it.s;
        // rhs per the condensed derivation
        let mut rhs1 = -&ev.grad - ev.j_e.transpose() * &it.y_e;
        if mi > 0 {
            let t = DVector::from_fn(mi, |j, _| (mu + it.y_i[j] * r_i[j]) / it.s[j]);
            rhs1 -= ev.j_i.transpose() * t;
        }
        for j in 0..n {
            if bounds.has_lower(j) {
                rhs1[j] += mu / (it.z[j] - bounds.lower[j]);
            }
            if bounds.has_upper(j) {
                rhs1[j] -= mu / (bounds.upper[j] - it.z[j]);
            }
        }

        let dim = n + me;
        let mut kkt = DMatrix::zeros(dim, dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(&w_tilde);
        if me > 0 {
            kkt.view_mut((n, 0), (me, n)).copy_from(&ev.j_e);
            kkt.view_mut((0, n), (n, me)).copy_from(&ev.j_e.transpose());
        }
        let mut rhs = DVector::zeros(dim);
        rhs.rows_mut(0, n).copy_from(&rhs1);
        rhs.rows_mut(n, me).copy_from(&(-&ev.c_e));
        for j in 0..n {
            if bounds.fixed[j] {
                for k in 0..dim {
                    kkt[(j, k)] = 0.0;
                    kkt[(k, j)] = 0.0;
                }
                kkt[(j, j)] = 1.0;
                rhs[j] = 0.0;
            }
        }

        // inertia-correcting regularization; oversized steps flag hidden
        // rank deficiency that slipped past the pivot test
        let step_cap = 1e10 * (1.0 + it.z.amax());
        let mut delta_w = 0.0;
        let mut delta_c = 0.0;
        let sol = loop {
            let mut reg = kkt.clone();
            for j in 0..n {
                if !bounds.fixed[j] {
                    reg[(j, j)] += delta_w;
                }
            }
            for j in n..dim {
                reg[(j, j)] -= delta_c;
            }
            if let Ok(fac) = LdlFactor::new(&reg, 1e-300) {
                let (pos, neg, _) = fac.inertia();
                if pos == n && neg == me {
                    let candidate = fac.solve(&rhs);
                    if candidate.iter().all(|v| v.is_finite()) && candidate.amax() <= step_cap {
                        inertia = (pos, neg, 0);
                        break candidate;
                    }
                }
            }
            if delta_c == 0.0 && me > 0 {
                delta_c = 1e-11;
            }
            delta_w = if delta_w == 0.0 {
                if delta_w_last == 0.0 {
                    1e-4
                } else {
                    f64::max(delta_w_last / 3.0, 1e-20)
                }
            } else {
                delta_w * 8.0
            };
            if delta_w > 1e40 {
                return Err(NlpError::LinearSystem(iter));
            }
        };
        if delta_w > 0.0 {
            delta_w_last = delta_w;
        }
        let dz = sol.rows(0, n).into_owned();
        let dy_e = sol.rows(n, me).into_owned();
        let ds = if mi > 0 { -(&r_i) - &ev.j_i * &dz } else { DVector::zeros(0) };
        let dy_i = DVector::from_fn(mi, |j, _| {
            (mu - it.s[j] * it.y_i[j] + it.y_i[j] * r_i[j]) / it.s[j]
                + it.y_i[j] / it.s[j] * (ev.j_i.row(j) * &dz)[0]
        });
        let dzl = DVector::from_fn(n, |j, _| {
            if bounds.has_lower(j) {
                let gap = it.z[j] - bounds.lower[j];
                (mu - gap * it.zl[j]) / gap - it.zl[j] / gap * dz[j]
            } else {
                0.0
            }
        });
        let dzu = DVector::from_fn(n, |j, _| {
            if bounds.has_upper(j) {
                let gap = bounds.upper[j] - it.z[j];
                (mu - gap * it.zu[j]) / gap + it.zu[j] / gap * dz[j]
            } else {
                0.0
            }
        });

        // fraction-to-boundary step limits
        let mut alpha_pri: f64 = 1.0;
        for j in 0..mi {
            if ds[j] < 0.0 {
                alpha_pri = alpha_pri.min(-TAU_BOUNDARY * it.s[j] / ds[j]);
            }
        }
        for j in 0..n {
            if bounds.has_lower(j) && dz[j] < 0.0 {
                alpha_pri = alpha_pri.min(-TAU_BOUNDARY * (it.z[j] - bounds.lower[j]) / dz[j]);
            }
            if bounds.has_upper(j) && dz[j] > 0.0 {
                alpha_pri = alpha_pri.min(TAU_BOUNDARY * (bounds.upper[j] - it.z[j]) / dz[j]);
            }
        }
        let mut alpha_dual: f64 = 1.0;
        for j in 0..mi {
            if dy_i[j] < 0.0 {
                alpha_dual = alpha_dual.min(-TAU_BOUNDARY * it.y_i[j] / dy_i[j]);
            }
        }
        for j in 0..n {
            if bounds.has_lower(j) && dzl[j] < 0.0 {
                alpha_dual = alpha_dual.min(-TAU_BOUNDARY * it.zl[j] / dzl[j]);
            }
            if bounds.has_upper(j) && dzu[j] < 0.0 {
                alpha_dual = alpha_dual.min(-TAU_BOUNDARY * it.zu[j] / dzu[j]);
            }
        }

        // adaptive merit weight, then Armijo backtracking
        let theta0 = constraint_l1(&ev.c_e, &ev.g, &it.s);
        let mut grad_dir = ev.grad.dot(&dz);
        for j in 0..n {
            if bounds.has_lower(j) {
                grad_dir -= mu / (it.z[j] - bounds.lower[j]) * dz[j];
            }
            if bounds.has_upper(j) {
                grad_dir += mu / (bounds.upper[j] - it.z[j]) * dz[j];
            }
        }
        for j in 0..mi {
            grad_dir -= mu / it.s[j] * ds[j];
        }
        if theta0 > 1e-14 {
            let nu_req = grad_dir / (0.9 * theta0);
            if nu_req > nu {
                nu = (nu_req + 1.0).min(1e10);
            }
        }
        let dphi = grad_dir - nu * theta0;

        let phi0 = barrier_value(ev.f, &it.z, &it.s, &bounds, mu) + nu * theta0;
        let e_mu_0 = kkt_residuals(&ev, &it, &bounds, mu).max();
        let mut alpha = alpha_pri;
        let mut kkt_escape_tried = false;
        let (ev_new, s_new, z_new);
        loop {
            // merit stagnation escape: when backtracking has collapsed,
            // accept the full primal-dual step if it strictly reduces the
            // barrier KKT error (dual-only progress the merit cannot see)
            if alpha < 1e-4 && !kkt_escape_tried {
                kkt_escape_tried = true;
                let zt = &it.z + alpha_pri * &dz;
                let st = &it.s + alpha_pri * &ds;
                if let Ok(evt) = evaluate(p, &zt, iter) {
                    let trial = Iterate {
                        z: zt.clone(),
                        s: st.clone(),
                        y_e: &it.y_e + alpha_pri * &dy_e,
                        y_i: &it.y_i + alpha_dual * &dy_i,
                        zl: &it.zl + alpha_dual * &dzl,
                        zu: &it.zu + alpha_dual * &dzu,
                    };
                    if kkt_residuals(&evt, &trial, &bounds, mu).max() <= 0.99 * e_mu_0 {
                        // the shared update below applies these same steps
                        alpha = alpha_pri;
                        ev_new = evt;
                        s_new = st;
                        z_new = zt;
                        break;
                    }
                }
            }
            let zt = &it.z + alpha * &dz;
            let st = &it.s + alpha * &ds;
            let evt = evaluate(p, &zt, iter)?;
            let phit = barrier_value(evt.f, &zt, &st, &bounds, mu)
                + nu * constraint_l1(&evt.c_e, &evt.g, &st);
            if phit <= phi0 + ARMIJO_C1 * alpha * dphi || alpha < 1e-12 {
                ev_new = evt;
                s_new = st;
                z_new = zt;
                break;
            }
            alpha *= 0.5;
        }
        step_len = alpha;

        it.z = z_new;
        it.s = s_new;
        it.y_e += alpha * dy_e;
        it.y_i += alpha_dual * &dy_i;
        it.zl += alpha_dual * &dzl;
        it.zu += alpha_dual * &dzu;
        ev = ev_new;

        // keep dual products near the central path
        for j in 0..mi {
            let lo = mu / (KAPPA_SANDWICH * it.s[j]);
            let hi = KAPPA_SANDWICH * mu / it.s[j];
            it.y_i[j] = it.y_i[j].clamp(lo, hi);
        }
        for j in 0..n {
            if bounds.has_lower(j) {
                let gap = it.z[j] - bounds.lower[j];
                it.zl[j] = it.zl[j].clamp(mu / (KAPPA_SANDWICH * gap), KAPPA_SANDWICH * mu / gap);
            }
            if bounds.has_upper(j) {
                let gap = bounds.upper[j] - it.z[j];
                it.zu[j] = it.zu[j].clamp(mu / (KAPPA_SANDWICH * gap), KAPPA_SANDWICH * mu / gap);
            }
        }

        if opts.trace {
            let k = kkt_residuals(&ev, &it, &bounds, 0.0);
            trace.push(IterationRecord {
                iter,
                objective: ev.f,
                stationarity: k.stationarity,
                eq_violation: k.eq_violation,
                ineq_violation: k.ineq_violation,
                complementarity: k.complementarity,
                step_length: step_len,
                barrier_mu: mu,
                inertia,
            });
        }
    }

    let kkt = kkt_residuals(&ev, &it, &bounds, 0.0);
    let status =
        if kkt.max() <= opts.tol { SolveStatus::Converged } else { SolveStatus::MaxIter };
    Ok(finish(p, ev, it, status, kkt, opts.max_iter, trace))
}

fn finish(
    _p: &dyn NlpProblem,
    ev: Eval,
    it: Iterate,
    status: SolveStatus,
    kkt: KktResiduals,
    iterations: usize,
    trace: Vec<IterationRecord>,
) -> SolveResult {
    SolveResult {
        z: it.z,
        lambda_eq: it.y_e,
        mu_ineq: it.y_i,
        z_lower: it.zl,
        z_upper: it.zu,
        status,
        kkt,
        iterations,
        objective_value: ev.f,
        trace,
    }
}
