//! Derivative checking against central finite differences.

use super::NlpProblem;
use nalgebra::{DMatrix, DVector};

/// Per-callback maximum relative deviations from finite differences.
#[derive(Debug, Clone, Copy, Default)]
pub struct DerivativeReport {
    pub gradient: f64,
    pub eq_jacobian: f64,
    pub ineq_jacobian: f64,
    /// Lagrangian Hessian deviation; zero when the problem has no Hessian
    /// callback.
    pub hessian: f64,
}

impl DerivativeReport {
    pub fn max(&self) -> f64 {
        self.gradient.max(self.eq_jacobian).max(self.ineq_jacobian).max(self.hessian)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Compares analytic derivatives against central differences with step
/// `1e-6 * max(1, |z_j|)` and returns the worst relative deviation per
/// callback. The Hessian is checked against differences of the Lagrangian
/// gradient at unit multipliers.
pub fn check_derivatives(p: &dyn NlpProblem, z: &DVector<f64>) -> DerivativeReport {
    let n = p.num_vars();
    let me = p.num_eq();
    let mi = p.num_ineq();
    let mut report = DerivativeReport::default();

    let mut grad = DVector::zeros(n);
    p.gradient(z, &mut grad);
    let mut j_e = DMatrix::zeros(me, n);
    let mut j_i = DMatrix::zeros(mi, n);
    if me > 0 {
        p.eq_jacobian(z, &mut j_e);
    }
    if mi > 0 {
        p.ineq_jacobian(z, &mut j_i);
    }

    let y_e = DVector::from_element(me, 1.0);
    let y_i = DVector::from_element(mi, 1.0);
    let mut hess = DMatrix::zeros(n, n);
    let has_hessian = p.lagrangian_hessian(z, 1.0, &y_e, &y_i, &mut hess);

    let lag_grad = |z: &DVector<f64>| -> DVector<f64> {
        let mut g = DVector::zeros(n);
        p.gradient(z, &mut g);
        if me > 0 {
            let mut je = DMatrix::zeros(me, n);
            p.eq_jacobian(z, &mut je);
            g += je.transpose() * &y_e;
        }
        if mi > 0 {
            let mut ji = DMatrix::zeros(mi, n);
            p.ineq_jacobian(z, &mut ji);
            g += ji.transpose() * &y_i;
        }
        g
    };

    for j in 0..n {
        let h = 1e-6 * z[j].abs().max(1.0);
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[j] += h;
        zm[j] -= h;

        let fd_grad = (p.objective(&zp) - p.objective(&zm)) / (2.0 * h);
        report.gradient = report.gradient.max(rel(grad[j], fd_grad));

        if me > 0 {
            let mut cp = DVector::zeros(me);
            let mut cm = DVector::zeros(me);
            p.eq_constraints(&zp, &mut cp);
            p.eq_constraints(&zm, &mut cm);
            for r in 0..me {
                let fd = (cp[r] - cm[r]) / (2.0 * h);
                report.eq_jacobian = report.eq_jacobian.max(rel(j_e[(r, j)], fd));
            }
        }
        if mi > 0 {
            let mut gp = DVector::zeros(mi);
            let mut gm = DVector::zeros(mi);
            p.ineq_constraints(&zp, &mut gp);
            p.ineq_constraints(&zm, &mut gm);
            for r in 0..mi {
                let fd = (gp[r] - gm[r]) / (2.0 * h);
                report.ineq_jacobian = report.ineq_jacobian.max(rel(j_i[(r, j)], fd));
            }
        }
        if has_hessian {
            let gp = lag_grad(&zp);
            let gm = lag_grad(&zm);
            for r in 0..n {
                let fd = (gp[r] - gm[r]) / (2.0 * h);
                report.hessian = report.hessian.max(rel(hess[(r, j)], fd));
            }
        }
    }
    report
}
