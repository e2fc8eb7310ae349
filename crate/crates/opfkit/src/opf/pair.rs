//! Derivative building blocks for polar power-flow expressions.
//!
//! Every nonlinear term in the AC equations and line-flow limits is either
//! `a * v_i^2` or `v_i * v_j * f(theta_i - theta_j)` with `f'' = -f`.
//! [`PairTerm`] carries value, gradient, and Hessian of the latter over the
//! four participating variables.

/// Value and derivatives of `v_i * v_j * f(theta_i - theta_j)`.
///
/// `f` and `fp` are `f` and `f'` evaluated at `theta_i - theta_j`; the
/// second derivative uses `f'' = -f`, which holds for every trigonometric
/// combination appearing in the power-flow equations.
#[derive(Debug, Clone, Copy)]
pub struct PairTerm {
    pub value: f64,
    /// Gradient over (v_i, v_j, theta_i, theta_j).
    pub grad: [f64; 4],
    /// Symmetric Hessian over the same ordering.
    pub hess: [[f64; 4]; 4],
}

impl PairTerm {
    pub fn new(v_i: f64, v_j: f64, f: f64, fp: f64) -> Self {
        let value = v_i * v_j * f;
        let grad = [v_j * f, v_i * f, v_i * v_j * fp, -v_i * v_j * fp];
        let vvf = v_i * v_j * f;
        let hess = [
            [0.0, f, v_j * fp, -v_j * fp],
            [f, 0.0, v_i * fp, -v_i * fp],
            [v_j * fp, v_i * fp, -vvf, vvf],
            [-v_j * fp, -v_i * fp, vvf, -vvf],
        ];
        PairTerm { value, grad, hess }
    }
}

/// Scatter-adds `w` times the pair Hessian into a dense matrix at the given
/// variable indices.
pub fn add_pair_hessian(
    h: &mut nalgebra::DMatrix<f64>,
    idx: &[usize; 4],
    term: &PairTerm,
    w: f64,
) {
    if w == 0.0 {
        return;
    }
    for a in 0..4 {
        for b in 0..4 {
            let v = term.hess[a][b];
            if v != 0.0 {
                h[(idx[a], idx[b])] += w * v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pair_term_matches_finite_differences() {
        // f(t) = 0.7 cos t + 0.2 sin t, f' = -0.7 sin t + 0.2 cos t
        let f = |t: f64| 0.7 * t.cos() + 0.2 * t.sin();
        let fp = |t: f64| -0.7 * t.sin() + 0.2 * t.cos();
        let eval = |x: &[f64; 4]| x[0] * x[1] * f(x[2] - x[3]);
        let x = [1.03, 0.97, 0.3, -0.1];
        let term = PairTerm::new(x[0], x[1], f(x[2] - x[3]), fp(x[2] - x[3]));
        assert_abs_diff_eq!(term.value, eval(&x), epsilon = 1e-14);
        let h = 1e-6;
        for a in 0..4 {
            let (mut xp, mut xm) = (x, x);
            xp[a] += h;
            xm[a] -= h;
            assert_abs_diff_eq!(term.grad[a], (eval(&xp) - eval(&xm)) / (2.0 * h), epsilon = 1e-8);
            for b in 0..4 {
                let tp = PairTerm::new(xp[0], xp[1], f(xp[2] - xp[3]), fp(xp[2] - xp[3]));
                let tm = PairTerm::new(xm[0], xm[1], f(xm[2] - xm[3]), fp(xm[2] - xm[3]));
                let fd = (tp.grad[b] - tm.grad[b]) / (2.0 * h);
                assert_abs_diff_eq!(term.hess[b][a], fd, epsilon = 1e-7);
            }
        }
    }
}
