//! Equality-constrained QP with a penalized consensus slack.
//!
//! Solves, after analytic elimination of the slack `s`,
//!
//! ```text
//! min_dz  1/2 dz' H dz + g' dz + mu/2 || A dz + r ||^2
//! s.t.    C dz = 0
//! ```
//!
//! where `A` is the horizontal concatenation of per-block consensus
//! matrices. Passing `r = sum_i A_i z_i + lambda / mu` makes this the
//! coordination problem of the distributed solver with dual weight
//! `lambda`; the returned `lambda_qp = mu (A dz + r)` is then exactly the
//! multiplier of the consensus rows.

use super::NlpError;
use nalgebra::{DMatrix, DVector};

/// Per-block consensus coupling matrix (shared row dimension).
#[derive(Debug, Clone)]
pub struct ConsensusBlock {
    pub a: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub dz: DVector<f64>,
    /// Multiplier of the consensus rows.
    pub lambda_qp: DVector<f64>,
    /// Multipliers of the `C dz = 0` rows.
    pub nu: DVector<f64>,
    /// Residual of the eliminated KKT system, for self checks.
    pub kkt_residual: f64,
}

pub fn solve_eq_qp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    c: &DMatrix<f64>,
    consensus: (&[ConsensusBlock], &DVector<f64>),
    mu: f64,
) -> Result<QpSolution, NlpError> {
    let n = h.nrows();
    let (blocks, r) = consensus;
    if h.ncols() != n || g.len() != n || (c.nrows() > 0 && c.ncols() != n) {
        return Err(NlpError::Dimension("QP blocks disagree on the variable count".into()));
    }
    let n_cons = r.len();
    let total_cols: usize = blocks.iter().map(|b| b.a.ncols()).sum();
    if total_cols != n || blocks.iter().any(|b| b.a.nrows() != n_cons) {
        return Err(NlpError::Dimension("consensus blocks disagree with the decision layout".into()));
    }
    let mut a = DMatrix::zeros(n_cons, n);
    let mut col = 0;
    for b in blocks {
        a.view_mut((0, col), (n_cons, b.a.ncols())).copy_from(&b.a);
        col += b.a.ncols();
    }

    let mc = c.nrows();
    let dim = n + mc;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(&(h + mu * a.transpose() * &a));
    if mc > 0 {
        kkt.view_mut((n, 0), (mc, n)).copy_from(c);
        kkt.view_mut((0, n), (n, mc)).copy_from(&c.transpose());
    }
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, n).copy_from(&(-g - mu * a.transpose() * r));

    let lu = kkt.clone().lu();
    let mut sol = lu.solve(&rhs).ok_or(NlpError::SingularKkt)?;
    // one step of iterative refinement tightens the residual to ~1e-12
    let resid = &rhs - &kkt * &sol;
    if let Some(corr) = lu.solve(&resid) {
        sol += corr;
    }
    let final_resid = (&rhs - &kkt * &sol).amax();
    if !final_resid.is_finite() || final_resid > 1e-6 * rhs.amax().max(1.0) {
        return Err(NlpError::SingularKkt);
    }

    let dz = sol.rows(0, n).into_owned();
    let nu = sol.rows(n, mc).into_owned();
    let lambda_qp = mu * (&a * &dz + r);
    Ok(QpSolution { dz, lambda_qp, nu, kkt_residual: final_resid })
}
