//! Dense least squares through Householder QR, with and without linear
//! equality constraints.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{EqlError, Result};

/// Relative size of `|R_kk|` below which a (unit-scaled) column counts as
/// dependent on the ones before it.
const RANK_TOL: f64 = 1e-10;

/// Minimizes `‖Aθ − b‖₂`. Columns are scaled to unit norm before
/// factorizing, since basis functions of density span many orders of
/// magnitude.
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let (m, n) = a.shape();
    if b.len() != m {
        return Err(EqlError::Domain(format!("right-hand side has {} rows, matrix has {m}", b.len())));
    }
    if n == 0 {
        return Ok(DVector::zeros(0));
    }
    if m < n {
        return Err(EqlError::RankDeficient {
            columns: (m..n).collect(),
        });
    }
    let scale: Vec<f64> = a.column_iter().map(|c| c.norm()).collect();
    let zero: Vec<usize> = (0..n).filter(|&k| !(scale[k] > 0.0) || !scale[k].is_finite()).collect();
    if !zero.is_empty() {
        return Err(EqlError::RankDeficient { columns: zero });
    }
    let mut scaled = a.clone();
    for (k, mut col) in scaled.column_iter_mut().enumerate() {
        col /= scale[k];
    }
    let qr = scaled.qr();
    let r = qr.r();
    let rmax = (0..n).map(|k| r[(k, k)].abs()).fold(0.0, f64::max);
    let dependent: Vec<usize> = (0..n).filter(|&k| r[(k, k)].abs() <= RANK_TOL * rmax).collect();
    if !dependent.is_empty() {
        return Err(EqlError::RankDeficient { columns: dependent });
    }
    let qtb = qr.q().tr_mul(b);
    let y = r
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| EqlError::RankDeficient { columns: vec![] })?;
    Ok(DVector::from_iterator(n, (0..n).map(|k| y[k] / scale[k])))
}

/// Minimizes `‖Aθ − b‖₂` subject to `Qᵀθ = c`, `Q` holding one constraint
/// per column. Redundant constraints are dropped by working with an
/// orthonormal basis of `Q`'s column space; the problem is then solved on
/// the null space of `Qᵀ`.
pub fn constrained_least_squares(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    q: &DMatrix<f64>,
    c: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = a.ncols();
    if q.ncols() == 0 {
        return least_squares(a, b);
    }
    if q.nrows() != n || c.len() != q.ncols() {
        return Err(EqlError::InfeasibleConstraints(format!(
            "constraint matrix is {}×{} and c has {} entries for {n} unknowns",
            q.nrows(),
            q.ncols(),
            c.len()
        )));
    }
    let svd = q.clone().svd(true, true);
    let (u, vt) = (svd.u.as_ref().unwrap(), svd.v_t.as_ref().unwrap());
    let smax = svd.singular_values.max();
    if !(smax > 0.0) {
        return Err(EqlError::InfeasibleConstraints("constraint matrix is zero".into()));
    }
    let kept: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] > 1e-12 * smax)
        .collect();
    let rank = kept.len();
    // Orthonormal basis of range(Q), and the minimum-norm θ_p with Qᵀθ_p = c.
    let ur = DMatrix::from_fn(n, rank, |i, k| u[(i, kept[k])]);
    let mut theta_p = DVector::zeros(n);
    for &k in &kept {
        let coef = vt.row(k).transpose().dot(c) / svd.singular_values[k];
        theta_p += u.column(k) * coef;
    }
    let violation = (q.tr_mul(&theta_p) - c).amax();
    if violation > 1e-10 * (1.0 + c.amax()) {
        return Err(EqlError::InfeasibleConstraints(format!(
            "constraints are inconsistent (residual {violation:e})"
        )));
    }
    if rank == n {
        return Ok(theta_p);
    }
    // The eigenvectors of I − U_r U_rᵀ with eigenvalue 1 span null(Qᵀ).
    let projector = DMatrix::identity(n, n) - &ur * ur.transpose();
    let eig = SymmetricEigen::new(projector);
    let null: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k] > 0.5).collect();
    let z = DMatrix::from_fn(n, null.len(), |i, k| eig.eigenvectors[(i, null[k])]);
    let reduced = least_squares(&(a * &z), &(b - a * &theta_p))?;
    Ok(theta_p + z * reduced)
}
