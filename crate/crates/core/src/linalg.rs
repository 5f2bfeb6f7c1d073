//! Sparse linear algebra for the implicit integrators.
//!
//! Both ODE systems in this crate have Jacobians that are tridiagonal apart
//! from a handful of dense columns (the leading-edge coupling of the
//! moving-boundary problem). [`BorderedTridiagonal`] stores that structure and
//! solves it with a pivoted tridiagonal LU plus a low-rank Woodbury update.

/// Tridiagonal matrix plus a few dense columns.
///
/// Band entries of a dense column live in the band arrays; `dense` only holds
/// the entries with `|row - col| > 1`.
#[derive(Debug, Clone)]
pub struct BorderedTridiagonal {
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    pub sup: Vec<f64>,
    pub dense: Vec<(usize, Vec<f64>)>,
}

impl BorderedTridiagonal {
    pub fn zeros(n: usize, dense_columns: &[usize]) -> Self {
        Self {
            sub: vec![0.0; n.saturating_sub(1)],
            diag: vec![0.0; n],
            sup: vec![0.0; n.saturating_sub(1)],
            dense: dense_columns.iter().map(|&c| (c, vec![0.0; n])).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn clear(&mut self) {
        self.sub.iter_mut().for_each(|v| *v = 0.0);
        self.diag.iter_mut().for_each(|v| *v = 0.0);
        self.sup.iter_mut().for_each(|v| *v = 0.0);
        for (_, col) in &mut self.dense {
            col.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Writes entry `(row, col)`, routing it to the band or a dense column.
    ///
    /// Entries outside the band in a column that was not declared dense are
    /// dropped silently; callers declare every column that couples globally.
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        if row == col {
            self.diag[row] = value;
        } else if row + 1 == col {
            self.sup[row] = value;
        } else if col + 1 == row {
            self.sub[col] = value;
        } else if let Some((_, dense)) = self.dense.iter_mut().find(|(c, _)| *c == col) {
            dense[row] = value;
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        if row == col {
            self.diag[row]
        } else if row + 1 == col {
            self.sup[row]
        } else if col + 1 == row {
            self.sub[col]
        } else {
            self.dense
                .iter()
                .find(|(c, _)| *c == col)
                .map_or(0.0, |(_, d)| d[row])
        }
    }

    /// `y = A x`
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let mut acc = self.diag[i] * x[i];
            if i > 0 {
                acc += self.sub[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                acc += self.sup[i] * x[i + 1];
            }
            y[i] = acc;
        }
        for (c, col) in &self.dense {
            let xc = x[*c];
            for (yi, &a) in y.iter_mut().zip(col) {
                *yi += a * xc;
            }
        }
    }

    /// Factorizes `I - scale * self`, the Newton matrix of an implicit stage.
    pub fn newton_matrix(&self, scale: f64) -> Option<BorderedLu> {
        let n = self.dim();
        let sub: Vec<f64> = self.sub.iter().map(|v| -scale * v).collect();
        let diag: Vec<f64> = self.diag.iter().map(|v| 1.0 - scale * v).collect();
        let sup: Vec<f64> = self.sup.iter().map(|v| -scale * v).collect();
        let dense: Vec<(usize, Vec<f64>)> = self
            .dense
            .iter()
            .map(|(c, col)| (*c, col.iter().map(|v| -scale * v).collect()))
            .collect();
        BorderedLu::factor(n, sub, diag, sup, dense)
    }
}

/// Pivoted LU of a tridiagonal matrix (the LAPACK `gttrf` scheme).
#[derive(Debug, Clone)]
pub struct TridiagonalLu {
    dl: Vec<f64>,
    d: Vec<f64>,
    du: Vec<f64>,
    du2: Vec<f64>,
    pivot_swapped: Vec<bool>,
}

impl TridiagonalLu {
    pub fn factor(mut dl: Vec<f64>, mut d: Vec<f64>, mut du: Vec<f64>) -> Option<Self> {
        let n = d.len();
        let mut du2 = vec![0.0; n.saturating_sub(2)];
        let mut swapped = vec![false; n.saturating_sub(1)];
        for i in 0..n.saturating_sub(1) {
            if d[i].abs() >= dl[i].abs() {
                if d[i] != 0.0 {
                    let fact = dl[i] / d[i];
                    dl[i] = fact;
                    d[i + 1] -= fact * du[i];
                }
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                dl[i] = fact;
                let temp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = temp - fact * d[i + 1];
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] = -fact * du[i + 1];
                }
                swapped[i] = true;
            }
        }
        if d.iter().any(|v| *v == 0.0 || !v.is_finite()) {
            return None;
        }
        Some(Self {
            dl,
            d,
            du,
            du2,
            pivot_swapped: swapped,
        })
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.d.len();
        for i in 0..n.saturating_sub(1) {
            if self.pivot_swapped[i] {
                let temp = b[i] - self.dl[i] * b[i + 1];
                b[i] = b[i + 1];
                b[i + 1] = temp;
            } else {
                b[i + 1] -= self.dl[i] * b[i];
            }
        }
        if n == 0 {
            return;
        }
        b[n - 1] /= self.d[n - 1];
        if n > 1 {
            b[n - 2] = (b[n - 2] - self.du[n - 2] * b[n - 1]) / self.d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            b[i] = (b[i] - self.du[i] * b[i + 1] - self.du2[i] * b[i + 2]) / self.d[i];
        }
    }
}

/// Factorization of tridiagonal-plus-dense-columns via Woodbury.
#[derive(Debug, Clone)]
pub struct BorderedLu {
    tri: TridiagonalLu,
    columns: Vec<usize>,
    /// `T^{-1} u_k` for each dense column `u_k`.
    w: Vec<Vec<f64>>,
    /// LU of the small capacitance matrix `I + V^T T^{-1} U`, row-major.
    cap: Vec<f64>,
    cap_perm: Vec<usize>,
}

impl BorderedLu {
    fn factor(
        n: usize,
        sub: Vec<f64>,
        diag: Vec<f64>,
        sup: Vec<f64>,
        dense: Vec<(usize, Vec<f64>)>,
    ) -> Option<Self> {
        let tri = TridiagonalLu::factor(sub, diag, sup)?;
        let k = dense.len();
        let mut w = Vec::with_capacity(k);
        let mut columns = Vec::with_capacity(k);
        for (c, mut col) in dense {
            debug_assert_eq!(col.len(), n);
            tri.solve_in_place(&mut col);
            w.push(col);
            columns.push(c);
        }
        let mut cap = vec![0.0; k * k];
        for a in 0..k {
            for b in 0..k {
                cap[a * k + b] = if a == b { 1.0 } else { 0.0 } + w[b][columns[a]];
            }
        }
        let cap_perm = dense_lu(&mut cap, k)?;
        Some(Self {
            tri,
            columns,
            w,
            cap,
            cap_perm,
        })
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        self.tri.solve_in_place(b);
        let k = self.columns.len();
        if k == 0 {
            return;
        }
        let mut alpha: Vec<f64> = self.columns.iter().map(|&c| b[c]).collect();
        dense_lu_solve(&self.cap, &self.cap_perm, k, &mut alpha);
        for (wk, a) in self.w.iter().zip(&alpha) {
            for (bi, wi) in b.iter_mut().zip(wk) {
                *bi -= a * wi;
            }
        }
    }
}

/// In-place LU with partial pivoting of a small row-major matrix.
fn dense_lu(a: &mut [f64], n: usize) -> Option<Vec<usize>> {
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        let (piv, max) = (col..n)
            .map(|r| (r, a[r * n + col].abs()))
            .fold((col, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if max == 0.0 || !max.is_finite() {
            return None;
        }
        if piv != col {
            for j in 0..n {
                a.swap(piv * n + j, col * n + j);
            }
            perm.swap(piv, col);
        }
        let p = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / p;
            a[r * n + col] = f;
            for j in col + 1..n {
                a[r * n + j] -= f * a[col * n + j];
            }
        }
    }
    Some(perm)
}

fn dense_lu_solve(lu: &[f64], perm: &[usize], n: usize, b: &mut [f64]) {
    let permuted: Vec<f64> = perm.iter().map(|&p| b[p]).collect();
    b.copy_from_slice(&permuted);
    for i in 0..n {
        for j in 0..i {
            b[i] -= lu[i * n + j] * b[j];
        }
    }
    for i in (0..n).rev() {
        for j in i + 1..n {
            b[i] -= lu[i * n + j] * b[j];
        }
        b[i] /= lu[i * n + i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_from(m: &BorderedTridiagonal) -> Vec<Vec<f64>> {
        let n = m.dim();
        (0..n)
            .map(|i| (0..n).map(|j| m.get(i, j)).collect())
            .collect()
    }

    fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for c in 0..n {
            let p = (c..n)
                .max_by(|&x, &y| a[x][c].abs().partial_cmp(&a[y][c].abs()).unwrap())
                .unwrap();
            a.swap(p, c);
            b.swap(p, c);
            for r in c + 1..n {
                let f = a[r][c] / a[c][c];
                for j in c..n {
                    a[r][j] -= f * a[c][j];
                }
                b[r] -= f * b[c];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
            x[i] = (b[i] - s) / a[i][i];
        }
        x
    }

    #[test]
    fn tridiagonal_lu_handles_pivoting() {
        // Small diagonal forces row interchanges.
        let dl = vec![3.0, 2.0, 5.0];
        let d = vec![1e-3, 1.0, 0.5, 4.0];
        let du = vec![2.0, -1.0, 1.0];
        let mut m = BorderedTridiagonal::zeros(4, &[]);
        m.sub = dl.clone();
        m.diag = d.clone();
        m.sup = du.clone();
        let b = vec![1.0, -2.0, 0.5, 3.0];
        let lu = TridiagonalLu::factor(dl, d, du).unwrap();
        let mut x = b.clone();
        lu.solve_in_place(&mut x);
        let reference = gauss_solve(dense_from(&m), b);
        for (a, r) in x.iter().zip(&reference) {
            assert!((a - r).abs() < 1e-12, "{a} vs {r}");
        }
    }

    #[test]
    fn woodbury_matches_dense_solve() {
        let n = 7;
        let mut j = BorderedTridiagonal::zeros(n, &[5, 6]);
        for i in 0..n {
            j.set(i, i, -2.0 - 0.1 * i as f64);
            if i > 0 {
                j.set(i, i - 1, 1.0 + 0.05 * i as f64);
            }
            if i + 1 < n {
                j.set(i, i + 1, 0.7);
            }
        }
        for i in 0..n {
            if i.abs_diff(5) > 1 {
                j.set(i, 5, 0.3 * (i as f64 + 1.0));
            }
            if i.abs_diff(6) > 1 {
                j.set(i, 6, -0.2 * i as f64);
            }
        }
        let scale = 0.37;
        let lu = j.newton_matrix(scale).unwrap();
        let dense: Vec<Vec<f64>> = dense_from(&j)
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                row.into_iter()
                    .enumerate()
                    .map(|(c, v)| if i == c { 1.0 } else { 0.0 } - scale * v)
                    .collect()
            })
            .collect();
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 1.0).collect();
        let reference = gauss_solve(dense, b.clone());
        let mut x = b;
        lu.solve_in_place(&mut x);
        for (a, r) in x.iter().zip(&reference) {
            assert!((a - r).abs() < 1e-12, "{a} vs {r}");
        }
    }
}
