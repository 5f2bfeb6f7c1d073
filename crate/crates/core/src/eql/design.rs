//! Regression rows. Each row keeps the pointwise data it was built from, so
//! matrix entries for any basis are computed on demand and pruning is a
//! filter over rows.

use nalgebra::{DMatrix, DVector};

use super::{Libraries, Mechanism};
use crate::density_stats::DensityGrid;
use crate::error::{EqlError, Result};
use crate::eql::BasisLibrary;
use crate::numdiff::GridDerivatives;

/// Data at one grid point `(x_ij, t_j)`; `j` indexes the grid's times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointData {
    pub i: usize,
    pub j: usize,
    pub q: f64,
    pub qx: f64,
    pub qxx: f64,
    pub qt: f64,
    pub dl_dt: f64,
}

/// Rows sharing a right-hand side definition.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RowGroup {
    pub points: Vec<PointData>,
    pub rhs: Vec<f64>,
}

impl RowGroup {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn filter(&self, keep: impl Fn(&PointData) -> bool) -> RowGroup {
        let mut out = RowGroup::default();
        for (p, b) in self.points.iter().zip(&self.rhs) {
            if keep(p) {
                out.points.push(*p);
                out.rhs.push(*b);
            }
        }
        out
    }
}

/// Matrix entry for basis function `k` of `m`'s library at a point.
#[inline]
pub fn entry(m: Mechanism, library: &BasisLibrary, k: usize, p: &PointData) -> f64 {
    match m {
        Mechanism::Diffusion => library.derivative(k, p.q) * p.qx * p.qx + library.eval(k, p.q) * p.qxx,
        Mechanism::Reaction | Mechanism::EdgeGradient => library.eval(k, p.q),
        Mechanism::EdgeDiffusion => library.eval(k, p.q) * p.qx,
    }
}

/// The block-structured system `Aθ = b`.
///
/// `bulk` rows carry the `D` and `R` columns side by side with right-hand
/// side `∂q/∂t`; `edge_gradient` rows carry `H` with right-hand side the
/// edge gradient; `edge_diffusion` rows carry `E` with right-hand side
/// `−q_n dL/dt`. The blocks are otherwise zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSystem {
    pub libraries: Libraries,
    pub bulk: RowGroup,
    pub edge_gradient: RowGroup,
    pub edge_diffusion: RowGroup,
    /// Density range of the data the system was built from.
    pub density_range: (f64, f64),
}

impl DesignSystem {
    /// Rows for every point at times `2..=M`. Groups whose libraries are all
    /// empty are left without rows.
    pub fn assemble(grid: &DensityGrid, derivs: &GridDerivatives, libraries: Libraries) -> Result<Self> {
        let m = grid.n_times();
        if m < 2 {
            return Err(EqlError::Domain("regression needs at least two save times".into()));
        }
        let shape_ok = derivs.qt.len() == m - 1
            && derivs.qx.len() == m - 1
            && derivs.qxx.len() == m - 1
            && derivs.dl_dt.len() == m - 1
            && (1..m).all(|j| {
                let n = grid.q[j].len();
                derivs.qt[j - 1].len() == n && derivs.qx[j - 1].len() == n && derivs.qxx[j - 1].len() == n
            });
        if !shape_ok {
            return Err(EqlError::Domain("derivative fields do not match the density grid".into()));
        }
        let density_range = grid.density_range();
        for mech in Mechanism::ALL {
            libraries.get(mech).check_range(density_range.0, density_range.1)?;
        }

        let point = |i: usize, j: usize| PointData {
            i,
            j,
            q: grid.q[j][i],
            qx: derivs.qx[j - 1][i],
            qxx: derivs.qxx[j - 1][i],
            qt: derivs.qt[j - 1][i],
            dl_dt: derivs.dl_dt[j - 1],
        };
        let mut bulk = RowGroup::default();
        let mut edge_gradient = RowGroup::default();
        let mut edge_diffusion = RowGroup::default();
        if !libraries.d.is_empty() || !libraries.r.is_empty() {
            for j in 1..m {
                for i in 0..grid.q[j].len() {
                    let p = point(i, j);
                    bulk.points.push(p);
                    bulk.rhs.push(p.qt);
                }
            }
        }
        for j in 1..m {
            let p = point(grid.q[j].len() - 1, j);
            if !libraries.h.is_empty() {
                edge_gradient.points.push(p);
                edge_gradient.rhs.push(p.qx);
            }
            if !libraries.e.is_empty() {
                edge_diffusion.points.push(p);
                edge_diffusion.rhs.push(-p.q * p.dl_dt);
            }
        }
        let all = bulk.points.iter().chain(&edge_gradient.points).chain(&edge_diffusion.points);
        for p in all {
            if ![p.q, p.qx, p.qxx, p.qt, p.dl_dt].iter().all(|v| v.is_finite()) {
                return Err(EqlError::Domain(format!("non-finite derivative at point ({}, {})", p.i, p.j)));
            }
        }
        Ok(Self {
            libraries,
            bulk,
            edge_gradient,
            edge_diffusion,
            density_range,
        })
    }

    pub fn group(&self, m: Mechanism) -> &RowGroup {
        match m {
            Mechanism::Diffusion | Mechanism::Reaction => &self.bulk,
            Mechanism::EdgeGradient => &self.edge_gradient,
            Mechanism::EdgeDiffusion => &self.edge_diffusion,
        }
    }

    fn group_mut(&mut self, m: Mechanism) -> &mut RowGroup {
        match m {
            Mechanism::Diffusion | Mechanism::Reaction => &mut self.bulk,
            Mechanism::EdgeGradient => &mut self.edge_gradient,
            Mechanism::EdgeDiffusion => &mut self.edge_diffusion,
        }
    }

    /// Moves a known contribution `Σ θ_k (column k of m under library)` to
    /// the right-hand side, e.g. `b^{dr} − A^d θ^d` once `D` is fixed.
    pub fn subtract_known(&mut self, m: Mechanism, library: &BasisLibrary, theta: &[f64]) {
        assert_eq!(library.len(), theta.len(), "coefficient count does not match library");
        let group = self.group_mut(m);
        for (p, b) in group.points.iter().zip(group.rhs.iter_mut()) {
            *b -= (0..library.len()).map(|k| theta[k] * entry(m, library, k, p)).sum::<f64>();
        }
    }

    /// The block of `m` as a dense matrix over its own group's rows.
    pub fn block(&self, m: Mechanism) -> DMatrix<f64> {
        let lib = self.libraries.get(m);
        let group = self.group(m);
        DMatrix::from_fn(group.len(), lib.len(), |r, k| entry(m, lib, k, &group.points[r]))
    }

    /// The stacked system restricted to global `columns`, using only the
    /// row groups that at least one of those columns lives in.
    pub fn restricted(&self, columns: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
        let located: Vec<(Mechanism, usize)> = columns.iter().map(|&c| self.libraries.locate(c)).collect();
        let uses = |groups: &[Mechanism]| located.iter().any(|(m, _)| groups.contains(m));
        let mut parts: Vec<(&RowGroup, &[Mechanism])> = Vec::new();
        if uses(&[Mechanism::Diffusion, Mechanism::Reaction]) {
            parts.push((&self.bulk, &[Mechanism::Diffusion, Mechanism::Reaction]));
        }
        if uses(&[Mechanism::EdgeGradient]) {
            parts.push((&self.edge_gradient, &[Mechanism::EdgeGradient]));
        }
        if uses(&[Mechanism::EdgeDiffusion]) {
            parts.push((&self.edge_diffusion, &[Mechanism::EdgeDiffusion]));
        }
        let rows: usize = parts.iter().map(|(g, _)| g.len()).sum();
        let mut a = DMatrix::zeros(rows, columns.len());
        let mut b = DVector::zeros(rows);
        let mut r0 = 0;
        for (group, mechs) in parts {
            for (r, p) in group.points.iter().enumerate() {
                b[r0 + r] = group.rhs[r];
                for (c, &(m, k)) in located.iter().enumerate() {
                    if mechs.contains(&m) {
                        a[(r0 + r, c)] = entry(m, self.libraries.get(m), k, p);
                    }
                }
            }
            r0 += group.len();
        }
        (a, b)
    }

    /// `‖Aθ − b‖₂` over every row group, `θ` being the full coefficient vector.
    pub fn residual_norm(&self, theta: &[f64]) -> f64 {
        let mut sum = 0.0;
        for (group, mechs) in [
            (&self.bulk, &[Mechanism::Diffusion, Mechanism::Reaction][..]),
            (&self.edge_gradient, &[Mechanism::EdgeGradient][..]),
            (&self.edge_diffusion, &[Mechanism::EdgeDiffusion][..]),
        ] {
            for (p, b) in group.points.iter().zip(&group.rhs) {
                let mut row = -b;
                for &m in mechs {
                    let lib = self.libraries.get(m);
                    let th = self.libraries.block(theta, m);
                    row += (0..lib.len()).map(|k| th[k] * entry(m, lib, k, p)).sum::<f64>();
                }
                sum += row * row;
            }
        }
        sum.sqrt()
    }
}
