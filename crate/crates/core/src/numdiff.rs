//! Three-point Lagrange derivative estimates on non-uniform stencils.
//!
//! All grid outputs skip the first save time: entry `k` of every returned
//! series belongs to time index `k + 1`.

use serde::{Deserialize, Serialize};

use crate::density_stats::DensityGrid;
use crate::error::{EqlError, Result};

/// Relative tolerance for treating save times as equally spaced.
const UNIFORM_RTOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil3 {
    x: [f64; 3],
    f: [f64; 3],
}

impl Stencil3 {
    pub fn new(x: [f64; 3], f: [f64; 3]) -> Result<Self> {
        if x[0] == x[1] || x[0] == x[2] || x[1] == x[2] {
            return Err(EqlError::Domain(format!("stencil abscissae must be distinct: {x:?}")));
        }
        Ok(Self { x, f })
    }
}

/// `g'(x_at)` for the quadratic `g` through the stencil; `at` is 0, 1 or 2.
pub fn lagrange_d1(s: &Stencil3, at: usize) -> f64 {
    let [x1, x2, x3] = s.x;
    let [f1, f2, f3] = s.f;
    match at {
        0 => {
            (1.0 / (x1 - x2) + 1.0 / (x1 - x3)) * f1 - (x1 - x3) / ((x1 - x2) * (x2 - x3)) * f2
                + (x1 - x2) / ((x1 - x3) * (x2 - x3)) * f3
        }
        1 => {
            (x2 - x3) / ((x1 - x2) * (x1 - x3)) * f1
                + (1.0 / (x2 - x3) - 1.0 / (x1 - x2)) * f2
                + (x2 - x1) / ((x1 - x3) * (x2 - x3)) * f3
        }
        2 => {
            (x3 - x2) / ((x1 - x2) * (x1 - x3)) * f1 + (x1 - x3) / ((x1 - x2) * (x2 - x3)) * f2
                - (1.0 / (x1 - x3) + 1.0 / (x2 - x3)) * f3
        }
        _ => panic!("stencil position must be 0, 1 or 2, got {at}"),
    }
}

pub fn lagrange_d2(s: &Stencil3) -> f64 {
    let [x1, x2, x3] = s.x;
    let [f1, f2, f3] = s.f;
    2.0 / ((x1 - x2) * (x1 - x3)) * f1 - 2.0 / ((x1 - x2) * (x2 - x3)) * f2
        + 2.0 / ((x1 - x3) * (x2 - x3)) * f3
}

/// Common spacing of `times`, or an error if they are not equally spaced.
pub fn uniform_spacing(times: &[f64]) -> Result<f64> {
    if times.len() < 3 {
        return Err(EqlError::InvalidConfig(format!(
            "need at least 3 save times for temporal derivatives, got {}",
            times.len()
        )));
    }
    let h = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    if let Some(w) = times
        .windows(2)
        .find(|w| ((w[1] - w[0]) - h).abs() > UNIFORM_RTOL * h)
    {
        return Err(EqlError::InvalidConfig(format!(
            "save times are not equally spaced (gap {} vs {h})",
            w[1] - w[0]
        )));
    }
    Ok(h)
}

/// Central rule inside, three-point backward rule at the last time; the
/// value for `series[0]` is not produced.
fn time_rule(prev2: f64, prev: f64, cur: f64, next: Option<f64>, h: f64) -> f64 {
    match next {
        Some(nx) => (nx - prev) / (2.0 * h),
        None => (3.0 * cur - 4.0 * prev + prev2) / (2.0 * h),
    }
}

pub fn leading_edge_velocity(l: &[f64], h: f64) -> Result<Vec<f64>> {
    let m = l.len();
    if m < 3 {
        return Err(EqlError::InvalidConfig(format!(
            "need at least 3 leading-edge values, got {m}"
        )));
    }
    Ok((1..m)
        .map(|j| {
            let prev2 = if j >= 2 { l[j - 2] } else { f64::NAN };
            time_rule(prev2, l[j - 1], l[j], l.get(j + 1).copied(), h)
        })
        .collect())
}

/// How `∂q/∂t` is taken from profiles whose abscissae move between times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeDerivativeMode {
    /// Neighbouring profiles are interpolated at the current abscissa, so the
    /// estimate is a partial derivative at fixed `x`.
    #[default]
    Eulerian,
    /// Differences taken along the point index, following each node or knot.
    IndexFollowing,
}

/// Piecewise-linear interpolant, extended linearly beyond both ends.
pub fn interp_linear(xs: &[f64], ys: &[f64], at: f64) -> f64 {
    let n = xs.len();
    let seg = match xs.partition_point(|&v| v <= at) {
        0 => 0,
        k if k >= n => n - 2,
        k => k - 1,
    };
    let (x0, x1) = (xs[seg], xs[seg + 1]);
    ys[seg] + (ys[seg + 1] - ys[seg]) * (at - x0) / (x1 - x0)
}

/// `∂q/∂t` at every point of times `2..=M`.
pub fn grid_time_derivative(grid: &DensityGrid, mode: TimeDerivativeMode) -> Result<Vec<Vec<f64>>> {
    let h = uniform_spacing(&grid.times)?;
    let m = grid.n_times();
    let mut out = Vec::with_capacity(m - 1);
    for j in 1..m {
        let xs = &grid.x[j];
        let sample = |k: usize, i: usize| -> Result<f64> {
            match mode {
                TimeDerivativeMode::Eulerian => Ok(interp_linear(&grid.x[k], &grid.q[k], xs[i])),
                TimeDerivativeMode::IndexFollowing => grid.q[k].get(i).copied().ok_or_else(|| {
                    EqlError::Domain(format!(
                        "index-following time derivative needs equal point counts (time {k})"
                    ))
                }),
            }
        };
        let mut row = Vec::with_capacity(xs.len());
        for i in 0..xs.len() {
            let prev = sample(j - 1, i)?;
            let next = if j + 1 < m { Some(sample(j + 1, i)?) } else { None };
            let prev2 = if next.is_none() { sample(j - 2, i)? } else { f64::NAN };
            row.push(time_rule(prev2, prev, grid.q[j][i], next, h));
        }
        out.push(row);
    }
    Ok(out)
}

/// First and second spatial derivatives of one profile.
pub fn profile_derivatives(x: &[f64], q: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    assert!(n >= 3, "spatial derivatives need at least 3 points");
    let stencil = |i: usize| Stencil3 {
        x: [x[i - 1], x[i], x[i + 1]],
        f: [q[i - 1], q[i], q[i + 1]],
    };
    let mut dx = vec![0.0; n];
    let mut dxx = vec![0.0; n];
    dx[0] = (q[1] - q[0]) / (x[1] - x[0]);
    dx[n - 1] = (q[n - 1] - q[n - 2]) / (x[n - 1] - x[n - 2]);
    dxx[0] = lagrange_d2(&stencil(1));
    dxx[n - 1] = lagrange_d2(&stencil(n - 2));
    for i in 1..n - 1 {
        let s = stencil(i);
        dx[i] = lagrange_d1(&s, 1);
        dxx[i] = lagrange_d2(&s);
    }
    (dx, dxx)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpaceDerivatives {
    pub dx: Vec<Vec<f64>>,
    pub dxx: Vec<Vec<f64>>,
}

/// `∂q/∂x` and `∂²q/∂x²` at every point of times `2..=M`.
pub fn grid_space_derivatives(grid: &DensityGrid) -> SpaceDerivatives {
    let (dx, dxx) = (1..grid.n_times())
        .map(|j| profile_derivatives(&grid.x[j], &grid.q[j]))
        .unzip();
    SpaceDerivatives { dx, dxx }
}

/// Everything the regression system needs, aligned on times `2..=M`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDerivatives {
    pub qt: Vec<Vec<f64>>,
    pub qx: Vec<Vec<f64>>,
    pub qxx: Vec<Vec<f64>>,
    pub dl_dt: Vec<f64>,
}

impl GridDerivatives {
    pub fn estimate(grid: &DensityGrid, mode: TimeDerivativeMode) -> Result<Self> {
        let h = uniform_spacing(&grid.times)?;
        let SpaceDerivatives { dx, dxx } = grid_space_derivatives(grid);
        Ok(Self {
            qt: grid_time_derivative(grid, mode)?,
            qx: dx,
            qxx: dxx,
            dl_dt: leading_edge_velocity(&grid.leading_edge, h)?,
        })
    }
}
