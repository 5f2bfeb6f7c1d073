//! Densities from node positions, ensemble averaging onto knot grids, and
//! percentile bands.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discrete_sim::{realization_seed, simulate_with_rng, Boundary, CellState, SimConfig, Trajectory};
use crate::error::{EqlError, Result};
use crate::quantile::quantile_sorted;

/// Realizations simulated together before their contributions are summed.
/// Summation happens in index order, so results do not depend on threads.
const ENSEMBLE_CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GridKind {
    Raw,
    EnsembleAveraged { n_s: usize, n_k: usize },
}

/// Density profiles at a sequence of times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub times: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub leading_edge: Vec<f64>,
    pub kind: GridKind,
}

impl DensityGrid {
    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    /// Restriction to the time indices `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> DensityGrid {
        DensityGrid {
            times: self.times[range.clone()].to_vec(),
            x: self.x[range.clone()].to_vec(),
            q: self.q[range.clone()].to_vec(),
            leading_edge: self.leading_edge[range].to_vec(),
            kind: self.kind,
        }
    }

    /// Smallest and largest density over all times.
    pub fn density_range(&self) -> (f64, f64) {
        self.q
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Densities at each node: `2/(x_{i+1} − x_{i−1})` inside, and the
/// second-order one-sided forms at both ends (which may be negative).
pub fn node_densities(state: &CellState) -> Vec<f64> {
    node_densities_raw(&state.x)
}

pub fn node_densities_raw(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    assert!(n >= 3, "densities need at least 3 nodes");
    let mut q = Vec::with_capacity(n);
    q.push(2.0 / (x[1] - x[0]) - 2.0 / (x[2] - x[0]));
    for i in 1..n - 1 {
        q.push(2.0 / (x[i + 1] - x[i - 1]));
    }
    q.push(2.0 / (x[n - 1] - x[n - 2]) - 2.0 / (x[n - 1] - x[n - 3]));
    q
}

/// Node positions and densities for every saved state of one trajectory.
pub fn raw_grid(trajectory: &Trajectory) -> DensityGrid {
    DensityGrid {
        times: trajectory.times(),
        x: trajectory.states.iter().map(|s| s.x.clone()).collect(),
        q: trajectory.states.iter().map(node_densities).collect(),
        leading_edge: trajectory.leading_edge(),
        kind: GridKind::Raw,
    }
}

pub fn knots(length: f64, n_k: usize) -> Vec<f64> {
    (0..n_k)
        .map(|i| if i + 1 == n_k { length } else { length * i as f64 / (n_k - 1) as f64 })
        .collect()
}

/// Linear interpolant of `(xs, ys)` at sorted `at`, extended linearly past
/// both ends and clamped at zero.
fn interpolate_clamped(xs: &[f64], ys: &[f64], at: &[f64], out: &mut [f64]) {
    let n = xs.len();
    let mut seg = 0;
    for (o, &a) in out.iter_mut().zip(at) {
        while seg + 2 < n && a > xs[seg + 1] {
            seg += 1;
        }
        let (x0, x1, y0, y1) = (xs[seg], xs[seg + 1], ys[seg], ys[seg + 1]);
        let v = y0 + (y1 - y0) * (a - x0) / (x1 - x0);
        *o = v.max(0.0);
    }
}

fn check_times(trajectories: &[Trajectory]) -> Result<Vec<f64>> {
    let first = trajectories
        .first()
        .ok_or_else(|| EqlError::InvalidConfig("empty ensemble".into()))?;
    let times = first.times();
    if trajectories.iter().any(|t| t.times() != times) {
        return Err(EqlError::MismatchedTimes);
    }
    Ok(times)
}

fn mean_edges(trajectories: &[Trajectory], m: usize) -> Vec<f64> {
    (0..m)
        .map(|j| {
            trajectories.iter().map(|t| t.states[j].leading_edge()).sum::<f64>()
                / trajectories.len() as f64
        })
        .collect()
}

/// Knot values of one realization for each time: `values[j][i]`.
fn knot_values(trajectory: &Trajectory, knot_grid: &[Vec<f64>]) -> Vec<Vec<f64>> {
    trajectory
        .states
        .iter()
        .zip(knot_grid)
        .map(|(s, k)| {
            let q = node_densities(s);
            let mut out = vec![0.0; k.len()];
            interpolate_clamped(&s.x, &q, k, &mut out);
            out
        })
        .collect()
}

pub fn ensemble_average(trajectories: &[Trajectory], n_k: usize) -> Result<DensityGrid> {
    if n_k < 2 {
        return Err(EqlError::InvalidConfig(format!("need at least 2 knots, got {n_k}")));
    }
    let times = check_times(trajectories)?;
    let edges = mean_edges(trajectories, times.len());
    let knot_grid: Vec<Vec<f64>> = edges.iter().map(|&l| knots(l, n_k)).collect();
    let mut sum: Vec<Vec<f64>> = knot_grid.iter().map(|k| vec![0.0; k.len()]).collect();
    let per: Vec<Vec<Vec<f64>>> = trajectories.par_iter().map(|t| knot_values(t, &knot_grid)).collect();
    for r in &per {
        for (s, v) in sum.iter_mut().zip(r) {
            for (a, b) in s.iter_mut().zip(v) {
                *a += b;
            }
        }
    }
    let n_s = trajectories.len() as f64;
    for s in &mut sum {
        s.iter_mut().for_each(|v| *v /= n_s);
    }
    Ok(DensityGrid {
        times,
        x: knot_grid,
        q: sum,
        leading_edge: edges,
        kind: GridKind::EnsembleAveraged {
            n_s: trajectories.len(),
            n_k,
        },
    })
}

/// Pointwise `(1 ± level)/2` quantiles across realizations at the knots used
/// by [`ensemble_average`].
pub fn confidence_band(trajectories: &[Trajectory], n_k: usize, level: f64) -> Result<(DensityGrid, DensityGrid)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(EqlError::InvalidConfig(format!("band level must lie in (0, 1), got {level}")));
    }
    if trajectories.len() < 2 {
        return Err(EqlError::InvalidConfig("confidence bands need at least 2 realizations".into()));
    }
    let mean = ensemble_average(trajectories, n_k)?;
    let per: Vec<Vec<Vec<f64>>> = trajectories.par_iter().map(|t| knot_values(t, &mean.x)).collect();
    let (p_lo, p_hi) = ((1.0 - level) / 2.0, (1.0 + level) / 2.0);
    let mut lower = mean.clone();
    let mut upper = mean;
    let mut column = Vec::with_capacity(per.len());
    for j in 0..lower.q.len() {
        for i in 0..lower.q[j].len() {
            column.clear();
            column.extend(per.iter().map(|r| r[j][i]));
            column.sort_by(f64::total_cmp);
            lower.q[j][i] = quantile_sorted(&column, p_lo);
            upper.q[j][i] = quantile_sorted(&column, p_hi);
        }
    }
    Ok((lower, upper))
}

/// One ensemble-averaged grid to produce from a streamed ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct GridRequest {
    /// Indices into the simulation's save times.
    pub time_indices: Vec<usize>,
    pub n_k: usize,
}

/// Simulates `n_s` realizations and averages them onto the requested grids
/// without keeping the trajectories.
///
/// With a fixed boundary the knots are known upfront and one pass suffices.
/// With a free boundary the knots depend on the mean leading edge, so the
/// ensemble is simulated twice; realizations are seeded by index, so both
/// passes see identical trajectories.
pub fn stream_ensemble_average(
    config: &SimConfig,
    initial: &CellState,
    n_s: usize,
    base_seed: u64,
    requests: &[GridRequest],
) -> Result<Vec<DensityGrid>> {
    if n_s == 0 {
        return Err(EqlError::InvalidConfig("ensemble size must be at least 1".into()));
    }
    config.validate()?;
    let m = config.save_times.len();
    for r in requests {
        if r.n_k < 2 {
            return Err(EqlError::InvalidConfig(format!("need at least 2 knots, got {}", r.n_k)));
        }
        if let Some(&j) = r.time_indices.iter().find(|&&j| j >= m) {
            return Err(EqlError::InvalidConfig(format!("time index {j} out of range")));
        }
    }
    let run = |i: usize| -> Result<Trajectory> {
        let mut rng = ChaCha8Rng::seed_from_u64(realization_seed(base_seed, i));
        simulate_with_rng(config, initial, &mut rng).map_err(|e| EqlError::Realization {
            index: i,
            source: Box::new(e),
        })
    };

    let edges: Vec<f64> = match config.boundary {
        Boundary::Fixed { length } => vec![length; m],
        Boundary::Free => {
            let mut sum = vec![0.0; m];
            for start in (0..n_s).step_by(ENSEMBLE_CHUNK) {
                let chunk: Vec<Vec<f64>> = (start..(start + ENSEMBLE_CHUNK).min(n_s))
                    .into_par_iter()
                    .map(|i| run(i).map(|t| t.leading_edge()))
                    .collect::<Result<_>>()?;
                for l in &chunk {
                    for (s, v) in sum.iter_mut().zip(l) {
                        *s += v;
                    }
                }
            }
            sum.iter().map(|s| s / n_s as f64).collect()
        }
    };

    let knot_sets: Vec<Vec<Vec<f64>>> = requests
        .iter()
        .map(|r| r.time_indices.iter().map(|&j| knots(edges[j], r.n_k)).collect())
        .collect();
    let mut sums: Vec<Vec<Vec<f64>>> = knot_sets
        .iter()
        .map(|ks| ks.iter().map(|k| vec![0.0; k.len()]).collect())
        .collect();

    for start in (0..n_s).step_by(ENSEMBLE_CHUNK) {
        let chunk: Vec<Vec<Vec<Vec<f64>>>> = (start..(start + ENSEMBLE_CHUNK).min(n_s))
            .into_par_iter()
            .map(|i| {
                let traj = run(i)?;
                let q_nodes: Vec<Option<Vec<f64>>> = {
                    let mut needed = vec![false; m];
                    for r in requests {
                        for &j in &r.time_indices {
                            needed[j] = true;
                        }
                    }
                    traj.states
                        .iter()
                        .zip(&needed)
                        .map(|(s, &need)| need.then(|| node_densities(s)))
                        .collect()
                };
                Ok(requests
                    .iter()
                    .zip(&knot_sets)
                    .map(|(r, ks)| {
                        r.time_indices
                            .iter()
                            .zip(ks)
                            .map(|(&j, k)| {
                                let q = q_nodes[j].as_ref().expect("marked as needed");
                                let mut out = vec![0.0; k.len()];
                                interpolate_clamped(&traj.states[j].x, q, k, &mut out);
                                out
                            })
                            .collect()
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        for contribution in &chunk {
            for (sum, c) in sums.iter_mut().zip(contribution) {
                for (s_row, c_row) in sum.iter_mut().zip(c) {
                    for (a, b) in s_row.iter_mut().zip(c_row) {
                        *a += b;
                    }
                }
            }
        }
    }

    Ok(requests
        .iter()
        .zip(knot_sets)
        .zip(sums)
        .map(|((r, ks), mut sum)| {
            for row in &mut sum {
                row.iter_mut().for_each(|v| *v /= n_s as f64);
            }
            DensityGrid {
                times: r.time_indices.iter().map(|&j| config.save_times[j]).collect(),
                x: ks,
                q: sum,
                leading_edge: r.time_indices.iter().map(|&j| edges[j]).collect(),
                kind: GridKind::EnsembleAveraged { n_s, n_k: r.n_k },
            }
        })
        .collect())
}

/// Trapezoidal integral of a density profile.
pub fn trapezoid(x: &[f64], q: &[f64]) -> f64 {
    x.windows(2)
        .zip(q.windows(2))
        .map(|(xw, qw)| 0.5 * (xw[1] - xw[0]) * (qw[0] + qw[1]))
        .sum()
}
