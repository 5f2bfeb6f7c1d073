//! Scoring a coefficient vector by solving the PDE it defines and comparing
//! against the data.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Libraries, Mechanism};
use crate::density_stats::DensityGrid;
use crate::error::{EqlError, Result};
use crate::fvm::{self, Geometry, InitialProfile, Law, MechanismSet, PdeProblem, PdeSolution};
use crate::numdiff::interp_linear;
use crate::ode::Tolerances;

/// Floor on the mean squared error before taking logs, so exact fits give a
/// large negative but finite loss.
pub const GOODNESS_FLOOR: f64 = 1e-300;

/// Relative slack before a data point counts as beyond the model's edge, so
/// a fixed domain ending exactly at the last data point stays inside.
const EDGE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Relative density error only.
    #[default]
    DensityOnly,
    /// Adds the relative leading-edge error.
    DensityPlusEdge,
}

/// Numerical settings for the PDE solves behind each loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PdeSettings {
    pub grid_points: usize,
    pub tol: Tolerances,
    pub max_steps: usize,
}

impl Default for PdeSettings {
    fn default() -> Self {
        Self {
            grid_points: fvm::DEFAULT_GRID_POINTS,
            tol: Tolerances::default(),
            max_steps: fvm::DEFAULT_MAX_STEPS,
        }
    }
}

/// `a + b` as a single law.
pub fn add_laws(a: &Law, b: &Law) -> Law {
    match (a, b) {
        (Law::Zero, x) | (x, Law::Zero) => x.clone(),
        (Law::Expansion(x), Law::Expansion(y)) => Law::Expansion(x.iter().chain(y).copied().collect()),
        _ => {
            let (a, b) = (a.clone(), b.clone());
            Law::Custom(Arc::new(move |q| a.eval(q) + b.eval(q)))
        }
    }
}

/// Everything besides `θ` that the loss depends on.
#[derive(Debug, Clone)]
pub struct LossContext {
    pub grid: DensityGrid,
    /// Whether the PDE has a free right edge, or a fixed domain `[0, L_1]`.
    pub free_boundary: bool,
    /// Mechanisms held fixed; learned expansions are added to these.
    pub known: MechanismSet,
    pub mode: LossMode,
    /// Number of check points for `D ≥ 0` and `E ≥ 0`.
    pub n_c: usize,
    pub pde: PdeSettings,
    density_range: (f64, f64),
}

impl LossContext {
    pub fn new(grid: DensityGrid, free_boundary: bool, mode: LossMode) -> Self {
        let density_range = grid.density_range();
        Self {
            grid,
            free_boundary,
            known: MechanismSet {
                diffusion: Law::Zero,
                reaction: Law::Zero,
                edge_gradient: Law::Zero,
                edge_diffusion: Law::Zero,
            },
            mode,
            n_c: 100,
            pde: PdeSettings::default(),
            density_range,
        }
    }

    pub fn with_known(mut self, known: MechanismSet) -> Self {
        self.known = known;
        self
    }

    pub fn density_range(&self) -> (f64, f64) {
        self.density_range
    }

    /// Known mechanisms plus the expansions given by `theta`.
    pub fn mechanisms(&self, libraries: &Libraries, theta: &[f64]) -> MechanismSet {
        let learned = |m: Mechanism| libraries.get(m).law(libraries.block(theta, m));
        MechanismSet {
            diffusion: add_laws(&self.known.diffusion, &learned(Mechanism::Diffusion)),
            reaction: add_laws(&self.known.reaction, &learned(Mechanism::Reaction)),
            edge_gradient: add_laws(&self.known.edge_gradient, &learned(Mechanism::EdgeGradient)),
            edge_diffusion: add_laws(&self.known.edge_diffusion, &learned(Mechanism::EdgeDiffusion)),
        }
    }

    /// The `n_c` equally spaced densities spanning the data.
    pub fn check_points(&self) -> Vec<f64> {
        let (lo, hi) = self.density_range;
        let n = self.n_c.max(2);
        (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
    }

    /// `D ≥ 0` and `E ≥ 0` at every check point.
    pub fn admissible(&self, mechanisms: &MechanismSet) -> bool {
        self.check_points()
            .iter()
            .all(|&q| mechanisms.diffusion.eval(q) >= 0.0 && mechanisms.edge_diffusion.eval(q) >= 0.0)
    }

    /// The PDE started from the first profile of the grid and saved at
    /// `save_times`.
    pub fn problem(&self, mechanisms: MechanismSet, save_times: Vec<f64>) -> PdeProblem {
        let l0 = self.grid.leading_edge[0];
        let geometry = if self.free_boundary {
            Geometry::Moving { initial_length: l0 }
        } else {
            Geometry::Fixed { length: l0 }
        };
        let initial = InitialProfile {
            x: self.grid.x[0].clone(),
            q: self.grid.q[0].iter().map(|q| q.max(0.0)).collect(),
        };
        let mut problem = PdeProblem::new(mechanisms, geometry, initial, save_times);
        problem.t0 = self.grid.times[0];
        problem.n = self.pde.grid_points;
        problem.tol = self.pde.tol;
        problem.max_steps = self.pde.max_steps;
        problem
    }

    /// Solves the learned PDE at the grid's save times.
    pub fn solve(&self, libraries: &Libraries, theta: &[f64]) -> Result<PdeSolution> {
        let problem = self.problem(self.mechanisms(libraries, theta), self.grid.times.clone());
        fvm::solve(&problem)
    }

    /// Log goodness-of-fit terms for a solution saved at the grid's times.
    /// Beyond the PDE's own edge there are no cells, so the model density
    /// there is zero.
    pub fn goodness_of_fit(&self, sol: &PdeSolution) -> Result<f64> {
        let grid = &self.grid;
        if sol.times.len() != grid.n_times() {
            return Err(EqlError::MismatchedTimes);
        }
        let mut sum = 0.0;
        let mut count = 0usize;
        for j in 1..grid.n_times() {
            let l = sol.leading_edge[j];
            for (&x, &q) in grid.x[j].iter().zip(&grid.q[j]) {
                if q > 0.0 {
                    let model = if x > l * (1.0 + EDGE_SLACK) {
                        0.0
                    } else {
                        interp_linear(&sol.x[j], &sol.q[j], x.clamp(0.0, l))
                    };
                    sum += ((q - model) / q).powi(2);
                    count += 1;
                }
            }
        }
        if count == 0 {
            return Err(EqlError::Domain("no positive densities to compare against".into()));
        }
        let mut total = (sum / count as f64).max(GOODNESS_FLOOR).ln();
        if self.mode == LossMode::DensityPlusEdge {
            let m = grid.n_times() - 1;
            let edge: f64 = (1..grid.n_times())
                .map(|j| ((grid.leading_edge[j] - sol.leading_edge[j]) / grid.leading_edge[j]).powi(2))
                .sum();
            total += (edge / m as f64).max(GOODNESS_FLOOR).ln();
        }
        Ok(total)
    }

    /// Goodness of fit plus `complexity`; `+∞` when `D` or `E` is negative on
    /// the check grid or the PDE cannot be solved.
    pub fn loss(&self, libraries: &Libraries, theta: &[f64], complexity: usize) -> f64 {
        if theta.iter().any(|v| !v.is_finite()) {
            return f64::INFINITY;
        }
        let mechanisms = self.mechanisms(libraries, theta);
        if !self.admissible(&mechanisms) {
            return f64::INFINITY;
        }
        let problem = self.problem(mechanisms, self.grid.times.clone());
        match fvm::solve(&problem).and_then(|sol| self.goodness_of_fit(&sol)) {
            Ok(g) if !g.is_nan() => g + complexity as f64,
            _ => f64::INFINITY,
        }
    }
}
