//! Vertex-centred finite volume solvers for
//! `∂q/∂t = ∂/∂x(D(q) ∂q/∂x) + R(q)` on a fixed interval with zero-flux ends,
//! and on `[0, L(t)]` with a free right edge obeying
//! `∂q/∂x = H(q)` and `q dL/dt = −E(q) ∂q/∂x` (solved in `ξ = x/L`).

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::discrete_sim::{ForceLaw, ProliferationLaw};
use crate::error::{EqlError, Result};
use crate::numdiff::interp_linear;
use crate::ode::{self, OdeSystem, Tolerances};

/// A scalar function of density.
#[derive(Clone)]
pub enum Law {
    Zero,
    /// `Σ c q^p` over `(p, c)` pairs.
    Expansion(Vec<(i32, f64)>),
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl Law {
    #[inline]
    pub fn eval(&self, q: f64) -> f64 {
        match self {
            Law::Zero => 0.0,
            Law::Expansion(terms) => terms.iter().map(|&(p, c)| c * q.powi(p)).sum(),
            Law::Custom(f) => f(q),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Law::Zero => true,
            Law::Expansion(t) => t.iter().all(|(_, c)| *c == 0.0),
            Law::Custom(_) => false,
        }
    }
}

impl fmt::Debug for Law {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Law::Zero => write!(f, "Zero"),
            Law::Expansion(t) => f.debug_tuple("Expansion").field(t).finish(),
            Law::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Diffusivity `D`, source `R`, edge gradient `H` and edge diffusivity `E`.
#[derive(Debug, Clone)]
pub struct MechanismSet {
    pub diffusion: Law,
    pub reaction: Law,
    pub edge_gradient: Law,
    pub edge_diffusion: Law,
}

impl MechanismSet {
    /// Continuum limit of the spring-chain model:
    /// `D(q) = −F'(1/q)/(ηq²)`, `R(q) = qG(1/q)`,
    /// `H(q) = −2qF(1/q)/(ηD(q))`, `E = D`.
    pub fn continuum_limit(force: &ForceLaw, eta: f64, proliferation: &ProliferationLaw) -> Self {
        let (diffusion, edge_gradient) = match *force {
            ForceLaw::Hookean { k, s } => (
                Law::Expansion(vec![(-2, k / eta)]),
                Law::Expansion(vec![(2, 2.0), (3, -2.0 * s)]),
            ),
            ForceLaw::InverseHookean { k, s } => (
                Law::Expansion(vec![(0, k / eta)]),
                Law::Expansion(vec![(1, 2.0 * s), (2, -2.0)]),
            ),
        };
        let reaction = match *proliferation {
            ProliferationLaw::None => Law::Zero,
            ProliferationLaw::Logistic { beta, capacity } => {
                Law::Expansion(vec![(1, beta), (2, -beta / capacity)])
            }
            ProliferationLaw::Piecewise { beta, threshold } => Law::Custom(Arc::new(move |q| {
                if q > 0.0 && 1.0 / q >= threshold {
                    beta * q
                } else {
                    0.0
                }
            })),
        };
        Self {
            edge_diffusion: diffusion.clone(),
            diffusion,
            reaction,
            edge_gradient,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Geometry {
    Fixed { length: f64 },
    Moving { initial_length: f64 },
}

/// Piecewise-linear initial density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialProfile {
    pub x: Vec<f64>,
    pub q: Vec<f64>,
}

impl InitialProfile {
    /// Linear interpolation, held constant outside the data.
    pub fn eval(&self, at: f64) -> f64 {
        let n = self.x.len();
        if at <= self.x[0] {
            self.q[0]
        } else if at >= self.x[n - 1] {
            self.q[n - 1]
        } else {
            interp_linear(&self.x, &self.q, at)
        }
    }
}

#[derive(Debug, Clone)]
pub struct PdeProblem {
    pub mechanisms: MechanismSet,
    pub geometry: Geometry,
    pub initial: InitialProfile,
    /// Number of grid nodes.
    pub n: usize,
    pub t0: f64,
    pub save_times: Vec<f64>,
    pub tol: Tolerances,
    pub max_steps: usize,
}

pub const DEFAULT_GRID_POINTS: usize = 500;
pub const DEFAULT_MAX_STEPS: usize = 100_000;

impl PdeProblem {
    pub fn new(mechanisms: MechanismSet, geometry: Geometry, initial: InitialProfile, save_times: Vec<f64>) -> Self {
        Self {
            mechanisms,
            geometry,
            initial,
            n: DEFAULT_GRID_POINTS,
            t0: save_times.first().copied().unwrap_or(0.0),
            save_times,
            tol: Tolerances::default(),
            max_steps: DEFAULT_MAX_STEPS,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(EqlError::InvalidConfig(format!("PDE grid needs at least 3 nodes, got {}", self.n)));
        }
        let l = match self.geometry {
            Geometry::Fixed { length } => length,
            Geometry::Moving { initial_length } => initial_length,
        };
        if !(l > 0.0) {
            return Err(EqlError::InvalidConfig(format!("domain length must be positive, got {l}")));
        }
        if self.initial.x.len() < 2 || self.initial.x.len() != self.initial.q.len() {
            return Err(EqlError::InvalidConfig("initial profile needs at least 2 points".into()));
        }
        if self.initial.q.iter().any(|q| !(*q >= 0.0)) {
            return Err(EqlError::InvalidConfig("initial density must be nonnegative".into()));
        }
        if self.save_times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(EqlError::InvalidConfig("PDE save times must be strictly increasing".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeSolution {
    pub times: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub leading_edge: Vec<f64>,
}

impl PdeSolution {
    /// Total mass `∫ q dx` at save index `j` (trapezoid rule).
    pub fn mass(&self, j: usize) -> f64 {
        crate::density_stats::trapezoid(&self.x[j], &self.q[j])
    }
}

#[inline]
fn clamp_density(q: f64) -> f64 {
    q.max(0.0)
}

/// Control volumes of a uniform grid with half-cells at both ends.
fn volumes(n: usize, spacing: f64) -> Vec<f64> {
    let mut v = vec![spacing; n];
    v[0] = 0.5 * spacing;
    v[n - 1] = 0.5 * spacing;
    v
}

struct FixedDomain<'a> {
    mech: &'a MechanismSet,
    dx: f64,
    volumes: Vec<f64>,
}

impl OdeSystem for FixedDomain<'_> {
    fn dim(&self) -> usize {
        self.volumes.len()
    }

    fn rhs(&self, _t: f64, q: &[f64], dq: &mut [f64]) {
        let n = q.len();
        let d: Vec<f64> = q.iter().map(|&v| self.mech.diffusion.eval(clamp_density(v))).collect();
        let mut flux_left = 0.0;
        for i in 0..n {
            let flux_right = if i + 1 < n {
                0.5 * (d[i] + d[i + 1]) * (q[i + 1] - q[i]) / self.dx
            } else {
                0.0
            };
            dq[i] = (flux_right - flux_left) / self.volumes[i] + self.mech.reaction.eval(clamp_density(q[i]));
            flux_left = flux_right;
        }
    }
}

pub fn solve_fixed(problem: &PdeProblem) -> Result<PdeSolution> {
    problem.validate()?;
    let Geometry::Fixed { length } = problem.geometry else {
        return Err(EqlError::InvalidConfig("solve_fixed needs a fixed geometry".into()));
    };
    let n = problem.n;
    let dx = length / (n - 1) as f64;
    let grid: Vec<f64> = (0..n).map(|i| i as f64 * dx).collect();
    let sys = FixedDomain {
        mech: &problem.mechanisms,
        dx,
        volumes: volumes(n, dx),
    };
    let q0: Vec<f64> = grid.iter().map(|&x| problem.initial.eval(x)).collect();
    let states = integrate(&sys, problem, q0)?;
    Ok(PdeSolution {
        times: problem.save_times.clone(),
        x: vec![grid; states.len()],
        leading_edge: vec![length; states.len()],
        q: states,
    })
}

struct MovingDomain<'a> {
    mech: &'a MechanismSet,
    n: usize,
    dxi: f64,
    volumes: Vec<f64>,
}

impl MovingDomain<'_> {
    fn edge_speed(&self, qn: f64) -> f64 {
        let c = clamp_density(qn);
        -self.mech.edge_diffusion.eval(c) * self.mech.edge_gradient.eval(c) / qn
    }
}

impl OdeSystem for MovingDomain<'_> {
    fn dim(&self) -> usize {
        self.n + 1
    }

    fn dense_columns(&self) -> Vec<usize> {
        vec![self.n - 1, self.n]
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.n;
        let q = &y[..n];
        let l = y[n];
        let lp = self.edge_speed(q[n - 1]);
        let d: Vec<f64> = q.iter().map(|&v| self.mech.diffusion.eval(clamp_density(v))).collect();
        let dxi = self.dxi;
        let inv_l = 1.0 / l;
        let inv_l2 = inv_l * inv_l;
        for i in 0..n {
            let xi = i as f64 * dxi;
            let v = self.volumes[i];
            let advect_east = if i + 1 < n {
                (xi + 0.5 * dxi) * 0.5 * (q[i] + q[i + 1])
            } else {
                q[i]
            };
            let advect_west = if i > 0 { (xi - 0.5 * dxi) * 0.5 * (q[i - 1] + q[i]) } else { 0.0 };
            let flux_east = if i + 1 < n {
                0.5 * (d[i] + d[i + 1]) * (q[i + 1] - q[i]) / dxi
            } else {
                d[i] * l * self.mech.edge_gradient.eval(clamp_density(q[i]))
            };
            let flux_west = if i > 0 {
                0.5 * (d[i - 1] + d[i]) * (q[i] - q[i - 1]) / dxi
            } else {
                0.0
            };
            dy[i] = lp * inv_l / v * (advect_east - advect_west) - lp * inv_l * q[i]
                + self.mech.reaction.eval(clamp_density(q[i]))
                + inv_l2 / v * (flux_east - flux_west);
        }
        dy[n] = lp;
    }

    fn admissible(&self, y: &[f64]) -> bool {
        y[self.n] > 0.0
    }
}

pub fn solve_moving(problem: &PdeProblem) -> Result<PdeSolution> {
    problem.validate()?;
    let Geometry::Moving { initial_length } = problem.geometry else {
        return Err(EqlError::InvalidConfig("solve_moving needs a moving geometry".into()));
    };
    let n = problem.n;
    let dxi = 1.0 / (n - 1) as f64;
    let sys = MovingDomain {
        mech: &problem.mechanisms,
        n,
        dxi,
        volumes: volumes(n, dxi),
    };
    let mut y0: Vec<f64> = (0..n)
        .map(|i| problem.initial.eval(i as f64 * dxi * initial_length))
        .collect();
    y0.push(initial_length);
    let states = integrate(&sys, problem, y0)?;
    let mut sol = PdeSolution {
        times: problem.save_times.clone(),
        x: Vec::with_capacity(states.len()),
        q: Vec::with_capacity(states.len()),
        leading_edge: Vec::with_capacity(states.len()),
    };
    for (j, mut y) in states.into_iter().enumerate() {
        let l = y.pop().expect("state has the length component");
        if !(l > 0.0) {
            return Err(EqlError::IntegrationFailure {
                t: problem.save_times[j],
                reason: format!("leading edge collapsed to {l}"),
            });
        }
        sol.x.push((0..n).map(|i| i as f64 * dxi * l).collect());
        sol.q.push(y);
        sol.leading_edge.push(l);
    }
    Ok(sol)
}

pub fn solve(problem: &PdeProblem) -> Result<PdeSolution> {
    match problem.geometry {
        Geometry::Fixed { .. } => solve_fixed(problem),
        Geometry::Moving { .. } => solve_moving(problem),
    }
}

fn integrate<S: OdeSystem>(sys: &S, problem: &PdeProblem, y0: Vec<f64>) -> Result<Vec<Vec<f64>>> {
    let mut solver = ode::TrBdf2::new(sys, problem.t0, y0, problem.tol)?;
    solver.max_steps = problem.max_steps;
    let dim = sys.dim();
    let mut out = Vec::with_capacity(problem.save_times.len());
    for &t in &problem.save_times {
        let mut y = vec![0.0; dim];
        if t <= problem.t0 {
            y.copy_from_slice(solver.y());
        } else {
            solver.advance_to(t, &mut y)?;
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(EqlError::IntegrationFailure {
                t,
                reason: "non-finite density".into(),
            });
        }
        out.push(y);
    }
    Ok(out)
}

/// Linear interpolation of the saved profile `j` at `x`.
pub fn interpolate_solution(sol: &PdeSolution, x: f64, j: usize) -> Result<f64> {
    let xs = sol
        .x
        .get(j)
        .ok_or_else(|| EqlError::Domain(format!("no saved profile with index {j}")))?;
    let l = sol.leading_edge[j];
    let slack = 1e-12 * l.max(1.0);
    if !(x >= -slack && x <= l + slack) {
        return Err(EqlError::Domain(format!("x = {x} lies outside [0, {l}]")));
    }
    Ok(interp_linear(xs, &sol.q[j], x.clamp(0.0, l)))
}
