//! One-dimensional spring-chain model of an epithelial monolayer.
//!
//! Nodes `x_1 = 0 < x_2 < … < x_n` are cell boundaries; neighbouring nodes
//! interact through a force law and move with overdamped dynamics
//! `η dx_i/dt = F(ℓ_{i−1}) − F(ℓ_i)`. Cells may divide stochastically once per
//! proliferation window of length `Δt`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EqlError, Result};
use crate::linalg::BorderedTridiagonal;
use crate::ode::{OdeSystem, Tolerances, TrBdf2};

/// Relative tolerance used to decide that a save time falls on a window end.
const TIME_MATCH_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForceLaw {
    /// `F(ℓ) = k(s − ℓ)`
    Hookean { k: f64, s: f64 },
    /// `F(ℓ) = k(1/ℓ − s)`
    InverseHookean { k: f64, s: f64 },
}

impl ForceLaw {
    pub fn validate(&self) -> Result<()> {
        let (k, s) = match *self {
            ForceLaw::Hookean { k, s } | ForceLaw::InverseHookean { k, s } => (k, s),
        };
        if !(k > 0.0) || !(s >= 0.0) {
            return Err(EqlError::InvalidConfig(format!(
                "force law needs k > 0 and s >= 0, got k = {k}, s = {s}"
            )));
        }
        Ok(())
    }

    /// Force without the domain check; callers guarantee `ℓ > 0`.
    #[inline]
    pub fn eval(&self, l: f64) -> f64 {
        match *self {
            ForceLaw::Hookean { k, s } => k * (s - l),
            ForceLaw::InverseHookean { k, s } => k * (1.0 / l - s),
        }
    }

    #[inline]
    pub fn derivative(&self, l: f64) -> f64 {
        match *self {
            ForceLaw::Hookean { k, .. } => -k,
            ForceLaw::InverseHookean { k, .. } => -k / (l * l),
        }
    }
}

pub fn force_magnitude(law: &ForceLaw, l: f64) -> Result<f64> {
    if !(l > 0.0) {
        return Err(EqlError::Domain(format!("cell length must be positive, got {l}")));
    }
    Ok(law.eval(l))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProliferationLaw {
    #[default]
    None,
    /// `G(ℓ) = β(1 − 1/(Kℓ))`
    Logistic { beta: f64, capacity: f64 },
    /// `G(ℓ) = β` when `ℓ ≥ ℓ_p`, else 0.
    Piecewise { beta: f64, threshold: f64 },
}

impl ProliferationLaw {
    pub fn is_none(&self) -> bool {
        matches!(self, ProliferationLaw::None)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ProliferationLaw::None => true,
            ProliferationLaw::Logistic { beta, capacity } => beta > 0.0 && capacity > 0.0,
            ProliferationLaw::Piecewise { beta, threshold } => beta > 0.0 && threshold > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(EqlError::InvalidConfig(format!(
                "proliferation parameters must be positive: {self:?}"
            )))
        }
    }

    /// Per-cell division rate, clamped to `[0, 1/Δt]`.
    #[inline]
    pub fn rate(&self, l: f64, dt: f64) -> f64 {
        let g = match *self {
            ProliferationLaw::None => 0.0,
            ProliferationLaw::Logistic { beta, capacity } => beta * (1.0 - 1.0 / (capacity * l)),
            ProliferationLaw::Piecewise { beta, threshold } => {
                if l >= threshold {
                    beta
                } else {
                    0.0
                }
            }
        };
        g.clamp(0.0, 1.0 / dt)
    }

    /// Upper bound on [`ProliferationLaw::rate`] over all lengths.
    pub fn max_rate(&self, dt: f64) -> f64 {
        match *self {
            ProliferationLaw::None => 0.0,
            ProliferationLaw::Logistic { beta, .. } | ProliferationLaw::Piecewise { beta, .. } => {
                beta.min(1.0 / dt)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Boundary {
    Fixed { length: f64 },
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub eta: f64,
    pub force: ForceLaw,
    #[serde(default)]
    pub proliferation: ProliferationLaw,
    /// Proliferation window; required when proliferation is enabled.
    pub dt: Option<f64>,
    pub boundary: Boundary,
    pub save_times: Vec<f64>,
    #[serde(default)]
    pub ode_tol: Tolerances,
    #[serde(default)]
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) {
            return Err(EqlError::InvalidConfig(format!("eta must be positive, got {}", self.eta)));
        }
        self.force.validate()?;
        self.proliferation.validate()?;
        if self.save_times.is_empty() {
            return Err(EqlError::InvalidConfig("save_times is empty".into()));
        }
        if self.save_times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(EqlError::InvalidConfig("save_times must be strictly increasing".into()));
        }
        match (self.proliferation.is_none(), self.dt) {
            (false, None) => {
                return Err(EqlError::InvalidConfig(
                    "a proliferation window dt is required with proliferation".into(),
                ))
            }
            (false, Some(dt)) if !(dt > 0.0) => {
                return Err(EqlError::InvalidConfig(format!("dt must be positive, got {dt}")))
            }
            _ => {}
        }
        if let Boundary::Fixed { length } = self.boundary {
            if !(length > 0.0) {
                return Err(EqlError::InvalidConfig(format!(
                    "fixed domain length must be positive, got {length}"
                )));
            }
        }
        Ok(())
    }

    fn window(&self) -> f64 {
        self.dt.unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellState {
    pub t: f64,
    pub x: Vec<f64>,
}

impl CellState {
    pub fn new(t: f64, x: Vec<f64>) -> Result<Self> {
        let state = Self { t, x };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.len() < 3 {
            return Err(EqlError::Domain(format!(
                "need at least 3 nodes, got {}",
                self.x.len()
            )));
        }
        if self.x[0] != 0.0 {
            return Err(EqlError::Domain(format!("first node must be at 0, got {}", self.x[0])));
        }
        if let Some(i) = self.x.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(EqlError::Domain(format!(
                "nodes not strictly increasing at index {i} (t = {})",
                self.t
            )));
        }
        Ok(())
    }

    /// Nodes spread uniformly over each `(start, end, count)` segment.
    pub fn from_segments(segments: &[(f64, f64, usize)]) -> Result<Self> {
        let mut x = Vec::new();
        for &(a, b, m) in segments {
            if m < 2 {
                return Err(EqlError::InvalidConfig("each segment needs at least 2 nodes".into()));
            }
            x.extend((0..m).map(|i| a + (b - a) * i as f64 / (m - 1) as f64));
        }
        Self::new(0.0, x)
    }

    pub fn n_cells(&self) -> usize {
        self.x.len() - 1
    }

    pub fn leading_edge(&self) -> f64 {
        *self.x.last().expect("validated state is nonempty")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<CellState>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.t).collect()
    }

    pub fn leading_edge(&self) -> Vec<f64> {
        self.states.iter().map(CellState::leading_edge).collect()
    }
}

/// Spring chain as an ODE in all node positions; pinned nodes have zero rows.
struct SpringChain {
    law: ForceLaw,
    eta: f64,
    free_end: bool,
    n: usize,
}

impl OdeSystem for SpringChain {
    fn dim(&self) -> usize {
        self.n
    }

    fn rhs(&self, _t: f64, x: &[f64], v: &mut [f64]) {
        let n = self.n;
        v[0] = 0.0;
        let mut f_left = self.law.eval(x[1] - x[0]);
        for i in 1..n - 1 {
            let f_right = self.law.eval(x[i + 1] - x[i]);
            v[i] = (f_left - f_right) / self.eta;
            f_left = f_right;
        }
        v[n - 1] = if self.free_end { f_left / self.eta } else { 0.0 };
    }

    fn jacobian(&self, _t: f64, x: &[f64], _f: &[f64], jac: &mut BorderedTridiagonal) {
        let n = self.n;
        jac.clear();
        let inv_eta = 1.0 / self.eta;
        let mut d_left = self.law.derivative(x[1] - x[0]);
        for i in 1..n - 1 {
            let d_right = self.law.derivative(x[i + 1] - x[i]);
            jac.sub[i - 1] = -d_left * inv_eta;
            jac.diag[i] = (d_left + d_right) * inv_eta;
            jac.sup[i] = -d_right * inv_eta;
            d_left = d_right;
        }
        if self.free_end {
            jac.sub[n - 2] = -d_left * inv_eta;
            jac.diag[n - 1] = d_left * inv_eta;
        }
    }

    fn admissible(&self, x: &[f64]) -> bool {
        x.windows(2).all(|w| w[1] > w[0])
    }
}

pub fn velocity_field(state: &CellState, law: &ForceLaw, eta: f64, boundary: &Boundary) -> Vec<f64> {
    let chain = SpringChain {
        law: *law,
        eta,
        free_end: matches!(boundary, Boundary::Free),
        n: state.x.len(),
    };
    let mut v = vec![0.0; state.x.len()];
    chain.rhs(state.t, &state.x, &mut v);
    v
}

fn chain_for(config: &SimConfig, n: usize) -> SpringChain {
    SpringChain {
        law: config.force,
        eta: config.eta,
        free_end: matches!(config.boundary, Boundary::Free),
        n,
    }
}

fn ordering_error(t: f64) -> EqlError {
    EqlError::IntegrationFailure {
        t,
        reason: "node ordering violated".into(),
    }
}

pub fn integrate_mechanics(state: &CellState, config: &SimConfig, t_end: f64) -> Result<CellState> {
    if t_end < state.t {
        return Err(EqlError::Domain(format!(
            "cannot integrate backwards from {} to {t_end}",
            state.t
        )));
    }
    if t_end == state.t {
        return Ok(state.clone());
    }
    let chain = chain_for(config, state.x.len());
    let mut solver = TrBdf2::new(&chain, state.t, state.x.clone(), config.ode_tol)?;
    let mut x = vec![0.0; state.x.len()];
    solver.advance_to(t_end, &mut x)?;
    if !chain.admissible(&x) {
        return Err(ordering_error(t_end));
    }
    Ok(CellState { t: t_end, x })
}

/// One proliferation draw. Returns the index of the dividing cell, if any.
///
/// A single uniform decides whether any cell divides (probability
/// `min(1, Δt ΣG)`); a second picks the cell proportionally to `G`. The
/// lengths are only requested when the first draw could fall below the
/// probability, which saves interpolating the state in most windows.
fn draw_division<R: Rng>(
    law: &ProliferationLaw,
    dt: f64,
    n_cells: usize,
    lengths: impl FnOnce() -> Vec<f64>,
    rng: &mut R,
) -> Option<usize> {
    let u: f64 = rng.gen();
    if u >= dt * law.max_rate(dt) * n_cells as f64 {
        return None;
    }
    let rates: Vec<f64> = lengths().into_iter().map(|l| law.rate(l, dt)).collect();
    let total: f64 = rates.iter().sum();
    if total <= 0.0 || u >= (dt * total).min(1.0) {
        return None;
    }
    let target = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (i, g) in rates.iter().enumerate() {
        acc += g;
        if target < acc {
            return Some(i);
        }
    }
    rates.iter().rposition(|g| *g > 0.0)
}

fn divide(x: &mut Vec<f64>, cell: usize) {
    let mid = 0.5 * (x[cell] + x[cell + 1]);
    x.insert(cell + 1, mid);
}

fn lengths_of(x: &[f64]) -> Vec<f64> {
    x.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Draws at most one division and advances the clock by `Δt`.
pub fn proliferation_step<R: Rng>(state: &CellState, config: &SimConfig, rng: &mut R) -> CellState {
    let dt = config.window();
    let mut x = state.x.clone();
    if let Some(cell) = draw_division(&config.proliferation, dt, x.len() - 1, || lengths_of(&x), rng) {
        divide(&mut x, cell);
    }
    CellState { t: state.t + dt, x }
}

fn same_time(a: f64, b: f64) -> bool {
    a.is_finite()
        && b.is_finite()
        && (a - b).abs() <= TIME_MATCH_RTOL * a.abs().max(b.abs()).max(1.0)
}

fn check_boundary(config: &SimConfig, initial: &CellState) -> Result<()> {
    if let Boundary::Fixed { length } = config.boundary {
        if !same_time(initial.leading_edge(), length) {
            return Err(EqlError::InvalidConfig(format!(
                "last node at {} but the fixed domain has length {length}",
                initial.leading_edge()
            )));
        }
    }
    Ok(())
}

/// Simulates one realization using the RNG seeded from `config.seed`.
pub fn simulate(config: &SimConfig, initial: &CellState) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    simulate_with_rng(config, initial, &mut rng)
}

pub fn simulate_with_rng<R: Rng>(config: &SimConfig, initial: &CellState, rng: &mut R) -> Result<Trajectory> {
    config.validate()?;
    initial.validate()?;
    check_boundary(config, initial)?;
    let times = &config.save_times;
    if times[0] < initial.t && !same_time(times[0], initial.t) {
        return Err(EqlError::InvalidConfig(format!(
            "first save time {} precedes the initial state at {}",
            times[0], initial.t
        )));
    }
    let mut states = Vec::with_capacity(times.len());
    let mut next = 0;
    while next < times.len() && same_time(times[next], initial.t) {
        states.push(CellState { t: times[next], x: initial.x.clone() });
        next += 1;
    }

    let dt = config.window();
    let proliferating = !config.proliferation.is_none();
    let mut t = initial.t;
    let mut x = initial.x.clone();
    let mut window: u64 = 1;

    'segments: while next < times.len() {
        let chain = chain_for(config, x.len());
        let mut solver = TrBdf2::new(&chain, t, x.clone(), config.ode_tol)?;
        let mut buf = vec![0.0; x.len()];
        loop {
            let window_end = if proliferating {
                initial.t + window as f64 * dt
            } else {
                f64::INFINITY
            };
            let save = times[next];
            if !same_time(save, window_end) && save < window_end {
                solver.advance_to(save, &mut buf)?;
                if !chain.admissible(&buf) {
                    return Err(ordering_error(save));
                }
                states.push(CellState { t: save, x: buf.clone() });
                next += 1;
                if next == times.len() {
                    break 'segments;
                }
                continue;
            }

            window += 1;
            let mut advanced: Option<Result<()>> = None;
            let division = draw_division(
                &config.proliferation,
                dt,
                buf.len() - 1,
                || {
                    let r = solver.advance_to(window_end, &mut buf);
                    let lengths = lengths_of(&buf);
                    advanced = Some(r);
                    lengths
                },
                rng,
            );
            let saving_here = same_time(save, window_end);
            if division.is_some() || saving_here {
                match advanced {
                    Some(r) => r?,
                    None => solver.advance_to(window_end, &mut buf)?,
                }
                if !chain.admissible(&buf) {
                    return Err(ordering_error(window_end));
                }
            }
            if let Some(cell) = division {
                let mut new_x = buf.clone();
                divide(&mut new_x, cell);
                if saving_here {
                    states.push(CellState { t: save, x: new_x.clone() });
                    next += 1;
                }
                t = window_end;
                x = new_x;
                continue 'segments;
            }
            if saving_here {
                states.push(CellState { t: save, x: buf.clone() });
                next += 1;
                if next == times.len() {
                    break 'segments;
                }
            }
        }
    }
    Ok(Trajectory { states })
}

/// Per-realization seed: a SplitMix64 mix of the base seed and index.
pub fn realization_seed(base_seed: u64, index: usize) -> u64 {
    let mut z = base_seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs `n_s` independent realizations in parallel, returned in index order.
pub fn simulate_ensemble(
    config: &SimConfig,
    initial: &CellState,
    n_s: usize,
    base_seed: u64,
) -> Result<Vec<Trajectory>> {
    map_ensemble(config, initial, n_s, base_seed, |_, traj| Ok(traj))
}

/// Like [`simulate_ensemble`] but hands each trajectory to `reduce` as soon
/// as it is produced, so callers can keep only a summary per realization.
pub fn map_ensemble<T, F>(
    config: &SimConfig,
    initial: &CellState,
    n_s: usize,
    base_seed: u64,
    reduce: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, Trajectory) -> Result<T> + Sync,
{
    if n_s == 0 {
        return Err(EqlError::InvalidConfig("ensemble size must be at least 1".into()));
    }
    config.validate()?;
    (0..n_s)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(realization_seed(base_seed, i));
            simulate_with_rng(config, initial, &mut rng)
                .and_then(|traj| reduce(i, traj))
                .map_err(|e| EqlError::Realization {
                    index: i,
                    source: Box::new(e),
                })
        })
        .collect()
}

/// Places `n` nodes on `[0, L0]` so their discrete densities match `q0`.
///
/// Levenberg-Marquardt on the interior nodes starting from equal spacing;
/// steps that would break the ordering are shortened until they do not.
pub fn fit_initial_positions<F: Fn(f64) -> f64>(q0: F, n: usize, l0: f64) -> Result<CellState> {
    use nalgebra::{DMatrix, DVector};

    if n < 3 {
        return Err(EqlError::InvalidConfig(format!("need at least 3 nodes, got {n}")));
    }
    if !(l0 > 0.0) {
        return Err(EqlError::InvalidConfig(format!("domain length must be positive, got {l0}")));
    }
    let residuals = |x: &[f64]| -> Vec<f64> {
        let q = crate::density_stats::node_densities_raw(x);
        x.iter().zip(&q).map(|(xi, qi)| q0(*xi) - qi).collect()
    };
    let objective = |x: &[f64]| residuals(x).iter().map(|r| r * r).sum::<f64>();
    let mut x: Vec<f64> = (0..n).map(|i| l0 * i as f64 / (n - 1) as f64).collect();
    x[n - 1] = l0;
    let mut f = objective(&x);
    let m = n - 2;
    let mut lambda = 1e-3;
    for _ in 0..500 {
        if f < 1e-28 {
            break;
        }
        let r = residuals(&x);
        let mut jac = DMatrix::<f64>::zeros(n, m);
        for k in 0..m {
            let mut xp = x.clone();
            let h = 1e-7 * l0;
            xp[k + 1] += h;
            let rp = residuals(&xp);
            for i in 0..n {
                jac[(i, k)] = (rp[i] - r[i]) / h;
            }
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * DVector::from_vec(r);
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for k in 0..m {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&(-&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = x.clone();
            for k in 0..m {
                trial[k + 1] += step[k];
            }
            if trial.windows(2).all(|w| w[1] > w[0]) {
                let ft = objective(&trial);
                if ft < f {
                    x = trial;
                    f = ft;
                    lambda = (lambda / 3.0).max(1e-12);
                    improved = true;
                    break;
                }
            }
            lambda *= 4.0;
        }
        if !improved {
            break;
        }
    }
    if !x.windows(2).all(|w| w[1] > w[0]) {
        return Err(EqlError::Domain("initial-position fit lost monotonicity".into()));
    }
    CellState::new(0.0, x)
}
