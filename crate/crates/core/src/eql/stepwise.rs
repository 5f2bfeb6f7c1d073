//! Stepwise selection: from the incumbent active set, try every single
//! coefficient toggle, keep the candidate with the smallest loss (never the
//! empty model), and stop once the incumbent wins.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::design::DesignSystem;
use super::loss::{LossContext, LossMode};
use super::lsq::{constrained_least_squares, least_squares};
use super::{Libraries, Mechanism};
use crate::error::{EqlError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActiveStart {
    #[default]
    AllActive,
    AllInactive,
    /// One flag per global column.
    Explicit(Vec<bool>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    #[default]
    None,
    /// `D = E`: the `E` coefficients are tied to the `D` coefficients, which
    /// requires identical libraries.
    MassConservation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepwiseConfig {
    pub initial_active: ActiveStart,
    pub n_c: usize,
    pub max_steps: usize,
    pub loss_mode: LossMode,
    pub constraint: Constraint,
}

impl Default for StepwiseConfig {
    fn default() -> Self {
        Self {
            initial_active: ActiveStart::AllActive,
            n_c: 100,
            max_steps: 100,
            loss_mode: LossMode::DensityOnly,
            constraint: Constraint::None,
        }
    }
}

/// One evaluated coefficient vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub active: Vec<bool>,
    pub theta: Vec<f64>,
    pub loss: f64,
    /// The column toggled relative to the incumbent; `None` for the incumbent.
    pub toggled: Option<usize>,
    /// Best loss of any nonempty model within one further move, recorded only
    /// for candidates in an exact tie.
    pub lookahead: Option<f64>,
    /// Regression residual `‖Aθ − b‖₂`, recorded alongside `lookahead`.
    pub residual: Option<f64>,
}

impl Candidate {
    pub fn n_active(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }

    pub fn is_empty_model(&self) -> bool {
        !self.active.iter().any(|a| *a)
    }
}

/// One step: the incumbent is `candidates[0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub candidates: Vec<Candidate>,
    pub chosen: usize,
    /// The smallest loss belonged to the empty model, so the runner-up was taken.
    pub zero_excluded: bool,
}

impl TraceStep {
    pub fn incumbent(&self) -> &Candidate {
        &self.candidates[0]
    }

    pub fn chosen(&self) -> &Candidate {
        &self.candidates[self.chosen]
    }

    /// Whether the recorded choice follows the selection rule, recomputed
    /// from the stored losses alone.
    pub fn is_consistent(&self) -> bool {
        select(&self.candidates) == Some((self.chosen, self.zero_excluded))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The incumbent had the smallest loss.
    Converged,
    /// An active set was revisited; the best model seen is returned.
    Cycle,
    MaxSteps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub libraries: Libraries,
    /// Full coefficient vector `(θ^d, θ^r, θ^h, θ^e)`.
    pub theta: Vec<f64>,
    pub active: Vec<bool>,
    pub loss: f64,
    pub trace: Vec<TraceStep>,
    pub termination: Termination,
}

impl FitResult {
    pub fn coefficients(&self, m: Mechanism) -> &[f64] {
        self.libraries.block(&self.theta, m)
    }

    /// Active indices of `m`'s library, from 0.
    pub fn active_set(&self, m: Mechanism) -> Vec<usize> {
        let cols = self.libraries.columns(m);
        cols.clone().filter(|&c| self.active[c]).map(|c| c - cols.start).collect()
    }

    /// Every trace step obeys the selection rule.
    pub fn trace_consistent(&self) -> bool {
        self.trace.iter().all(TraceStep::is_consistent)
    }
}

/// Losses closer than this are treated as equal. Candidates whose extra
/// terms cannot affect the PDE solution (e.g. any diffusivity acting on a
/// uniform profile) differ only by rounding.
pub const LOSS_TIE_TOL: f64 = 1e-9;

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= LOSS_TIE_TOL
}

fn cmp_loss(a: f64, b: f64) -> Ordering {
    if close(a, b) {
        Ordering::Equal
    } else {
        a.total_cmp(&b)
    }
}

/// Tie-break among candidates with equal loss: fewer active coefficients,
/// then the better lookahead, then the incumbent, then the smaller
/// regression residual, then the lowest toggled column.
fn tie_rank(a: &Candidate, b: &Candidate) -> Ordering {
    let ahead = |c: &Candidate| c.lookahead.unwrap_or(f64::INFINITY);
    let residual = |c: &Candidate| c.residual.unwrap_or(f64::INFINITY);
    a.n_active()
        .cmp(&b.n_active())
        .then(cmp_loss(ahead(a), ahead(b)))
        .then(match (a.toggled, b.toggled) {
            (None, None) => Ordering::Equal,
            (None, Some(_)) => Ordering::Less,
            (Some(_), None) => Ordering::Greater,
            (Some(_), Some(_)) => Ordering::Equal,
        })
        .then(residual(a).total_cmp(&residual(b)))
        .then(a.toggled.cmp(&b.toggled))
}

/// Members of `pool` tied for the smallest loss.
fn tied(candidates: &[Candidate], pool: &[usize]) -> Vec<usize> {
    let Some(min) = pool.iter().map(|&k| candidates[k].loss).min_by(f64::total_cmp) else {
        return vec![];
    };
    pool.iter().copied().filter(|&k| close(candidates[k].loss, min)).collect()
}

/// Best of `pool` under the loss-then-tie rule.
fn best(candidates: &[Candidate], pool: &[usize]) -> Option<usize> {
    tied(candidates, pool)
        .into_iter()
        .min_by(|&a, &b| tie_rank(&candidates[a], &candidates[b]))
}

/// The candidates the selection draws from, after skipping the empty model
/// if it has the smallest loss.
fn selection_pool(candidates: &[Candidate]) -> (Vec<usize>, bool) {
    let all: Vec<usize> = (0..candidates.len()).collect();
    match best(candidates, &all) {
        Some(k) if candidates[k].is_empty_model() => {
            (all.into_iter().filter(|&k| !candidates[k].is_empty_model()).collect(), true)
        }
        _ => (all, false),
    }
}

/// Candidates that tie on loss and on the number of active coefficients, so
/// that only a lookahead or the column order can separate them.
fn needs_lookahead(candidates: &[Candidate]) -> Vec<usize> {
    let (pool, _) = selection_pool(candidates);
    let group = tied(candidates, &pool);
    let Some(fewest) = group.iter().map(|&k| candidates[k].n_active()).min() else {
        return vec![];
    };
    let group: Vec<usize> = group.into_iter().filter(|&k| candidates[k].n_active() == fewest).collect();
    if group.len() > 1 && candidates[group[0]].loss.is_finite() {
        group
    } else {
        vec![]
    }
}

/// Index of the selected candidate and whether the empty model was skipped.
/// `None` only for an empty list. When every loss is infinite the tie rule
/// still picks one, so a search can leave an infeasible region.
pub fn select(candidates: &[Candidate]) -> Option<(usize, bool)> {
    let (pool, excluded) = selection_pool(candidates);
    let pick = best(candidates, &pool)?;
    Some((pick, excluded))
}

/// Column bookkeeping for the optional `D = E` tie.
struct Columns {
    /// Columns the search toggles.
    free: Vec<usize>,
    /// `(d column, e column)` pairs when tied.
    ties: Vec<(usize, usize)>,
}

impl Columns {
    fn new(libraries: &Libraries, constraint: Constraint) -> Result<Self> {
        let all: Vec<usize> = (0..libraries.total()).collect();
        match constraint {
            Constraint::None => Ok(Self { free: all, ties: vec![] }),
            Constraint::MassConservation => {
                if libraries.d != libraries.e || libraries.d.is_empty() {
                    return Err(EqlError::InvalidConfig(
                        "mass conservation needs identical, nonempty D and E libraries".into(),
                    ));
                }
                let e = libraries.columns(Mechanism::EdgeDiffusion);
                let ties = libraries.columns(Mechanism::Diffusion).zip(e.clone()).collect();
                Ok(Self {
                    free: all.into_iter().filter(|c| !e.contains(c)).collect(),
                    ties,
                })
            }
        }
    }

    /// Propagates tied flags from `D` to `E`.
    fn complete(&self, mut active: Vec<bool>) -> Vec<bool> {
        for &(d, e) in &self.ties {
            active[e] = active[d];
        }
        active
    }

    fn complexity(&self, active: &[bool]) -> usize {
        self.free.iter().filter(|&&c| active[c]).count()
    }
}

#[derive(Clone)]
struct Scored {
    theta: Vec<f64>,
    loss: f64,
}

fn solve_active(system: &DesignSystem, columns: &Columns, active: &[bool]) -> Result<Vec<f64>> {
    let cols: Vec<usize> = (0..active.len()).filter(|&c| active[c]).collect();
    let mut theta = vec![0.0; active.len()];
    if cols.is_empty() {
        return Ok(theta);
    }
    let (a, b) = system.restricted(&cols);
    let pos = |c: usize| cols.iter().position(|&x| x == c);
    let tied: Vec<(usize, usize)> = columns
        .ties
        .iter()
        .filter_map(|&(d, e)| Some((pos(d)?, pos(e)?)))
        .collect();
    let sol = if tied.is_empty() {
        least_squares(&a, &b)
    } else {
        let mut q = DMatrix::zeros(cols.len(), tied.len());
        for (k, &(d, e)) in tied.iter().enumerate() {
            q[(d, k)] = 1.0;
            q[(e, k)] = -1.0;
        }
        constrained_least_squares(&a, &b, &q, &DVector::zeros(tied.len()))
    }
    .map_err(|e| match e {
        EqlError::RankDeficient { columns } => EqlError::RankDeficient {
            columns: columns.iter().filter_map(|&k| cols.get(k).copied()).collect(),
        },
        other => other,
    })?;
    for (k, &c) in cols.iter().enumerate() {
        theta[c] = sol[k];
    }
    Ok(theta)
}

fn initial_mask(start: &ActiveStart, columns: &Columns, total: usize) -> Result<Vec<bool>> {
    let mask = match start {
        ActiveStart::AllActive => columns.complete((0..total).map(|c| columns.free.contains(&c)).collect()),
        ActiveStart::AllInactive => vec![false; total],
        ActiveStart::Explicit(mask) => {
            if mask.len() != total {
                return Err(EqlError::InvalidConfig(format!(
                    "initial active set has {} flags for {total} columns",
                    mask.len()
                )));
            }
            columns.complete(mask.clone())
        }
    };
    Ok(mask)
}

/// Runs the stepwise search on `system`, scoring candidates with `context`.
/// `config.loss_mode` and `config.n_c` override the context's settings.
pub fn stepwise_select(system: &DesignSystem, context: &LossContext, config: &StepwiseConfig) -> Result<FitResult> {
    if config.n_c < 2 {
        return Err(EqlError::InvalidConfig(format!("n_c must be at least 2, got {}", config.n_c)));
    }
    let libraries = &system.libraries;
    let total = libraries.total();
    if total == 0 {
        return Err(EqlError::InvalidConfig("no basis functions to select from".into()));
    }
    let columns = Columns::new(libraries, config.constraint)?;
    let mut ctx = context.clone();
    ctx.mode = config.loss_mode;
    ctx.n_c = config.n_c;

    let evaluate = |active: &Vec<bool>| -> Scored {
        match solve_active(system, &columns, active) {
            Ok(theta) => Scored {
                loss: ctx.loss(libraries, &theta, columns.complexity(active)),
                theta,
            },
            Err(_) => Scored {
                theta: vec![f64::NAN; total],
                loss: f64::INFINITY,
            },
        }
    };

    let mut cache: HashMap<Vec<bool>, Scored> = HashMap::new();
    let neighbours = |active: &Vec<bool>| -> Vec<(Vec<bool>, Option<usize>)> {
        let mut out = vec![(active.clone(), None)];
        for &c in &columns.free {
            let mut next = active.clone();
            next[c] = !next[c];
            out.push((columns.complete(next), Some(c)));
        }
        out
    };
    let fill = |cache: &mut HashMap<Vec<bool>, Scored>, masks: Vec<Vec<bool>>| {
        let mut fresh: Vec<Vec<bool>> = masks.into_iter().filter(|a| !cache.contains_key(a)).collect();
        fresh.sort();
        fresh.dedup();
        let scored: Vec<(Vec<bool>, Scored)> = fresh
            .into_par_iter()
            .map(|a| {
                let r = evaluate(&a);
                (a, r)
            })
            .collect();
        cache.extend(scored);
    };
    let mut current = initial_mask(&config.initial_active, &columns, total)?;
    let mut visited: HashSet<Vec<bool>> = HashSet::from([current.clone()]);
    let mut trace = Vec::new();
    let mut termination = Termination::MaxSteps;

    for _ in 0..config.max_steps {
        let proposals = neighbours(&current);
        fill(&mut cache, proposals.iter().map(|(a, _)| a.clone()).collect());
        let mut candidates: Vec<Candidate> = proposals
            .into_iter()
            .map(|(active, toggled)| {
                let Scored { theta, loss } = cache[&active].clone();
                Candidate {
                    active,
                    theta,
                    loss,
                    toggled,
                    lookahead: None,
                    residual: None,
                }
            })
            .collect();
        let group = needs_lookahead(&candidates);
        if !group.is_empty() {
            let ahead: Vec<Vec<Vec<bool>>> = group
                .iter()
                .map(|&k| neighbours(&candidates[k].active).into_iter().map(|(a, _)| a).collect())
                .collect();
            fill(&mut cache, ahead.iter().flatten().cloned().collect());
            for (&k, masks) in group.iter().zip(&ahead) {
                let best = masks
                    .iter()
                    .filter(|a| a.iter().any(|x| *x))
                    .map(|a| cache[a].loss)
                    .min_by(f64::total_cmp);
                candidates[k].lookahead = best;
                candidates[k].residual = Some(system.residual_norm(&candidates[k].theta));
            }
        }
        let (chosen, zero_excluded) = select(&candidates).expect("the incumbent is always a candidate");
        let next = candidates[chosen].active.clone();
        trace.push(TraceStep {
            candidates,
            chosen,
            zero_excluded,
        });
        if next == current {
            termination = Termination::Converged;
            break;
        }
        if !visited.insert(next.clone()) {
            termination = Termination::Cycle;
            current = visited
                .iter()
                .filter(|a| a.iter().any(|x| *x))
                .min_by(|a, b| cache[*a].loss.total_cmp(&cache[*b].loss).then_with(|| a.cmp(b)))
                .cloned()
                .unwrap_or(next);
            break;
        }
        current = next;
    }

    let Scored { theta, loss } = match cache.get(&current) {
        Some(v) => v.clone(),
        None => evaluate(&current),
    };
    Ok(FitResult {
        libraries: libraries.clone(),
        theta,
        active: current,
        loss,
        trace,
        termination,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(active: &[bool], loss: f64, toggled: Option<usize>) -> Candidate {
        Candidate {
            active: active.to_vec(),
            theta: vec![0.0; active.len()],
            loss,
            toggled,
            lookahead: None,
            residual: None,
        }
    }

    #[test]
    fn smallest_loss_wins() {
        let c = vec![
            cand(&[true, true], -1.0, None),
            cand(&[false, true], -3.0, Some(0)),
            cand(&[true, false], -2.0, Some(1)),
        ];
        assert_eq!(select(&c), Some((1, false)));
    }

    #[test]
    fn empty_model_skipped() {
        let c = vec![
            cand(&[false, false], -5.0, None),
            cand(&[true, false], -3.0, Some(0)),
            cand(&[false, true], -4.0, Some(1)),
        ];
        assert_eq!(select(&c), Some((2, true)));
    }

    #[test]
    fn ties_prefer_fewer_terms_then_lower_index() {
        let c = vec![
            cand(&[true, false, false], 1.0, None),
            cand(&[true, true, false], 0.5, Some(1)),
            cand(&[false, false, false], 0.5, Some(0)),
            cand(&[true, false, true], 0.5, Some(2)),
        ];
        // The empty model ties for first and is skipped; column 1 beats 2.
        assert_eq!(select(&c), Some((1, true)));
        let c = vec![
            cand(&[true, true], 0.5, None),
            cand(&[false, true], 0.5, Some(0)),
            cand(&[true, false], 0.5, Some(1)),
        ];
        assert_eq!(select(&c), Some((1, false)));
    }

    #[test]
    fn infinite_ties_still_choose() {
        // Only the empty model is finite; it is skipped and the infinite
        // candidates tie, so the one with fewer terms is taken.
        let c = vec![
            cand(&[true, true], f64::INFINITY, None),
            cand(&[false, true], f64::INFINITY, Some(0)),
            cand(&[true, false], f64::INFINITY, Some(1)),
            cand(&[false, false], 2.0, None),
        ];
        assert_eq!(select(&c), Some((1, true)));
        assert_eq!(select(&[]), None);
    }
}
