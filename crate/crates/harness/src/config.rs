//! Experiment configuration: named presets, TOML files layered over them,
//! and `key=value` overrides on top.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use stepeql::discrete_sim::{fit_initial_positions, Boundary, CellState, ForceLaw, ProliferationLaw, SimConfig};
use stepeql::eql::{
    ActiveStart, BasisLibrary, Constraint, Libraries, LossMode, PdeSettings, PruneConfig, SequentialSettings,
    StepwiseConfig,
};
use stepeql::fvm::{Law, MechanismSet};
use stepeql::numdiff::TimeDerivativeMode;

use crate::error::{HarnessError, Result};

pub const PRESETS: [&str; 9] = [
    "cs1",
    "cs2",
    "cs3a",
    "cs3b",
    "cs4a",
    "cs4b",
    "e1-mass-conservation",
    "e2-piecewise",
    "e3-linear-diffusion",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub model: ModelConfig,
    pub initial: InitialConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    pub stages: Vec<StageConfig>,
    pub learning: LearningConfig,
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForceKind {
    /// `F(ℓ) = k(s − ℓ)`
    Hookean,
    /// `F(ℓ) = k(1/ℓ − s)`
    InverseHookean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    /// The right end stays where the initial condition puts it.
    Fixed,
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProliferationKind {
    #[default]
    None,
    Logistic,
    Piecewise,
}

/// The discrete model, one field per row of the parameter table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub force: ForceKind,
    pub k: f64,
    pub eta: f64,
    pub s: f64,
    pub boundary: BoundaryKind,
    #[serde(default)]
    pub proliferation: ProliferationKind,
    /// Proliferation window `Δt`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Carrying capacity `K` of the logistic law.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<f64>,
    /// Length threshold `ℓ_p` of the piecewise law.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialConfig {
    /// Equally spaced nodes on each `[a, b]`, `n` nodes per segment.
    Segments { segments: Vec<(f64, f64, usize)> },
    /// Nodes on `[0, length]` fitted to a Gaussian density centred at
    /// `length/2` and scaled to hold `cells` cells.
    Gaussian {
        nodes: usize,
        length: f64,
        cells: f64,
        variance: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    /// Realizations to average. Absent for deterministic runs, which use
    /// the node densities directly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_s: Option<usize>,
}

/// Time sampling and pruning for one learning stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    /// Number of save times.
    pub m: usize,
    pub t1: f64,
    pub tm: f64,
    /// Knots for ensemble averaging.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_k: Option<usize>,
    #[serde(default)]
    pub tau_q: f64,
    #[serde(default)]
    pub tau_dl_dt: f64,
    /// Threshold on `∂q/∂t`.
    #[serde(default)]
    pub tau_t: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub tau_qx: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub tau_qxx: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

impl StageConfig {
    pub fn save_times(&self) -> Vec<f64> {
        let m = self.m;
        (0..m)
            .map(|j| {
                if j + 1 == m {
                    self.tm
                } else {
                    self.t1 + (self.tm - self.t1) * j as f64 / (m - 1) as f64
                }
            })
            .collect()
    }

    /// Spacing between save times.
    pub fn h(&self) -> f64 {
        (self.tm - self.t1) / (self.m - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Procedure {
    /// One stepwise search over all libraries on the single stage.
    #[default]
    Joint,
    /// Stages learn `D`, `E`, `H`, `R` in that order.
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Start {
    #[default]
    AllActive,
    AllInactive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningConfig {
    #[serde(default)]
    pub procedure: Procedure,
    /// Exponents of the power bases `q^p` for each mechanism.
    #[serde(default)]
    pub d: Vec<i32>,
    #[serde(default)]
    pub r: Vec<i32>,
    #[serde(default)]
    pub h: Vec<i32>,
    #[serde(default)]
    pub e: Vec<i32>,
    /// Joint procedure only; sequential stages always start empty.
    #[serde(default)]
    pub start: Start,
    /// Joint procedure only; sequential stages always include the edge.
    #[serde(default)]
    pub loss: LossMode,
    #[serde(default)]
    pub constraint: Constraint,
    /// Fixed `(exponent, coefficient)` terms added to the learned mechanisms.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub known_d: Vec<(i32, f64)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub known_r: Vec<(i32, f64)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub known_h: Vec<(i32, f64)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub known_e: Vec<(i32, f64)>,
    #[serde(default = "default_n_c")]
    pub n_c: usize,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default)]
    pub time_mode: TimeDerivativeMode,
    #[serde(default)]
    pub absolute_rates: bool,
    #[serde(default = "default_pde_points")]
    pub pde_points: usize,
}

fn default_n_c() -> usize {
    100
}

fn default_max_steps() -> usize {
    100
}

fn default_pde_points() -> usize {
    500
}

impl Default for LearningConfig {
    fn default() -> Self {
        Self {
            procedure: Procedure::Joint,
            d: vec![],
            r: vec![],
            h: vec![],
            e: vec![],
            start: Start::AllActive,
            loss: LossMode::DensityOnly,
            constraint: Constraint::None,
            known_d: vec![],
            known_r: vec![],
            known_h: vec![],
            known_e: vec![],
            n_c: default_n_c(),
            max_steps: default_max_steps(),
            time_mode: TimeDerivativeMode::default(),
            absolute_rates: false,
            pde_points: default_pde_points(),
        }
    }
}

fn stage(m: usize, t1: f64, tm: f64, n_k: Option<usize>, tau_q: f64, tau_dl_dt: f64, tau_t: f64) -> StageConfig {
    StageConfig {
        m,
        t1,
        tm,
        n_k,
        tau_q,
        tau_dl_dt,
        tau_t,
        tau_qx: 0.0,
        tau_qxx: 0.0,
    }
}

fn spring_model(k: f64, boundary: BoundaryKind, proliferation: bool) -> ModelConfig {
    ModelConfig {
        force: ForceKind::Hookean,
        k,
        eta: 1.0,
        s: 0.2,
        boundary,
        proliferation: if proliferation {
            ProliferationKind::Logistic
        } else {
            ProliferationKind::None
        },
        dt: proliferation.then_some(0.01),
        beta: proliferation.then_some(0.15),
        capacity: proliferation.then_some(15.0),
        threshold: None,
    }
}

fn two_blocks() -> InitialConfig {
    InitialConfig::Segments {
        segments: vec![(0.0, 5.0, 30), (25.0, 30.0, 30)],
    }
}

fn one_block() -> InitialConfig {
    InitialConfig::Segments {
        segments: vec![(0.0, 5.0, 60)],
    }
}

fn free_learning() -> LearningConfig {
    LearningConfig {
        d: vec![-1, -2, -3],
        h: vec![1, 2, 3, 4, 5],
        e: vec![-1, -2, -3],
        start: Start::AllInactive,
        loss: LossMode::DensityPlusEdge,
        ..Default::default()
    }
}

/// The named preset, parameters as in the published parameter table.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let key = name.to_ascii_lowercase();
    let cfg = match key.as_str() {
        "cs1" => ExperimentConfig {
            name: key,
            seed: 1,
            model: spring_model(50.0, BoundaryKind::Fixed, false),
            initial: two_blocks(),
            ensemble: EnsembleConfig::default(),
            stages: vec![stage(50, 0.0, 5.0, None, 0.1, 0.0, 0.0)],
            learning: LearningConfig {
                d: vec![-1, -2, -3],
                ..Default::default()
            },
        },
        "cs2" => ExperimentConfig {
            name: key,
            seed: 1,
            model: spring_model(50.0, BoundaryKind::Free, false),
            initial: one_block(),
            ensemble: EnsembleConfig::default(),
            stages: vec![stage(200, 0.0, 15.0, None, 0.35, 0.1, 0.0)],
            learning: free_learning(),
        },
        "e1-mass-conservation" => {
            let mut cfg = preset("cs2")?;
            cfg.name = key;
            cfg.learning.constraint = Constraint::MassConservation;
            cfg
        }
        "cs3a" | "cs3b" => {
            let accurate = key == "cs3a";
            ExperimentConfig {
                seed: 1,
                model: spring_model(if accurate { 50.0 } else { 0.2 }, BoundaryKind::Fixed, true),
                initial: two_blocks(),
                ensemble: EnsembleConfig { n_s: Some(1000) },
                stages: vec![if accurate {
                    stage(501, 0.0, 50.0, Some(50), 0.1, 0.0, 0.0)
                } else {
                    stage(751, 0.0, 75.0, Some(200), 0.25, 0.0, 0.0)
                }],
                learning: LearningConfig {
                    d: vec![-1, -2, -3],
                    r: vec![1, 2, 3, 4, 5],
                    start: if accurate { Start::AllActive } else { Start::AllInactive },
                    ..Default::default()
                },
                name: key,
            }
        }
        "cs4a" | "cs4b" => {
            let accurate = key == "cs4a";
            let stages = if accurate {
                vec![
                    stage(25, 0.0, 0.1, Some(25), 0.1, 0.0, 0.0),
                    stage(50, 0.0, 5.0, Some(50), 0.0, 0.2, 0.0),
                    stage(100, 5.0, 10.0, Some(100), 0.0, 0.0, 0.0),
                    stage(250, 10.0, 50.0, Some(50), 0.0, 0.0, 0.0),
                ]
            } else {
                vec![
                    stage(20, 0.0, 2.0, Some(50), 0.0, 0.0, 0.4),
                    stage(200, 2.0, 10.0, Some(100), 0.0, 0.4, 0.4),
                    stage(200, 10.0, 20.0, Some(100), 0.0, 0.0, 0.0),
                    stage(200, 20.0, 50.0, Some(100), 0.3, 0.0, 0.0),
                ]
            };
            ExperimentConfig {
                seed: 1,
                model: spring_model(if accurate { 50.0 } else { 0.2 }, BoundaryKind::Free, true),
                initial: one_block(),
                ensemble: EnsembleConfig { n_s: Some(1000) },
                stages,
                learning: LearningConfig {
                    procedure: Procedure::Sequential,
                    r: vec![1, 2, 3, 4, 5],
                    ..free_learning()
                },
                name: key,
            }
        }
        "e2-piecewise" => ExperimentConfig {
            name: key,
            seed: 1,
            model: ModelConfig {
                force: ForceKind::Hookean,
                k: 1e-4,
                eta: 1.0,
                s: 0.0,
                boundary: BoundaryKind::Fixed,
                proliferation: ProliferationKind::Piecewise,
                dt: Some(0.01),
                beta: Some(0.01),
                capacity: None,
                threshold: Some(0.2),
            },
            initial: InitialConfig::Segments {
                segments: vec![(0.0, 10.0, 41)],
            },
            ensemble: EnsembleConfig { n_s: Some(1000) },
            stages: vec![stage(5001, 0.0, 500.0, Some(100), 0.0, 0.0, 0.0)],
            learning: LearningConfig {
                r: vec![0, 1, 2, 3, 4, 5],
                start: Start::AllInactive,
                known_d: vec![(-2, 1e-4)],
                ..Default::default()
            },
        },
        "e3-linear-diffusion" => ExperimentConfig {
            name: key,
            seed: 1,
            model: ModelConfig {
                force: ForceKind::InverseHookean,
                k: 20.0,
                eta: 1.0,
                s: 1.0,
                boundary: BoundaryKind::Free,
                proliferation: ProliferationKind::None,
                dt: None,
                beta: None,
                capacity: None,
                threshold: None,
            },
            initial: InitialConfig::Gaussian {
                nodes: 41,
                length: 10.0,
                cells: 40.0,
                variance: 3.0,
            },
            ensemble: EnsembleConfig::default(),
            stages: vec![stage(10001, 0.0, 100.0, None, 0.3, 0.2, 0.0)],
            learning: LearningConfig {
                d: vec![-2, -1, 0, 1, 2],
                h: vec![1, 2, 3, 4, 5],
                e: vec![-2, -1, 0, 1, 2],
                start: Start::AllInactive,
                loss: LossMode::DensityPlusEdge,
                ..Default::default()
            },
        },
        _ => {
            return Err(HarnessError::UnknownPreset {
                name: name.to_string(),
                known: PRESETS.join(", "),
            })
        }
    };
    Ok(cfg)
}

/// Recursively overlays `top` on `base`; tables merge, everything else
/// (arrays included) is replaced.
fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses the right-hand side of a `key=value` override as a TOML value,
/// falling back to a bare string.
fn parse_value(text: &str) -> Value {
    let wrapped = format!("v = {text}");
    match wrapped.parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => Value::String(text.to_string()),
    }
}

/// Sets a dotted path such as `stages.0.tau_q`; numeric segments index arrays.
fn set_path(root: &mut Table, path: &str, value: Value) -> Result<()> {
    let bad = || HarnessError::Config(format!("cannot set {path:?}"));
    let parts: Vec<&str> = path.split('.').collect();
    let (last, init) = parts.split_last().ok_or_else(bad)?;
    let mut cur: &mut Value = root
        .entry(init.first().copied().unwrap_or(last).to_string())
        .or_insert_with(|| Value::Table(Table::new()));
    if init.is_empty() {
        *cur = value;
        return Ok(());
    }
    for part in init[1..].iter().chain(std::iter::once(last)) {
        cur = match cur {
            Value::Table(t) => t.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new())),
            Value::Array(a) => {
                let i: usize = part.parse().map_err(|_| bad())?;
                a.get_mut(i).ok_or_else(bad)?
            }
            _ => return Err(bad()),
        };
    }
    *cur = value;
    Ok(())
}

impl ExperimentConfig {
    /// Builds a config from an optional preset, an optional TOML file laid
    /// over it, and `key=value` overrides applied last. A file may name its
    /// own base with `preset = "..."`; an explicit `preset` argument wins.
    pub fn resolve(preset_name: Option<&str>, file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut file_table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| HarnessError::File {
                    path: path.display().to_string(),
                    source,
                })?;
                text.parse::<Table>()?
            }
            None => Table::new(),
        };
        let file_preset = match file_table.remove("preset") {
            Some(Value::String(s)) => Some(s),
            Some(_) => return Err(HarnessError::Config("preset must be a string".into())),
            None => None,
        };
        let base_name = preset_name.map(str::to_string).or(file_preset);
        let mut table = match &base_name {
            Some(name) => Table::try_from(preset(name)?)?,
            None if file.is_none() => {
                return Err(HarnessError::Config("give a preset or a config file".into()));
            }
            None => Table::new(),
        };
        merge(&mut table, file_table);
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("override {o:?} is not key=value")))?;
            set_path(&mut table, key.trim(), parse_value(value.trim()))?;
        }
        let cfg: ExperimentConfig = Value::Table(table).try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        let m = &self.model;
        if !(m.k > 0.0 && m.eta > 0.0 && m.s >= 0.0) {
            return bad("k and eta must be positive and s nonnegative".into());
        }
        match m.proliferation {
            ProliferationKind::None => {}
            ProliferationKind::Logistic if m.dt.is_none() || m.beta.is_none() || m.capacity.is_none() => {
                return bad("logistic proliferation needs dt, beta and capacity".into())
            }
            ProliferationKind::Piecewise if m.dt.is_none() || m.beta.is_none() || m.threshold.is_none() => {
                return bad("piecewise proliferation needs dt, beta and threshold".into())
            }
            _ => {}
        }
        if m.proliferation != ProliferationKind::None && self.ensemble.n_s.is_none() {
            return bad("a stochastic model needs ensemble.n_s".into());
        }
        if self.ensemble.n_s == Some(0) {
            return bad("ensemble.n_s must be at least 1".into());
        }
        if self.stages.is_empty() {
            return bad("at least one stage is required".into());
        }
        for (k, s) in self.stages.iter().enumerate() {
            if s.m < 3 || !(s.tm > s.t1) || s.t1 < 0.0 {
                return bad(format!("stage {k}: need m >= 3 and 0 <= t1 < tm"));
            }
            if self.ensemble.n_s.is_some() && s.n_k.is_none_or(|n| n < 2) {
                return bad(format!("stage {k}: averaging needs n_k >= 2"));
            }
            self.prune(s).validate().map_err(|e| HarnessError::Config(format!("stage {k}: {e}")))?;
        }
        let l = &self.learning;
        match l.procedure {
            Procedure::Joint => {
                if self.stages.len() != 1 {
                    return bad("the joint procedure takes exactly one stage".into());
                }
                if l.d.is_empty() && l.r.is_empty() && l.h.is_empty() && l.e.is_empty() {
                    return bad("every basis library is empty".into());
                }
            }
            Procedure::Sequential => {
                if self.stages.len() > 4 {
                    return bad("the sequential procedure takes at most four stages (D, E, H, R)".into());
                }
                let libs = [&l.d, &l.e, &l.h, &l.r];
                if let Some(k) = (0..self.stages.len()).find(|&k| libs[k].is_empty()) {
                    return bad(format!("sequential stage {} has an empty library", SEQUENTIAL_LABELS[k]));
                }
                if m.boundary != BoundaryKind::Free {
                    return bad("the sequential procedure needs a free boundary".into());
                }
            }
        }
        if l.constraint == Constraint::MassConservation && l.d != l.e {
            return bad("mass conservation needs identical d and e libraries".into());
        }
        if l.n_c < 2 || l.pde_points < 3 {
            return bad("n_c must be at least 2 and pde_points at least 3".into());
        }
        Ok(())
    }

    /// Things that will run but probably not give meaningful results.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = vec![];
        if self.model.proliferation != ProliferationKind::None && self.ensemble.n_s == Some(1) {
            out.push(
                "n_s = 1 with proliferation: a single realization does not represent the average behaviour".into(),
            );
        }
        out
    }

    pub fn force(&self) -> ForceLaw {
        let (k, s) = (self.model.k, self.model.s);
        match self.model.force {
            ForceKind::Hookean => ForceLaw::Hookean { k, s },
            ForceKind::InverseHookean => ForceLaw::InverseHookean { k, s },
        }
    }

    pub fn proliferation(&self) -> ProliferationLaw {
        let m = &self.model;
        match m.proliferation {
            ProliferationKind::None => ProliferationLaw::None,
            ProliferationKind::Logistic => ProliferationLaw::Logistic {
                beta: m.beta.unwrap_or(0.0),
                capacity: m.capacity.unwrap_or(0.0),
            },
            ProliferationKind::Piecewise => ProliferationLaw::Piecewise {
                beta: m.beta.unwrap_or(0.0),
                threshold: m.threshold.unwrap_or(0.0),
            },
        }
    }

    pub fn free_boundary(&self) -> bool {
        self.model.boundary == BoundaryKind::Free
    }

    pub fn initial_state(&self) -> Result<CellState> {
        match &self.initial {
            InitialConfig::Segments { segments } => Ok(CellState::from_segments(segments)?),
            &InitialConfig::Gaussian {
                nodes,
                length,
                cells,
                variance,
            } => {
                let sigma = variance.sqrt();
                let a = cells / libm::erf(length * 2f64.sqrt() / (4.0 * sigma));
                let q0 = move |x: f64| {
                    let z = (x - length / 2.0) / sigma;
                    a / (2.0 * std::f64::consts::PI * variance).sqrt() * (-0.5 * z * z).exp()
                };
                Ok(fit_initial_positions(q0, nodes, length)?)
            }
        }
    }

    /// Simulation settings for `stage`, saving at its times.
    pub fn sim_config(&self, stage: &StageConfig, initial: &CellState) -> SimConfig {
        SimConfig {
            eta: self.model.eta,
            force: self.force(),
            proliferation: self.proliferation(),
            dt: self.model.dt,
            boundary: match self.model.boundary {
                BoundaryKind::Fixed => Boundary::Fixed {
                    length: initial.leading_edge(),
                },
                BoundaryKind::Free => Boundary::Free,
            },
            save_times: stage.save_times(),
            ode_tol: Default::default(),
            seed: self.seed,
        }
    }

    pub fn prune(&self, stage: &StageConfig) -> PruneConfig {
        PruneConfig {
            tau_q: stage.tau_q,
            tau_qx: stage.tau_qx,
            tau_qxx: stage.tau_qxx,
            tau_qt: stage.tau_t,
            tau_dl_dt: stage.tau_dl_dt,
            absolute_rates: self.learning.absolute_rates,
        }
    }

    pub fn libraries(&self) -> Libraries {
        let l = &self.learning;
        Libraries {
            d: BasisLibrary::powers(l.d.iter().copied()),
            r: BasisLibrary::powers(l.r.iter().copied()),
            h: BasisLibrary::powers(l.h.iter().copied()),
            e: BasisLibrary::powers(l.e.iter().copied()),
        }
    }

    pub fn known(&self) -> MechanismSet {
        let law = |terms: &Vec<(i32, f64)>| {
            if terms.is_empty() {
                Law::Zero
            } else {
                Law::Expansion(terms.clone())
            }
        };
        let l = &self.learning;
        MechanismSet {
            diffusion: law(&l.known_d),
            reaction: law(&l.known_r),
            edge_gradient: law(&l.known_h),
            edge_diffusion: law(&l.known_e),
        }
    }

    pub fn pde_settings(&self) -> PdeSettings {
        PdeSettings {
            grid_points: self.learning.pde_points,
            ..Default::default()
        }
    }

    pub fn stepwise_config(&self) -> StepwiseConfig {
        let l = &self.learning;
        StepwiseConfig {
            initial_active: match l.start {
                Start::AllActive => ActiveStart::AllActive,
                Start::AllInactive => ActiveStart::AllInactive,
            },
            n_c: l.n_c,
            max_steps: l.max_steps,
            loss_mode: l.loss,
            constraint: l.constraint,
        }
    }

    pub fn sequential_settings(&self) -> SequentialSettings {
        SequentialSettings {
            time_mode: self.learning.time_mode,
            n_c: self.learning.n_c,
            max_steps: self.learning.max_steps,
            pde: self.pde_settings(),
        }
    }

    /// Short names for the stages, used in file names.
    pub fn stage_labels(&self) -> Vec<&'static str> {
        match self.learning.procedure {
            Procedure::Joint => vec!["data"],
            Procedure::Sequential => SEQUENTIAL_LABELS[..self.stages.len()].to_vec(),
        }
    }
}

pub const SEQUENTIAL_LABELS: [&str; 4] = ["d", "e", "h", "r"];
