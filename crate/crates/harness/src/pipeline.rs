//! The stages simulate → average → learn → report, in memory and with an
//! on-disk cache.
//!
//! Density grids are cached under a hash of everything that determines
//! them. Fits are cached under a hash of the density CSV bytes they were
//! learned from plus the learning settings, so `learn` can be rerun alone on
//! the CSVs written by `average`.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use stepeql::density_stats::{raw_grid, stream_ensemble_average, DensityGrid, GridKind, GridRequest};
use stepeql::discrete_sim::{realization_seed, simulate, simulate_with_rng, Trajectory};
use stepeql::eql::{
    sequential_learn, stepwise_select, BasisLibrary, DesignSystem, FitResult, Libraries, LossContext, LossMode,
    Mechanism, StageData,
};
use stepeql::fvm::{Law, MechanismSet, PdeSolution};
use stepeql::io;
use stepeql::numdiff::GridDerivatives;

use crate::config::{ExperimentConfig, InitialConfig, ModelConfig, Procedure, StageConfig};
use crate::error::{HarnessError, Result, StageExt};
use crate::svg::{Plot, Series, PALETTE};
use crate::sweep::{run_sweep, sweep_plot, write_sweep_csv, SweepConfig, SweepRow};

/// Mechanism learned by sequential stage `k`.
const SEQUENTIAL_ORDER: [Mechanism; 4] = [
    Mechanism::Diffusion,
    Mechanism::EdgeDiffusion,
    Mechanism::EdgeGradient,
    Mechanism::Reaction,
];

/// Base seed of stage `k`'s ensemble. Stages draw independent ensembles.
pub fn stage_seed(seed: u64, k: usize) -> u64 {
    realization_seed(seed, k)
}

fn stage_rng(cfg: &ExperimentConfig, k: usize) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(realization_seed(stage_seed(cfg.seed, k), 0))
}

/// One trajectory for stage `k`: the deterministic solution, or the first
/// realization of the stage's ensemble.
pub fn simulate_stage(cfg: &ExperimentConfig, k: usize) -> Result<Trajectory> {
    let initial = cfg.initial_state()?;
    let sim = cfg.sim_config(&cfg.stages[k], &initial);
    if cfg.ensemble.n_s.is_some() {
        Ok(simulate_with_rng(&sim, &initial, &mut stage_rng(cfg, k))?)
    } else {
        Ok(simulate(&sim, &initial)?)
    }
}

/// The density grid for stage `k`: node densities for deterministic runs,
/// the knot-averaged ensemble otherwise.
pub fn build_grid(cfg: &ExperimentConfig, k: usize) -> Result<DensityGrid> {
    let stage = &cfg.stages[k];
    let initial = cfg.initial_state()?;
    let sim = cfg.sim_config(stage, &initial);
    match (cfg.ensemble.n_s, stage.n_k) {
        (None, _) => Ok(raw_grid(&simulate(&sim, &initial)?)),
        (Some(n_s), Some(n_k)) => {
            let request = GridRequest {
                time_indices: (0..stage.m).collect(),
                n_k,
            };
            let mut grids = stream_ensemble_average(&sim, &initial, n_s, stage_seed(cfg.seed, k), &[request])?;
            Ok(grids.pop().expect("one grid per request"))
        }
        (Some(_), None) => Err(HarnessError::Config("averaging needs n_k".into())),
    }
}

pub fn build_grids(cfg: &ExperimentConfig) -> Result<Vec<DensityGrid>> {
    (0..cfg.stages.len()).map(|k| build_grid(cfg, k)).collect()
}

pub fn grid_kind(cfg: &ExperimentConfig, k: usize) -> GridKind {
    match (cfg.ensemble.n_s, cfg.stages[k].n_k) {
        (Some(n_s), Some(n_k)) => GridKind::EnsembleAveraged { n_s, n_k },
        _ => GridKind::Raw,
    }
}

/// The outcome of learning, whichever procedure produced it.
#[derive(Debug, Clone)]
pub struct Learned {
    pub libraries: Libraries,
    /// Combined `(θ^d, θ^r, θ^h, θ^e)`.
    pub theta: Vec<f64>,
    /// One fit per stage.
    pub fits: Vec<FitResult>,
    /// Fixed terms plus the learned expansions.
    pub mechanisms: MechanismSet,
}

impl Learned {
    fn from_fits(cfg: &ExperimentConfig, fits: Vec<FitResult>) -> Result<Self> {
        let libraries = cfg.libraries();
        let theta = match cfg.learning.procedure {
            Procedure::Joint => fits[0].theta.clone(),
            Procedure::Sequential => {
                let mut theta = vec![0.0; libraries.total()];
                for (fit, &m) in fits.iter().zip(&SEQUENTIAL_ORDER) {
                    theta[libraries.columns(m)].copy_from_slice(fit.coefficients(m));
                }
                theta
            }
        };
        if theta.len() != libraries.total() {
            return Err(HarnessError::Cache("cached fit does not match the libraries".into()));
        }
        let known = match cfg.learning.procedure {
            Procedure::Joint => cfg.known(),
            Procedure::Sequential => no_mechanisms(),
        };
        let learned = |m: Mechanism| libraries.get(m).law(libraries.block(&theta, m));
        let mechanisms = MechanismSet {
            diffusion: add(&known.diffusion, learned(Mechanism::Diffusion)),
            reaction: add(&known.reaction, learned(Mechanism::Reaction)),
            edge_gradient: add(&known.edge_gradient, learned(Mechanism::EdgeGradient)),
            edge_diffusion: add(&known.edge_diffusion, learned(Mechanism::EdgeDiffusion)),
        };
        Ok(Self {
            libraries,
            theta,
            fits,
            mechanisms,
        })
    }

    pub fn coefficients(&self, m: Mechanism) -> &[f64] {
        self.libraries.block(&self.theta, m)
    }

    /// Loss of the final model: the last stage's for the sequential procedure.
    pub fn loss(&self) -> f64 {
        self.fits.last().map_or(f64::INFINITY, |f| f.loss)
    }

    /// Whether any diffusion coefficient was selected.
    pub fn d_active(&self) -> bool {
        self.coefficients(Mechanism::Diffusion).iter().any(|&v| v != 0.0)
    }
}

fn add(known: &Law, learned: Law) -> Law {
    stepeql::eql::loss::add_laws(known, &learned)
}

fn no_mechanisms() -> MechanismSet {
    MechanismSet {
        diffusion: Law::Zero,
        reaction: Law::Zero,
        edge_gradient: Law::Zero,
        edge_diffusion: Law::Zero,
    }
}

fn system_for(cfg: &ExperimentConfig, grid: &DensityGrid, stage: &StageConfig) -> Result<DesignSystem> {
    let derivs = GridDerivatives::estimate(grid, cfg.learning.time_mode)?;
    let mut system = DesignSystem::assemble(grid, &derivs, cfg.libraries())?;
    let l = &cfg.learning;
    for (m, terms) in [
        (Mechanism::Diffusion, &l.known_d),
        (Mechanism::Reaction, &l.known_r),
        (Mechanism::EdgeGradient, &l.known_h),
        (Mechanism::EdgeDiffusion, &l.known_e),
    ] {
        if !terms.is_empty() {
            let library = BasisLibrary::powers(terms.iter().map(|t| t.0));
            let theta: Vec<f64> = terms.iter().map(|t| t.1).collect();
            system.subtract_known(m, &library, &theta);
        }
    }
    Ok(stepeql::eql::prune::prune(&system, &cfg.prune(stage))?)
}

/// Runs the configured learning procedure on one grid per stage.
pub fn learn(cfg: &ExperimentConfig, grids: &[DensityGrid]) -> Result<Learned> {
    if grids.len() != cfg.stages.len() {
        return Err(HarnessError::Config(format!(
            "{} density grids for {} stages",
            grids.len(),
            cfg.stages.len()
        )));
    }
    let fits = match cfg.learning.procedure {
        Procedure::Joint => {
            let system = system_for(cfg, &grids[0], &cfg.stages[0])?;
            let mut context = LossContext::new(grids[0].clone(), cfg.free_boundary(), cfg.learning.loss)
                .with_known(cfg.known());
            context.pde = cfg.pde_settings();
            vec![stepwise_select(&system, &context, &cfg.stepwise_config())?]
        }
        Procedure::Sequential => {
            let data: Vec<StageData> = grids
                .iter()
                .zip(&cfg.stages)
                .map(|(grid, stage)| StageData {
                    grid: grid.clone(),
                    prune: cfg.prune(stage),
                })
                .collect();
            let result = sequential_learn(
                &cfg.libraries(),
                &data[0],
                data.get(1),
                data.get(2),
                data.get(3),
                &cfg.sequential_settings(),
            )?;
            result.stages.into_iter().map(|(_, fit)| fit).collect()
        }
    };
    Learned::from_fits(cfg, fits)
}

/// The learned PDE started from the grid's first profile, saved at its times.
pub fn solve_learned(cfg: &ExperimentConfig, learned: &Learned, grid: &DensityGrid) -> Result<PdeSolution> {
    let mut context = LossContext::new(grid.clone(), cfg.free_boundary(), LossMode::DensityOnly);
    context.pde = cfg.pde_settings();
    let problem = context.problem(learned.mechanisms.clone(), grid.times.clone());
    Ok(stepeql::fvm::solve(&problem)?)
}

/// Hex SHA-256 of a serializable value's TOML form.
fn hash_of<T: Serialize>(value: &T) -> Result<String> {
    let text = toml::to_string(value)?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

#[derive(Serialize)]
struct GridKey<'a> {
    version: u32,
    model: &'a ModelConfig,
    initial: &'a InitialConfig,
    n_s: Option<usize>,
    m: usize,
    t1: f64,
    tm: f64,
    n_k: Option<usize>,
    /// Seed of the stage's ensemble in hex, since TOML integers are signed;
    /// absent for deterministic runs.
    seed: Option<String>,
}

/// Cache key for stage `k`'s density grid.
pub fn grid_key(cfg: &ExperimentConfig, k: usize) -> Result<String> {
    let s = &cfg.stages[k];
    hash_of(&GridKey {
        version: 1,
        model: &cfg.model,
        initial: &cfg.initial,
        n_s: cfg.ensemble.n_s,
        m: s.m,
        t1: s.t1,
        tm: s.tm,
        n_k: s.n_k.filter(|_| cfg.ensemble.n_s.is_some()),
        seed: cfg.ensemble.n_s.map(|_| format!("{:016x}", stage_seed(cfg.seed, k))),
    })
}

#[derive(Serialize)]
struct FitKey<'a> {
    version: u32,
    free_boundary: bool,
    stages: Vec<stepeql::eql::PruneConfig>,
    learning: &'a crate::config::LearningConfig,
}

/// An output directory holding CSVs, plots and the stage cache.
pub struct Workspace {
    pub out: PathBuf,
}

impl Workspace {
    pub fn new(out: impl Into<PathBuf>) -> Result<Self> {
        let out = out.into();
        fs::create_dir_all(out.join("cache"))?;
        Ok(Self { out })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn cache(&self, name: &str) -> PathBuf {
        self.out.join("cache").join(name)
    }

    pub fn density_path(&self, label: &str) -> PathBuf {
        self.path(&format!("density_{label}.csv"))
    }

    /// Writes through a temporary file so readers never see partial output.
    fn write_file(path: &Path, fill: impl FnOnce(&mut BufWriter<fs::File>) -> Result<()>) -> Result<()> {
        let tmp = path.with_extension("partial");
        let file = fs::File::create(&tmp).map_err(|source| HarnessError::File {
            path: tmp.display().to_string(),
            source,
        })?;
        let mut w = BufWriter::new(file);
        fill(&mut w)?;
        std::io::Write::flush(&mut w)?;
        drop(w);
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// `trajectory_<label>.csv` for every stage.
    pub fn simulate(&self, cfg: &ExperimentConfig) -> Result<()> {
        for (k, label) in cfg.stage_labels().into_iter().enumerate() {
            let traj = simulate_stage(cfg, k).stage("simulate")?;
            Self::write_file(&self.path(&format!("trajectory_{label}.csv")), |w| {
                Ok(io::write_trajectory(w, &traj)?)
            })
            .stage("simulate")?;
        }
        Ok(())
    }

    /// Density grids for every stage, from the cache when possible; each is
    /// also written to `density_<label>.csv`.
    pub fn average(&self, cfg: &ExperimentConfig) -> Result<Vec<DensityGrid>> {
        let run = || -> Result<Vec<DensityGrid>> {
            let mut grids = vec![];
            for (k, label) in cfg.stage_labels().into_iter().enumerate() {
                let (grid, cached) = self.cached_grid(cfg, k)?;
                fs::copy(&cached, self.density_path(label))?;
                grids.push(grid);
            }
            Ok(grids)
        };
        run().stage("average")
    }

    /// Stage `k`'s grid and its cache file, building it on a miss. The grid
    /// is always read back from the CSV so cached and fresh runs agree.
    pub fn cached_grid(&self, cfg: &ExperimentConfig, k: usize) -> Result<(DensityGrid, PathBuf)> {
        let cached = self.cache(&format!("grid-{}.csv", grid_key(cfg, k)?));
        if !cached.exists() {
            let grid = build_grid(cfg, k)?;
            Self::write_file(&cached, |w| Ok(io::write_density_grid(w, &grid)?))?;
        }
        let file = fs::File::open(&cached)?;
        let grid = io::read_density_grid(std::io::BufReader::new(file), grid_kind(cfg, k))?;
        Ok((grid, cached))
    }

    /// Runs a sweep with cached grids and writes `sweep.csv` and `sweep.svg`.
    pub fn sweep(&self, sweep: &SweepConfig) -> Result<Vec<SweepRow>> {
        let rows = run_sweep(sweep, |cfg, k| self.cached_grid(cfg, k).map(|(g, _)| g).stage("average"))?;
        Self::write_file(&self.path("sweep.csv"), |w| write_sweep_csv(w, &rows))?;
        self.write_svg("sweep.svg", &sweep_plot(sweep.param, &rows))?;
        Ok(rows)
    }

    /// Reads the density CSVs written by [`Workspace::average`].
    pub fn load_densities(&self, cfg: &ExperimentConfig) -> Result<(Vec<DensityGrid>, Vec<u8>)> {
        let mut grids = vec![];
        let mut bytes = vec![];
        for (k, label) in cfg.stage_labels().into_iter().enumerate() {
            let path = self.density_path(label);
            let data = fs::read(&path).map_err(|source| HarnessError::File {
                path: path.display().to_string(),
                source,
            })?;
            grids.push(io::read_density_grid(data.as_slice(), grid_kind(cfg, k))?);
            bytes.extend_from_slice(&Sha256::digest(&data));
        }
        Ok((grids, bytes))
    }

    fn fit_key(cfg: &ExperimentConfig, density_digest: &[u8]) -> Result<String> {
        let settings = hash_of(&FitKey {
            version: 1,
            free_boundary: cfg.free_boundary(),
            stages: cfg.stages.iter().map(|s| cfg.prune(s)).collect(),
            learning: &cfg.learning,
        })?;
        let mut h = Sha256::new();
        h.update(density_digest);
        h.update(settings.as_bytes());
        Ok(hex::encode(h.finalize()))
    }

    /// Learns from the density CSVs in the workspace, reusing a cached fit
    /// for identical inputs, and writes the fit tables and derivatives.
    pub fn learn(&self, cfg: &ExperimentConfig) -> Result<Learned> {
        let run = || -> Result<Learned> {
            let (grids, digest) = self.load_densities(cfg)?;
            let cached = self.cache(&format!("fit-{}.bin", Self::fit_key(cfg, &digest)?));
            let learned = match fs::read(&cached) {
                Ok(bytes) => {
                    let fits: Vec<FitResult> =
                        bincode::deserialize(&bytes).map_err(|e| HarnessError::Cache(e.to_string()))?;
                    Learned::from_fits(cfg, fits)?
                }
                Err(_) => {
                    let learned = learn(cfg, &grids)?;
                    let bytes = bincode::serialize(&learned.fits).map_err(|e| HarnessError::Cache(e.to_string()))?;
                    Self::write_file(&cached, |w| Ok(std::io::Write::write_all(w, &bytes)?))?;
                    learned
                }
            };
            for ((label, grid), fit) in cfg.stage_labels().into_iter().zip(&grids).zip(&learned.fits) {
                let derivs = GridDerivatives::estimate(grid, cfg.learning.time_mode)?;
                Self::write_file(&self.path(&format!("derivatives_{label}.csv")), |w| {
                    Ok(io::write_derivatives(w, grid, &derivs)?)
                })?;
                Self::write_file(&self.path(&format!("fit_{label}.csv")), |w| Ok(io::write_fit_table(w, fit)?))?;
            }
            Self::write_file(&self.path("coefficients.csv"), |w| write_coefficients(w, &learned))?;
            Ok(learned)
        };
        run().stage("learn")
    }

    /// Solves the learned PDE on each stage's data and writes the solution,
    /// mechanism curves and SVG overlays.
    pub fn report(&self, cfg: &ExperimentConfig, learned: &Learned) -> Result<()> {
        let run = || -> Result<()> {
            let (grids, _) = self.load_densities(cfg)?;
            let continuum = MechanismSet::continuum_limit(&cfg.force(), cfg.model.eta, &cfg.proliferation());
            let mut range = (f64::INFINITY, f64::NEG_INFINITY);
            for (label, grid) in cfg.stage_labels().into_iter().zip(&grids) {
                let (lo, hi) = grid.density_range();
                range = (range.0.min(lo), range.1.max(hi));
                let sol = solve_learned(cfg, learned, grid)?;
                Self::write_file(&self.path(&format!("pde_{label}.csv")), |w| Ok(io::write_pde_solution(w, &sol)?))?;
                self.write_svg(&format!("density_{label}.svg"), &density_plot(grid, &sol))?;
                if cfg.free_boundary() {
                    self.write_svg(&format!("edge_{label}.svg"), &edge_plot(grid, &sol))?;
                }
            }
            if !(range.1 > range.0) {
                range = (range.0 * 0.9, range.0 * 1.1 + 1e-9);
            }
            Self::write_file(&self.path("mechanisms.csv"), |w| {
                Ok(io::write_mechanism_curves(w, &learned.mechanisms, range, 101)?)
            })?;
            Self::write_file(&self.path("continuum.csv"), |w| {
                Ok(io::write_mechanism_curves(w, &continuum, range, 101)?)
            })?;
            for m in Mechanism::ALL {
                let edge_law = matches!(m, Mechanism::EdgeGradient | Mechanism::EdgeDiffusion);
                if edge_law && !cfg.free_boundary() {
                    continue;
                }
                let learned_law = law_of(&learned.mechanisms, m);
                if learned_law.is_zero() && law_of(&continuum, m).is_zero() {
                    continue;
                }
                let plot = mechanism_plot(m, learned_law, law_of(&continuum, m), range);
                self.write_svg(&format!("mechanism_{}.svg", m.name()), &plot)?;
            }
            Ok(())
        };
        run().stage("report")
    }

    fn write_svg(&self, name: &str, plot: &Plot) -> Result<()> {
        Self::write_file(&self.path(name), |w| Ok(std::io::Write::write_all(w, plot.to_svg().as_bytes())?))
    }
}

fn law_of(set: &MechanismSet, m: Mechanism) -> &Law {
    match m {
        Mechanism::Diffusion => &set.diffusion,
        Mechanism::Reaction => &set.reaction,
        Mechanism::EdgeGradient => &set.edge_gradient,
        Mechanism::EdgeDiffusion => &set.edge_diffusion,
    }
}

#[derive(Serialize)]
struct CoefficientRow<'a> {
    mechanism: &'a str,
    basis: String,
    coefficient: f64,
}

/// `mechanism, basis, coefficient` for every column of the libraries.
fn write_coefficients<W: std::io::Write>(w: W, learned: &Learned) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for m in Mechanism::ALL {
        let lib = learned.libraries.get(m);
        for (k, &coefficient) in learned.coefficients(m).iter().enumerate() {
            out.serialize(CoefficientRow {
                mechanism: m.name(),
                basis: lib.label(k),
                coefficient,
            })?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Indices of up to six save times spread over the grid.
fn snapshot_indices(n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..6).map(|k| k * (n - 1) / 5).collect();
    idx.dedup();
    idx
}

fn density_plot(grid: &DensityGrid, sol: &PdeSolution) -> Plot {
    let mut plot = Plot::new("Density: data (solid) and learned PDE (dashed)", "x", "q");
    for (c, j) in snapshot_indices(grid.n_times()).into_iter().enumerate() {
        let color = PALETTE[c % PALETTE.len()];
        let t = grid.times[j];
        plot.series.push(Series::line(
            format!("t = {t}"),
            grid.x[j].iter().copied().zip(grid.q[j].iter().copied()).collect(),
            color,
        ));
        plot.series.push(Series::dashed(
            String::new(),
            sol.x[j].iter().copied().zip(sol.q[j].iter().copied()).collect(),
            color,
        ));
    }
    plot
}

fn edge_plot(grid: &DensityGrid, sol: &PdeSolution) -> Plot {
    let mut plot = Plot::new("Leading edge", "t", "L");
    plot.series.push(Series::line(
        "data".into(),
        grid.times.iter().copied().zip(grid.leading_edge.iter().copied()).collect(),
        PALETTE[0],
    ));
    plot.series.push(Series::dashed(
        "learned PDE".into(),
        sol.times.iter().copied().zip(sol.leading_edge.iter().copied()).collect(),
        PALETTE[1],
    ));
    plot
}

fn mechanism_plot(m: Mechanism, learned: &Law, continuum: &Law, (lo, hi): (f64, f64)) -> Plot {
    let qs: Vec<f64> = (0..=100).map(|k| lo + (hi - lo) * k as f64 / 100.0).collect();
    let mut plot = Plot::new(&format!("{}(q)", m.name()), "q", m.name());
    plot.series.push(Series::line(
        "learned".into(),
        qs.iter().map(|&q| (q, learned.eval(q))).collect(),
        PALETTE[0],
    ));
    plot.series.push(Series::dashed(
        "continuum limit".into(),
        qs.iter().map(|&q| (q, continuum.eval(q))).collect(),
        PALETTE[1],
    ));
    plot
}
