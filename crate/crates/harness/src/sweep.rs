//! One-at-a-time parameter sweeps.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use stepeql::density_stats::DensityGrid;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::pipeline::{grid_key, learn};
use crate::svg::{Plot, Series, PALETTE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    /// Spacing between save times; `M` follows from `t_1`, `t_M`.
    H,
    NS,
    /// Final save time, keeping the spacing `h`.
    TM,
    NK,
    TauQ,
}

impl SweepParam {
    pub const ALL: [SweepParam; 5] = [SweepParam::H, SweepParam::NS, SweepParam::TM, SweepParam::NK, SweepParam::TauQ];

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::H => "h",
            SweepParam::NS => "n_s",
            SweepParam::TM => "t_M",
            SweepParam::NK => "n_k",
            SweepParam::TauQ => "tau_q",
        }
    }

    /// `base` with this parameter set to `value` in every stage.
    pub fn apply(self, base: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut cfg = base.clone();
        let count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(HarnessError::Config(format!("{} must be a whole number, got {v}", self.name())))
            }
        };
        match self {
            SweepParam::NS => cfg.ensemble.n_s = Some(count(value)?),
            SweepParam::NK => {
                let n_k = count(value)?;
                cfg.stages.iter_mut().for_each(|s| s.n_k = Some(n_k));
            }
            SweepParam::TauQ => cfg.stages.iter_mut().for_each(|s| s.tau_q = value),
            SweepParam::H => {
                if !(value > 0.0) {
                    return Err(HarnessError::Config(format!("h must be positive, got {value}")));
                }
                for s in &mut cfg.stages {
                    s.m = ((s.tm - s.t1) / value).round() as usize + 1;
                }
            }
            SweepParam::TM => {
                for s in &mut cfg.stages {
                    let h = s.h();
                    s.tm = value;
                    s.m = ((value - s.t1) / h).round() as usize + 1;
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|p| p.name().to_ascii_lowercase() == key || (key == "tm" && *p == SweepParam::TM))
            .ok_or_else(|| HarnessError::Config(format!("unknown sweep parameter {s:?} (known: h, n_s, t_M, n_k, tau_q)")))
    }
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub base: ExperimentConfig,
    pub param: SweepParam,
    pub values: Vec<f64>,
    /// Replicate `r` uses seed `base.seed + r`.
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub parameter: &'static str,
    pub value: f64,
    pub replicate: usize,
    pub seed: u64,
    /// Terminal loss; for the sequential procedure, that of the last stage.
    pub loss: Option<f64>,
    pub d_active: Option<bool>,
    pub error: Option<String>,
}

impl SweepConfig {
    /// The experiment for every (value, replicate) point, in output order.
    pub fn points(&self) -> Result<Vec<(f64, usize, ExperimentConfig)>> {
        if self.values.is_empty() || self.replicates == 0 {
            return Err(HarnessError::Config("a sweep needs at least one value and one replicate".into()));
        }
        let mut points = vec![];
        for &value in &self.values {
            for r in 0..self.replicates {
                let mut cfg = self.param.apply(&self.base, value)?;
                cfg.seed = self.base.seed.wrapping_add(r as u64);
                points.push((value, r, cfg));
            }
        }
        Ok(points)
    }
}

/// Runs every sweep point. Each distinct density grid is built once by
/// `grid`, then points are learned in parallel. A failing point is recorded
/// in its row and the sweep continues.
pub fn run_sweep<G>(sweep: &SweepConfig, grid: G) -> Result<Vec<SweepRow>>
where
    G: Fn(&ExperimentConfig, usize) -> Result<DensityGrid> + Sync,
{
    let points = sweep.points()?;
    let mut jobs: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut keys = vec![];
    for (p, (_, _, cfg)) in points.iter().enumerate() {
        let mut point_keys = vec![];
        for k in 0..cfg.stages.len() {
            let key = grid_key(cfg, k)?;
            jobs.entry(key.clone()).or_insert((p, k));
            point_keys.push(key);
        }
        keys.push(point_keys);
    }
    let built: BTreeMap<String, std::result::Result<DensityGrid, String>> = jobs
        .into_par_iter()
        .map(|(key, (p, k))| (key, grid(&points[p].2, k).map_err(|e| e.to_string())))
        .collect();

    Ok(points
        .par_iter()
        .zip(keys.par_iter())
        .map(|((value, replicate, cfg), point_keys)| {
            let outcome = point_keys
                .iter()
                .map(|key| built[key].clone())
                .collect::<std::result::Result<Vec<_>, _>>()
                .and_then(|grids| learn(cfg, &grids).map_err(|e| e.to_string()));
            let (loss, d_active, error) = match outcome {
                Ok(learned) => (Some(learned.loss()), Some(learned.d_active()), None),
                Err(e) => (None, None, Some(e)),
            };
            SweepRow {
                parameter: sweep.param.name(),
                value: *value,
                replicate: *replicate,
                seed: cfg.seed,
                loss,
                d_active,
                error,
            }
        })
        .collect())
}

pub fn write_sweep_csv<W: std::io::Write>(w: W, rows: &[SweepRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

/// Loss against parameter value, with runs that learned `D = 0` drawn
/// differently from those with `D ≠ 0`.
pub fn sweep_plot(param: SweepParam, rows: &[SweepRow]) -> Plot {
    let mut plot = Plot::new(&format!("Loss against {param}"), param.name(), "loss");
    let pick = |active: bool| -> Vec<(f64, f64)> {
        rows.iter()
            .filter_map(|r| match (r.loss, r.d_active) {
                (Some(l), Some(a)) if a == active => Some((r.value, l)),
                _ => None,
            })
            .collect()
    };
    plot.series.push(Series::markers("D(q) ≠ 0".into(), pick(true), PALETTE[0]));
    plot.series.push(Series::markers("D(q) = 0".into(), pick(false), PALETTE[1]));
    plot
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::preset;

    #[test]
    fn parameter_names_parse() {
        for p in SweepParam::ALL {
            assert_eq!(p.name().parse::<SweepParam>().unwrap(), p);
        }
        assert_eq!("TM".parse::<SweepParam>().unwrap(), SweepParam::TM);
        assert!("beta".parse::<SweepParam>().is_err());
    }

    #[test]
    fn spacing_and_final_time_adjust_point_count() {
        let base = preset("cs3b").unwrap();
        let h = SweepParam::H.apply(&base, 0.5).unwrap();
        assert_eq!(h.stages[0].m, 151);
        let tm = SweepParam::TM.apply(&base, 50.0).unwrap();
        assert_eq!(tm.stages[0].m, 501);
        assert!((tm.stages[0].h() - base.stages[0].h()).abs() < 1e-12);
        assert!(SweepParam::NS.apply(&base, 10.5).is_err());
    }

    #[test]
    fn replicates_shift_the_seed() {
        let sweep = SweepConfig {
            base: preset("cs3b").unwrap(),
            param: SweepParam::TauQ,
            values: vec![0.0, 0.25],
            replicates: 2,
        };
        let points = sweep.points().unwrap();
        assert_eq!(points.len(), 4);
        assert_eq!(points[1].2.seed, sweep.base.seed + 1);
        assert_eq!(points[2].2.stages[0].tau_q, 0.25);
    }
}
