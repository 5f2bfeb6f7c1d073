//! Quantile-based row pruning.
//!
//! A bulk row survives when its density (and, if enabled, `|∂q/∂x|`,
//! `|∂²q/∂x²|` and `∂q/∂t`) lies inside the central `[Q_τ, Q_{1−τ}]`
//! interval of that quantity over all bulk rows. Edge rows are filtered on
//! the edge series of `∂q/∂t`, and `E` rows additionally on `dL/dt`.

use serde::{Deserialize, Serialize};

use super::design::{DesignSystem, PointData, RowGroup};
use super::Mechanism;
use crate::error::{EqlError, Result};
use crate::quantile::central_interval;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PruneConfig {
    pub tau_q: f64,
    pub tau_qx: f64,
    pub tau_qxx: f64,
    /// Threshold on the temporal derivative `∂q/∂t`.
    pub tau_qt: f64,
    /// Threshold on the leading-edge velocity, applied to `E` rows.
    pub tau_dl_dt: f64,
    /// Use `|∂q/∂t|` and `|dL/dt|` instead of the signed values.
    pub absolute_rates: bool,
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, tau) in [
            ("tau_q", self.tau_q),
            ("tau_qx", self.tau_qx),
            ("tau_qxx", self.tau_qxx),
            ("tau_qt", self.tau_qt),
            ("tau_dl_dt", self.tau_dl_dt),
        ] {
            if !(0.0..0.5).contains(&tau) {
                return Err(EqlError::InvalidConfig(format!("{name} must lie in [0, 1/2), got {tau}")));
            }
        }
        Ok(())
    }

    pub fn is_trivial(&self) -> bool {
        self.tau_q == 0.0 && self.tau_qx == 0.0 && self.tau_qxx == 0.0 && self.tau_qt == 0.0 && self.tau_dl_dt == 0.0
    }

    fn rate(&self, v: f64) -> f64 {
        if self.absolute_rates {
            v.abs()
        } else {
            v
        }
    }
}

/// `keep(p)` is true when `value(p)` lies in the central interval of
/// `value` over `points`; everything is kept when `tau == 0`.
fn window(points: &[PointData], tau: f64, value: impl Fn(&PointData) -> f64) -> impl Fn(&PointData) -> bool {
    let bounds = if tau > 0.0 && !points.is_empty() {
        let values: Vec<f64> = points.iter().map(&value).collect();
        Some(central_interval(&values, tau))
    } else {
        None
    };
    move |p| match bounds {
        Some((lo, hi)) => {
            let v = value(p);
            lo <= v && v <= hi
        }
        None => true,
    }
}

/// Applies `config` to `system`. Quantiles are taken over the rows of the
/// unpruned system, which already excludes the first save time.
pub fn prune(system: &DesignSystem, config: &PruneConfig) -> Result<DesignSystem> {
    config.validate()?;
    if config.is_trivial() {
        return Ok(system.clone());
    }
    let bulk_pts = &system.bulk.points;
    let in_q = window(bulk_pts, config.tau_q, |p| p.q);
    let in_qx = window(bulk_pts, config.tau_qx, |p| p.qx.abs());
    let in_qxx = window(bulk_pts, config.tau_qxx, |p| p.qxx.abs());
    let in_qt = window(bulk_pts, config.tau_qt, |p| config.rate(p.qt));
    let bulk = system.bulk.filter(|p| in_q(p) && in_qx(p) && in_qxx(p) && in_qt(p));

    let edge = |group: &RowGroup| -> RowGroup {
        let in_qt = window(&group.points, config.tau_qt, |p| config.rate(p.qt));
        group.filter(|p| in_qt(p))
    };
    let edge_gradient = edge(&system.edge_gradient);
    let in_v = window(&system.edge_diffusion.points, config.tau_dl_dt, |p| config.rate(p.dl_dt));
    let edge_diffusion = edge(&system.edge_diffusion).filter(|p| in_v(p));

    let pruned = DesignSystem {
        libraries: system.libraries.clone(),
        bulk,
        edge_gradient,
        edge_diffusion,
        density_range: system.density_range,
    };
    for m in Mechanism::ALL {
        if !system.libraries.get(m).is_empty() && pruned.group(m).is_empty() {
            return Err(EqlError::EmptyBlock {
                block: m.name().to_string(),
            });
        }
    }
    Ok(pruned)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eql::{BasisLibrary, Libraries};

    fn pt(j: usize, q: f64, qt: f64, dl_dt: f64) -> PointData {
        PointData {
            i: 0,
            j,
            q,
            qx: 0.0,
            qxx: 0.0,
            qt,
            dl_dt,
        }
    }

    fn system(values: &[f64]) -> DesignSystem {
        let points: Vec<PointData> = values.iter().enumerate().map(|(j, &q)| pt(j + 1, q, -q, q)).collect();
        let group = RowGroup {
            rhs: points.iter().map(|p| p.qt).collect(),
            points,
        };
        DesignSystem {
            libraries: Libraries {
                d: BasisLibrary::powers([0]),
                e: BasisLibrary::powers([0]),
                ..Default::default()
            },
            bulk: group.clone(),
            edge_gradient: RowGroup::default(),
            edge_diffusion: group,
            density_range: (1.0, 100.0),
        }
    }

    #[test]
    fn zero_thresholds_keep_everything() {
        let sys = system(&[1.0, 2.0, 3.0]);
        assert_eq!(prune(&sys, &PruneConfig::default()).unwrap(), sys);
    }

    #[test]
    fn density_window_by_order_statistics() {
        let values: Vec<f64> = (1..=100).map(f64::from).collect();
        let sys = system(&values);
        let cfg = PruneConfig {
            tau_q: 0.25,
            ..Default::default()
        };
        let out = prune(&sys, &cfg).unwrap();
        // [25.75, 75.25] keeps 26..=75.
        let kept: Vec<f64> = out.bulk.points.iter().map(|p| p.q).collect();
        assert_eq!(kept, (26..=75).map(f64::from).collect::<Vec<_>>());
        // Density pruning leaves edge rows alone.
        assert_eq!(out.edge_diffusion.len(), 100);
    }

    #[test]
    fn velocity_window_applies_to_edge_rows() {
        let values: Vec<f64> = (1..=10).map(f64::from).collect();
        let cfg = PruneConfig {
            tau_dl_dt: 0.1,
            ..Default::default()
        };
        let out = prune(&system(&values), &cfg).unwrap();
        // Q_0.1 = 1.9 and Q_0.9 = 9.1 over 1..=10.
        let kept: Vec<f64> = out.edge_diffusion.points.iter().map(|p| p.dl_dt).collect();
        assert_eq!(kept, (2..=9).map(f64::from).collect::<Vec<_>>());
        assert_eq!(out.bulk.len(), 10);
    }

    #[test]
    fn signed_versus_absolute_rates() {
        let mut sys = system(&[1.0; 5]);
        for (p, v) in sys.bulk.points.iter_mut().zip([-10.0, -1.0, 0.0, 1.0, 2.0]) {
            p.qt = v;
        }
        let signed = PruneConfig {
            tau_qt: 0.25,
            ..Default::default()
        };
        let kept = |cfg: &PruneConfig| -> Vec<f64> {
            prune(&sys, cfg).unwrap().bulk.points.iter().map(|p| p.qt).collect()
        };
        assert_eq!(kept(&signed), vec![-1.0, 0.0, 1.0]);
        let absolute = PruneConfig {
            absolute_rates: true,
            ..signed
        };
        assert_eq!(kept(&absolute), vec![-1.0, 1.0, 2.0]);
    }

    #[test]
    fn emptied_block_is_an_error() {
        // Two rows with velocities 0 and 1: the window [0.4, 0.6] holds neither.
        let mut sys = system(&[1.0, 2.0]);
        sys.edge_diffusion.points[0].dl_dt = 0.0;
        sys.edge_diffusion.points[1].dl_dt = 1.0;
        let cfg = PruneConfig {
            tau_dl_dt: 0.4,
            ..Default::default()
        };
        match prune(&sys, &cfg) {
            Err(EqlError::EmptyBlock { block }) => assert_eq!(block, "E"),
            other => panic!("expected an empty block, got {other:?}"),
        }
    }

    #[test]
    fn thresholds_validated() {
        let cfg = PruneConfig {
            tau_q: 0.5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
