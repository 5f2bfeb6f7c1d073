//! CSV import and export.
//!
//! Floats are written in their shortest round-trip form, so a grid read back
//! with [`read_density_grid`] is bit-identical to the one written.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::density_stats::{DensityGrid, GridKind};
use crate::discrete_sim::Trajectory;
use crate::eql::FitResult;
use crate::error::{EqlError, Result};
use crate::fvm::{MechanismSet, PdeSolution};
use crate::numdiff::GridDerivatives;

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(true).from_writer(w)
}

#[derive(Serialize)]
struct NodeRow {
    time: f64,
    node: usize,
    x: f64,
}

/// One row per node per save time: `time, node, x`.
pub fn write_trajectory<W: Write>(w: W, trajectory: &Trajectory) -> Result<()> {
    let mut out = writer(w);
    for state in &trajectory.states {
        for (node, &x) in state.x.iter().enumerate() {
            out.serialize(NodeRow { time: state.t, node, x })?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct GridRow {
    time: f64,
    point: usize,
    x: f64,
    q: f64,
    leading_edge: f64,
}

/// One row per grid point: `time, point, x, q, leading_edge`.
pub fn write_density_grid<W: Write>(w: W, grid: &DensityGrid) -> Result<()> {
    let mut out = writer(w);
    for j in 0..grid.n_times() {
        for (point, (&x, &q)) in grid.x[j].iter().zip(&grid.q[j]).enumerate() {
            out.serialize(GridRow {
                time: grid.times[j],
                point,
                x,
                q,
                leading_edge: grid.leading_edge[j],
            })?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a grid written by [`write_density_grid`]. The CSV does not record
/// how the grid was made, so the caller supplies `kind`.
pub fn read_density_grid<R: Read>(r: R, kind: GridKind) -> Result<DensityGrid> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let mut grid = DensityGrid {
        times: vec![],
        x: vec![],
        q: vec![],
        leading_edge: vec![],
        kind,
    };
    for (line, row) in reader.deserialize::<GridRow>().enumerate() {
        let row = row?;
        if row.point == 0 {
            if grid.times.last().is_some_and(|&t| t >= row.time) {
                return Err(EqlError::Parse(format!("row {}: times must increase", line + 2)));
            }
            grid.times.push(row.time);
            grid.leading_edge.push(row.leading_edge);
            grid.x.push(vec![]);
            grid.q.push(vec![]);
        } else if grid.times.last() != Some(&row.time) || grid.x.last().map(Vec::len) != Some(row.point) {
            return Err(EqlError::Parse(format!("row {}: points out of order", line + 2)));
        }
        grid.x.last_mut().expect("pushed above").push(row.x);
        grid.q.last_mut().expect("pushed above").push(row.q);
    }
    if grid.times.is_empty() {
        return Err(EqlError::Parse("density grid CSV has no rows".into()));
    }
    Ok(grid)
}

#[derive(Serialize)]
struct BandRow {
    time: f64,
    point: usize,
    x: f64,
    q: f64,
    lower: f64,
    upper: f64,
}

/// Mean profile with pointwise percentile band: `time, point, x, q, lower, upper`.
pub fn write_band<W: Write>(w: W, mean: &DensityGrid, lower: &DensityGrid, upper: &DensityGrid) -> Result<()> {
    if lower.times != mean.times || upper.times != mean.times {
        return Err(EqlError::MismatchedTimes);
    }
    let mut out = writer(w);
    for j in 0..mean.n_times() {
        for point in 0..mean.x[j].len() {
            out.serialize(BandRow {
                time: mean.times[j],
                point,
                x: mean.x[j][point],
                q: mean.q[j][point],
                lower: lower.q[j][point],
                upper: upper.q[j][point],
            })?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct DerivativeRow {
    time: f64,
    point: usize,
    x: f64,
    q: f64,
    dq_dt: f64,
    dq_dx: f64,
    d2q_dx2: f64,
    dl_dt: f64,
}

/// Derivative estimates for times `2..=M`:
/// `time, point, x, q, dq_dt, dq_dx, d2q_dx2, dl_dt`.
pub fn write_derivatives<W: Write>(w: W, grid: &DensityGrid, derivs: &GridDerivatives) -> Result<()> {
    let mut out = writer(w);
    for (k, j) in (1..grid.n_times()).enumerate() {
        for point in 0..grid.x[j].len() {
            out.serialize(DerivativeRow {
                time: grid.times[j],
                point,
                x: grid.x[j][point],
                q: grid.q[j][point],
                dq_dt: derivs.qt[k][point],
                dq_dx: derivs.qx[k][point],
                d2q_dx2: derivs.qxx[k][point],
                dl_dt: derivs.dl_dt[k],
            })?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct PdeRow {
    time: f64,
    x: f64,
    q: f64,
    #[serde(rename = "L")]
    l: f64,
}

/// `time, x, q, L` for every node of every saved profile.
pub fn write_pde_solution<W: Write>(w: W, sol: &PdeSolution) -> Result<()> {
    let mut out = writer(w);
    for j in 0..sol.times.len() {
        for (&x, &q) in sol.x[j].iter().zip(&sol.q[j]) {
            out.serialize(PdeRow {
                time: sol.times[j],
                x,
                q,
                l: sol.leading_edge[j],
            })?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Stepwise table: one row per step with the incumbent's coefficients and
/// loss, and the label of the coefficient toggled next (empty on the final
/// step). A last row holds the returned model.
pub fn write_fit_table<W: Write>(w: W, fit: &FitResult) -> Result<()> {
    let mut out = writer(w);
    let labels: Vec<String> = (0..fit.libraries.total()).map(|c| fit.libraries.column_label(c)).collect();
    let mut header = vec!["step".to_string()];
    header.extend(labels.iter().cloned());
    header.extend(["loss".to_string(), "move".to_string()]);
    out.write_record(&header)?;
    let row = |step: String, theta: &[f64], loss: f64, mv: String| -> Vec<String> {
        let mut r = vec![step];
        r.extend(theta.iter().map(|v| v.to_string()));
        r.push(loss.to_string());
        r.push(mv);
        r
    };
    for (k, step) in fit.trace.iter().enumerate() {
        let inc = step.incumbent();
        let mv = step.chosen().toggled.map(|c| labels[c].clone()).unwrap_or_default();
        out.write_record(row((k + 1).to_string(), &inc.theta, inc.loss, mv))?;
    }
    out.write_record(row("final".into(), &fit.theta, fit.loss, String::new()))?;
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct CurveRow {
    q: f64,
    #[serde(rename = "D")]
    d: f64,
    #[serde(rename = "R")]
    r: f64,
    #[serde(rename = "H")]
    h: f64,
    #[serde(rename = "E")]
    e: f64,
}

/// `D`, `R`, `H` and `E` sampled at `n` equally spaced densities on `[lo, hi]`.
pub fn write_mechanism_curves<W: Write>(w: W, mechanisms: &MechanismSet, (lo, hi): (f64, f64), n: usize) -> Result<()> {
    if n < 2 || !(hi >= lo) {
        return Err(EqlError::InvalidConfig(format!("bad curve sampling: {n} points on [{lo}, {hi}]")));
    }
    let mut out = writer(w);
    for k in 0..n {
        let q = lo + (hi - lo) * k as f64 / (n - 1) as f64;
        out.serialize(CurveRow {
            q,
            d: mechanisms.diffusion.eval(q),
            r: mechanisms.reaction.eval(q),
            h: mechanisms.edge_gradient.eval(q),
            e: mechanisms.edge_diffusion.eval(q),
        })?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fvm::Law;

    fn grid() -> DensityGrid {
        DensityGrid {
            times: vec![0.0, 0.1],
            x: vec![vec![0.0, 0.5, 1.0], vec![0.0, 0.55, 1.1]],
            q: vec![vec![2.0, 2.0, 2.0], vec![1.0 / 3.0, 1.9, 0.1 + 0.2]],
            leading_edge: vec![1.0, 1.1],
            kind: GridKind::Raw,
        }
    }

    #[test]
    fn grid_round_trip_is_exact() {
        let mut buf = Vec::new();
        write_density_grid(&mut buf, &grid()).unwrap();
        let back = read_density_grid(buf.as_slice(), GridKind::Raw).unwrap();
        assert_eq!(back, grid());
    }

    #[test]
    fn malformed_grid_rejected() {
        let text = "time,point,x,q,leading_edge\n0,0,0,1,1\n0,2,1,1,1\n";
        assert!(read_density_grid(text.as_bytes(), GridKind::Raw).is_err());
        let text = "time,point,x,q,leading_edge\n";
        assert!(read_density_grid(text.as_bytes(), GridKind::Raw).is_err());
    }

    #[test]
    fn curves_have_header_and_rows() {
        let mechs = MechanismSet {
            diffusion: Law::Expansion(vec![(-2, 50.0)]),
            reaction: Law::Zero,
            edge_gradient: Law::Zero,
            edge_diffusion: Law::Zero,
        };
        let mut buf = Vec::new();
        write_mechanism_curves(&mut buf, &mechs, (5.0, 10.0), 3).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "q,D,R,H,E");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1], "5.0,2.0,0.0,0.0,0.0");
    }
}
