//! Files written by the CLI: trace CSV, JSON reports and plot-ready data.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};

use crate::error::{dimension, Result};
use crate::pipeline::{CertificateReport, System};
use crate::reach::{bounding_polytope, box_normals, reach_overapprox_at};
use crate::scenario::Scenario;
use crate::sim::{ModeInterval, SimulationOutcome, TraceRow};

/// 17 significant digits, enough to read back the same `f64`.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn trace_header(n: usize, m: usize) -> Vec<String> {
    let mut h = vec!["t".to_string(), "mode".to_string()];
    h.extend((0..n).map(|i| format!("x{i}")));
    h.extend((0..m).map(|i| format!("u{i}")));
    h.extend(["attack", "V", "event"].map(String::from));
    h
}

/// `t,mode,x0..,u0..,attack,V,event`, one row per simulation step.
pub fn write_trace_csv<W: Write>(out: W, n: usize, m: usize, rows: &[TraceRow]) -> Result<()> {
    if rows.iter().any(|r| r.x.len() != n || r.u.len() != m) {
        return Err(dimension("export", "trace row width differs from the header"));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trace_header(n, m))?;
    for r in rows {
        let mut rec = vec![num(r.t), r.mode.to_string()];
        rec.extend(r.x.iter().map(|v| num(*v)));
        rec.extend(r.u.iter().map(|v| num(*v)));
        rec.push(u8::from(r.attack).to_string());
        rec.push(num(r.v));
        rec.push(r.event.clone());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipseProjection {
    pub axes: [usize; 2],
    /// Boundary of the projected safe set `xᵀPx ≤ 1`.
    pub outer: Vec<[f64; 2]>,
    /// Boundary of the projected inner set `xᵀPx ≤ ε`.
    pub inner: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HullProjection {
    pub axes: [usize; 2],
    pub t: f64,
    /// Counter-clockwise convex hull of the projected reach-set vertices.
    pub hull: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingTable {
    pub gamma: f64,
    pub epsilon: f64,
    pub t_sc_bound: f64,
    pub t_sr: f64,
    pub t_uc: f64,
    pub t_r: f64,
    pub feasible: bool,
}

impl From<&CertificateReport> for TimingTable {
    fn from(c: &CertificateReport) -> Self {
        Self {
            gamma: c.gamma,
            epsilon: c.epsilon,
            t_sc_bound: c.t_sc_bound,
            t_sr: c.t_sr,
            t_uc: c.t_uc,
            t_r: c.t_r,
            feasible: c.feasible,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub scenario: String,
    pub ellipses: Vec<EllipseProjection>,
    pub reach: Vec<HullProjection>,
    pub timeline: Vec<ModeInterval>,
    pub timing: TimingTable,
}

/// Coordinate pairs worth looking at: position against velocity on the
/// quadrotor, neighbouring states otherwise.
pub fn default_projection_pairs(n: usize) -> Vec<[usize; 2]> {
    if n == crate::quadrotor::STATE_DIM {
        vec![[0, 6], [2, 8], [3, 9], [5, 11]]
    } else {
        (0..n.saturating_sub(1)).take(3).map(|i| [i, i + 1]).collect()
    }
}

/// Boundary of the projection of `{xᵀPx ≤ level}` onto `axes`, sampled at
/// `samples` angles. The projection has shape matrix `(Q_{axes})`, the
/// matching 2×2 block of `Q = P⁻¹`.
pub fn project_ellipsoid(q: &DMatrix<f64>, level: f64, axes: [usize; 2], samples: usize) -> Result<Vec<[f64; 2]>> {
    let [i, j] = axes;
    if i >= q.nrows() || j >= q.nrows() || i == j {
        return Err(dimension("export", "projection axes out of range"));
    }
    let block = Matrix2::new(q[(i, i)], q[(i, j)], q[(j, i)], q[(j, j)]);
    let l = block
        .cholesky()
        .ok_or_else(|| crate::Error::Numerical("projected shape matrix is not positive definite".into()))?
        .l();
    let r = level.sqrt();
    Ok((0..samples)
        .map(|k| {
            let th = std::f64::consts::TAU * k as f64 / samples as f64;
            let p = l * nalgebra::Vector2::new(th.cos(), th.sin()) * r;
            [p.x, p.y]
        })
        .collect())
}

/// Andrew's monotone chain; returns the hull counter-clockwise without the
/// closing point.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: &[f64; 2], a: &[f64; 2], b: &[f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for p in iter {
            while hull.len() >= start + 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    hull
}

pub fn plot_data(
    scn: &Scenario,
    sys: &System,
    cert: &CertificateReport,
    sim: Option<&SimulationOutcome>,
) -> Result<PlotData> {
    let q = cert.q_matrix();
    let p = cert.p_matrix();
    let pairs = default_projection_pairs(cert.n);
    let ellipses = pairs
        .iter()
        .map(|&axes| {
            Ok(EllipseProjection {
                axes,
                outer: project_ellipsoid(&q, 1.0, axes, 181)?,
                inner: project_ellipsoid(&q, cert.epsilon, axes, 181)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let normals = box_normals(&p, &sys.plant.a, &sys.plant.b, cert.normals)?;
    let init = bounding_polytope(&p, cert.epsilon, &normals)?;
    let u = cert.mc_polytope()?.translated(&-&sys.plant.u_e);
    let snap = reach_overapprox_at(&sys.plant.a, &sys.plant.b, &u, &init, cert.t_uc, scn.reach_options().quad_step())?;
    let reach = pairs
        .iter()
        .map(|&[i, j]| HullProjection {
            axes: [i, j],
            t: cert.t_uc,
            hull: convex_hull(&snap.vertices.iter().map(|v: &DVector<f64>| [v[i], v[j]]).collect::<Vec<_>>()),
        })
        .collect();

    Ok(PlotData {
        scenario: scn.name.clone(),
        ellipses,
        reach,
        timeline: sim.map(|s| s.summary.mode_intervals.clone()).unwrap_or_default(),
        timing: TimingTable::from(cert),
    })
}

/// One CSV per figure: ellipse and reach-hull outlines, the mode timeline
/// and the timing table.
pub fn write_plot_files(dir: &Path, data: &PlotData) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join("plot_ellipses.csv"))?;
    w.write_record(["axis_i", "axis_j", "set", "x", "y"])?;
    for e in &data.ellipses {
        for (set, pts) in [("safe", &e.outer), ("inner", &e.inner)] {
            for p in pts {
                w.write_record([e.axes[0].to_string(), e.axes[1].to_string(), set.into(), num(p[0]), num(p[1])])?;
            }
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("plot_reach.csv"))?;
    w.write_record(["axis_i", "axis_j", "t", "x", "y"])?;
    for h in &data.reach {
        for p in &h.hull {
            w.write_record([h.axes[0].to_string(), h.axes[1].to_string(), num(h.t), num(p[0]), num(p[1])])?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("plot_timeline.csv"))?;
    w.write_record(["mode", "start", "end", "attacked"])?;
    for i in &data.timeline {
        w.write_record([i.mode.to_string(), num(i.start), num(i.end), u8::from(i.attacked).to_string()])?;
    }
    w.flush()?;

    let t = &data.timing;
    let mut w = csv::Writer::from_path(dir.join("timing.csv"))?;
    w.write_record(["gamma", "epsilon", "t_sc_bound", "t_sr", "t_uc", "t_r", "feasible"])?;
    w.write_record([
        num(t.gamma),
        num(t.epsilon),
        num(t.t_sc_bound),
        num(t.t_sr),
        num(t.t_uc),
        num(t.t_r),
        t.feasible.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}
