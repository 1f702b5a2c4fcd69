use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::rod::{strains, Grid, RodState};

use super::sim::{MetricsRecord, RunOutput, Snapshot};

pub const METRICS_HEADER: &str = "t,ep_sup,ev_sup,eR_sup,ew_sup,eps_p,eps_R,eps_v,eps_w,V_sup";

pub const SNAPSHOT_HEADER: &str = "s,p_x,p_y,p_z,R_11,R_12,R_13,R_21,R_22,R_23,R_31,R_32,R_33,v_x,v_y,v_z,w_x,w_y,w_z,q_x,q_y,q_z,u_x,u_y,u_z";

fn num(x: f64) -> String {
    format!("{x:.12e}")
}

pub fn format_metrics(records: &[MetricsRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        let est = r.estimation.map_or([f64::NAN; 4], |e| e);
        let cols: Vec<String> = [r.t]
            .iter()
            .chain(&r.tracking)
            .chain(&est)
            .chain(std::iter::once(&r.v_sup))
            .map(|x| num(*x))
            .collect();
        out.push_str(&cols.join(","));
        out.push('\n');
    }
    out
}

/// One row per node. Strains are recovered from the snapshot itself; when
/// that fails (a corrupted state) the strain columns are `nan`.
pub fn format_snapshot(state: &RodState, grid: &Grid) -> String {
    let (q, u) = strains(state, grid).unwrap_or_else(|_| {
        let nan = vec![crate::geometry::Vec3::repeat(f64::NAN); state.n_nodes()];
        (nan.clone(), nan)
    });
    let mut out = String::from(SNAPSHOT_HEADER);
    out.push('\n');
    for i in 0..state.n_nodes() {
        let m = state.r[i].matrix();
        let mut cols = vec![grid.s_values()[i]];
        cols.extend(state.p[i].iter());
        for row in 0..3 {
            for col in 0..3 {
                cols.push(m[(row, col)]);
            }
        }
        cols.extend(state.v[i].iter());
        cols.extend(state.omega[i].iter());
        cols.extend(q[i].iter());
        cols.extend(u[i].iter());
        let line: Vec<String> = cols.into_iter().map(num).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

fn write(path: &Path, contents: &str) -> Result<PathBuf> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

fn snapshot_name(s: &Snapshot) -> String {
    format!("{}_{:09}.csv", s.kind.as_str(), s.step)
}

/// Human-readable summary of a run.
pub fn format_report(out: &RunOutput) -> String {
    let mut r = String::new();
    let _ = writeln!(r, "status: {}", match &out.failure {
        None => "completed".to_string(),
        Some(e) => format!("failed ({e})"),
    });
    let _ = writeln!(r, "steps: {} of {}", out.steps_completed, out.config.n_steps());
    let _ = writeln!(r, "cfl: dt = {:e}, bound = {:.6e}, passes = {}", out.cfl.dt, out.cfl.dt_max, out.cfl.passes);
    let _ = writeln!(
        r,
        "initial conditions: hold = {}, attitude margin = {:.6e}, rate margin = {:.6e}",
        out.feasibility.all_hold(),
        out.feasibility.min_attitude_margin(),
        out.feasibility.min_rate_margin()
    );
    let _ = writeln!(
        r,
        "lyapunov: {} increases in {} checks (worst {:.3e})",
        out.lyapunov.increases, out.lyapunov.checks, out.lyapunov.worst_increase
    );
    if let (Some(first), Some(last)) = (out.records.first(), out.records.last()) {
        let _ = writeln!(r, "tracking sup-norms at t = {:.4}: {}", first.t, join(&first.tracking));
        let _ = writeln!(r, "tracking sup-norms at t = {:.4}: {}", last.t, join(&last.tracking));
        let peak = out.records.iter().filter_map(|x| x.estimation).fold([0.0f64; 4], |mut acc, e| {
            for k in 0..4 {
                acc[k] = acc[k].max(e[k]);
            }
            acc
        });
        if out.config.estimator {
            let _ = writeln!(r, "peak estimation sup-norms: {}", join(&peak));
        }
    }
    r
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.6e}")).collect::<Vec<_>>().join(" ")
}

/// Writes `metrics.csv`, `config.txt`, `report.txt` and one CSV per
/// snapshot (plus `snapshots.csv` as an index) into `dir`.
pub fn emit_csv(out: &RunOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let grid = out.config.grid()?;
    let mut written = vec![
        write(&dir.join("metrics.csv"), &format_metrics(&out.records))?,
        write(&dir.join("config.txt"), &out.config.to_text())?,
    ];
    let mut index = String::from("step,t,kind,file\n");
    for s in &out.snapshots {
        let name = snapshot_name(s);
        let _ = writeln!(index, "{},{},{},{}", s.step, num(s.t), s.kind.as_str(), name);
        written.push(write(&dir.join(&name), &format_snapshot(&s.state, &grid))?);
    }
    written.push(write(&dir.join("snapshots.csv"), &index)?);
    written.push(write(&dir.join("report.txt"), &format_report(out))?);
    Ok(written)
}
