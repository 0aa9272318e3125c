//! Trace CSV, metrics JSON and plot script output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::metrics::RunMetrics;
use super::run::{RunOutput, TraceRow};
use super::HarnessError;

pub const COLUMNS: [&str; 22] = [
    "t", "x", "y", "psi", "vx", "vy", "wz", "beta", "delta", "sigma_fl", "sigma_fr", "sigma_rl", "sigma_rr", "torque_fl", "torque_fr",
    "torque_rl", "torque_rr", "e_x", "e_y", "e_psi", "s", "flags",
];

pub const TRACE_FILE: &str = "trace.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const PLOT_FILE: &str = "plot.py";

/// Shortest decimal that parses back to the same `f64`.
pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = COLUMNS.join(",");
    out.push('\n');
    for r in trace {
        let values = [r.t, r.x, r.y, r.psi, r.vx, r.vy, r.yaw_rate, r.beta, r.delta];
        for v in values.iter().chain(&r.sigma).chain(&r.torque).chain(&[r.e_x, r.e_y, r.e_psi, r.s]) {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(out, "{}", r.flags);
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<TraceRow>, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("missing header")?;
    if header.split(',').ne(COLUMNS.iter().copied()) {
        return Err(format!("unexpected header {header:?}"));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != COLUMNS.len() {
            return Err(format!("row {}: {} columns, expected {}", n + 1, fields.len(), COLUMNS.len()));
        }
        let mut v = [0.0; 21];
        for (slot, f) in v.iter_mut().zip(&fields) {
            *slot = f.parse().map_err(|e| format!("row {}: {f:?}: {e}", n + 1))?;
        }
        let flags = fields[21].parse().map_err(|e| format!("row {}: flags: {e}", n + 1))?;
        rows.push(TraceRow {
            t: v[0],
            x: v[1],
            y: v[2],
            psi: v[3],
            vx: v[4],
            vy: v[5],
            yaw_rate: v[6],
            beta: v[7],
            delta: v[8],
            sigma: [v[9], v[10], v[11], v[12]],
            torque: [v[13], v[14], v[15], v[16]],
            e_x: v[17],
            e_y: v[18],
            e_psi: v[19],
            s: v[20],
            flags,
        });
    }
    Ok(rows)
}

pub fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<(), HarnessError> {
    fs::write(path, trace_csv(trace)).map_err(|e| HarnessError::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_csv(&text).map_err(|m| HarnessError::parse(path, m))
}

pub fn write_metrics(path: &Path, metrics: &RunMetrics) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(metrics).expect("metrics serialize");
    fs::write(path, text + "\n").map_err(|e| HarnessError::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<RunMetrics, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::parse(path, e.to_string()))
}

/// Matplotlib script drawing path, lateral error, steering, side slip and
/// yaw rate from one or more traces.
pub fn plot_script(traces: &[&str]) -> String {
    let list = traces.iter().map(|t| format!("{t:?}")).collect::<Vec<_>>().join(", ");
    format!(
        r#"import sys
import pandas as pd
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

traces = sys.argv[1:] or [{list}]
fig, ax = plt.subplots(5, 1, figsize=(8, 14))
for path in traces:
    d = pd.read_csv(path)
    ax[0].plot(d.x, d.y, label=path)
    ax[1].plot(d.t, d.e_y)
    ax[2].plot(d.t, d.delta)
    ax[3].plot(d.t, d.beta)
    ax[4].plot(d.t, d.wz)
for a, (xl, yl) in zip(ax, [("x [m]", "y [m]"), ("t [s]", "e_y [m]"), ("t [s]", "delta [rad]"), ("t [s]", "beta [rad]"), ("t [s]", "yaw rate [rad/s]")]):
    a.set_xlabel(xl)
    a.set_ylabel(yl)
    a.grid(True)
ax[0].legend()
fig.tight_layout()
fig.savefig("tracking.png", dpi=120)
"#
    )
}

/// Writes trace, metrics and plot script into `dir`, creating it if needed.
pub fn emit_run(dir: &Path, output: &RunOutput) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let trace = dir.join(TRACE_FILE);
    let metrics = dir.join(METRICS_FILE);
    let plot = dir.join(PLOT_FILE);
    write_trace(&trace, &output.trace)?;
    write_metrics(&metrics, &output.metrics)?;
    fs::write(&plot, plot_script(&[TRACE_FILE])).map_err(|e| HarnessError::io(&plot, e))?;
    Ok(vec![trace, metrics, plot])
}
