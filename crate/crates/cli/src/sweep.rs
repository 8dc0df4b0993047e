//! Parameter sweeps: one run per axis value, merged into `sweep.csv`.

use std::path::Path;

use anyhow::Context;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::output::{csv_with_comment, num, SWEEP_FORMAT};
use crate::run::{run, RunReport};

pub const SWEEP_FILE: &str = "sweep.csv";

/// Outcome of one sweep point.
pub struct Point {
    pub value: String,
    pub exit_code: i32,
    pub report: Option<RunReport>,
    pub message: Option<String>,
}

const HEADER: [&str; 12] = [
    "value",
    "status",
    "exit_code",
    "t_end",
    "failure_time",
    "energy_drift",
    "max_compatibility_defect",
    "imbalance_onset",
    "t_neg",
    "t_neg_k",
    "max_trace_distance_1",
    "message",
];

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn row(p: &Point) -> Vec<String> {
    let message = p.message.clone().unwrap_or_default();
    match &p.report {
        Some(r) => {
            let t_neg: Vec<String> = r.representability.t_neg.iter().map(|(o, t)| format!("{o}:{}", num(*t))).collect();
            vec![
                p.value.clone(),
                serde_json::to_value(r.status).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
                p.exit_code.to_string(),
                num(r.t_end),
                opt(r.failure_time),
                num(r.summary.energy_drift),
                num(r.summary.max_compatibility_defect),
                opt(r.summary.imbalance_onset),
                t_neg.join(";"),
                opt(r.representability.t_neg_k),
                opt(r.summary.max_trace_distance.get(&1).copied()),
                message,
            ]
        }
        None => {
            let status = if p.exit_code == 2 { "config_error" } else { "error" };
            let mut v = vec![p.value.clone(), status.into(), p.exit_code.to_string()];
            v.extend(std::iter::repeat_n(String::new(), HEADER.len() - 4));
            v.push(message);
            v
        }
    }
}

fn point(text: &str, overrides: &[(String, String)], axis: &str, value: &str, out: &Path) -> Point {
    let mut all = overrides.to_vec();
    all.push((axis.to_string(), value.to_string()));
    let cfg = match RunConfig::from_toml(text, &all) {
        Ok(c) => c,
        Err(e) => return Point { value: value.into(), exit_code: 2, report: None, message: Some(e.to_string()) },
    };
    match run(&cfg, &out.join(format!("{axis}={value}"))) {
        Ok(r) => Point { value: value.into(), exit_code: r.exit_code, message: r.message.clone(), report: Some(r) },
        Err(e) => Point { value: value.into(), exit_code: 1, report: None, message: Some(format!("{e:#}")) },
    }
}

/// Runs every value of `axis` in parallel. Failed points are recorded in
/// the merged table rather than aborting the campaign.
pub fn sweep(
    text: &str,
    overrides: &[(String, String)],
    axis: &str,
    values: &[String],
    out: &Path,
    jobs: Option<usize>,
) -> anyhow::Result<Vec<Point>> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let work = || values.par_iter().map(|v| point(text, overrides, axis, v, out)).collect::<Vec<_>>();
    let points = match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(work),
        None => work(),
    };
    let mut w = csv_with_comment(&out.join(SWEEP_FILE), SWEEP_FORMAT)?;
    let mut header: Vec<String> = HEADER.iter().map(|s| s.to_string()).collect();
    header[0] = axis.to_string();
    w.write_record(&header)?;
    for p in &points {
        w.write_record(row(p))?;
    }
    w.flush()?;
    Ok(points)
}
