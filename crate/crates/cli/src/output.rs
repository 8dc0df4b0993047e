//! Per-sample metrics, CSV writers and the binary state checkpoint.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, Context};
use bbgky::bbgky::HierarchyState;
use bbgky::cluster::{closure, compute_clusters};
use bbgky::correction::{CorrectionStats, PurifyOutcome};
use bbgky::fock::dimension;
use bbgky::hamiltonian::{energy, ModelSpec};
use bbgky::operator::{trace_distance, trace_norm, BosonicOperator};
use bbgky::representability::{check, NegativityTracker};
use serde::Serialize;

/// Leading comment of the trajectory CSV; bump when columns change meaning.
/// Consumers must tolerate appended columns.
pub const TRAJECTORY_FORMAT: &str = "# bbgky-trajectory v1";
pub const CORRECTIONS_FORMAT: &str = "# bbgky-corrections v1";
pub const SWEEP_FORMAT: &str = "# bbgky-sweep v1";

/// `|imbalance| > 1 + IMBALANCE_SLACK` counts as unphysical.
pub const IMBALANCE_SLACK: f64 = 1e-9;

/// Opens a CSV file whose first line is a format comment.
pub fn csv_with_comment(path: &Path, comment: &str) -> anyhow::Result<csv::Writer<BufWriter<File>>> {
    let mut f = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(f, "{comment}")?;
    Ok(csv::Writer::from_writer(f))
}

/// Shortest round-trip form; switches to exponent notation for tiny values.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Running extremes over a trajectory.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Summary {
    pub samples: usize,
    pub t_last: f64,
    pub energy_initial: Option<f64>,
    /// `max |E(t) - E(0)| / max(|E(0)|, 1)`.
    pub energy_drift: f64,
    pub max_trace_defect: f64,
    pub max_compatibility_defect: f64,
    pub imbalance_initial: Option<f64>,
    pub imbalance_final: Option<f64>,
    /// First time `|imbalance| > 1`.
    pub imbalance_onset: Option<f64>,
    /// Smallest eigenvalue seen per order.
    pub min_eigenvalue: BTreeMap<usize, f64>,
    pub k_min: Option<f64>,
    /// Largest trace distance to the exact RDMs per order.
    pub max_trace_distance: BTreeMap<usize, f64>,
}

/// Column layout and per-sample metrics of a trajectory.
pub struct Trajectory {
    order: usize,
    m: usize,
    n: usize,
    compare: bool,
    writer: csv::Writer<BufWriter<File>>,
    pub summary: Summary,
    pub tracker: NegativityTracker,
}

impl Trajectory {
    pub fn create(path: &Path, spec: &ModelSpec, order: usize, compare: bool, epsilon: f64) -> anyhow::Result<Self> {
        let mut writer = csv_with_comment(path, TRAJECTORY_FORMAT)?;
        let m = spec.modes();
        let mut header = vec!["time".to_string(), "imbalance".into(), "energy".into()];
        header.extend((1..=order).map(|o| format!("trace_{o}")));
        header.extend((1..=order).map(|o| format!("min_eig_{o}")));
        header.push("k_min".into());
        for o in 1..=order {
            header.extend((1..=dimension(m, o)?).map(|r| format!("np_{o}_{r}")));
        }
        header.extend((1..=order).map(|o| format!("cluster_norm_{o}")));
        header.extend((1..order).map(|o| format!("compat_{o}")));
        header.push("steps".into());
        if compare {
            header.extend((1..=order).map(|o| format!("trace_distance_{o}")));
        }
        writer.write_record(&header)?;
        Ok(Self {
            order,
            m,
            n: spec.n_particles,
            compare,
            writer,
            summary: Summary::default(),
            tracker: NegativityTracker::new(epsilon),
        })
    }

    /// Writes one sample; `exact` holds the reference RDMs when comparing.
    pub fn record(
        &mut self,
        s: &HierarchyState,
        spec: &ModelSpec,
        steps: usize,
        exact: Option<&[BosonicOperator]>,
    ) -> anyhow::Result<()> {
        debug_assert_eq!(s.order(), self.order);
        debug_assert_eq!(s.modes(), self.m);
        let sm = &mut self.summary;
        let imbalance = spec.imbalance_of(s.rho(1));
        // At first order the energy follows from the closed 2-RDM.
        let e = if self.order >= 2 {
            energy(s.rho(1), s.rho(2), spec).ok()
        } else {
            closure(&s.rhos).ok().and_then(|r2| energy(s.rho(1), &r2, spec).ok())
        };
        let report = check(s, self.n, self.tracker.epsilon)?;
        self.tracker.update(&report);
        let traces = s.trace_defects();
        let compat = s.compatibility_defects()?;
        // Cluster extraction rejects incompatible families; such samples get empty cells.
        let norms: Vec<Option<f64>> = match compute_clusters(&s.rhos) {
            Ok(set) => (1..=self.order).map(|o| set.cluster(o).and_then(|c| trace_norm(c).ok())).collect(),
            Err(_) => vec![None; self.order],
        };

        let mut row = vec![num(s.time), opt(imbalance), opt(e)];
        row.extend(s.rhos.iter().map(|r| num(r.trace())));
        row.extend(report.min_eigs.iter().map(|&x| num(x)));
        row.push(opt(report.k_min));
        for r in &s.rhos {
            let eig = r.eig()?;
            row.extend(eig.values.iter().rev().map(|&x| num(x)));
        }
        row.extend(norms.iter().map(|&x| opt(x)));
        row.extend(compat.iter().map(|&x| num(x)));
        row.push(steps.to_string());
        if self.compare {
            let ex = exact.context("reference sample missing")?;
            for o in 1..=self.order {
                let d = trace_distance(s.rho(o), &ex[o - 1])?;
                row.push(num(d));
                let w = sm.max_trace_distance.entry(o).or_insert(0.0);
                *w = w.max(d);
            }
        }
        self.writer.write_record(&row)?;

        sm.samples += 1;
        sm.t_last = s.time;
        if let Some(e) = e {
            let e0 = *sm.energy_initial.get_or_insert(e);
            sm.energy_drift = sm.energy_drift.max((e - e0).abs() / e0.abs().max(1.0));
        }
        sm.max_trace_defect = traces.into_iter().fold(sm.max_trace_defect, f64::max);
        sm.max_compatibility_defect = compat.into_iter().fold(sm.max_compatibility_defect, f64::max);
        if let Some(x) = imbalance {
            sm.imbalance_initial.get_or_insert(x);
            sm.imbalance_final = Some(x);
            if x.abs() > 1.0 + IMBALANCE_SLACK && sm.imbalance_onset.is_none() {
                sm.imbalance_onset = Some(s.time);
            }
        }
        for (o, &x) in report.min_eigs.iter().enumerate() {
            let w = sm.min_eigenvalue.entry(o + 1).or_insert(x);
            *w = w.min(x);
        }
        if let Some(k) = report.k_min {
            sm.k_min = Some(sm.k_min.map_or(k, |w| w.min(k)));
        }
        Ok(())
    }

    pub fn finish(&mut self) -> anyhow::Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}

/// Contents of `representability.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RepresentabilitySummary {
    pub epsilon: f64,
    /// First time the smallest eigenvalue of each order fell below epsilon.
    pub t_neg: BTreeMap<usize, f64>,
    pub t_neg_k: Option<f64>,
    pub min_eigenvalue: BTreeMap<usize, f64>,
    pub k_min: Option<f64>,
}

impl RepresentabilitySummary {
    pub fn new(t: &Trajectory) -> Self {
        Self {
            epsilon: t.tracker.epsilon,
            t_neg: t.tracker.t_neg.clone(),
            t_neg_k: t.tracker.t_neg_k,
            min_eigenvalue: t.summary.min_eigenvalue.clone(),
            k_min: t.summary.k_min,
        }
    }
}

/// Activity of the representability corrections over a run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct CorrectionSummary {
    pub mode: String,
    /// Purify calls that found defects, or corrected right-hand-side evaluations.
    pub corrections: usize,
    pub max_iterations: usize,
    /// First time purification stopped at the iteration cap.
    pub first_cap_time: Option<f64>,
    pub not_converged: usize,
    pub no_solution: usize,
    pub max_d_defects: usize,
    pub max_k_defects: usize,
    pub max_norm: f64,
    pub max_residual: f64,
}

/// The correction log CSV and its summary.
pub struct CorrectionLog {
    writer: csv::Writer<BufWriter<File>>,
    pub summary: CorrectionSummary,
}

impl CorrectionLog {
    pub fn purify(path: &Path) -> anyhow::Result<Self> {
        let mut writer = csv_with_comment(path, &format!("{CORRECTIONS_FORMAT} purify"))?;
        writer.write_record([
            "time",
            "iterations",
            "converged",
            "no_solution",
            "d_defects",
            "k_defects",
            "norm",
            "max_residual",
            "higher_iterations",
        ])?;
        Ok(Self { writer, summary: CorrectionSummary { mode: "purify".into(), ..Default::default() } })
    }

    pub fn eom(path: &Path) -> anyhow::Result<Self> {
        let mut writer = csv_with_comment(path, &format!("{CORRECTIONS_FORMAT} eom"))?;
        writer.write_record([
            "time",
            "corrections",
            "infeasible",
            "max_d_defects",
            "max_k_defects",
            "max_norm",
            "max_residual",
            "higher_corrections",
        ])?;
        Ok(Self { writer, summary: CorrectionSummary { mode: "eom".into(), ..Default::default() } })
    }

    /// Logs a purification call that found defects, at `cap` iterations maximum.
    pub fn purified(&mut self, t: f64, o: &PurifyOutcome, cap: usize) -> anyhow::Result<()> {
        if o.initial_d_defects + o.initial_k_defects == 0 && o.higher_iterations == 0 {
            return Ok(());
        }
        self.writer.write_record([
            num(t),
            o.iterations.to_string(),
            o.converged.to_string(),
            o.no_solution.to_string(),
            o.initial_d_defects.to_string(),
            o.initial_k_defects.to_string(),
            num(o.norm),
            num(o.max_residual),
            o.higher_iterations.to_string(),
        ])?;
        let s = &mut self.summary;
        s.corrections += 1;
        s.max_iterations = s.max_iterations.max(o.iterations);
        if o.iterations >= cap && s.first_cap_time.is_none() {
            s.first_cap_time = Some(t);
        }
        s.not_converged += usize::from(!o.converged);
        s.no_solution += usize::from(o.no_solution);
        s.max_d_defects = s.max_d_defects.max(o.initial_d_defects);
        s.max_k_defects = s.max_k_defects.max(o.initial_k_defects);
        s.max_norm = s.max_norm.max(o.norm);
        s.max_residual = s.max_residual.max(o.max_residual);
        Ok(())
    }

    /// Logs the derivative corrections made since the previous sample.
    pub fn damped(&mut self, t: f64, c: &CorrectionStats) -> anyhow::Result<()> {
        if c.corrections + c.infeasible + c.higher_corrections == 0 {
            return Ok(());
        }
        self.writer.write_record([
            num(t),
            c.corrections.to_string(),
            c.infeasible.to_string(),
            c.max_d_defects.to_string(),
            c.max_k_defects.to_string(),
            num(c.max_norm),
            num(c.max_residual),
            c.higher_corrections.to_string(),
        ])?;
        let s = &mut self.summary;
        s.corrections += c.corrections;
        s.no_solution += c.infeasible;
        s.max_d_defects = s.max_d_defects.max(c.max_d_defects);
        s.max_k_defects = s.max_k_defects.max(c.max_k_defects);
        s.max_norm = s.max_norm.max(c.max_norm);
        s.max_residual = s.max_residual.max(c.max_residual);
        Ok(())
    }

    pub fn finish(&mut self) -> anyhow::Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}

/// Folds `b` into `a`: counts add, extremes combine.
pub fn merge_stats(a: &mut CorrectionStats, b: &CorrectionStats) {
    a.corrections += b.corrections;
    a.infeasible += b.infeasible;
    a.higher_corrections += b.higher_corrections;
    a.max_d_defects = a.max_d_defects.max(b.max_d_defects);
    a.max_k_defects = a.max_k_defects.max(b.max_k_defects);
    a.max_norm = a.max_norm.max(b.max_norm);
    a.max_residual = a.max_residual.max(b.max_residual);
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"BBGKYCK1";

/// Layout: magic, `N` (u64), time (f64), order (u64), then every RDM in the
/// operator binary format, all little-endian.
pub fn write_checkpoint(path: &Path, state: &HierarchyState, n_particles: usize) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(n_particles as u64).to_le_bytes())?;
    w.write_all(&state.time.to_le_bytes())?;
    w.write_all(&(state.order() as u64).to_le_bytes())?;
    for r in &state.rhos {
        r.write_binary(&mut w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> anyhow::Result<(HierarchyState, usize)> {
    let mut r = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        bail!("{} is not a state checkpoint", path.display());
    }
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    let n = u64::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let time = f64::from_le_bytes(word);
    r.read_exact(&mut word)?;
    let order = u64::from_le_bytes(word) as usize;
    let rhos = (0..order).map(|_| BosonicOperator::read_binary(&mut r)).collect::<Result<Vec<_>, _>>()?;
    Ok((HierarchyState::new(rhos, time)?, n))
}

/// Report printed by `check`.
#[derive(Debug, Clone, Serialize)]
pub struct StateReport {
    pub time: f64,
    pub n_particles: usize,
    pub order: usize,
    pub epsilon: f64,
    pub traces: Vec<f64>,
    pub min_eigenvalues: Vec<f64>,
    pub k_min: Option<f64>,
    pub k_trace: Option<f64>,
    pub compatibility_defects: Vec<f64>,
    pub d_violated: bool,
    pub k_violated: bool,
}

pub fn state_report(state: &HierarchyState, n: usize, epsilon: f64) -> anyhow::Result<StateReport> {
    let r = check(state, n, epsilon)?;
    Ok(StateReport {
        time: state.time,
        n_particles: n,
        order: state.order(),
        epsilon,
        traces: state.rhos.iter().map(|x| x.trace()).collect(),
        d_violated: r.d_violated(),
        k_violated: r.k_violated(),
        min_eigenvalues: r.min_eigs,
        k_min: r.k_min,
        k_trace: r.k_trace,
        compatibility_defects: state.compatibility_defects()?,
    })
}
