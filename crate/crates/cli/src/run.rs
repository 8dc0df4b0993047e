//! Run orchestration for the `run` and `exact` subcommands.

use std::cell::RefCell;
use std::collections::HashMap;
use std::path::Path;
use std::rc::Rc;
use std::time::Instant;

use anyhow::Context;
use bbgky::bbgky::{HierarchyState, Observer, Packing, Propagator, RhsHook};
use bbgky::correction::{purify, ConstraintBasis, CorrectionStats, EomCorrector};
use bbgky::hamiltonian::ModelSpec;
use bbgky::numerics::{IntegrationStats, IntegratorOptions, OutputAction};
use bbgky::operator::BosonicOperator;
use bbgky::oracle::{exact_propagate, extract_rdm};
use bbgky::Error;
use serde::Serialize;

use crate::config::{CorrectionMode, RunConfig};
use crate::output::{
    merge_stats, write_checkpoint, CorrectionLog, CorrectionSummary, RepresentabilitySummary, Summary, Trajectory,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Completed,
    /// The integrator gave up, typically deep inside an instability.
    Instability,
    /// The correction constraints had no solution even at the smallest step.
    CorrectionFailure,
    Error,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Completed => 0,
            Status::Error => 1,
            Status::Instability => 3,
            Status::CorrectionFailure => 4,
        }
    }

    fn of(e: &Error) -> Self {
        match e {
            Error::NoSolution { .. } => Status::CorrectionFailure,
            Error::Io(_) => Status::Error,
            _ => Status::Instability,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct IntegratorSummary {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

impl From<IntegrationStats> for IntegratorSummary {
    fn from(s: IntegrationStats) -> Self {
        Self { accepted: s.accepted, rejected: s.rejected, rhs_evals: s.rhs_evals }
    }
}

/// Contents of `metadata.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub format: &'static str,
    pub command: &'static str,
    pub version: &'static str,
    pub status: Status,
    pub exit_code: i32,
    pub message: Option<String>,
    pub t_end: f64,
    pub failure_time: Option<f64>,
    pub wall_time_seconds: f64,
    pub integrator: Option<IntegratorSummary>,
    pub summary: Summary,
    pub representability: RepresentabilitySummary,
    pub corrections: Option<CorrectionSummary>,
    /// The resolved configuration; re-running it reproduces the outputs.
    pub config: RunConfig,
}

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const REPRESENTABILITY_FILE: &str = "representability.json";
pub const CORRECTIONS_FILE: &str = "corrections.csv";
pub const METADATA_FILE: &str = "metadata.json";
pub const CHECKPOINT_FILE: &str = "final_state.bin";

/// Exact RDM families on the write-out grid, keyed by the sample time.
type ExactSamples = HashMap<u64, Vec<BosonicOperator>>;

fn exact_samples(cfg: &RunConfig, spec: &ModelSpec) -> anyhow::Result<ExactSamples> {
    let a0 = cfg.initial_wavefunction()?;
    let order = cfg.truncation_order;
    let mut out = HashMap::new();
    // The step budget limits the truncated run only.
    let opts = IntegratorOptions { max_steps: None, ..cfg.integrator_options() };
    exact_propagate(spec, &a0, cfg.t_final, &opts, |a, _| {
        let rhos = (1..=order).map(|o| extract_rdm(a, o)).collect::<bbgky::Result<Vec<_>>>()?;
        out.insert(a.time.to_bits(), rhos);
        Ok(true)
    })
    .context("exact reference propagation")?;
    Ok(out)
}

/// Derivative correction whose statistics stay readable by the observer.
struct SharedEom {
    inner: EomCorrector,
    stats: Rc<RefCell<CorrectionStats>>,
}

impl RhsHook for SharedEom {
    fn apply(&mut self, _t: f64, rhos: &[BosonicOperator], derivs: &mut [BosonicOperator]) -> bbgky::Result<()> {
        let r = self.inner.correct(rhos, derivs);
        merge_stats(&mut self.stats.borrow_mut(), &self.inner.take_stats());
        r
    }
}

struct RunObserver<'a> {
    spec: &'a ModelSpec,
    trajectory: Trajectory,
    corrections: Option<CorrectionLog>,
    purify: Option<(ConstraintBasis, f64, usize)>,
    eom_stats: Option<Rc<RefCell<CorrectionStats>>>,
    exact: Option<ExactSamples>,
    last: Option<HierarchyState>,
    /// Output failures are kept here so that the run can still be finalized.
    failure: Option<anyhow::Error>,
}

impl RunObserver<'_> {
    fn sample(&mut self, s: &mut HierarchyState, steps: usize) -> anyhow::Result<OutputAction> {
        let mut action = OutputAction::Continue;
        if let Some((basis, eps, cap)) = &self.purify {
            let o = purify(s, basis, *eps, *cap)?;
            if let Some(log) = &mut self.corrections {
                log.purified(s.time, &o, *cap)?;
            }
            if o.iterations > 0 || o.higher_iterations > 0 {
                action = OutputAction::Modified;
            }
        }
        if let Some(stats) = &self.eom_stats {
            let c = std::mem::take(&mut *stats.borrow_mut());
            if let Some(log) = &mut self.corrections {
                log.damped(s.time, &c)?;
            }
        }
        let exact = match &self.exact {
            Some(map) => Some(
                map.get(&s.time.to_bits())
                    .with_context(|| format!("no reference sample at t = {}", s.time))?
                    .as_slice(),
            ),
            None => None,
        };
        self.trajectory.record(s, self.spec, steps, exact)?;
        self.last = Some(s.clone());
        Ok(action)
    }
}

impl Observer for RunObserver<'_> {
    fn output(&mut self, s: &mut HierarchyState, steps: usize) -> bbgky::Result<OutputAction> {
        match self.sample(s, steps) {
            Ok(a) => Ok(a),
            Err(e) => {
                let t = s.time;
                self.failure = Some(e);
                Err(Error::InvalidArgument(format!("output failed at t = {t}")))
            }
        }
    }
}

fn failure_time(e: &Error, last: f64) -> f64 {
    match e {
        Error::StepUnderflow { t, .. } | Error::NonFinite { t } => *t,
        _ => last,
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Propagates the truncated hierarchy and writes every artifact into `dir`.
pub fn run(cfg: &RunConfig, dir: &Path) -> anyhow::Result<RunReport> {
    let start = Instant::now();
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let spec = cfg.model_spec()?;
    let s0 = cfg.initial_state()?;
    let order = cfg.truncation_order;
    let mode = cfg.correction.mode;
    let exact = if cfg.compare_to_exact { Some(exact_samples(cfg, &spec)?) } else { None };

    let packing = if mode == CorrectionMode::None { Packing::TopOnly } else { Packing::AllOrders };
    let prop = Propagator::new(&spec, order, packing)?;
    let trajectory = Trajectory::create(&dir.join(TRAJECTORY_FILE), &spec, order, exact.is_some(), cfg.correction.epsilon)?;
    let corrections = match mode {
        CorrectionMode::None => None,
        CorrectionMode::Purify => Some(CorrectionLog::purify(&dir.join(CORRECTIONS_FILE))?),
        CorrectionMode::Eom => Some(CorrectionLog::eom(&dir.join(CORRECTIONS_FILE))?),
    };
    let mut obs = RunObserver {
        spec: &spec,
        trajectory,
        corrections,
        purify: None,
        eom_stats: None,
        exact,
        last: None,
        failure: None,
    };
    let mut hook = None;
    match mode {
        CorrectionMode::None => {}
        CorrectionMode::Purify => {
            obs.purify = Some((ConstraintBasis::new(&spec)?, cfg.correction.epsilon, cfg.correction.max_iter));
        }
        CorrectionMode::Eom => {
            let stats = Rc::new(RefCell::new(CorrectionStats::default()));
            obs.eom_stats = Some(stats.clone());
            hook = Some(SharedEom { inner: EomCorrector::new(&spec, cfg.correction.epsilon, cfg.correction.eta)?, stats });
        }
    }

    let result = prop.propagate(&s0, cfg.t_final, &cfg.integrator_options(), &mut obs, hook.as_mut().map(|h| h as &mut dyn RhsHook));
    if let Some(e) = obs.failure.take() {
        return Err(e);
    }
    obs.trajectory.finish()?;
    if let Some(log) = &mut obs.corrections {
        log.finish()?;
    }

    let last_time = obs.last.as_ref().map_or(s0.time, |s| s.time);
    let (status, message, failure, integrator, t_end) = match &result {
        Ok(stats) => (Status::Completed, None, None, Some((*stats).into()), stats.t_end),
        Err(e) => (Status::of(e), Some(e.to_string()), Some(failure_time(e, last_time)), None, last_time),
    };
    if cfg.output.checkpoint {
        if let Some(s) = &obs.last {
            write_checkpoint(&dir.join(CHECKPOINT_FILE), s, spec.n_particles)?;
        }
    }
    let representability = RepresentabilitySummary::new(&obs.trajectory);
    write_json(&dir.join(REPRESENTABILITY_FILE), &representability)?;
    let report = RunReport {
        format: "bbgky-run-metadata v1",
        command: "run",
        version: env!("CARGO_PKG_VERSION"),
        status,
        exit_code: status.exit_code(),
        message,
        t_end,
        failure_time: failure,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        integrator,
        summary: obs.trajectory.summary.clone(),
        representability,
        corrections: obs.corrections.as_ref().map(|c| c.summary.clone()),
        config: cfg.clone(),
    };
    write_json(&dir.join(METADATA_FILE), &report)?;
    Ok(report)
}

/// Propagates the full wavefunction and writes its RDMs in the trajectory schema.
pub fn exact(cfg: &RunConfig, dir: &Path) -> anyhow::Result<RunReport> {
    let start = Instant::now();
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let spec = cfg.model_spec()?;
    let a0 = cfg.initial_wavefunction()?;
    let order = cfg.truncation_order;
    let mut traj = Trajectory::create(&dir.join(TRAJECTORY_FILE), &spec, order, false, cfg.correction.epsilon)?;
    let mut last = None;
    let mut failure = None;
    let result = exact_propagate(&spec, &a0, cfg.t_final, &cfg.integrator_options(), |a, steps| {
        let s = HierarchyState::from_ci(a, order)?;
        if let Err(e) = traj.record(&s, &spec, steps, None) {
            failure = Some(e);
            return Ok(false);
        }
        last = Some(s);
        Ok(true)
    });
    if let Some(e) = failure {
        return Err(e);
    }
    traj.finish()?;
    let last_time = last.as_ref().map_or(a0.time, |s: &HierarchyState| s.time);
    let (status, message, failure_time, integrator, t_end) = match &result {
        Ok(stats) => (Status::Completed, None, None, Some((*stats).into()), stats.t_end),
        Err(e) => (Status::of(e), Some(e.to_string()), Some(self::failure_time(e, last_time)), None, last_time),
    };
    if cfg.output.checkpoint {
        if let Some(s) = &last {
            write_checkpoint(&dir.join(CHECKPOINT_FILE), s, spec.n_particles)?;
        }
    }
    let representability = RepresentabilitySummary::new(&traj);
    write_json(&dir.join(REPRESENTABILITY_FILE), &representability)?;
    let report = RunReport {
        format: "bbgky-run-metadata v1",
        command: "exact",
        version: env!("CARGO_PKG_VERSION"),
        status,
        exit_code: status.exit_code(),
        message,
        t_end,
        failure_time,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        integrator,
        summary: traj.summary.clone(),
        representability,
        corrections: None,
        config: cfg.clone(),
    };
    write_json(&dir.join(METADATA_FILE), &report)?;
    Ok(report)
}
