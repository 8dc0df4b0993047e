//! Dormand–Prince 5(4) with PI step-size control and dense output.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step; chosen automatically when `None`.
    pub h0: Option<f64>,
    pub h_min: f64,
    pub h_max: Option<f64>,
    /// Write-out interval.
    pub output_dt: f64,
    pub max_steps: Option<usize>,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self { rtol: 1e-8, atol: 1e-10, h0: None, h_min: 1e-12, h_max: None, output_dt: 0.1, max_steps: None }
    }
}

impl IntegratorOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rtol > 0.0
            && self.atol > 0.0
            && self.h_min > 0.0
            && self.output_dt > 0.0
            && self.h0.is_none_or(|h| h > 0.0)
            && self.h_max.is_none_or(|h| h > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid integrator options {self:?}")))
        }
    }
}

/// What the caller wants after an output sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputAction {
    Continue,
    /// The state slice was changed; integration restarts from it.
    Modified,
    Stop,
}

/// Callbacks invoked by [`integrate`].
pub trait StepHooks {
    /// Called after every accepted step with the new state.
    fn accepted(&mut self, _t: f64, _y: &[f64]) -> Result<()> {
        Ok(())
    }

    /// Called at every point of the write-out grid, including the initial
    /// and final time. `steps` counts accepted steps since the last output.
    fn output(&mut self, t: f64, y: &mut [f64], steps: usize) -> Result<OutputAction>;
}

/// Collects every output sample.
#[derive(Debug, Default, Clone)]
pub struct Recorder {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub steps: Vec<usize>,
}

impl StepHooks for Recorder {
    fn output(&mut self, t: f64, y: &mut [f64], steps: usize) -> Result<OutputAction> {
        self.times.push(t);
        self.states.push(y.to_vec());
        self.steps.push(steps);
        Ok(OutputAction::Continue)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IntegrationStats {
    pub t_end: f64,
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    pub stopped: bool,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

/// Integrates `y' = f(t, y)` from `t0` to `t_final`.
///
/// The state is written out on the grid `t0 + k * output_dt` (plus
/// `t_final`) through `hooks`. A hook that modifies the state restarts the
/// integration from the modified state at the output time.
pub fn integrate<F, H>(
    mut f: F,
    t0: f64,
    y0: &[f64],
    t_final: f64,
    opts: &IntegratorOptions,
    hooks: &mut H,
) -> Result<IntegrationStats>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    H: StepHooks + ?Sized,
{
    opts.validate()?;
    let n = y0.len();
    let mut stats = IntegrationStats { t_end: t0, ..Default::default() };
    let mut y = y0.to_vec();
    let mut t = t0;

    let mut out_k: u64 = 0;
    let out_time = |k: u64| {
        let x = t0 + k as f64 * opts.output_dt;
        if x >= t_final - 1e-9 * opts.output_dt {
            t_final
        } else {
            x
        }
    };
    let mut steps_since = 0usize;

    if hooks.output(t, &mut y, 0)? == OutputAction::Stop {
        stats.stopped = true;
        return Ok(stats);
    }
    out_k += 1;
    if t_final <= t0 {
        return Ok(stats);
    }

    let h_max = opts.h_max.unwrap_or(t_final - t0).min(t_final - t0);
    let mut k1 = vec![0.0; n];
    f(t, &y, &mut k1)?;
    stats.rhs_evals += 1;
    check_finite(t, &k1)?;

    let mut h = match opts.h0 {
        Some(h) => h.min(h_max),
        None => {
            stats.rhs_evals += 1;
            match initial_step(&mut f, t, &y, &k1, opts, h_max) {
                Err(e) if e.is_recoverable() => (1e-6 * h_max).max(10.0 * opts.h_min),
                r => r?,
            }
        }
    };

    let (mut k2, mut k3, mut k4, mut k5, mut k6, mut k7) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut ys = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut err_vec = vec![0.0; n];
    let mut rcont = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut fac_old: f64 = 1e-4;
    let mut last_rejected = false;

    while t < t_final {
        if let Some(max) = opts.max_steps {
            if stats.accepted >= max {
                return Err(Error::StepUnderflow { t, h });
            }
        }
        if h < opts.h_min || t + h == t {
            return Err(Error::StepUnderflow { t, h });
        }
        let last = t + 1.0001 * h >= t_final;
        if last {
            h = t_final - t;
        }

        let t_new = if last { t_final } else { t + h };
        let stages = (|| -> Result<()> {
            for i in 0..n {
                ys[i] = y[i] + h * A21 * k1[i];
            }
            f(t + C2 * h, &ys, &mut k2)?;
            for i in 0..n {
                ys[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
            }
            f(t + C3 * h, &ys, &mut k3)?;
            for i in 0..n {
                ys[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            f(t + C4 * h, &ys, &mut k4)?;
            for i in 0..n {
                ys[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            f(t + C5 * h, &ys, &mut k5)?;
            for i in 0..n {
                ys[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
                        f(t_new, &ys, &mut k6)?;
            for i in 0..n {
                y_new[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
            }
            f(t_new, &y_new, &mut k7)?;
            Ok(())
        })();
        stats.rhs_evals += 6;
        if let Err(e) = stages {
            // A recoverable failure inside the right-hand side rejects the step.
            if !e.is_recoverable() {
                return Err(e);
            }
            stats.rejected += 1;
            h *= FAC_MIN;
            last_rejected = true;
            if h < opts.h_min {
                return Err(e);
            }
            continue;
        }

        let mut err = 0.0;
        for i in 0..n {
            err_vec[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sk = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
            err += (err_vec[i] / sk).powi(2);
        }
        let err = (err / n.max(1) as f64).sqrt();

        if !err.is_finite() {
            stats.rejected += 1;
            h *= FAC_MIN;
            last_rejected = true;
            continue;
        }

        let fac11 = err.powf(0.2 - BETA * 0.75);
        if err <= 1.0 {
            // dense output coefficients
            for i in 0..n {
                let ydiff = y_new[i] - y[i];
                let bspl = h * k1[i] - ydiff;
                rcont[0][i] = y[i];
                rcont[1][i] = ydiff;
                rcont[2][i] = bspl;
                rcont[3][i] = ydiff - h * k7[i] - bspl;
                rcont[4][i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
            }
            let t_old = t;
            let h_used = h;
            t = t_new;
            std::mem::swap(&mut y, &mut y_new);
            std::mem::swap(&mut k1, &mut k7);
            stats.accepted += 1;
            steps_since += 1;
            stats.t_end = t;
            hooks.accepted(t, &y)?;

            let mut fac = fac11 / fac_old.powf(BETA);
            fac = (fac / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            let mut h_next = h_used / fac;
            if last_rejected {
                h_next = h_next.min(h_used);
            }
            fac_old = err.max(1e-4);
            last_rejected = false;
            h = h_next.min(h_max);

            // write-out points inside (t_old, t]
            let mut restarted = false;
            while out_k < u64::MAX {
                let to = out_time(out_k);
                if to > t {
                    break;
                }
                let mut yo = if to == t {
                    y.clone()
                } else {
                    let theta = (to - t_old) / h_used;
                    let theta1 = 1.0 - theta;
                    (0..n)
                        .map(|i| {
                            rcont[0][i]
                                + theta
                                    * (rcont[1][i]
                                        + theta1 * (rcont[2][i] + theta * (rcont[3][i] + theta1 * rcont[4][i])))
                        })
                        .collect()
                };
                out_k = if to >= t_final { u64::MAX } else { out_k + 1 };
                let action = hooks.output(to, &mut yo, steps_since)?;
                steps_since = 0;
                match action {
                    OutputAction::Continue => {}
                    OutputAction::Stop => {
                        stats.stopped = true;
                        stats.t_end = to;
                        return Ok(stats);
                    }
                    OutputAction::Modified => {
                        check_finite(to, &yo)?;
                        t = to;
                        y = yo;
                        f(t, &y, &mut k1)?;
                        stats.rhs_evals += 1;
                        stats.t_end = t;
                        restarted = true;
                        break;
                    }
                }
            }
            if restarted {
                continue;
            }
        } else {
            stats.rejected += 1;
            h /= (fac11 / SAFETY).min(1.0 / FAC_MIN);
            last_rejected = true;
        }
    }
    Ok(stats)
}

fn check_finite(t: f64, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { t })
    }
}

fn initial_step<F>(f: &mut F, t: f64, y: &[f64], f0: &[f64], opts: &IntegratorOptions, h_max: f64) -> Result<f64>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let n = y.len();
    let sk: Vec<f64> = y.iter().map(|v| opts.atol + opts.rtol * v.abs()).collect();
    let dnf: f64 = f0.iter().zip(&sk).map(|(v, s)| (v / s).powi(2)).sum();
    let dny: f64 = y.iter().zip(&sk).map(|(v, s)| (v / s).powi(2)).sum();
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 { 1e-6 } else { (dny / dnf).sqrt() * 0.01 };
    h = h.min(h_max);
    let y1: Vec<f64> = (0..n).map(|i| y[i] + h * f0[i]).collect();
    let mut f1 = vec![0.0; n];
    f(t + h, &y1, &mut f1)?;
    let der2: f64 = (0..n).map(|i| ((f1[i] - f0[i]) / sk[i]).powi(2)).sum::<f64>().sqrt() / h;
    let der12 = der2.abs().max(dnf.sqrt());
    let h1 = if der12 <= 1e-15 { (h * 1e-3).max(1e-6) } else { (0.01 / der12).powf(0.2) };
    Ok((100.0 * h).min(h1).min(h_max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let opts = IntegratorOptions { output_dt: 0.25, ..Default::default() };
        let mut rec = Recorder::default();
        integrate(
            |_, y, dy| {
                dy[0] = -y[0];
                Ok(())
            },
            0.0,
            &[1.0],
            1.0,
            &opts,
            &mut rec,
        )
        .unwrap();
        assert_eq!(rec.times, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        for (t, y) in rec.times.iter().zip(&rec.states) {
            assert!((y[0] - (-t).exp()).abs() < 10.0 * opts.rtol, "t={t}");
        }
    }

    #[test]
    fn oscillator_energy() {
        let opts = IntegratorOptions { rtol: 1e-10, atol: 1e-12, output_dt: 1.0, ..Default::default() };
        let mut rec = Recorder::default();
        let tf = 100.0 * 2.0 * std::f64::consts::PI;
        integrate(
            |_, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
                Ok(())
            },
            0.0,
            &[1.0, 0.0],
            tf,
            &opts,
            &mut rec,
        )
        .unwrap();
        for y in &rec.states {
            let e = 0.5 * (y[0] * y[0] + y[1] * y[1]);
            assert!((e - 0.5).abs() < 1e-6);
        }
        assert_eq!(*rec.times.last().unwrap(), tf);
    }

    #[test]
    fn dense_output_accuracy() {
        let opts = IntegratorOptions { rtol: 1e-10, atol: 1e-12, output_dt: 0.01, ..Default::default() };
        let mut rec = Recorder::default();
        integrate(
            |t, _, dy| {
                dy[0] = t.cos();
                Ok(())
            },
            0.0,
            &[0.0],
            3.0,
            &opts,
            &mut rec,
        )
        .unwrap();
        for (t, y) in rec.times.iter().zip(&rec.states) {
            assert!((y[0] - t.sin()).abs() < 1e-8);
        }
    }

    struct Kick;
    impl StepHooks for Kick {
        fn output(&mut self, t: f64, y: &mut [f64], _: usize) -> Result<OutputAction> {
            if (t - 0.5).abs() < 1e-12 {
                y[0] = 10.0;
                Ok(OutputAction::Modified)
            } else {
                Ok(OutputAction::Continue)
            }
        }
    }

    #[test]
    fn modified_output_restarts() {
        let opts = IntegratorOptions { output_dt: 0.5, ..Default::default() };
        let mut y_end = 0.0;
        let mut k = Kick;
        integrate(
            |_, _, dy| {
                dy[0] = 1.0;
                Ok(())
            },
            0.0,
            &[0.0],
            1.0,
            &opts,
            &mut k,
        )
        .unwrap();
        struct Last<'a>(&'a mut f64, Kick);
        impl StepHooks for Last<'_> {
            fn output(&mut self, t: f64, y: &mut [f64], s: usize) -> Result<OutputAction> {
                *self.0 = y[0];
                self.1.output(t, y, s)
            }
        }
        let mut l = Last(&mut y_end, Kick);
        integrate(
            |_, _, dy| {
                dy[0] = 1.0;
                Ok(())
            },
            0.0,
            &[0.0],
            1.0,
            &opts,
            &mut l,
        )
        .unwrap();
        assert!((y_end - 10.5).abs() < 1e-12);
    }

    #[test]
    fn underflow_reported() {
        let opts = IntegratorOptions { h_min: 1e-3, ..Default::default() };
        let mut rec = Recorder::default();
        // finite-time blow-up at t = 1
        let r = integrate(
            |_, y, dy| {
                dy[0] = y[0] * y[0];
                Ok(())
            },
            0.0,
            &[1.0],
            2.0,
            &opts,
            &mut rec,
        );
        match r {
            Err(Error::StepUnderflow { t, .. }) | Err(Error::NonFinite { t }) => assert!(t > 0.9 && t < 1.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn recoverable_failure_rejects_step() {
        let opts = IntegratorOptions { output_dt: 1.0, h0: Some(0.5), ..Default::default() };
        let mut rec = Recorder::default();
        // stage states far from the solution fail, as an infeasible correction would
        let r = integrate(
            |t, y, dy| {
                if (y[0] - (-t).exp()).abs() > 1e-3 {
                    return Err(Error::NoSolution { residual: 1.0, bnorm: 1.0 });
                }
                dy[0] = -y[0];
                Ok(())
            },
            0.0,
            &[1.0],
            1.0,
            &opts,
            &mut rec,
        )
        .unwrap();
        assert!(r.rejected > 0);
        assert!((rec.states.last().unwrap()[0] - (-1.0f64).exp()).abs() < 1e-7);
    }

    #[test]
    fn unrecoverable_failure_propagates() {
        let opts = IntegratorOptions::default();
        let r = integrate(
            |t, _, dy| {
                if t > 0.5 {
                    return Err(Error::Singular("test"));
                }
                dy[0] = 1.0;
                Ok(())
            },
            0.0,
            &[0.0],
            1.0,
            &opts,
            &mut Recorder::default(),
        );
        assert!(matches!(r, Err(Error::Singular(_))));
    }
}
