//! Minimal-norm corrections restoring the D- and K-conditions of the 2-RDM.
//!
//! A Hermitian two-body correction `C_2` is parametrized by the real vector
//! `c = (Re C_IJ for I <= J, Im C_IJ for I < J)` over the order-2 number
//! states. Every requirement is a linear row `a . c = b`; the correction is
//! the least-norm solution. Rows always keep `tr_1 C_2 = 0` and the energy
//! fixed, and optionally the symmetry sectors.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::bbgky::{HierarchyState, RhsHook};
use crate::error::{Error, Result};
use crate::fock::{dimension, ComposeTable, FockBasis};
use crate::hamiltonian::{interaction_operator, Gauge, ModelSpec};
use crate::numerics::{solve_dual, solve_linear, EigResult};
use crate::operator::{all_traces, reducible_from_traces, uid_split, BosonicOperator};
use crate::representability::{delta2, k_derivative, k_matrix, KMatrix};

/// Relative spectral cutoff of the dual solve.
pub const DUAL_CUTOFF: f64 = 1e-12;
/// Relative residual above which a system counts as contradictory.
pub const FEASIBILITY_TOL: f64 = 1e-6;
/// Iteration cap of the purification.
pub const DEFAULT_MAX_ITER: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CorrectionMode {
    /// Shift negative eigenvalues to zero after a step.
    Purify,
    /// Damp negative eigenvalues as `exp(-eta t)` inside the derivative.
    Eom { eta: f64 },
}

/// Number of real parameters of a Hermitian two-body operator.
pub fn param_len(m: usize) -> Result<usize> {
    let d = dimension(m, 2)?;
    Ok(d * d)
}

#[inline]
fn re_pos(d: usize, i: usize, j: usize) -> usize {
    // row-major upper triangle including the diagonal
    i * d - i * (i + 1) / 2 + j
}

#[inline]
fn im_pos(d: usize, i: usize, j: usize) -> usize {
    d * (d + 1) / 2 + i * d - i * (i + 1) / 2 + (j - i - 1)
}

pub fn vectorize(c2: &BosonicOperator) -> Result<Vec<f64>> {
    if c2.order() != 2 {
        return Err(Error::InvalidArgument(format!("expected order 2, got {}", c2.order())));
    }
    let d = c2.dim();
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        for j in i..d {
            let z = c2.get(i, j);
            v[re_pos(d, i, j)] = z.re;
            if j > i {
                v[im_pos(d, i, j)] = z.im;
            }
        }
    }
    Ok(v)
}

pub fn devectorize(c: &[f64], m: usize) -> Result<BosonicOperator> {
    let d = dimension(m, 2)?;
    if c.len() != d * d {
        return Err(Error::Mismatch(format!("vector of length {} for m={m}", c.len())));
    }
    let mut r = BosonicOperator::zeros(m, 2)?;
    for i in 0..d {
        for j in i..d {
            let im = if j > i { c[im_pos(d, i, j)] } else { 0.0 };
            // set() takes the upper element and stores its conjugate
            r.set(i, j, Complex64::new(c[re_pos(d, i, j)], im));
        }
    }
    Ok(r)
}

/// Coefficients of `Re tr(O C)` and `Im tr(O C)` in terms of `c`, for an
/// arbitrary complex `O` over the order-2 basis.
fn operator_rows(o: &Array2<Complex64>) -> (Vec<f64>, Vec<f64>) {
    let d = o.nrows();
    let mut re = vec![0.0; d * d];
    let mut im = vec![0.0; d * d];
    for i in 0..d {
        let a = o[[i, i]];
        re[re_pos(d, i, i)] = a.re;
        im[re_pos(d, i, i)] = a.im;
        for j in i + 1..d {
            let a = o[[j, i]] + o[[i, j]];
            re[re_pos(d, i, j)] = a.re;
            im[re_pos(d, i, j)] = a.im;
            let b = Complex64::new(0.0, 1.0) * (o[[j, i]] - o[[i, j]]);
            re[im_pos(d, i, j)] = b.re;
            im[im_pos(d, i, j)] = b.im;
        }
    }
    (re, im)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    ContractionFree,
    Energy,
    Symmetry,
    DDefect,
    KDefect,
}

/// A row normalized to unit length; `None` for a vanishing row.
fn normalized(mut row: Vec<f64>, b: f64) -> Option<(Vec<f64>, f64)> {
    let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n < 1e-14 {
        return None;
    }
    row.iter_mut().for_each(|x| *x /= n);
    Some((row, b / n))
}

/// Rows that depend only on the model: contraction-free, energy, symmetry.
#[derive(Debug, Clone)]
pub struct ConstraintBasis {
    pub m: usize,
    pub n_particles: usize,
    rows: Vec<(RowKind, Vec<f64>)>,
}

impl ConstraintBasis {
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        let m = spec.modes();
        let d = dimension(m, 2)?;
        let t = ComposeTable::get(m, 1, 1)?;
        let mut rows = Vec::new();
        // (tr_1 C)_ij = 1/2 sum_l w(i,l) w(j,l) C[i+l, j+l]
        for i in 0..m {
            for j in i..m {
                let mut o = Array2::<Complex64>::zeros((d, d));
                for l in 0..m {
                    o[[t.compose(j, l), t.compose(i, l)]] += 0.5 * t.weight(i, l) * t.weight(j, l);
                }
                let (re, im) = operator_rows(&o);
                rows.extend(normalized(re, 0.0).map(|r| (RowKind::ContractionFree, r.0)));
                if j > i {
                    rows.extend(normalized(im, 0.0).map(|r| (RowKind::ContractionFree, r.0)));
                }
            }
        }
        let (re, _) = operator_rows(&interaction_operator(spec)?.to_dense());
        rows.extend(normalized(re, 0.0).map(|r| (RowKind::Energy, r.0)));
        if spec.symmetry.enabled {
            let basis = FockBasis::get(m, 2)?;
            let states = basis.states();
            for f in 0..d {
                for g in f + 1..d {
                    if spec.symmetry.equivalent(&states[f], &states[g]) {
                        continue;
                    }
                    let mut re = vec![0.0; d * d];
                    re[re_pos(d, f, g)] = 1.0;
                    rows.push((RowKind::Symmetry, re));
                    let mut im = vec![0.0; d * d];
                    im[im_pos(d, f, g)] = 1.0;
                    rows.push((RowKind::Symmetry, im));
                }
            }
        }
        Ok(Self { m, n_particles: spec.n_particles, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn count(&self, kind: RowKind) -> usize {
        self.rows.iter().filter(|r| r.0 == kind).count()
    }
}

/// The linear system `A c = b` with the defect scale `N_b`.
#[derive(Debug, Clone)]
pub struct ConstraintSystem {
    pub a: Array2<f64>,
    pub b: Array1<f64>,
    pub scale: f64,
    pub kinds: Vec<RowKind>,
    pub m: usize,
}

impl ConstraintSystem {
    pub fn defects(&self, kind: RowKind) -> usize {
        self.kinds.iter().filter(|&&k| k == kind).count()
    }

    pub fn has_defects(&self) -> bool {
        self.kinds.iter().any(|k| matches!(k, RowKind::DDefect | RowKind::KDefect))
    }
}

/// Spectral data entering the defect rows.
pub struct DefectInput<'a> {
    pub rho2_eig: &'a EigResult,
    pub k: &'a KMatrix,
    pub k_eig: &'a EigResult,
    pub epsilon: f64,
    pub mode: CorrectionMode,
    /// Uncorrected `R_2` and `T_2 = dK/dt`, required in eom mode.
    pub rates: Option<(&'a BosonicOperator, &'a Array2<Complex64>)>,
}

/// Assembles the base rows plus one row per eigenvalue of `rho_2` or `K`
/// below `epsilon`.
pub fn build_constraints(basis: &ConstraintBasis, input: &DefectInput) -> Result<ConstraintSystem> {
    let m = basis.m;
    let d = dimension(m, 2)?;
    let n = basis.n_particles;
    let eta = match input.mode {
        CorrectionMode::Purify => None,
        CorrectionMode::Eom { eta } => {
            if input.rates.is_none() {
                return Err(Error::InvalidArgument("eom rows need the uncorrected rates".into()));
            }
            Some(eta)
        }
    };
    let mut rows: Vec<(RowKind, Vec<f64>, f64)> = basis.rows.iter().map(|(k, r)| (*k, r.clone(), 0.0)).collect();
    let mut weight = 0.0;
    let mut defects = 0usize;

    for (r, &lam) in input.rho2_eig.values.iter().enumerate() {
        if lam >= input.epsilon {
            continue;
        }
        let phi = input.rho2_eig.vector(r);
        let mut o = Array2::<Complex64>::zeros((d, d));
        for a in 0..d {
            for b in 0..d {
                o[[a, b]] = phi[a] * phi[b].conj();
            }
        }
        let b = match (eta, input.rates) {
            (Some(eta), Some((r2, _))) => -eta * lam - r2.expectation(&phi.to_vec()).re,
            _ => -lam,
        };
        if let Some((row, b)) = normalized(operator_rows(&o).0, b) {
            rows.push((RowKind::DDefect, row, b));
        }
        weight += lam.abs();
        defects += 1;
    }

    let nf = n as f64;
    let pair = ComposeTable::get(m, 1, 1)?;
    let fw = |i: usize, j: usize| if i == j { 1.0 } else { std::f64::consts::FRAC_1_SQRT_2 };
    for (r, &xi) in input.k_eig.values.iter().enumerate() {
        if xi >= input.epsilon {
            continue;
        }
        let v = input.k_eig.vector(r);
        let mut o = Array2::<Complex64>::zeros((d, d));
        let c = nf * (nf - 1.0) / input.k.norm;
        for i1 in 0..m {
            for j1 in 0..m {
                for i2 in 0..m {
                    for j2 in 0..m {
                        let (row, col) = (pair.compose(i1, j2), pair.compose(i2, j1));
                        o[[row, col]] += v[i1 * m + j1].conj() * v[i2 * m + j2] * (c * fw(i2, j1) * fw(i1, j2));
                    }
                }
            }
        }
        let b = match (eta, input.rates) {
            (Some(eta), Some((_, t2))) => {
                let mut s = Complex64::new(0.0, 0.0);
                for a in 0..m * m {
                    for bb in 0..m * m {
                        s += v[a].conj() * t2[[a, bb]] * v[bb];
                    }
                }
                -eta * xi - s.re
            }
            _ => -xi,
        };
        if let Some((row, b)) = normalized(operator_rows(&o).0, b) {
            rows.push((RowKind::KDefect, row, b));
        }
        weight += xi.abs();
        defects += 1;
    }

    let scale = if defects > 0 && weight > 0.0 { weight / defects as f64 } else { 1.0 };
    let p = d * d;
    let mut a = Array2::<f64>::zeros((rows.len(), p));
    let mut b = Array1::<f64>::zeros(rows.len());
    let mut kinds = Vec::with_capacity(rows.len());
    for (r, (kind, row, rhs)) in rows.into_iter().enumerate() {
        for (k, x) in row.into_iter().enumerate() {
            a[[r, k]] = x;
        }
        b[r] = rhs;
        kinds.push(kind);
    }
    Ok(ConstraintSystem { a, b, scale, kinds, m })
}

/// Result of a least-norm solve.
#[derive(Debug, Clone)]
pub struct CorrectionOperator {
    pub c2: BosonicOperator,
    pub vector: Vec<f64>,
    /// `||A c - b||` in units of the (row-normalized) system.
    pub residual: f64,
}

impl CorrectionOperator {
    pub fn norm(&self) -> f64 {
        self.vector.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Minimum-norm `c` with `A c = b`, via `c = A^T (A A^T)^+ b`.
pub fn least_norm_solve(sys: &ConstraintSystem) -> Result<CorrectionOperator> {
    let p = sys.a.ncols();
    let bnorm = sys.b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if bnorm == 0.0 || sys.a.nrows() == 0 {
        let vector = vec![0.0; p];
        return Ok(CorrectionOperator { c2: devectorize(&vector, sys.m)?, vector, residual: 0.0 });
    }
    let bs = &sys.b / sys.scale;
    let aat = sys.a.dot(&sys.a.t());
    let y = solve_dual(&aat, &bs, DUAL_CUTOFF)?;
    let c = sys.a.t().dot(&y) * sys.scale;
    let residual = (&sys.a.dot(&c) - &sys.b).iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(residual <= FEASIBILITY_TOL * bnorm) {
        return Err(Error::NoSolution { residual, bnorm });
    }
    let vector = c.to_vec();
    Ok(CorrectionOperator { c2: devectorize(&vector, sys.m)?, vector, residual })
}

/// The reducible order-(o+1) change whose partial trace is `delta`.
pub fn lift_change(delta: &BosonicOperator) -> Result<BosonicOperator> {
    let mut traces = all_traces(delta)?;
    traces.push(delta.clone());
    reducible_from_traces(delta.modes(), delta.order() + 1, &traces)
}

/// Adds `delta` to `ops[o - 1]` and compatible reducible changes above.
pub fn apply_with_lift(ops: &mut [BosonicOperator], delta: BosonicOperator) -> Result<()> {
    let o = delta.order();
    ops[o - 1].axpy(1.0, &delta)?;
    let mut cur = delta;
    for op in ops.iter_mut().skip(o) {
        cur = lift_change(&cur)?;
        op.axpy(1.0, &cur)?;
    }
    Ok(())
}

/// Correction of an order-o operator (`o > 2`) of the form
/// `sum_i a_i [|phi_i><phi_i|]_irr` over eigenvalues below `epsilon`.
///
/// In purify mode the first-order shifted eigenvalues vanish; in eom mode
/// their rates become `-eta lambda_i`, which needs the uncorrected derivative.
pub fn mazziotti_correction(
    rho: &BosonicOperator,
    deriv: Option<&BosonicOperator>,
    epsilon: f64,
    mode: CorrectionMode,
) -> Result<BosonicOperator> {
    let eig = rho.eig()?;
    let idx: Vec<usize> = (0..eig.values.len()).filter(|&r| eig.values[r] < epsilon).collect();
    let mut out = BosonicOperator::zeros(rho.modes(), rho.order())?;
    if idx.is_empty() {
        return Ok(out);
    }
    let vecs: Vec<Vec<Complex64>> = idx.iter().map(|&r| eig.vector(r).to_vec()).collect();
    let irr = vecs
        .iter()
        .map(|v| {
            let p = BosonicOperator::projector(rho.modes(), rho.order(), &Array1::from(v.clone()))?;
            Ok(uid_split(&p)?.1)
        })
        .collect::<Result<Vec<_>>>()?;
    let k = idx.len();
    let mut mat = Array2::<f64>::zeros((k, k));
    let mut rhs = Array1::<f64>::zeros(k);
    for (a, &r) in idx.iter().enumerate() {
        for b in 0..k {
            mat[[a, b]] = irr[b].expectation(&vecs[a]).re;
        }
        let lam = eig.values[r];
        rhs[a] = match mode {
            CorrectionMode::Purify => -lam,
            CorrectionMode::Eom { eta } => {
                let d = deriv.ok_or_else(|| Error::InvalidArgument("eom mode needs the derivative".into()))?;
                -eta * lam - d.expectation(&vecs[a]).re
            }
        };
    }
    let coef = solve_linear(&mat, &rhs)?;
    for (b, p) in irr.iter().enumerate() {
        out.axpy(coef[b], p)?;
    }
    Ok(out)
}

/// Outcome of one purification call.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PurifyOutcome {
    pub iterations: usize,
    pub converged: bool,
    /// The solver found contradictory constraints.
    pub no_solution: bool,
    pub initial_d_defects: usize,
    pub initial_k_defects: usize,
    /// Norm of the accumulated 2-body correction vector.
    pub norm: f64,
    pub max_residual: f64,
    /// Iterations spent on orders above 2.
    pub higher_iterations: usize,
}

fn defect_counts(rho2: &EigResult, k: &EigResult, eps: f64) -> (usize, usize) {
    (rho2.values.iter().filter(|&&x| x < eps).count(), k.values.iter().filter(|&&x| x < eps).count())
}

/// Iterates `rho_2 <- rho_2 + C_2` until `rho_2` and `K` have no eigenvalue
/// below `epsilon`, then treats higher orders bottom-up with the
/// [`mazziotti_correction`] ansatz. Each change is carried to the orders
/// above by its reducible lift. On hitting `max_iter` the last iterate is kept.
pub fn purify(
    state: &mut HierarchyState,
    basis: &ConstraintBasis,
    epsilon: f64,
    max_iter: usize,
) -> Result<PurifyOutcome> {
    let mut out = PurifyOutcome::default();
    if state.order() < 2 {
        out.converged = true;
        return Ok(out);
    }
    let n = basis.n_particles;
    let mut total = vec![0.0; param_len(basis.m)?];
    let mut converged = false;
    for iter in 0..=max_iter {
        let rho2_eig = state.rho(2).eig()?;
        let k = k_matrix(state.rho(1), state.rho(2), n)?;
        let k_eig = k.eig()?;
        let (dd, kd) = defect_counts(&rho2_eig, &k_eig, epsilon);
        if iter == 0 {
            out.initial_d_defects = dd;
            out.initial_k_defects = kd;
        }
        if dd + kd == 0 {
            converged = true;
            break;
        }
        if iter == max_iter {
            break;
        }
        let input = DefectInput {
            rho2_eig: &rho2_eig,
            k: &k,
            k_eig: &k_eig,
            epsilon,
            mode: CorrectionMode::Purify,
            rates: None,
        };
        let sys = build_constraints(basis, &input)?;
        let sol = match least_norm_solve(&sys) {
            Ok(s) => s,
            Err(Error::NoSolution { .. }) => {
                out.no_solution = true;
                break;
            }
            Err(e) => return Err(e),
        };
        out.iterations += 1;
        out.max_residual = out.max_residual.max(sol.residual);
        total.iter_mut().zip(&sol.vector).for_each(|(t, x)| *t += x);
        apply_with_lift(&mut state.rhos, sol.c2)?;
    }
    out.norm = total.iter().map(|x| x * x).sum::<f64>().sqrt();
    if converged {
        for o in 3..=state.order() {
            let mut done = false;
            for _ in 0..max_iter {
                let c = match mazziotti_correction(state.rho(o), None, epsilon, CorrectionMode::Purify) {
                    Ok(c) => c,
                    Err(Error::Singular(_)) => {
                        out.no_solution = true;
                        break;
                    }
                    Err(e) => return Err(e),
                };
                if c.max_abs() == 0.0 {
                    done = true;
                    break;
                }
                out.higher_iterations += 1;
                apply_with_lift(&mut state.rhos, c)?;
            }
            if !done {
                converged = false;
                break;
            }
        }
    }
    out.converged = converged && !out.no_solution;
    Ok(out)
}

/// Aggregated activity of the derivative correction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrectionStats {
    /// Right-hand-side evaluations that were corrected.
    pub corrections: usize,
    pub max_d_defects: usize,
    pub max_k_defects: usize,
    pub max_norm: f64,
    pub max_residual: f64,
    pub higher_corrections: usize,
    /// Evaluations whose constraints had no solution; each one rejects the step.
    pub infeasible: usize,
}

/// Derivative correction used inside every right-hand-side evaluation.
#[derive(Debug, Clone)]
pub struct EomCorrector {
    basis: ConstraintBasis,
    pub epsilon: f64,
    pub eta: f64,
    stats: CorrectionStats,
}

impl EomCorrector {
    /// The correction acts in a static frame only.
    pub fn new(spec: &ModelSpec, epsilon: f64, eta: f64) -> Result<Self> {
        if spec.gauge != Gauge::Zero {
            return Err(Error::InvalidArgument("corrections require the zero gauge".into()));
        }
        if !(eta > 0.0) {
            return Err(Error::InvalidArgument(format!("damping rate must be positive, got {eta}")));
        }
        Ok(Self { basis: ConstraintBasis::new(spec)?, epsilon, eta, stats: CorrectionStats::default() })
    }

    pub fn basis(&self) -> &ConstraintBasis {
        &self.basis
    }

    /// Returns and resets the statistics.
    pub fn take_stats(&mut self) -> CorrectionStats {
        std::mem::take(&mut self.stats)
    }

    /// Corrected derivatives for the given state.
    pub fn correct(&mut self, rhos: &[BosonicOperator], derivs: &mut [BosonicOperator]) -> Result<()> {
        if rhos.len() < 2 {
            return Ok(());
        }
        let mode = CorrectionMode::Eom { eta: self.eta };
        let rho2_eig = rhos[1].eig()?;
        let k = k_matrix(&rhos[0], &rhos[1], self.basis.n_particles)?;
        let k_eig = k.eig()?;
        let (dd, kd) = defect_counts(&rho2_eig, &k_eig, self.epsilon);
        if dd + kd > 0 {
            let t2 = k_derivative(&k, &rhos[0], &derivs[0], &derivs[1])?;
            let input = DefectInput {
                rho2_eig: &rho2_eig,
                k: &k,
                k_eig: &k_eig,
                epsilon: self.epsilon,
                mode,
                rates: Some((&derivs[1], &t2)),
            };
            let sys = build_constraints(&self.basis, &input)?;
            let sol = match least_norm_solve(&sys) {
                Ok(s) => s,
                Err(e) => {
                    self.stats.infeasible += 1;
                    return Err(e);
                }
            };
            self.stats.corrections += 1;
            self.stats.max_d_defects = self.stats.max_d_defects.max(dd);
            self.stats.max_k_defects = self.stats.max_k_defects.max(kd);
            self.stats.max_norm = self.stats.max_norm.max(sol.norm());
            self.stats.max_residual = self.stats.max_residual.max(sol.residual);
            apply_with_lift(derivs, sol.c2)?;
        }
        for o in 3..=rhos.len() {
            let c = mazziotti_correction(&rhos[o - 1], Some(&derivs[o - 1]), self.epsilon, mode)?;
            if c.max_abs() > 0.0 {
                self.stats.higher_corrections += 1;
                apply_with_lift(derivs, c)?;
            }
        }
        Ok(())
    }
}

impl RhsHook for EomCorrector {
    fn apply(&mut self, _t: f64, rhos: &[BosonicOperator], derivs: &mut [BosonicOperator]) -> Result<()> {
        self.correct(rhos, derivs)
    }
}

/// `K` change of a correction, for consistency checks.
pub fn k_update(c: &CorrectionOperator, k: &KMatrix) -> Result<Array2<Complex64>> {
    delta2(&c.c2, k.n_particles, k.norm)
}
