//! Equations of motion of the truncated hierarchy and their propagation.
//!
//! For `o <= order`: `d rho_o/dt = -i [H~_o, rho_o] - i I_o(chi_{o+1})`, with
//! `chi_{o+1} = rho_{o+1}` below the top and the compatible closure at the top.
//! The collision integral is returned as the Hermitian operator `-i I_o`.

use std::borrow::Cow;

use ndarray::Array2;
use num_complex::Complex64;

use crate::cluster::closure;
use crate::error::{Error, Result};
use crate::fock::{ComposeTable, HoppingTable};
use crate::hamiltonian::{sector_operator, Gauge, Integrals, ModelSpec};
use crate::numerics::{
    eigh, integrate, unitary_propagator, EigResult, IntegrationStats, IntegratorOptions, OutputAction, StepHooks,
};
use crate::operator::{partial_trace, rotate_basis, trace_norm, BosonicOperator};
use crate::oracle::{extract_rdm, CIState};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Eigenvalues closer than this form one degenerate block.
pub const DEGENERACY_TOL: f64 = 1e-12;

/// The family `rho_1, ..., rho_order` at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyState {
    pub rhos: Vec<BosonicOperator>,
    pub time: f64,
}

impl HierarchyState {
    pub fn new(rhos: Vec<BosonicOperator>, time: f64) -> Result<Self> {
        if rhos.is_empty() {
            return Err(Error::InvalidArgument("empty hierarchy".into()));
        }
        for (k, r) in rhos.iter().enumerate() {
            if r.order() != k + 1 || r.modes() != rhos[0].modes() {
                return Err(Error::Mismatch(format!("entry {k} has order {} and m={}", r.order(), r.modes())));
            }
        }
        Ok(Self { rhos, time })
    }

    /// Exact RDMs of a wavefunction up to `order`.
    pub fn from_ci(a: &CIState, order: usize) -> Result<Self> {
        let rhos = (1..=order).map(|o| extract_rdm(a, o)).collect::<Result<Vec<_>>>()?;
        Self::new(rhos, a.time)
    }

    /// Lower orders obtained from the top one by successive partial traces.
    pub fn from_top(top: BosonicOperator, time: f64) -> Result<Self> {
        let mut rhos = vec![top];
        while rhos[0].order() > 1 {
            let lower = partial_trace(&rhos[0], 1)?;
            rhos.insert(0, lower);
        }
        Self::new(rhos, time)
    }

    pub fn order(&self) -> usize {
        self.rhos.len()
    }

    pub fn modes(&self) -> usize {
        self.rhos[0].modes()
    }

    /// `rho_o`, 1-based.
    pub fn rho(&self, o: usize) -> &BosonicOperator {
        &self.rhos[o - 1]
    }

    /// `|tr rho_o - 1|` per order.
    pub fn trace_defects(&self) -> Vec<f64> {
        self.rhos.iter().map(|r| (r.trace() - 1.0).abs()).collect()
    }

    /// `||tr_1 rho_{o+1} - rho_o||_1` for `o = 1..order-1`.
    pub fn compatibility_defects(&self) -> Result<Vec<f64>> {
        self.rhos.windows(2).map(|w| trace_norm(&partial_trace(&w[1], 1)?.sub(&w[0])?)).collect()
    }

    /// The same state in the orbitals `phi'_j = sum_i u_ij phi_i`.
    pub fn rotated(&self, u: &Array2<Complex64>) -> Result<Self> {
        let rhos = self.rhos.iter().map(|r| rotate_basis(r, u)).collect::<Result<Vec<_>>>()?;
        Self::new(rhos, self.time)
    }
}

/// Operators entering the order-o equation for fixed integrals.
#[derive(Debug, Clone)]
pub struct OrderTerms {
    order: usize,
    /// `H~_o` as a dense matrix.
    hamiltonian: BosonicOperator,
    /// `W_ij = sum_qp v_qjpi a_q^dag a_p` on the order-o sector, index `i*m + j`.
    w: Vec<Array2<Complex64>>,
    prefactor: f64,
}

impl OrderTerms {
    /// Terms for the one-body matrix `h1` (already gauge-shifted).
    pub fn new(m: usize, n: usize, o: usize, h1: &Array2<Complex64>, integrals: &Integrals) -> Result<Self> {
        let hamiltonian = sector_operator(m, o, Some(h1), Some(&integrals.v))?;
        let hop = HoppingTable::get(m, o)?;
        let d = hamiltonian.dim();
        let mut w = Vec::with_capacity(m * m);
        for i in 0..m {
            for j in 0..m {
                let mut a = Array2::<Complex64>::zeros((d, d));
                for q in 0..m {
                    for p in 0..m {
                        let x = integrals.v_at(q, j, p, i);
                        if x == ZERO {
                            continue;
                        }
                        for &(src, tgt, amp) in hop.pair(q, p) {
                            a[[tgt, src]] += x * amp;
                        }
                    }
                }
                w.push(a);
            }
        }
        let prefactor = n.saturating_sub(o) as f64 / (o + 1) as f64;
        Ok(Self { order: o, hamiltonian, w, prefactor })
    }

    pub fn hamiltonian(&self) -> &BosonicOperator {
        &self.hamiltonian
    }

    /// `-i I_o` for the order-(o+1) argument.
    pub fn collision(&self, rho_next: &BosonicOperator) -> Result<BosonicOperator> {
        let o = self.order;
        let m = rho_next.modes();
        if rho_next.order() != o + 1 {
            return Err(Error::Mismatch(format!("collision at order {o} needs order {}", o + 1)));
        }
        if self.prefactor == 0.0 {
            return BosonicOperator::zeros(m, o);
        }
        let t = ComposeTable::get(m, o, 1)?;
        let d = t.d1;
        let full = rho_next.to_dense();
        let mut acc = Array2::<Complex64>::zeros((d, d));
        let mut x = Array2::<Complex64>::zeros((d, d));
        for i in 0..m {
            for j in 0..m {
                let w = &self.w[i * m + j];
                if w.iter().all(|z| *z == ZERO) {
                    continue;
                }
                // matrix of a_i rho a_j^dag on the order-o sector
                for a in 0..d {
                    let (ra, wa) = (t.compose(a, i), t.weight(a, i));
                    for b in 0..d {
                        x[[a, b]] = full[[ra, t.compose(b, j)]] * (wa * t.weight(b, j));
                    }
                }
                acc += &w.dot(&x);
                acc -= &x.dot(w);
            }
        }
        let f = Complex64::new(0.0, -self.prefactor);
        BosonicOperator::from_fn(m, o, |a, b| acc[[a, b]] * f)
    }

    /// Full derivative of `rho_o` given `chi_{o+1}`.
    pub fn derivative(&self, rho: &BosonicOperator, chi: Option<&BosonicOperator>) -> Result<BosonicOperator> {
        let mut r = crate::operator::von_neumann(&self.hamiltonian, rho)?;
        if let Some(chi) = chi {
            r.axpy(1.0, &self.collision(chi)?)?;
        }
        Ok(r)
    }
}

/// `-i I_o` evaluated with the model integrals (gauge irrelevant here).
pub fn collision_integral(rho_next: &BosonicOperator, spec: &ModelSpec, o: usize) -> Result<BosonicOperator> {
    if o == 0 || o + 1 != rho_next.order() {
        return Err(Error::InvalidArgument(format!("order {o} with argument of order {}", rho_next.order())));
    }
    OrderTerms::new(spec.modes(), spec.n_particles, o, spec.h(), &spec.integrals)?.collision(rho_next)
}

/// Natural populations and their time derivatives.
#[derive(Debug, Clone)]
pub struct NpRates {
    pub eig: EigResult,
    /// `<phi_r| R |phi_r>` for each eigenvector.
    pub rates: Vec<f64>,
    /// Set for eigenvalues in a block of spread below [`DEGENERACY_TOL`].
    pub degenerate: Vec<bool>,
    /// Sum of the rates over each eigenvalue's block, which is basis independent.
    pub block_rates: Vec<f64>,
}

/// Rates `d lambda_r/dt = <phi_r| R |phi_r>` for a derivative `R` of `rho`.
///
/// Any commutator `-i [H, rho]` in `R` drops out, so `R` may be the full
/// derivative or just the collision part.
pub fn np_derivative(rho: &BosonicOperator, deriv: &BosonicOperator) -> Result<NpRates> {
    if rho.dim() != deriv.dim() {
        return Err(Error::Mismatch("rho and derivative differ in shape".into()));
    }
    let eig = rho.eig()?;
    let n = eig.values.len();
    let rates: Vec<f64> = (0..n).map(|r| deriv.expectation(&eig.vector(r).to_vec()).re).collect();
    let mut degenerate = vec![false; n];
    let mut block_rates = rates.clone();
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && eig.values[end] - eig.values[start] < DEGENERACY_TOL {
            end += 1;
        }
        if end - start > 1 {
            let s: f64 = rates[start..end].iter().sum();
            for k in start..end {
                degenerate[k] = true;
                block_rates[k] = s;
            }
        }
        start = end;
    }
    Ok(NpRates { eig, rates, degenerate, block_rates })
}

/// Which orders are integration variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Packing {
    /// Only the top order; lower orders follow by partial trace.
    TopOnly,
    /// Every order, needed when corrections act per order.
    AllOrders,
}

/// Modifies the derivatives inside every right-hand-side evaluation.
pub trait RhsHook {
    /// `rhos` and `derivs` are in the propagation frame.
    fn apply(&mut self, t: f64, rhos: &[BosonicOperator], derivs: &mut [BosonicOperator]) -> Result<()>;
}

/// Receives the lab-frame state on the write-out grid and, optionally,
/// after every accepted step.
pub trait Observer {
    /// May modify the state and return [`OutputAction::Modified`].
    fn output(&mut self, state: &mut HierarchyState, steps: usize) -> Result<OutputAction>;

    fn accepted(&mut self, _state: &HierarchyState) -> Result<()> {
        Ok(())
    }

    /// Whether [`Observer::accepted`] should be called (it costs an unpacking).
    fn wants_accepted(&self) -> bool {
        false
    }
}

enum Frame {
    Static(Vec<OrderTerms>),
    /// Orbitals rotating as `exp(-i g t)`; integrals are re-rotated on demand.
    Rotating { g: Array2<Complex64> },
}

/// Right-hand side and packing of one truncated hierarchy.
pub struct Propagator<'a> {
    spec: &'a ModelSpec,
    order: usize,
    packing: Packing,
    frame: Frame,
    lens: Vec<usize>,
}

impl<'a> Propagator<'a> {
    pub fn new(spec: &'a ModelSpec, order: usize, packing: Packing) -> Result<Self> {
        let m = spec.modes();
        if order == 0 || order > spec.n_particles {
            return Err(Error::InvalidArgument(format!(
                "truncation order {order} outside 1..={}",
                spec.n_particles
            )));
        }
        let frame = match spec.gauge {
            Gauge::Zero => {
                let terms = (1..=order)
                    .map(|o| OrderTerms::new(m, spec.n_particles, o, spec.h(), &spec.integrals))
                    .collect::<Result<Vec<_>>>()?;
                Frame::Static(terms)
            }
            Gauge::OneBody => Frame::Rotating { g: spec.gauge_matrix() },
        };
        let lens = (1..=order).map(|o| BosonicOperator::real_len(m, o)).collect::<Result<Vec<_>>>()?;
        Ok(Self { spec, order, packing, frame, lens })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn packing(&self) -> Packing {
        self.packing
    }

    /// Single-particle frame unitary `exp(-i g t)`; `None` for a static frame.
    pub fn frame_unitary(&self, t: f64) -> Result<Option<Array2<Complex64>>> {
        match &self.frame {
            Frame::Static(_) => Ok(None),
            Frame::Rotating { g } => Ok(Some(unitary_propagator(g, t)?)),
        }
    }

    fn terms_at(&self, t: f64) -> Result<Cow<'_, [OrderTerms]>> {
        match &self.frame {
            Frame::Static(terms) => Ok(Cow::Borrowed(terms)),
            Frame::Rotating { g } => {
                let u = unitary_propagator(g, t)?;
                let ints = self.spec.integrals.rotated(&u);
                // W^dag g W = g because W is generated by g
                let h1 = &ints.h - g;
                let terms = (1..=self.order)
                    .map(|o| OrderTerms::new(self.spec.modes(), self.spec.n_particles, o, &h1, &ints))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Cow::Owned(terms))
            }
        }
    }

    /// Closure of the hierarchy, or `None` when it is exact (`order = N`).
    pub fn closure(&self, rhos: &[BosonicOperator]) -> Result<Option<BosonicOperator>> {
        if self.order >= self.spec.n_particles {
            Ok(None)
        } else {
            closure(rhos).map(Some)
        }
    }

    /// Frame derivatives of every order at time `t`.
    pub fn rhs(&self, t: f64, rhos: &[BosonicOperator]) -> Result<Vec<BosonicOperator>> {
        let terms = self.terms_at(t)?;
        let chi = self.closure(rhos)?;
        (0..self.order)
            .map(|k| {
                let next = if k + 1 < self.order { rhos.get(k + 1) } else { chi.as_ref() };
                terms[k].derivative(&rhos[k], next)
            })
            .collect()
    }

    /// Frame derivative of the top order only.
    pub fn rhs_top(&self, t: f64, rhos: &[BosonicOperator]) -> Result<BosonicOperator> {
        let terms = self.terms_at(t)?;
        let chi = self.closure(rhos)?;
        terms[self.order - 1].derivative(&rhos[self.order - 1], chi.as_ref())
    }

    /// Length of the real state vector.
    pub fn state_len(&self) -> usize {
        match self.packing {
            Packing::TopOnly => self.lens[self.order - 1],
            Packing::AllOrders => self.lens.iter().sum(),
        }
    }

    pub fn pack(&self, rhos: &[BosonicOperator], out: &mut [f64]) {
        match self.packing {
            Packing::TopOnly => rhos[self.order - 1].write_real(out),
            Packing::AllOrders => {
                let mut off = 0;
                for (r, &l) in rhos.iter().zip(&self.lens) {
                    r.write_real(&mut out[off..off + l]);
                    off += l;
                }
            }
        }
    }

    /// Unpacks every order (lower ones by partial trace for [`Packing::TopOnly`]).
    pub fn unpack(&self, y: &[f64]) -> Result<Vec<BosonicOperator>> {
        let m = self.spec.modes();
        match self.packing {
            Packing::TopOnly => {
                Ok(HierarchyState::from_top(BosonicOperator::read_real(m, self.order, y)?, 0.0)?.rhos)
            }
            Packing::AllOrders => {
                let mut off = 0;
                let mut rhos = Vec::with_capacity(self.order);
                for (k, &l) in self.lens.iter().enumerate() {
                    rhos.push(BosonicOperator::read_real(m, k + 1, &y[off..off + l])?);
                    off += l;
                }
                Ok(rhos)
            }
        }
    }

    /// Lab-frame state from frame operators at time `t`.
    pub fn to_lab(&self, t: f64, rhos: Vec<BosonicOperator>) -> Result<HierarchyState> {
        let s = HierarchyState::new(rhos, t)?;
        match self.frame_unitary(t)? {
            None => Ok(s),
            Some(u) => s.rotated(&crate::numerics::adjoint(&u)),
        }
    }

    /// Frame operators from a lab-frame state.
    pub fn to_frame(&self, s: &HierarchyState) -> Result<Vec<BosonicOperator>> {
        match self.frame_unitary(s.time)? {
            None => Ok(s.rhos.clone()),
            Some(u) => Ok(s.rotated(&u)?.rhos),
        }
    }

    /// Propagates `state` to `t_final`.
    ///
    /// `rhs_hook` requires [`Packing::AllOrders`]. Integrator failures are
    /// returned as errors carrying the failure time.
    pub fn propagate(
        &self,
        state: &HierarchyState,
        t_final: f64,
        opts: &IntegratorOptions,
        observer: &mut dyn Observer,
        mut rhs_hook: Option<&mut dyn RhsHook>,
    ) -> Result<IntegrationStats> {
        if state.order() != self.order || state.modes() != self.spec.modes() {
            return Err(Error::Mismatch(format!(
                "state of order {} and m={} for a propagator of order {} and m={}",
                state.order(),
                state.modes(),
                self.order,
                self.spec.modes()
            )));
        }
        if rhs_hook.is_some() && self.packing != Packing::AllOrders {
            return Err(Error::InvalidArgument("derivative corrections need every order integrated".into()));
        }
        let mut y0 = vec![0.0; self.state_len()];
        self.pack(&self.to_frame(state)?, &mut y0);
        let mut hooks = Bridge { prop: self, observer };
        let rhs = |t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
            let rhos = self.unpack(y)?;
            match self.packing {
                Packing::TopOnly => self.rhs_top(t, &rhos)?.write_real(dy),
                Packing::AllOrders => {
                    let mut d = self.rhs(t, &rhos)?;
                    if let Some(h) = rhs_hook.as_deref_mut() {
                        h.apply(t, &rhos, &mut d)?;
                    }
                    self.pack(&d, dy);
                }
            }
            Ok(())
        };
        integrate(rhs, state.time, &y0, t_final, opts, &mut hooks)
    }
}

struct Bridge<'p, 'a> {
    prop: &'p Propagator<'a>,
    observer: &'p mut dyn Observer,
}

impl StepHooks for Bridge<'_, '_> {
    fn accepted(&mut self, t: f64, y: &[f64]) -> Result<()> {
        if !self.observer.wants_accepted() {
            return Ok(());
        }
        let s = self.prop.to_lab(t, self.prop.unpack(y)?)?;
        self.observer.accepted(&s)
    }

    fn output(&mut self, t: f64, y: &mut [f64], steps: usize) -> Result<OutputAction> {
        let mut s = self.prop.to_lab(t, self.prop.unpack(y)?)?;
        let action = self.observer.output(&mut s, steps)?;
        if action == OutputAction::Modified {
            s.time = t;
            self.prop.pack(&self.prop.to_frame(&s)?, y);
        }
        Ok(action)
    }
}

/// Smallest eigenvalue of every order.
pub fn min_eigenvalues(state: &HierarchyState) -> Result<Vec<f64>> {
    state.rhos.iter().map(|r| Ok(eigh(&r.to_dense())?.min())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::SpectralPropagator;

    #[test]
    fn collision_matches_exact_derivative() {
        let spec = ModelSpec::bose_hubbard_dimer(1.0, 0.37, 4).unwrap();
        let a0 = CIState::fock(&[3, 1]).unwrap();
        let prop = SpectralPropagator::new(&spec, &a0).unwrap();
        let (t, dt) = (0.4, 1e-4);
        let p = Propagator::new(&spec, 2, Packing::AllOrders).unwrap();
        let s = HierarchyState::from_ci(&prop.state(t), 3).unwrap();
        let d = p.rhs(t, &s.rhos[..2]).unwrap();
        // exact rho_3 as the closing argument of order 2
        let terms = OrderTerms::new(2, 4, 2, spec.h(), &spec.integrals).unwrap();
        let d2 = terms.derivative(&s.rhos[1], Some(&s.rhos[2])).unwrap();
        for o in 1..=2 {
            let fwd = extract_rdm(&prop.state(t + dt), o).unwrap();
            let bwd = extract_rdm(&prop.state(t - dt), o).unwrap();
            let fd = fwd.sub(&bwd).unwrap().scaled(0.5 / dt);
            let ours = if o == 1 { &d[0] } else { &d2 };
            assert!(fd.max_abs_diff(ours).unwrap() < 1e-7, "order {o}");
        }
    }
}
