//! Exact full-CI propagation in the fixed basis and analytic reference states.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::cluster::compute_clusters;
use crate::error::{Error, Result};
use crate::fock::{binom, binom_f64, ComposeTable, FockBasis};
use crate::hamiltonian::{sector_operator, ModelSpec};
use crate::numerics::{eigh, integrate, IntegrationStats, IntegratorOptions, OutputAction, StepHooks};
use crate::operator::{trace_norm, BosonicOperator};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Amplitudes of an N-boson state over the number states of `m` modes.
#[derive(Debug, Clone, PartialEq)]
pub struct CIState {
    m: usize,
    n: usize,
    pub amplitudes: Vec<Complex64>,
    pub time: f64,
}

impl CIState {
    /// Wraps and validates the amplitude vector (norm 1 to 1e-10).
    pub fn new(m: usize, n: usize, amplitudes: Vec<Complex64>) -> Result<Self> {
        let basis = FockBasis::get(m, n)?;
        if amplitudes.len() != basis.dim() {
            return Err(Error::Mismatch(format!("{} amplitudes for dimension {}", amplitudes.len(), basis.dim())));
        }
        let s = Self { m, n, amplitudes, time: 0.0 };
        if (s.norm() - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!("state norm is {}", s.norm())));
        }
        Ok(s)
    }

    /// The number state `|occ>`.
    pub fn fock(occ: &[u32]) -> Result<Self> {
        let m = occ.len();
        let n = occ.iter().map(|&k| k as usize).sum();
        let basis = FockBasis::get(m, n)?;
        let mut a = vec![ZERO; basis.dim()];
        a[basis.rank(occ)?] = Complex64::new(1.0, 0.0);
        Self::new(m, n, a)
    }

    /// All `n` bosons in the normalized orbital `phi`.
    pub fn bec(phi: &[Complex64], n: usize) -> Result<Self> {
        let a = product_amplitudes(phi, n)?;
        Self::new(phi.len(), n, a)
    }

    /// `(|N,0> + e^{i theta} |0,N>)/sqrt 2` on two modes.
    pub fn noon(n: usize, theta: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("NOON state needs at least one particle".into()));
        }
        let basis = FockBasis::get(2, n)?;
        let mut a = vec![ZERO; basis.dim()];
        let s = std::f64::consts::FRAC_1_SQRT_2;
        a[basis.rank(&[n as u32, 0])?] = Complex64::new(s, 0.0);
        a[basis.rank(&[0, n as u32])?] = Complex64::from_polar(s, theta);
        Self::new(2, n, a)
    }

    pub fn modes(&self) -> usize {
        self.m
    }

    pub fn particles(&self) -> usize {
        self.n
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `<A|H|A>` with `H` the N-particle sector matrix.
    pub fn expectation(&self, h: &BosonicOperator) -> f64 {
        h.expectation(&self.amplitudes).re
    }

    fn write_real(&self, out: &mut [f64]) {
        for (k, z) in self.amplitudes.iter().enumerate() {
            out[2 * k] = z.re;
            out[2 * k + 1] = z.im;
        }
    }

    fn from_real(m: usize, n: usize, src: &[f64], time: f64) -> Self {
        let amplitudes = src.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
        Self { m, n, amplitudes, time }
    }
}

/// Amplitudes of `n` bosons in the orbital `phi` (normalized).
fn product_amplitudes(phi: &[Complex64], n: usize) -> Result<Vec<Complex64>> {
    let norm: f64 = phi.iter().map(|z| z.norm_sqr()).sum();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidArgument(format!("orbital norm squared is {norm}")));
    }
    let basis = FockBasis::get(phi.len(), n)?;
    let mut out = Vec::with_capacity(basis.dim());
    for occ in basis.states() {
        // sqrt(n! / prod k_r!) prod phi_r^k_r
        let mut amp = Complex64::new(1.0, 0.0);
        let mut rest = n as u64;
        for (r, &k) in occ.iter().enumerate() {
            amp *= phi[r].powu(k) * (binom(rest, k as u64) as f64).sqrt();
            rest -= k as u64;
        }
        out.push(amp);
    }
    Ok(out)
}

/// Order-o reduced density matrix of a pure N-boson state.
pub fn extract_rdm(a: &CIState, o: usize) -> Result<BosonicOperator> {
    if o == 0 || o > a.n {
        return Err(Error::InvalidArgument(format!("order {o} for {} particles", a.n)));
    }
    let t = ComposeTable::get(a.m, o, a.n - o)?;
    let norm = 1.0 / binom_f64(a.n, o);
    let amp = &a.amplitudes;
    BosonicOperator::from_fn(a.m, o, |i, j| {
        let mut s = ZERO;
        for l in 0..t.d2 {
            s += amp[t.compose(i, l)] * amp[t.compose(j, l)].conj() * (t.weight(i, l) * t.weight(j, l));
        }
        s * norm
    })
}

/// Analytic RDM of the product state: the projector onto `o` bosons in `phi`.
pub fn bec_rdm(phi: &[Complex64], o: usize) -> Result<BosonicOperator> {
    let a = Array1::from(product_amplitudes(phi, o)?);
    BosonicOperator::projector(phi.len(), o, &a)
}

/// Analytic RDM of the number state `|k>`: diagonal with weights
/// `prod binom(k_r, n_r) / binom(N, o)`.
pub fn permanent_rdm(k: &[u32], o: usize) -> Result<BosonicOperator> {
    let n: u64 = k.iter().map(|&x| x as u64).sum();
    let m = k.len();
    let basis = FockBasis::get(m, o)?;
    let norm = binom(n, o as u64) as f64;
    let mut r = BosonicOperator::zeros(m, o)?;
    for (i, occ) in basis.states().iter().enumerate() {
        if occ.iter().zip(k).any(|(a, b)| a > b) {
            continue;
        }
        let w: f64 = occ.iter().zip(k).map(|(&a, &b)| binom(b as u64, a as u64) as f64).product();
        r.set(i, i, Complex64::new(w / norm, 0.0));
    }
    Ok(r)
}

/// Analytic RDM of the NOON state for `o < N`.
pub fn noon_rdm(o: usize) -> Result<BosonicOperator> {
    let basis = FockBasis::get(2, o)?;
    let mut r = BosonicOperator::zeros(2, o)?;
    for occ in [[o as u32, 0], [0, o as u32]] {
        let i = basis.rank(&occ)?;
        r.set(i, i, Complex64::new(0.5, 0.0));
    }
    Ok(r)
}

/// `||c_o||_1` for `o = 1..=max_o` from the exact RDMs.
pub fn exact_cluster_norms(a: &CIState, max_o: usize) -> Result<Vec<f64>> {
    let rhos = (1..=max_o).map(|o| extract_rdm(a, o)).collect::<Result<Vec<_>>>()?;
    let set = compute_clusters(&rhos)?;
    set.clusters().iter().map(trace_norm).collect()
}

/// Dense N-particle Hamiltonian of the model with the gauge term dropped.
pub fn n_body_hamiltonian(spec: &ModelSpec) -> Result<BosonicOperator> {
    sector_operator(spec.modes(), spec.n_particles, Some(spec.h()), Some(&spec.integrals.v))
}

struct CIHooks<'a, F> {
    m: usize,
    n: usize,
    observe: &'a mut F,
}

impl<F> StepHooks for CIHooks<'_, F>
where
    F: FnMut(&CIState, usize) -> Result<bool>,
{
    fn output(&mut self, t: f64, y: &mut [f64], steps: usize) -> Result<OutputAction> {
        let s = CIState::from_real(self.m, self.n, y, t);
        Ok(if (self.observe)(&s, steps)? { OutputAction::Continue } else { OutputAction::Stop })
    }
}

/// Solves `i dA/dt = H_N A` with the shared integrator, calling `observe`
/// on the write-out grid. The observer returns `false` to stop early.
pub fn exact_propagate<F>(
    spec: &ModelSpec,
    a0: &CIState,
    t_final: f64,
    opts: &IntegratorOptions,
    mut observe: F,
) -> Result<IntegrationStats>
where
    F: FnMut(&CIState, usize) -> Result<bool>,
{
    if a0.m != spec.modes() || a0.n != spec.n_particles {
        return Err(Error::Mismatch(format!(
            "state has m={}, N={} but the model has m={}, N={}",
            a0.m,
            a0.n,
            spec.modes(),
            spec.n_particles
        )));
    }
    let h = n_body_hamiltonian(spec)?.to_dense();
    let d = h.nrows();
    let mut y0 = vec![0.0; 2 * d];
    a0.write_real(&mut y0);
    let mut hooks = CIHooks { m: a0.m, n: a0.n, observe: &mut observe };
    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
        for i in 0..d {
            let mut s = ZERO;
            for j in 0..d {
                s += h[[i, j]] * Complex64::new(y[2 * j], y[2 * j + 1]);
            }
            // -i (x + iy) = y - ix
            dy[2 * i] = s.im;
            dy[2 * i + 1] = -s.re;
        }
        Ok(())
    };
    integrate(rhs, a0.time, &y0, t_final, opts, &mut hooks)
}

/// Spectral propagation `exp(-i H t)` of an initial state; an integrator-free
/// reference used to measure integration error.
pub struct SpectralPropagator {
    m: usize,
    n: usize,
    values: Vec<f64>,
    vectors: Array2<Complex64>,
    coeffs: Vec<Complex64>,
}

impl SpectralPropagator {
    pub fn new(spec: &ModelSpec, a0: &CIState) -> Result<Self> {
        let eig = eigh(&n_body_hamiltonian(spec)?.to_dense())?;
        let d = eig.values.len();
        let coeffs = (0..d)
            .map(|k| (0..d).map(|i| eig.vectors[[i, k]].conj() * a0.amplitudes[i]).sum())
            .collect();
        Ok(Self { m: a0.m, n: a0.n, values: eig.values.to_vec(), vectors: eig.vectors, coeffs })
    }

    pub fn state(&self, t: f64) -> CIState {
        let d = self.values.len();
        let mut a = vec![ZERO; d];
        for k in 0..d {
            let c = self.coeffs[k] * Complex64::from_polar(1.0, -self.values[k] * t);
            for i in 0..d {
                a[i] += self.vectors[[i, k]] * c;
            }
        }
        CIState { m: self.m, n: self.n, amplitudes: a, time: t }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::partial_trace;

    #[test]
    fn fock_state_rdm() {
        let a = CIState::fock(&[4, 0]).unwrap();
        for o in 1..=4 {
            let r = extract_rdm(&a, o).unwrap();
            assert!((r.get(0, 0).re - 1.0).abs() < 1e-14);
            assert!((r.trace() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn two_routes_agree() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let phi = [Complex64::new(s, 0.0), Complex64::new(0.0, s)];
        let a = CIState::bec(&phi, 4).unwrap();
        let full = extract_rdm(&a, 4).unwrap();
        for o in 1..4 {
            let direct = extract_rdm(&a, o).unwrap();
            let traced = partial_trace(&full, 4 - o).unwrap();
            assert!(direct.max_abs_diff(&traced).unwrap() < 1e-13);
            assert!(direct.max_abs_diff(&bec_rdm(&phi, o).unwrap()).unwrap() < 1e-13);
        }
    }

    #[test]
    fn rabi_oscillation() {
        let spec = ModelSpec::bose_hubbard_dimer(1.0, 0.0, 3).unwrap();
        let a0 = CIState::fock(&[3, 0]).unwrap();
        let opts = IntegratorOptions { rtol: 1e-10, atol: 1e-12, output_dt: 0.5, ..Default::default() };
        let mut worst: f64 = 0.0;
        exact_propagate(&spec, &a0, 5.0, &opts, |s, _| {
            let r1 = extract_rdm(s, 1)?;
            let imb = r1.get(0, 0).re - r1.get(1, 1).re;
            worst = worst.max((imb - (2.0 * s.time).cos()).abs());
            Ok(true)
        })
        .unwrap();
        assert!(worst < 1e-8, "{worst}");
    }
}
