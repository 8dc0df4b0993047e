//! Model integrals, sector Hamiltonians and the energy functional.

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fock::FockBasis;
use crate::numerics::adjoint;
use crate::operator::BosonicOperator;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const VALIDATION_TOL: f64 = 1e-12;

/// One-body matrix and dense two-body tensor `v[((i*m + j)*m + q)*m + p]`,
/// with the interaction `1/2 sum v_ijqp a_i^dag a_j^dag a_q a_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct Integrals {
    pub h: Array2<Complex64>,
    pub v: Vec<Complex64>,
}

impl Integrals {
    pub fn modes(&self) -> usize {
        self.h.nrows()
    }

    #[inline]
    pub fn v_at(&self, i: usize, j: usize, q: usize, p: usize) -> Complex64 {
        let m = self.modes();
        self.v[((i * m + j) * m + q) * m + p]
    }

    /// Integrals in the orbitals `phi'_j = sum_i u_ij phi_i`.
    pub fn rotated(&self, u: &Array2<Complex64>) -> Integrals {
        let m = self.modes();
        let h = adjoint(u).dot(&self.h).dot(u);
        // contract one index at a time
        let idx = |a: usize, b: usize, c: usize, d: usize| ((a * m + b) * m + c) * m + d;
        let mut t1 = vec![ZERO; m * m * m * m];
        let mut t2 = vec![ZERO; m * m * m * m];
        for a in 0..m {
            for b in 0..m {
                for c in 0..m {
                    for p in 0..m {
                        t1[idx(a, b, c, p)] = (0..m).map(|d| self.v[idx(a, b, c, d)] * u[[d, p]]).sum();
                    }
                }
            }
        }
        for a in 0..m {
            for b in 0..m {
                for q in 0..m {
                    for p in 0..m {
                        t2[idx(a, b, q, p)] = (0..m).map(|c| t1[idx(a, b, c, p)] * u[[c, q]]).sum();
                    }
                }
            }
        }
        for a in 0..m {
            for j in 0..m {
                for q in 0..m {
                    for p in 0..m {
                        t1[idx(a, j, q, p)] = (0..m).map(|b| t2[idx(a, b, q, p)] * u[[b, j]].conj()).sum();
                    }
                }
            }
        }
        for i in 0..m {
            for j in 0..m {
                for q in 0..m {
                    for p in 0..m {
                        t2[idx(i, j, q, p)] = (0..m).map(|a| t1[idx(a, j, q, p)] * u[[a, i]].conj()).sum();
                    }
                }
            }
        }
        Integrals { h, v: t2 }
    }

    fn validate(&self) -> Result<()> {
        let m = self.modes();
        if self.h.ncols() != m {
            return Err(Error::InvalidModel("h must be square".into()));
        }
        if self.v.len() != m.pow(4) {
            return Err(Error::InvalidModel(format!("v has {} entries, expected {}", self.v.len(), m.pow(4))));
        }
        let scale_h = self.h.iter().fold(1.0f64, |s, z| s.max(z.norm()));
        for i in 0..m {
            for j in 0..m {
                if (self.h[[i, j]] - self.h[[j, i]].conj()).norm() > VALIDATION_TOL * scale_h {
                    return Err(Error::InvalidModel(format!("h is not Hermitian at ({i}, {j})")));
                }
            }
        }
        let scale_v = self.v.iter().fold(1.0f64, |s, z| s.max(z.norm()));
        for i in 0..m {
            for j in 0..m {
                for q in 0..m {
                    for p in 0..m {
                        let x = self.v_at(i, j, q, p);
                        if (x - self.v_at(j, i, p, q)).norm() > VALIDATION_TOL * scale_v {
                            return Err(Error::InvalidModel(format!(
                                "v lacks particle exchange symmetry at ({i},{j},{q},{p})"
                            )));
                        }
                        if (x - self.v_at(q, p, i, j).conj()).norm() > VALIDATION_TOL * scale_v {
                            return Err(Error::InvalidModel(format!("v is not Hermitian at ({i},{j},{q},{p})")));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Gauge {
    /// `g = 0`, the consistent choice for a static basis.
    #[default]
    Zero,
    /// `g = h`: orbitals co-rotate with the one-body Hamiltonian.
    OneBody,
}

/// Phases of the orbitals under a single-particle symmetry.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SymmetrySpec {
    pub phases: Vec<f64>,
    pub enabled: bool,
}

impl SymmetrySpec {
    /// Phase `sum_j n_j theta_j` of a number state, reduced to `[0, 2 pi)`.
    pub fn state_phase(&self, occ: &[u32]) -> f64 {
        let th: f64 = occ.iter().zip(&self.phases).map(|(&n, &t)| n as f64 * t).sum();
        th.rem_euclid(std::f64::consts::TAU)
    }

    /// Whether two number states carry the same phase.
    pub fn equivalent(&self, a: &[u32], b: &[u32]) -> bool {
        let d = (self.state_phase(a) - self.state_phase(b)).rem_euclid(std::f64::consts::TAU);
        d < 1e-9 || std::f64::consts::TAU - d < 1e-9
    }

    /// Frobenius norm of the commutator of `b` with the lifted symmetry.
    pub fn commutator_norm(&self, b: &BosonicOperator) -> Result<f64> {
        let basis = FockBasis::get(b.modes(), b.order())?;
        let ph: Vec<Complex64> =
            basis.states().iter().map(|s| Complex64::from_polar(1.0, self.state_phase(s))).collect();
        let mut s = 0.0;
        for i in 0..b.dim() {
            for j in 0..b.dim() {
                s += ((ph[i] - ph[j]) * b.get(i, j)).norm_sqr();
            }
        }
        Ok(s.sqrt())
    }
}

/// Parameters of the two-site Bose-Hubbard model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DimerParams {
    pub j: f64,
    pub u: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub n_particles: usize,
    pub integrals: Integrals,
    pub gauge: Gauge,
    pub symmetry: SymmetrySpec,
    pub labels: Vec<String>,
    pub dimer: Option<DimerParams>,
    /// One-body matrix of the site imbalance `n_L - n_R`, when defined.
    pub imbalance: Option<Array2<Complex64>>,
}

impl ModelSpec {
    pub fn new(n_particles: usize, h: Array2<Complex64>, v: Vec<Complex64>, gauge: Gauge) -> Result<Self> {
        let integrals = Integrals { h, v };
        integrals.validate()?;
        let m = integrals.modes();
        if m == 0 {
            return Err(Error::InvalidModel("at least one mode is required".into()));
        }
        if n_particles == 0 {
            return Err(Error::InvalidModel("particle number must be positive".into()));
        }
        Ok(Self {
            n_particles,
            integrals,
            gauge,
            symmetry: SymmetrySpec { phases: vec![0.0; m], enabled: false },
            labels: (0..m).map(|i| format!("mode{i}")).collect(),
            dimer: None,
            imbalance: None,
        })
    }

    pub fn modes(&self) -> usize {
        self.integrals.modes()
    }

    pub fn h(&self) -> &Array2<Complex64> {
        &self.integrals.h
    }

    pub fn v_at(&self, i: usize, j: usize, q: usize, p: usize) -> Complex64 {
        self.integrals.v_at(i, j, q, p)
    }

    /// The gauge matrix `g`.
    pub fn gauge_matrix(&self) -> Array2<Complex64> {
        match self.gauge {
            Gauge::Zero => Array2::zeros((self.modes(), self.modes())),
            Gauge::OneBody => self.integrals.h.clone(),
        }
    }

    pub fn with_gauge(mut self, gauge: Gauge) -> Self {
        self.gauge = gauge;
        self
    }

    /// Two-site Bose-Hubbard model with hopping `j` and on-site `u`.
    pub fn bose_hubbard_dimer(j: f64, u: f64, n: usize) -> Result<Self> {
        if j <= 0.0 {
            return Err(Error::InvalidModel("hopping J must be positive".into()));
        }
        let h = Array2::from_shape_vec((2, 2), vec![ZERO, Complex64::new(-j, 0.0), Complex64::new(-j, 0.0), ZERO])
            .expect("2x2 shape");
        let mut v = vec![ZERO; 16];
        v[0] = Complex64::new(u, 0.0);
        v[15] = Complex64::new(u, 0.0);
        let mut spec = Self::new(n, h, v, Gauge::Zero)?;
        spec.labels = vec!["L".into(), "R".into()];
        spec.symmetry = SymmetrySpec { phases: vec![0.0, std::f64::consts::PI], enabled: false };
        let lambda = if n > 1 { u * (n as f64 - 1.0) / (2.0 * j) } else { 0.0 };
        spec.dimer = Some(DimerParams { j, u, lambda });
        let mut d = Array2::zeros((2, 2));
        d[[0, 0]] = Complex64::new(1.0, 0.0);
        d[[1, 1]] = Complex64::new(-1.0, 0.0);
        spec.imbalance = Some(d);
        Ok(spec)
    }

    /// Dimer at interaction parameter `lambda = U (N - 1) / (2 J)`.
    pub fn dimer_from_lambda(j: f64, lambda: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidModel("the interaction parameter needs N >= 2".into()));
        }
        Self::bose_hubbard_dimer(j, 2.0 * j * lambda / (n as f64 - 1.0), n)
    }

    /// The dimer in the even/odd orbitals `(L +- R)/sqrt 2`, where site
    /// exchange acts as the phases `(0, pi)`; symmetry is enabled.
    pub fn dimer_parity_basis(j: f64, lambda: f64, n: usize) -> Result<Self> {
        let site = Self::dimer_from_lambda(j, lambda, n)?;
        let mut spec = site.rotated(&parity_rotation())?;
        spec.labels = vec!["even".into(), "odd".into()];
        spec.symmetry = SymmetrySpec { phases: vec![0.0, std::f64::consts::PI], enabled: true };
        Ok(spec)
    }

    /// The same model expressed in the orbitals `phi'_j = sum_i u_ij phi_i`.
    pub fn rotated(&self, u: &Array2<Complex64>) -> Result<Self> {
        let integrals = self.integrals.rotated(u);
        let mut spec = Self::new(self.n_particles, integrals.h, integrals.v, self.gauge)?;
        spec.labels = self.labels.clone();
        spec.dimer = self.dimer;
        spec.imbalance = self.imbalance.as_ref().map(|d| adjoint(u).dot(d).dot(u));
        spec.symmetry = SymmetrySpec { phases: vec![0.0; self.modes()], enabled: false };
        Ok(spec)
    }

    /// `tr(D rho_1)` for the imbalance matrix `D`; `None` if the model has none.
    pub fn imbalance_of(&self, rho1: &BosonicOperator) -> Option<f64> {
        let d = self.imbalance.as_ref()?;
        let m = self.modes();
        let mut s = 0.0;
        for i in 0..m {
            for j in 0..m {
                s += (d[[j, i]] * rho1.get(i, j)).re;
            }
        }
        Some(s)
    }

    /// Self-trapping threshold of the dimer.
    pub fn lambda_crit() -> f64 {
        2.0
    }

    /// Quantum break time `sqrt(2N + 1) / (J lambda)` of the dimer.
    pub fn break_time(&self) -> Option<f64> {
        self.dimer.map(|d| (2.0 * self.n_particles as f64 + 1.0).sqrt() / (d.j * d.lambda))
    }
}

/// `(L + R)/sqrt 2, (L - R)/sqrt 2` as columns.
pub fn parity_rotation() -> Array2<Complex64> {
    let s = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    Array2::from_shape_vec((2, 2), vec![s, s, s, -s]).expect("2x2 shape")
}

/// Number-state matrix of `sum h_ij a_i^dag a_j + 1/2 sum v_ijqp a_i^dag
/// a_j^dag a_q a_p` on the o-particle sector. Either part may be omitted.
pub fn sector_operator(
    m: usize,
    o: usize,
    h: Option<&Array2<Complex64>>,
    v: Option<&[Complex64]>,
) -> Result<BosonicOperator> {
    let basis = FockBasis::get(m, o)?;
    let d = basis.dim();
    let mut mat = Array2::<Complex64>::zeros((d, d));
    let mut occ = vec![0u32; m];
    for (col, src) in basis.states().iter().enumerate() {
        if let Some(h) = h {
            for j in 0..m {
                if src[j] == 0 {
                    continue;
                }
                for i in 0..m {
                    let hij = h[[i, j]];
                    if hij == ZERO {
                        continue;
                    }
                    occ.copy_from_slice(src);
                    let mut amp = (occ[j] as f64).sqrt();
                    occ[j] -= 1;
                    occ[i] += 1;
                    amp *= (occ[i] as f64).sqrt();
                    mat[[basis.rank(&occ)?, col]] += hij * amp;
                }
            }
        }
        if let Some(v) = v {
            for p in 0..m {
                for q in 0..m {
                    occ.copy_from_slice(src);
                    if occ[p] == 0 {
                        continue;
                    }
                    let mut amp = (occ[p] as f64).sqrt();
                    occ[p] -= 1;
                    if occ[q] == 0 {
                        continue;
                    }
                    amp *= (occ[q] as f64).sqrt();
                    occ[q] -= 1;
                    let mid = occ.clone();
                    for j in 0..m {
                        for i in 0..m {
                            let x = v[((i * m + j) * m + q) * m + p];
                            if x == ZERO {
                                continue;
                            }
                            occ.copy_from_slice(&mid);
                            occ[j] += 1;
                            let mut a2 = amp * (occ[j] as f64).sqrt();
                            occ[i] += 1;
                            a2 *= (occ[i] as f64).sqrt();
                            mat[[basis.rank(&occ)?, col]] += x * (0.5 * a2);
                        }
                    }
                }
            }
        }
    }
    BosonicOperator::from_matrix(m, o, &mat)
}

/// `H~` on the o-particle sector with the one-body part `h - g`.
pub fn sector_hamiltonian(spec: &ModelSpec, o: usize) -> Result<BosonicOperator> {
    let hg = spec.h() - &spec.gauge_matrix();
    sector_operator(spec.modes(), o, Some(&hg), Some(&spec.integrals.v))
}

/// The pair interaction as a two-body operator.
pub fn interaction_operator(spec: &ModelSpec) -> Result<BosonicOperator> {
    sector_operator(spec.modes(), 2, None, Some(&spec.integrals.v))
}

fn check_trace(rho: &BosonicOperator) -> Result<()> {
    let t = rho.trace();
    if (t - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidArgument(format!(
            "order-{} density matrix has trace {t}, state is corrupted",
            rho.order()
        )));
    }
    Ok(())
}

/// `N tr(h rho_1) + N (N - 1)/2 tr(v rho_2)`.
pub fn energy(rho1: &BosonicOperator, rho2: &BosonicOperator, spec: &ModelSpec) -> Result<f64> {
    check_trace(rho1)?;
    check_trace(rho2)?;
    let n = spec.n_particles as f64;
    let h1 = BosonicOperator::from_matrix(spec.modes(), 1, spec.h())?;
    let v2 = interaction_operator(spec)?;
    Ok(n * h1.trace_product(rho1)? + 0.5 * n * (n - 1.0) * v2.trace_product(rho2)?)
}

/// The auxiliary two-particle Hamiltonian `[h_1 + h_2 + (N - 1) v] / 2`.
pub fn pair_hamiltonian(spec: &ModelSpec) -> Result<BosonicOperator> {
    let n = spec.n_particles as f64;
    let mut k2 = sector_operator(spec.modes(), 2, Some(spec.h()), None)?;
    k2.axpy(n - 1.0, &interaction_operator(spec)?)?;
    k2.scale(0.5);
    Ok(k2)
}

/// `N tr(k_2 rho_2)`; equals [`energy`] for compatible inputs.
pub fn energy_pair(rho2: &BosonicOperator, spec: &ModelSpec) -> Result<f64> {
    check_trace(rho2)?;
    Ok(spec.n_particles as f64 * pair_hamiltonian(spec)?.trace_product(rho2)?)
}
