//! Necessary representability checks: positivity of each `rho_o` and of the
//! normalized particle-hole matrix `K`.
//!
//! `K` is indexed by ordered mode pairs `(i, j) -> i * m + j`.

use std::collections::BTreeMap;

use ndarray::Array2;
use num_complex::Complex64;

use crate::bbgky::HierarchyState;
use crate::error::{Error, Result};
use crate::fock::ComposeTable;
use crate::numerics::{eigh, EigResult};
use crate::operator::BosonicOperator;

/// Default negativity threshold.
pub const DEFAULT_EPSILON: f64 = -1e-10;

#[inline]
fn f(i: usize, j: usize) -> f64 {
    if i == j {
        1.0
    } else {
        std::f64::consts::FRAC_1_SQRT_2
    }
}

/// Index of the pair state `e_i + e_j` in the order-2 basis.
fn pair_table(m: usize) -> Result<impl Fn(usize, usize) -> usize> {
    let t = ComposeTable::get(m, 1, 1)?;
    Ok(move |i: usize, j: usize| t.compose(i, j))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMatrix {
    pub m: usize,
    pub n_particles: usize,
    /// Hermitian `m^2 x m^2` matrix.
    pub matrix: Array2<Complex64>,
    /// `N_K = N (N + m - 1) - N^2 tr(rho_1^2)`.
    pub norm: f64,
}

impl KMatrix {
    pub fn eig(&self) -> Result<EigResult> {
        eigh(&self.matrix)
    }

    pub fn trace(&self) -> f64 {
        self.matrix.diag().iter().map(|z| z.re).sum()
    }

    /// `<x| K |x>`.
    pub fn expectation(&self, x: &[Complex64]) -> f64 {
        quad(&self.matrix, x)
    }
}

fn quad(a: &Array2<Complex64>, x: &[Complex64]) -> f64 {
    let n = x.len();
    let mut s = Complex64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            s += x[i].conj() * a[[i, j]] * x[j];
        }
    }
    s.re
}

fn check_pair(rho1: &BosonicOperator, rho2: &BosonicOperator) -> Result<usize> {
    if rho1.order() != 1 || rho2.order() != 2 || rho1.modes() != rho2.modes() {
        return Err(Error::Mismatch("expected a 1-RDM and a 2-RDM of equal mode count".into()));
    }
    Ok(rho1.modes())
}

/// `N_K = N (N + m - 1) - N^2 tr(rho_1^2)`.
pub fn k_norm(rho1: &BosonicOperator, n: usize) -> Result<f64> {
    let nf = n as f64;
    let m = rho1.modes() as f64;
    let nk = nf * (nf + m - 1.0) - nf * nf * rho1.trace_product(rho1)?;
    if nk.abs() < 1e-300 {
        return Err(Error::Singular("particle-hole normalization vanishes"));
    }
    Ok(nk)
}

/// The normalized particle-hole matrix built from `rho_1` and `rho_2`.
pub fn k_matrix(rho1: &BosonicOperator, rho2: &BosonicOperator, n: usize) -> Result<KMatrix> {
    let m = check_pair(rho1, rho2)?;
    let idx = pair_table(m)?;
    let nf = n as f64;
    let norm = k_norm(rho1, n)?;
    let mut k = Array2::<Complex64>::zeros((m * m, m * m));
    for i1 in 0..m {
        for j1 in 0..m {
            for i2 in 0..m {
                for j2 in 0..m {
                    let mut x = rho2.get(idx(i2, j1), idx(i1, j2)) * (nf * (nf - 1.0) * f(i2, j1) * f(i1, j2));
                    if j1 == j2 {
                        x += rho1.get(i2, i1) * nf;
                    }
                    x -= rho1.get(j1, i1) * rho1.get(i2, j2) * (nf * nf);
                    k[[i1 * m + j1, i2 * m + j2]] = x / norm;
                }
            }
        }
    }
    Ok(KMatrix { m, n_particles: n, matrix: k, norm })
}

/// Change of `K` caused by a contraction-free change `c2` of `rho_2`
/// (`rho_1`, hence the normalization, is unchanged).
pub fn delta2(c2: &BosonicOperator, n: usize, norm: f64) -> Result<Array2<Complex64>> {
    let m = c2.modes();
    let idx = pair_table(m)?;
    let nf = n as f64;
    let mut d = Array2::<Complex64>::zeros((m * m, m * m));
    for i1 in 0..m {
        for j1 in 0..m {
            for i2 in 0..m {
                for j2 in 0..m {
                    d[[i1 * m + j1, i2 * m + j2]] =
                        c2.get(idx(i2, j1), idx(i1, j2)) * (nf * (nf - 1.0) * f(i2, j1) * f(i1, j2) / norm);
                }
            }
        }
    }
    Ok(d)
}

/// Time derivative of `K` given the derivatives `r1`, `r2` of `rho_1`, `rho_2`.
pub fn k_derivative(
    k: &KMatrix,
    rho1: &BosonicOperator,
    r1: &BosonicOperator,
    r2: &BosonicOperator,
) -> Result<Array2<Complex64>> {
    let m = check_pair(r1, r2)?;
    let idx = pair_table(m)?;
    let nf = k.n_particles as f64;
    let tr = r1.trace_product(rho1)?;
    let mut t = Array2::<Complex64>::zeros((m * m, m * m));
    for i1 in 0..m {
        for j1 in 0..m {
            for i2 in 0..m {
                for j2 in 0..m {
                    let (a, b) = (i1 * m + j1, i2 * m + j2);
                    let mut x = k.matrix[[a, b]] * (2.0 * nf * nf * tr);
                    x += r2.get(idx(i2, j1), idx(i1, j2)) * (nf * (nf - 1.0) * f(i2, j1) * f(i1, j2));
                    if j1 == j2 {
                        x += r1.get(i2, i1) * nf;
                    }
                    x -= (r1.get(j1, i1) * rho1.get(i2, j2) + rho1.get(j1, i1) * r1.get(i2, j2)) * (nf * nf);
                    t[[a, b]] = x / k.norm;
                }
            }
        }
    }
    Ok(t)
}

/// Spectral minima of one state.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentabilityReport {
    pub time: f64,
    /// `min eig rho_o` for `o = 1..order`.
    pub min_eigs: Vec<f64>,
    /// `min eig K`, present when the state has a 2-RDM.
    pub k_min: Option<f64>,
    pub k_trace: Option<f64>,
    pub epsilon: f64,
}

impl RepresentabilityReport {
    pub fn d_violated(&self) -> bool {
        self.min_eigs.iter().any(|&x| x < self.epsilon)
    }

    pub fn k_violated(&self) -> bool {
        self.k_min.is_some_and(|x| x < self.epsilon)
    }
}

/// Eigen-decomposes every `rho_o` and `K`.
pub fn check(state: &HierarchyState, n: usize, epsilon: f64) -> Result<RepresentabilityReport> {
    let min_eigs = state.rhos.iter().map(|r| Ok(r.eig()?.min())).collect::<Result<Vec<_>>>()?;
    let (k_min, k_trace) = if state.order() >= 2 {
        let k = k_matrix(state.rho(1), state.rho(2), n)?;
        (Some(k.eig()?.min()), Some(k.trace()))
    } else {
        (None, None)
    };
    Ok(RepresentabilityReport { time: state.time, min_eigs, k_min, k_trace, epsilon })
}

/// First times at which each minimum dropped below `epsilon`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NegativityTracker {
    pub epsilon: f64,
    /// Keyed by order.
    pub t_neg: BTreeMap<usize, f64>,
    pub t_neg_k: Option<f64>,
}

impl NegativityTracker {
    pub fn new(epsilon: f64) -> Self {
        Self { epsilon, ..Default::default() }
    }

    pub fn update(&mut self, r: &RepresentabilityReport) {
        for (k, &x) in r.min_eigs.iter().enumerate() {
            if x < self.epsilon {
                self.t_neg.entry(k + 1).or_insert(r.time);
            }
        }
        if r.k_violated() && self.t_neg_k.is_none() {
            self.t_neg_k = Some(r.time);
        }
    }
}
