//! Dense Hermitian eigendecomposition.
//!
//! Cyclic complex Jacobi up to dimension [`JACOBI_MAX_DIM`], Householder
//! tridiagonalization followed by implicit QL above that.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub const JACOBI_MAX_DIM: usize = 64;

const MAX_SWEEPS: usize = 100;
const MAX_QL_ITER: usize = 60;

/// Eigenvalues in ascending order with orthonormal eigenvector columns.
#[derive(Debug, Clone)]
pub struct EigResult {
    pub values: Array1<f64>,
    pub vectors: Array2<Complex64>,
}

impl EigResult {
    /// Eigenvector `k` as an owned vector.
    pub fn vector(&self, k: usize) -> Array1<Complex64> {
        self.vectors.column(k).to_owned()
    }

    pub fn min(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }
}

/// Eigendecomposition of a Hermitian matrix. Only the lower triangle and the
/// real part of the diagonal are read.
pub fn eigh(a: &Array2<Complex64>) -> Result<EigResult> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "eigh needs a square matrix");
    let mut h = Array2::<Complex64>::zeros((n, n));
    for i in 0..n {
        h[[i, i]] = Complex64::new(a[[i, i]].re, 0.0);
        for j in 0..i {
            h[[i, j]] = a[[i, j]];
            h[[j, i]] = a[[i, j]].conj();
        }
    }
    let (values, vectors) = if n <= JACOBI_MAX_DIM { jacobi(h)? } else { tridiag_ql(h)? };
    Ok(finish(values, vectors))
}

fn finish(values: Vec<f64>, vectors: Array2<Complex64>) -> EigResult {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps the tie order deterministic
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut vals = Array1::zeros(n);
    let mut vecs = Array2::zeros((n, n));
    for (k, &src) in order.iter().enumerate() {
        vals[k] = values[src];
        let col = vectors.column(src);
        let pivot = col.iter().copied().find(|z| z.norm() > 1e-8).unwrap_or(Complex64::new(1.0, 0.0));
        let phase = pivot.conj() / pivot.norm();
        for i in 0..n {
            vecs[[i, k]] = col[i] * phase;
        }
    }
    EigResult { values: vals, vectors: vecs }
}

fn jacobi(mut a: Array2<Complex64>) -> Result<(Vec<f64>, Array2<Complex64>)> {
    let n = a.nrows();
    let mut v = Array2::<Complex64>::eye(n);
    if n < 2 {
        return Ok(((0..n).map(|i| a[[i, i]].re).collect(), v));
    }
    let scale: f64 = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if scale == 0.0 {
        return Ok((vec![0.0; n], v));
    }
    // rounding keeps every off-diagonal element near eps * scale, so the
    // floor of the off-diagonal mass grows with n
    let tol = (n as f64 * f64::EPSILON * scale).powi(2);
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[[p, q]].norm_sqr();
            }
        }
        if off <= tol {
            return Ok(((0..n).map(|i| a[[i, i]].re).collect(), v));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                let mag = apq.norm();
                if mag == 0.0 {
                    continue;
                }
                let app = a[[p, p]].re;
                let aqq = a[[q, q]].re;
                let e = apq / mag;
                let theta = (aqq - app) / (2.0 * mag);
                let t = theta.signum() / (theta.abs() + theta.hypot(1.0));
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let ec = e.conj();
                // A <- A J with J = [[c, s], [-s e*, c e*]] on (p, q)
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = akp * c - akq * ec * s;
                    a[[k, q]] = akp * s + akq * ec * c;
                }
                // A <- J^dagger A
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = apk * c - aqk * e * s;
                    a[[q, k]] = apk * s + aqk * e * c;
                }
                a[[p, q]] = Complex64::new(0.0, 0.0);
                a[[q, p]] = Complex64::new(0.0, 0.0);
                a[[p, p]] = Complex64::new(a[[p, p]].re, 0.0);
                a[[q, q]] = Complex64::new(a[[q, q]].re, 0.0);
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = vkp * c - vkq * ec * s;
                    v[[k, q]] = vkp * s + vkq * ec * c;
                }
            }
        }
    }
    Err(Error::EigenNoConvergence { dim: n })
}

fn tridiag_ql(mut a: Array2<Complex64>) -> Result<(Vec<f64>, Array2<Complex64>)> {
    let n = a.nrows();
    let zero = Complex64::new(0.0, 0.0);
    let mut q = Array2::<Complex64>::eye(n);
    for k in 0..n.saturating_sub(2) {
        let xnorm: f64 = ((k + 1)..n).map(|i| a[[i, k]].norm_sqr()).sum::<f64>().sqrt();
        if xnorm == 0.0 {
            continue;
        }
        let x0 = a[[k + 1, k]];
        let ph = if x0.norm() > 0.0 { x0 / x0.norm() } else { Complex64::new(1.0, 0.0) };
        let alpha = -ph * xnorm;
        let mut w = vec![zero; n];
        for i in (k + 1)..n {
            w[i] = a[[i, k]];
        }
        w[k + 1] -= alpha;
        let wn: f64 = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if wn == 0.0 {
            continue;
        }
        for z in w.iter_mut() {
            *z /= wn;
        }
        // A <- H A H with H = I - 2 w w^dagger; p = A w, K = w^dagger p
        let mut p = vec![zero; n];
        for i in 0..n {
            let mut s = zero;
            for j in (k + 1)..n {
                s += a[[i, j]] * w[j];
            }
            p[i] = s;
        }
        let kk: Complex64 = ((k + 1)..n).map(|i| w[i].conj() * p[i]).sum();
        // H A H = A - 2 w p^dag - 2 p w^dag + 4 K w w^dag
        for i in 0..n {
            for j in 0..n {
                let upd = w[i] * p[j].conj() * 2.0 + p[i] * w[j].conj() * 2.0 - w[i] * w[j].conj() * kk * 4.0;
                a[[i, j]] -= upd;
            }
        }
        // Q <- Q H
        for i in 0..n {
            let s: Complex64 = ((k + 1)..n).map(|j| q[[i, j]] * w[j]).sum();
            for j in (k + 1)..n {
                q[[i, j]] -= s * w[j].conj() * 2.0;
            }
        }
    }
    // make the subdiagonal real and non-negative
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    let mut phase = vec![Complex64::new(1.0, 0.0); n];
    for k in 0..n {
        d[k] = a[[k, k]].re;
        if k + 1 < n {
            let sub = a[[k + 1, k]];
            let mag = sub.norm();
            e[k] = mag;
            phase[k + 1] = if mag > 0.0 { phase[k] * sub / mag } else { phase[k] };
        }
    }
    for i in 0..n {
        for j in 0..n {
            q[[i, j]] *= phase[j];
        }
    }
    let mut z = Array2::<f64>::eye(n);
    ql_implicit(&mut d, &mut e, &mut z)?;
    let mut vecs = Array2::<Complex64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let mut s = zero;
            for k in 0..n {
                s += q[[i, k]] * z[[k, j]];
            }
            vecs[[i, j]] = s;
        }
    }
    Ok((d, vecs))
}

/// Implicit QL on a real symmetric tridiagonal matrix with diagonal `d` and
/// subdiagonal `e[0..n-1]`. Rotations are accumulated into `z`.
fn ql_implicit(d: &mut [f64], e: &mut [f64], z: &mut Array2<f64>) -> Result<()> {
    let n = d.len();
    if n == 0 {
        return Ok(());
    }
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > MAX_QL_ITER {
                return Err(Error::EigenNoConvergence { dim: n });
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for k in 0..n {
                    let f = z[[k, i + 1]];
                    z[[k, i + 1]] = s * z[[k, i]] + c * f;
                    z[[k, i]] = c * z[[k, i]] - s * f;
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}
