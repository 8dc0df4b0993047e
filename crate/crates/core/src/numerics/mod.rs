//! Linear algebra and time integration.

mod eig;
mod ode;

pub use eig::{eigh, EigResult, JACOBI_MAX_DIM};
pub use ode::{integrate, IntegrationStats, IntegratorOptions, OutputAction, Recorder, StepHooks};

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Pseudo-inverse solve `y = (A A^T)^+ b` for a real symmetric positive
/// semi-definite `aat`. Eigenvalues below `cutoff * max` are dropped.
pub fn solve_dual(aat: &Array2<f64>, b: &Array1<f64>, cutoff: f64) -> Result<Array1<f64>> {
    let n = aat.nrows();
    let c = aat.mapv(|x| Complex64::new(x, 0.0));
    let eig = eigh(&c)?;
    let max = eig.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut y = Array1::zeros(n);
    if max == 0.0 {
        return Ok(y);
    }
    for k in 0..n {
        let lam = eig.values[k];
        if lam.abs() <= cutoff * max {
            continue;
        }
        let v = eig.vectors.column(k);
        // eigenvectors of a real symmetric matrix can carry a global phase
        let proj: Complex64 = (0..n).map(|i| v[i].conj() * b[i]).sum();
        for i in 0..n {
            y[i] += (v[i] * proj).re / lam;
        }
    }
    Ok(y)
}

/// Solves the square real system `a x = b` by Gaussian elimination with
/// partial pivoting. Pivots below `1e-12` times the largest entry count as
/// singular.
pub fn solve_linear(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::Mismatch(format!("{}x{} system with {} right-hand sides", n, a.ncols(), b.len())));
    }
    let mut m = a.clone();
    let mut x = b.clone();
    let scale = m.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[[i, col]].abs().total_cmp(&m[[j, col]].abs()))
            .expect("non-empty pivot range");
        if m[[piv, col]].abs() <= 1e-12 * scale || scale == 0.0 {
            return Err(Error::Singular("linear system has a vanishing pivot"));
        }
        if piv != col {
            for k in 0..n {
                m.swap([piv, k], [col, k]);
            }
            x.swap(piv, col);
        }
        for r in col + 1..n {
            let f = m[[r, col]] / m[[col, col]];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                m[[r, k]] -= f * m[[col, k]];
            }
            x[r] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        let s: f64 = (col + 1..n).map(|k| m[[col, k]] * x[k]).sum();
        x[col] = (x[col] - s) / m[[col, col]];
    }
    Ok(x)
}

/// Conjugate transpose.
pub fn adjoint(a: &Array2<Complex64>) -> Array2<Complex64> {
    a.t().mapv(|z| z.conj())
}

/// Frobenius norm.
pub fn frobenius(a: &Array2<Complex64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest elementwise modulus.
pub fn max_abs(a: &Array2<Complex64>) -> f64 {
    a.iter().fold(0.0, |m, z| m.max(z.norm()))
}

/// `exp(-i t g)` for a Hermitian `g`.
pub fn unitary_propagator(g: &Array2<Complex64>, t: f64) -> Result<Array2<Complex64>> {
    let eig = eigh(g)?;
    let n = g.nrows();
    let v = &eig.vectors;
    let mut d = Array2::zeros((n, n));
    for k in 0..n {
        d[[k, k]] = Complex64::from_polar(1.0, -t * eig.values[k]);
    }
    Ok(v.dot(&d).dot(&adjoint(v)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn dual_identity() {
        let b = array![1.0, -2.0, 3.0];
        let y = solve_dual(&Array2::eye(3), &b, 1e-12).unwrap();
        for i in 0..3 {
            assert!((y[i] - b[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn dual_rank_deficient() {
        // A has two identical rows
        let a = array![[1.0, 2.0, 0.0], [1.0, 2.0, 0.0], [0.0, 1.0, 1.0]];
        let aat = a.dot(&a.t());
        let c_true = array![0.3, -0.1, 0.7];
        let b = a.dot(&c_true);
        let y = solve_dual(&aat, &b, 1e-12).unwrap();
        let c = a.t().dot(&y);
        let r = &a.dot(&c) - &b;
        assert!(r.iter().all(|x| x.abs() < 1e-12));
        // b orthogonal to range gives zero
        let y = solve_dual(&aat, &array![1.0, -1.0, 0.0], 1e-12).unwrap();
        assert!(y.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn linear_solve() {
        let a = array![[0.0, 2.0, 1.0], [1.0, 1.0, 0.0], [3.0, 0.0, -1.0]];
        let x_true = array![1.0, -2.0, 0.5];
        let x = solve_linear(&a, &a.dot(&x_true)).unwrap();
        assert!((&x - &x_true).iter().all(|v| v.abs() < 1e-14));
        assert!(solve_linear(&array![[1.0, 2.0], [2.0, 4.0]], &array![1.0, 1.0]).is_err());
    }

    #[test]
    fn propagator_unitary() {
        let g = array![[Complex64::new(0.0, 0.0), Complex64::new(-1.0, 0.0)], [
            Complex64::new(-1.0, 0.0),
            Complex64::new(0.0, 0.0)
        ]];
        let u = unitary_propagator(&g, 0.7).unwrap();
        assert!((u[[0, 0]] - Complex64::new(0.7f64.cos(), 0.0)).norm() < 1e-14);
        assert!((u[[0, 1]] - Complex64::new(0.0, 0.7f64.sin())).norm() < 1e-14);
    }
}
