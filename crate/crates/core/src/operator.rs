//! Hermitian bosonic o-body operators and their super-operators.
//!
//! Elements are stored as the packed lower triangle, row by row, so the
//! upper triangle is always the conjugate of the lower one.

use std::io::{Read, Write};

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fock::{binom, binom_f64, dimension, ComposeTable, FockBasis};
use crate::numerics::{adjoint, eigh, EigResult};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[inline]
fn tri(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

#[derive(Debug, Clone, PartialEq)]
pub struct BosonicOperator {
    m: usize,
    order: usize,
    dim: usize,
    data: Vec<Complex64>,
}

impl BosonicOperator {
    pub fn zeros(m: usize, order: usize) -> Result<Self> {
        let dim = dimension(m, order)?;
        Ok(Self { m, order, dim, data: vec![ZERO; dim * (dim + 1) / 2] })
    }

    /// Bosonic identity on the o-particle sector.
    pub fn identity(m: usize, order: usize) -> Result<Self> {
        let mut op = Self::zeros(m, order)?;
        for i in 0..op.dim {
            op.data[tri(i, i)] = Complex64::new(1.0, 0.0);
        }
        Ok(op)
    }

    /// `|0><0|` on the zero-particle sector.
    pub fn vacuum(m: usize) -> Result<Self> {
        Self::identity(m, 0)
    }

    /// Builds from a function evaluated on the lower triangle; the imaginary
    /// part of diagonal values is dropped.
    pub fn from_fn(m: usize, order: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Result<Self> {
        let mut op = Self::zeros(m, order)?;
        for i in 0..op.dim {
            for j in 0..i {
                op.data[tri(i, j)] = f(i, j);
            }
            op.data[tri(i, i)] = Complex64::new(f(i, i).re, 0.0);
        }
        Ok(op)
    }

    /// Reads the lower triangle of a square matrix.
    pub fn from_matrix(m: usize, order: usize, a: &Array2<Complex64>) -> Result<Self> {
        let dim = dimension(m, order)?;
        if a.nrows() != dim || a.ncols() != dim {
            return Err(Error::Mismatch(format!(
                "matrix is {}x{}, sector (m={m}, o={order}) has dimension {dim}",
                a.nrows(),
                a.ncols()
            )));
        }
        Self::from_fn(m, order, |i, j| a[[i, j]])
    }

    /// `|psi><psi|` for a vector in the number-state basis.
    pub fn projector(m: usize, order: usize, psi: &Array1<Complex64>) -> Result<Self> {
        let dim = dimension(m, order)?;
        if psi.len() != dim {
            return Err(Error::Mismatch(format!("vector length {} for dimension {dim}", psi.len())));
        }
        Self::from_fn(m, order, |i, j| psi[i] * psi[j].conj())
    }

    /// Rebuilds from the packed lower triangle.
    pub fn from_packed(m: usize, order: usize, data: Vec<Complex64>) -> Result<Self> {
        let dim = dimension(m, order)?;
        if data.len() != dim * (dim + 1) / 2 {
            return Err(Error::Mismatch(format!("packed length {} for dimension {dim}", data.len())));
        }
        let mut op = Self { m, order, dim, data };
        for i in 0..dim {
            let d = op.data[tri(i, i)].re;
            op.data[tri(i, i)] = Complex64::new(d, 0.0);
        }
        Ok(op)
    }

    pub fn modes(&self) -> usize {
        self.m
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn packed(&self) -> &[Complex64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        if i >= j {
            self.data[tri(i, j)]
        } else {
            self.data[tri(j, i)].conj()
        }
    }

    /// Sets element `(i, j)` and, implicitly, its mirror.
    pub fn set(&mut self, i: usize, j: usize, z: Complex64) {
        if i == j {
            self.data[tri(i, i)] = Complex64::new(z.re, 0.0);
        } else if i > j {
            self.data[tri(i, j)] = z;
        } else {
            self.data[tri(j, i)] = z.conj();
        }
    }

    pub fn to_dense(&self) -> Array2<Complex64> {
        Array2::from_shape_fn((self.dim, self.dim), |(i, j)| self.get(i, j))
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.data[tri(i, i)].re).sum()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.data[tri(i, i)].re).collect()
    }

    fn same_shape(&self, other: &Self) -> Result<()> {
        if self.m != other.m || self.order != other.order {
            return Err(Error::Mismatch(format!(
                "(m={}, o={}) vs (m={}, o={})",
                self.m, self.order, other.m, other.order
            )));
        }
        Ok(())
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Self) -> Result<()> {
        self.same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b * alpha;
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        let mut r = self.clone();
        r.axpy(1.0, other)?;
        Ok(r)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        let mut r = self.clone();
        r.axpy(-1.0, other)?;
        Ok(r)
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut r = self.clone();
        r.scale(alpha);
        r
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in &mut self.data {
            *a *= alpha;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..=i {
                let w = if i == j { 1.0 } else { 2.0 };
                s += w * self.data[tri(i, j)].norm_sqr();
            }
        }
        s.sqrt()
    }

    /// Largest elementwise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).norm())))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, a| m.max(a.norm()))
    }

    pub fn eig(&self) -> Result<EigResult> {
        eigh(&self.to_dense())
    }

    /// Expectation value `<psi|B|psi>`.
    pub fn expectation(&self, psi: &[Complex64]) -> Complex64 {
        let mut s = ZERO;
        for i in 0..self.dim {
            for j in 0..self.dim {
                s += psi[i].conj() * self.get(i, j) * psi[j];
            }
        }
        s
    }

    /// `tr(A B)` for two operators of the same sector.
    pub fn trace_product(&self, other: &Self) -> Result<f64> {
        self.same_shape(other)?;
        let mut s = ZERO;
        for i in 0..self.dim {
            for j in 0..self.dim {
                s += self.get(i, j) * other.get(j, i);
            }
        }
        Ok(s.re)
    }

    /// Writes interleaved real and imaginary parts of the packed lower
    /// triangle into `out`, which must have length `dim * (dim + 1)`.
    pub fn write_real(&self, out: &mut [f64]) {
        for (k, z) in self.data.iter().enumerate() {
            out[2 * k] = z.re;
            out[2 * k + 1] = z.im;
        }
    }

    /// Inverse of [`write_real`](Self::write_real).
    pub fn read_real(m: usize, order: usize, src: &[f64]) -> Result<Self> {
        let dim = dimension(m, order)?;
        let len = dim * (dim + 1) / 2;
        if src.len() != 2 * len {
            return Err(Error::Mismatch(format!("real slice length {} for dimension {dim}", src.len())));
        }
        let data = (0..len).map(|k| Complex64::new(src[2 * k], src[2 * k + 1])).collect();
        Self::from_packed(m, order, data)
    }

    /// Number of reals produced by [`write_real`](Self::write_real).
    pub fn real_len(m: usize, order: usize) -> Result<usize> {
        let dim = dimension(m, order)?;
        Ok(dim * (dim + 1))
    }

    /// Little-endian binary layout: `m`, `o`, `dim` as u64, then the packed
    /// lower triangle row by row as `(re, im)` f64 pairs.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        for h in [self.m as u64, self.order as u64, self.dim as u64] {
            w.write_all(&h.to_le_bytes())?;
        }
        for z in &self.data {
            w.write_all(&z.re.to_le_bytes())?;
            w.write_all(&z.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut word = [0u8; 8];
        let mut header = [0usize; 3];
        for h in &mut header {
            r.read_exact(&mut word)?;
            *h = usize::try_from(u64::from_le_bytes(word))
                .map_err(|_| Error::InvalidArgument("header field too large".into()))?;
        }
        let [m, order, dim] = header;
        if dimension(m, order)? != dim {
            return Err(Error::Mismatch(format!("header dimension {dim} does not match m={m}, o={order}")));
        }
        let len = dim * (dim + 1) / 2;
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            r.read_exact(&mut word)?;
            let re = f64::from_le_bytes(word);
            r.read_exact(&mut word)?;
            let im = f64::from_le_bytes(word);
            data.push(Complex64::new(re, im));
        }
        Self::from_packed(m, order, data)
    }
}

/// `-i [h, rho]`, the unitary part of an equation of motion.
pub fn von_neumann(h: &BosonicOperator, rho: &BosonicOperator) -> Result<BosonicOperator> {
    h.same_shape(rho)?;
    let hd = h.to_dense();
    let rd = rho.to_dense();
    let c = hd.dot(&rd) - rd.dot(&hd);
    let mi = Complex64::new(0.0, -1.0);
    BosonicOperator::from_fn(h.m, h.order, |i, j| mi * c[[i, j]])
}

/// Normalized k-fold partial trace (trace preserving).
pub fn partial_trace(b: &BosonicOperator, k: usize) -> Result<BosonicOperator> {
    if k == 0 || k > b.order {
        return Err(Error::InvalidArgument(format!("cannot trace {k} particles from order {}", b.order)));
    }
    let lo = b.order - k;
    let t = ComposeTable::get(b.m, lo, k)?;
    let norm = 1.0 / binom_f64(b.order, k);
    BosonicOperator::from_fn(b.m, lo, |a, c| {
        let mut s = ZERO;
        for l in 0..t.d2 {
            s += b.get(t.compose(a, l), t.compose(c, l)) * (t.weight(a, l) * t.weight(c, l));
        }
        s * norm
    })
}

/// Joins two operators into one of order `o1 + o2`.
pub fn join(a: &BosonicOperator, b: &BosonicOperator) -> Result<BosonicOperator> {
    if a.m != b.m {
        return Err(Error::Mismatch(format!("mode counts {} and {}", a.m, b.m)));
    }
    let t = ComposeTable::get(a.m, a.order, b.order)?;
    let mut r = BosonicOperator::zeros(a.m, a.order + b.order)?;
    let ad = a.to_dense();
    let bd = b.to_dense();
    for i in 0..t.d1 {
        for j in 0..t.d1 {
            let aij = ad[[i, j]];
            if aij == ZERO {
                continue;
            }
            for k in 0..t.d2 {
                let row = t.compose(i, k);
                let wik = t.weight(i, k);
                for l in 0..t.d2 {
                    let col = t.compose(j, l);
                    if row < col {
                        continue;
                    }
                    r.data[tri(row, col)] += aij * bd[[k, l]] * (wik * t.weight(j, l));
                }
            }
        }
    }
    for i in 0..r.dim {
        let d = r.data[tri(i, i)].re;
        r.data[tri(i, i)] = Complex64::new(d, 0.0);
    }
    Ok(r)
}

/// k-fold raising: adds `k` particles in an undefined state.
pub fn raise(b: &BosonicOperator, k: usize) -> Result<BosonicOperator> {
    if k == 0 {
        return Ok(b.clone());
    }
    let t = ComposeTable::get(b.m, b.order, k)?;
    let mut r = BosonicOperator::zeros(b.m, b.order + k)?;
    let norm = 1.0 / binom_f64(b.order + k, k);
    let bd = b.to_dense();
    for i in 0..t.d1 {
        for j in 0..t.d1 {
            let bij = bd[[i, j]];
            if bij == ZERO {
                continue;
            }
            for c in 0..t.d2 {
                let row = t.compose(i, c);
                let col = t.compose(j, c);
                if row < col {
                    continue;
                }
                r.data[tri(row, col)] += bij * (t.weight(i, c) * t.weight(j, c) * norm);
            }
        }
    }
    for i in 0..r.dim {
        let d = r.data[tri(i, i)].re;
        r.data[tri(i, i)] = Complex64::new(d, 0.0);
    }
    Ok(r)
}

/// Coefficient of the k-th term of the reducible part at order `o`, with
/// `k` the order of the traced operator.
fn reducible_coefficient(m: usize, o: usize, k: usize) -> f64 {
    let num = binom(o as u64, k as u64).pow(2);
    let den = binom((2 * o + m - 2) as u64, (o - k) as u64);
    let sign = if (o + k).is_multiple_of(2) { -1.0 } else { 1.0 };
    // the ratio is formed from exact integers before rounding
    let (q, r) = (num / den, num % den);
    sign * (q as f64 + r as f64 / den as f64)
}

/// The reducible component of an order-`o` operator whose partial traces are
/// given. `traces[k]` must be the order-k operator `tr_{o-k}(B)` for
/// `k = 0..o`, with `traces[0] = tr(B) |0><0|`.
pub fn reducible_from_traces(m: usize, o: usize, traces: &[BosonicOperator]) -> Result<BosonicOperator> {
    if traces.len() < o {
        return Err(Error::InvalidArgument(format!("need {o} traces, got {}", traces.len())));
    }
    let mut red = BosonicOperator::zeros(m, o)?;
    for (k, tk) in traces.iter().enumerate().take(o) {
        if tk.order != k || tk.m != m {
            return Err(Error::Mismatch(format!("trace {k} has order {} and m={}", tk.order, tk.m)));
        }
        let c = reducible_coefficient(m, o, k);
        red.axpy(c, &raise(tk, o - k)?)?;
    }
    Ok(red)
}

/// All partial traces `tr_{o-k}(B)` for `k = 0..o`, indexed by `k`.
pub fn all_traces(b: &BosonicOperator) -> Result<Vec<BosonicOperator>> {
    let o = b.order;
    let mut rev = Vec::with_capacity(o);
    let mut cur = b.clone();
    for _ in 0..o {
        cur = partial_trace(&cur, 1)?;
        rev.push(cur.clone());
    }
    rev.reverse();
    Ok(rev)
}

/// Unitarily invariant split into reducible and contraction-free parts.
pub fn uid_split(b: &BosonicOperator) -> Result<(BosonicOperator, BosonicOperator)> {
    let traces = all_traces(b)?;
    let red = reducible_from_traces(b.m, b.order, &traces)?;
    let irr = b.sub(&red)?;
    Ok((red, irr))
}

/// Sum of absolute eigenvalues.
pub fn trace_norm(b: &BosonicOperator) -> Result<f64> {
    Ok(b.eig()?.values.iter().map(|x| x.abs()).sum())
}

/// Half the trace norm of `a - b`.
pub fn trace_distance(a: &BosonicOperator, b: &BosonicOperator) -> Result<f64> {
    Ok(0.5 * trace_norm(&a.sub(b)?)?)
}

/// Representation of a single-particle unitary `u` on the o-particle
/// sector: column `n` holds the number state built from the orbitals
/// `phi'_j = sum_i u_ij phi_i`, expanded in the original number states.
pub fn lift_unitary(u: &Array2<Complex64>, order: usize) -> Result<Array2<Complex64>> {
    let m = u.nrows();
    if u.ncols() != m {
        return Err(Error::InvalidArgument("single-particle matrix must be square".into()));
    }
    let basis = FockBasis::get(m, order)?;
    let d = basis.dim();
    let mut gamma = Array2::zeros((d, d));
    for (col, occ) in basis.states().iter().enumerate() {
        let mut vec = vec![Complex64::new(1.0, 0.0)];
        let mut cur_order = 0;
        let mut norm = 1.0;
        for (j, &nj) in occ.iter().enumerate() {
            for s in 0..nj {
                vec = apply_creation(m, cur_order, &vec, |i| u[[i, j]])?;
                cur_order += 1;
                norm *= (s + 1) as f64;
            }
        }
        let scale = 1.0 / norm.sqrt();
        for (row, z) in vec.iter().enumerate() {
            gamma[[row, col]] = z * scale;
        }
    }
    Ok(gamma)
}

/// Applies `sum_i coeff(i) a_i^dagger` to a vector of order `o`.
fn apply_creation(m: usize, o: usize, v: &[Complex64], coeff: impl Fn(usize) -> Complex64) -> Result<Vec<Complex64>> {
    let t = ComposeTable::get(m, o, 1)?;
    let mut out = vec![ZERO; dimension(m, o + 1)?];
    for (s, &amp) in v.iter().enumerate() {
        if amp == ZERO {
            continue;
        }
        for i in 0..m {
            // weight(s, i) = sqrt(n_i + 1)
            out[t.compose(s, i)] += amp * coeff(i) * t.weight(s, i);
        }
    }
    Ok(out)
}

fn check_unitary(u: &Array2<Complex64>) -> Result<()> {
    let m = u.nrows();
    let p = adjoint(u).dot(u);
    for i in 0..m {
        for j in 0..m {
            let want = if i == j { 1.0 } else { 0.0 };
            if (p[[i, j]] - want).norm() > 1e-12 {
                return Err(Error::InvalidArgument("matrix is not unitary to 1e-12".into()));
            }
        }
    }
    Ok(())
}

/// Matrix of `b` in the rotated orbitals `phi'_j = sum_i u_ij phi_i`,
/// i.e. `Gamma(u)^dagger B Gamma(u)`.
pub fn rotate_basis(b: &BosonicOperator, u: &Array2<Complex64>) -> Result<BosonicOperator> {
    if u.nrows() != b.m {
        return Err(Error::Mismatch(format!("unitary is {}x{} for m={}", u.nrows(), u.ncols(), b.m)));
    }
    check_unitary(u)?;
    let g = lift_unitary(u, b.order)?;
    let r = adjoint(&g).dot(&b.to_dense()).dot(&g);
    BosonicOperator::from_matrix(b.m, b.order, &r)
}

/// One-body operator from an `m x m` matrix (lower triangle is read).
pub fn one_body(h: &Array2<Complex64>) -> Result<BosonicOperator> {
    BosonicOperator::from_matrix(h.nrows(), 1, h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn fock_projector(m: usize, occ: &[u32]) -> BosonicOperator {
        let o: u32 = occ.iter().sum();
        let b = FockBasis::get(m, o as usize).unwrap();
        let i = b.rank(occ).unwrap();
        BosonicOperator::from_fn(m, o as usize, |a, bb| if a == i && bb == i { c(1.0) } else { c(0.0) }).unwrap()
    }

    #[test]
    fn trace_of_pair_state() {
        let r = partial_trace(&fock_projector(2, &[1, 1]), 1).unwrap();
        let want = fock_projector(2, &[1, 0]).add(&fock_projector(2, &[0, 1])).unwrap().scaled(0.5);
        assert!(r.max_abs_diff(&want).unwrap() < 1e-15);
    }

    #[test]
    fn full_trace_is_vacuum() {
        let b = fock_projector(3, &[1, 2, 0]).scaled(0.7);
        let r = partial_trace(&b, 3).unwrap();
        assert_eq!(r.order(), 0);
        assert!((r.get(0, 0).re - 0.7).abs() < 1e-15);
    }

    #[test]
    fn raise_single() {
        let r = raise(&fock_projector(2, &[1, 0]), 1).unwrap();
        let want = fock_projector(2, &[2, 0]).add(&fock_projector(2, &[1, 1]).scaled(0.5)).unwrap();
        assert!(r.max_abs_diff(&want).unwrap() < 1e-15);
        let id = raise(&BosonicOperator::vacuum(3).unwrap(), 1).unwrap();
        assert!(id.max_abs_diff(&BosonicOperator::identity(3, 1).unwrap()).unwrap() < 1e-15);
    }

    #[test]
    fn join_single() {
        let p = fock_projector(2, &[1, 0]);
        let r = join(&p, &p).unwrap();
        assert!(r.max_abs_diff(&fock_projector(2, &[2, 0]).scaled(2.0)).unwrap() < 1e-14);
    }

    #[test]
    fn uid_of_identity() {
        for m in 1..=3 {
            for o in 1..=4 {
                let (_, irr) = uid_split(&BosonicOperator::identity(m, o).unwrap()).unwrap();
                assert!(irr.max_abs() < 1e-12, "m={m} o={o}");
            }
        }
    }

    #[test]
    fn first_order_reducible_is_trace_part() {
        let h = Array2::from_shape_vec((2, 2), vec![c(1.0), Complex64::new(0.2, 0.1), Complex64::new(0.2, -0.1), c(3.0)])
            .unwrap();
        let b = one_body(&h).unwrap();
        let (red, _) = uid_split(&b).unwrap();
        assert!(red.max_abs_diff(&BosonicOperator::identity(2, 1).unwrap().scaled(2.0)).unwrap() < 1e-14);
    }

    #[test]
    fn binary_round_trip() {
        let b = BosonicOperator::from_fn(3, 2, |i, j| Complex64::new((i * 7 + j) as f64, i as f64 - j as f64)).unwrap();
        let mut buf = Vec::new();
        b.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 24 + 16 * 21);
        let r = BosonicOperator::read_binary(buf.as_slice()).unwrap();
        assert_eq!(r, b);
    }

    #[test]
    fn lift_identity_and_swap() {
        let id = Array2::<Complex64>::eye(2);
        let g = lift_unitary(&id, 3).unwrap();
        assert!((g - Array2::<Complex64>::eye(4)).iter().all(|z| z.norm() < 1e-15));
        let swap = Array2::from_shape_vec((2, 2), vec![c(0.0), c(1.0), c(1.0), c(0.0)]).unwrap();
        let g = lift_unitary(&swap, 2).unwrap();
        // |2,0> maps to |0,2>
        assert!((g[[2, 0]] - c(1.0)).norm() < 1e-15);
    }

    #[test]
    fn distance_of_orthogonal_states() {
        let a = fock_projector(2, &[2, 0]);
        let b = fock_projector(2, &[0, 2]);
        assert!((trace_distance(&a, &b).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(trace_distance(&a, &a).unwrap(), 0.0);
    }
}
