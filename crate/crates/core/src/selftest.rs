//! Property suites checked against dense first-quantization oracles and
//! analytic reference states.
//!
//! Every check returns a [`CheckResult`] instead of panicking so that the
//! command line front end can print one line per check.

use std::time::Instant;

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bbgky::collision_integral;
use crate::cluster::{closure, compute_clusters};
use crate::error::Result;
use crate::fock::{binom_f64, FockBasis};
use crate::hamiltonian::{Gauge, ModelSpec};
use crate::numerics::{adjoint, unitary_propagator};
use crate::operator::{join, partial_trace, raise, rotate_basis, uid_split, BosonicOperator};
use crate::oracle::{bec_rdm, extract_rdm, noon_rdm, permanent_rdm, CIState};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckResult {
    fn new(name: &str, max_error: f64, tolerance: f64) -> Self {
        Self { name: name.to_string(), max_error, tolerance, passed: max_error.is_finite() && max_error < tolerance }
    }

    fn failed(name: &str, err: crate::Error) -> Self {
        Self { name: format!("{name} ({err})"), max_error: f64::NAN, tolerance: 0.0, passed: false }
    }
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {:<40} max error {:.3e} (tolerance {:.0e})", self.name, self.max_error, self.tolerance)
    }
}

/// Runs every suite and reports the elapsed wall time.
pub fn run_all(seed: u64) -> (Vec<CheckResult>, std::time::Duration) {
    let start = Instant::now();
    let suites: [(&str, fn(&mut ChaCha8Rng) -> Result<(f64, f64)>); 13] = [
        ("uid contraction-free", uid_contraction_free),
        ("uid covariance", uid_covariance),
        ("uid of bosonic identity", uid_identity),
        ("trace of raised operator", raise_trace_identity),
        ("join vs dense symmetrizer", join_vs_dense),
        ("clusters vs dense expansion", clusters_vs_dense),
        ("collision keeps contraction-free", collision_contraction_free),
        ("product BEC clusters vanish", bec_clusters_vanish),
        ("trace of second cluster", second_cluster_trace),
        ("NOON RDM", noon_fixture),
        ("permanent RDM", permanent_fixture),
        ("first-order closure", first_order_closure),
        ("partial trace vs dense", partial_trace_vs_dense),
    ];
    let mut out = Vec::with_capacity(suites.len());
    for (i, (name, f)) in suites.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        out.push(match f(&mut rng) {
            Ok((err, tol)) => CheckResult::new(name, err, tol),
            Err(e) => CheckResult::failed(name, e),
        });
    }
    (out, start.elapsed())
}

// ---------------------------------------------------------------------------
// dense first-quantization oracles

/// Isometry from number states of order `o` into the `m^o` tensor space;
/// column `n` is the normalized symmetrized Hartree product.
pub fn embedding(m: usize, o: usize) -> Result<Array2<Complex64>> {
    let basis = FockBasis::get(m, o)?;
    let big = m.pow(o as u32);
    let mut e = Array2::zeros((big, basis.dim()));
    let fact = |k: u32| (1..=k).map(|x| x as f64).product::<f64>();
    for idx in 0..big {
        let occ = occupation_of(idx, m, o);
        let col = basis.rank(&occ)?;
        let w: f64 = occ.iter().map(|&k| fact(k)).product::<f64>() / fact(o as u32);
        e[[idx, col]] = Complex64::new(w.sqrt(), 0.0);
    }
    Ok(e)
}

fn digits(mut idx: usize, m: usize, o: usize) -> Vec<usize> {
    let mut d = vec![0; o];
    for k in (0..o).rev() {
        d[k] = idx % m;
        idx /= m;
    }
    d
}

fn occupation_of(idx: usize, m: usize, o: usize) -> Vec<u32> {
    let mut occ = vec![0u32; m];
    for i in digits(idx, m, o) {
        occ[i] += 1;
    }
    occ
}

fn to_dense_fq(b: &BosonicOperator) -> Result<Array2<Complex64>> {
    let e = embedding(b.modes(), b.order())?;
    Ok(e.dot(&b.to_dense()).dot(&adjoint(&e)))
}

fn from_dense_fq(x: &Array2<Complex64>, m: usize, o: usize) -> Result<BosonicOperator> {
    let e = embedding(m, o)?;
    BosonicOperator::from_matrix(m, o, &adjoint(&e).dot(x).dot(&e))
}

/// Symmetrizer `S_o = sum_pi P_pi / o!` on the tensor space.
pub fn symmetrizer(m: usize, o: usize) -> Array2<Complex64> {
    let big = m.pow(o as u32);
    let perms = permutations(o);
    let w = 1.0 / perms.len() as f64;
    let mut s = Array2::zeros((big, big));
    for idx in 0..big {
        let d = digits(idx, m, o);
        for p in &perms {
            let target = p.iter().fold(0, |acc, &k| acc * m + d[k]);
            s[[target, idx]] += Complex64::new(w, 0.0);
        }
    }
    s
}

fn permutations(o: usize) -> Vec<Vec<usize>> {
    if o == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(o - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, o - 1);
            out.push(q);
        }
    }
    out
}

fn kron(a: &Array2<Complex64>, b: &Array2<Complex64>) -> Array2<Complex64> {
    let (ra, ca) = a.dim();
    let (rb, cb) = b.dim();
    let mut k = Array2::zeros((ra * rb, ca * cb));
    for i in 0..ra {
        for j in 0..ca {
            let aij = a[[i, j]];
            if aij == ZERO {
                continue;
            }
            for p in 0..rb {
                for q in 0..cb {
                    k[[i * rb + p, j * cb + q]] = aij * b[[p, q]];
                }
            }
        }
    }
    k
}

/// `binom(o1 + o2, o1) S (A x B) S` mapped back to number states.
pub fn dense_join(a: &BosonicOperator, b: &BosonicOperator) -> Result<BosonicOperator> {
    let (m, o) = (a.modes(), a.order() + b.order());
    let s = symmetrizer(m, o);
    let x = s.dot(&kron(&to_dense_fq(a)?, &to_dense_fq(b)?)).dot(&s);
    let scaled = x.mapv(|z| z * binom_f64(o, a.order()));
    from_dense_fq(&scaled, m, o)
}

/// Trace over the last particle in the tensor space.
pub fn dense_partial_trace(b: &BosonicOperator) -> Result<BosonicOperator> {
    let (m, o) = (b.modes(), b.order());
    let x = to_dense_fq(b)?;
    let small = m.pow(o as u32 - 1);
    let mut r = Array2::zeros((small, small));
    for i in 0..small {
        for j in 0..small {
            r[[i, j]] = (0..m).map(|k| x[[i * m + k, j * m + k]]).sum();
        }
    }
    from_dense_fq(&r, m, o - 1)
}

/// All set partitions of `0..n`.
fn set_partitions(n: usize) -> Vec<Vec<Vec<usize>>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in set_partitions(n - 1) {
        for k in 0..p.len() {
            let mut q = p.clone();
            q[k].push(n - 1);
            out.push(q);
        }
        let mut q = p.clone();
        q.push(vec![n - 1]);
        out.push(q);
    }
    out
}

/// Tensor-space operator acting as `blocks[k].1` on the particles `blocks[k].0`.
fn placed_product(m: usize, o: usize, blocks: &[(&[usize], &Array2<Complex64>)]) -> Array2<Complex64> {
    let big = m.pow(o as u32);
    let mut x = Array2::zeros((big, big));
    for r in 0..big {
        let dr = digits(r, m, o);
        for c in 0..big {
            let dc = digits(c, m, o);
            let mut z = Complex64::new(1.0, 0.0);
            for (parts, op) in blocks {
                let row = parts.iter().fold(0, |acc, &k| acc * m + dr[k]);
                let col = parts.iter().fold(0, |acc, &k| acc * m + dc[k]);
                z *= op[[row, col]];
                if z == ZERO {
                    break;
                }
            }
            x[[r, c]] = z;
        }
    }
    x
}

/// Clusters `c_1..c_o` from the dense symmetrized expansion
/// `rho_o = (sum over set partitions of products of clusters) S_o + c_o`.
pub fn dense_clusters(rhos: &[BosonicOperator]) -> Result<Vec<BosonicOperator>> {
    let m = rhos[0].modes();
    let mut dense: Vec<Array2<Complex64>> = Vec::new();
    let mut out = Vec::new();
    for (k, rho) in rhos.iter().enumerate() {
        let o = k + 1;
        let mut sum = Array2::zeros((m.pow(o as u32), m.pow(o as u32)));
        for part in set_partitions(o) {
            if part.len() == 1 {
                continue;
            }
            let blocks: Vec<(&[usize], &Array2<Complex64>)> =
                part.iter().map(|b| (b.as_slice(), &dense[b.len() - 1])).collect();
            sum = sum + placed_product(m, o, &blocks);
        }
        let products = sum.dot(&symmetrizer(m, o));
        let c = rho.sub(&from_dense_fq(&products, m, o)?)?;
        dense.push(to_dense_fq(&c)?);
        out.push(c);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// random inputs

pub fn random_hermitian(rng: &mut impl Rng, n: usize) -> Array2<Complex64> {
    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        a[[i, i]] = Complex64::new(rng.gen_range(-1.0..1.0), 0.0);
        for j in 0..i {
            let z = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            a[[i, j]] = z;
            a[[j, i]] = z.conj();
        }
    }
    a
}

pub fn random_operator(rng: &mut impl Rng, m: usize, o: usize) -> Result<BosonicOperator> {
    let d = crate::fock::dimension(m, o)?;
    BosonicOperator::from_matrix(m, o, &random_hermitian(rng, d))
}

pub fn random_unitary(rng: &mut impl Rng, m: usize) -> Result<Array2<Complex64>> {
    unitary_propagator(&random_hermitian(rng, m), 1.0)
}

pub fn random_state(rng: &mut impl Rng, m: usize, n: usize) -> Result<CIState> {
    let d = crate::fock::dimension(m, n)?;
    let mut a: Vec<Complex64> =
        (0..d).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    let norm = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    a.iter_mut().for_each(|z| *z /= norm);
    CIState::new(m, n, a)
}

/// A model with random Hermitian one- and two-body integrals.
pub fn random_model(rng: &mut impl Rng, m: usize, n: usize) -> Result<ModelSpec> {
    let h = random_hermitian(rng, m);
    let w = random_hermitian(rng, m * m);
    let mut v = vec![ZERO; m * m * m * m];
    for i in 0..m {
        for j in 0..m {
            for q in 0..m {
                for p in 0..m {
                    v[((i * m + j) * m + q) * m + p] = (w[[i * m + j, q * m + p]] + w[[j * m + i, p * m + q]]) * 0.5;
                }
            }
        }
    }
    ModelSpec::new(n, h, v, Gauge::Zero)
}

// ---------------------------------------------------------------------------
// suites; each returns (max error, tolerance)

fn uid_contraction_free(rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
    let mut err: f64 = 0.0;
    for m in 1..=4 {
        for o in 1..=4 {
            let b = random_operator(rng, m, o)?;
            let (red, irr) = uid_split(&b)?;
            err = err.max(partial_trace(&irr, 1)?.max_abs());
            // the reducible part carries every trace; splitting it again is idempotent
            err = err.max(uid_split(&red)?.1.max_abs());
        }
    }
    Ok((err, 1e-10))
}

fn uid_covariance(rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
    let mut err: f64 = 0.0;
    for m in 2..=4 {
        for o in 1..=4 {
            let b = random_operator(rng, m, o)?;
            let u = random_unitary(rng, m)?;
            let (red, irr) = uid_split(&b)?;
            let (red_r, irr_r) = uid_split(&rotate_basis(&b, &u)?)?;
            err = err.max(rotate_basis(&red, &u)?.max_abs_diff(&red_r)?);
            err = err.max(rotate_basis(&irr, &u)?.max_abs_diff(&irr_r)?);
        }
    }
    Ok((err, 1e-10))
}

fn uid_identity(_: &mut ChaCha8Rng) -> Result<(f64, f64)> {
    let mut err: f64 = 0.0;
    for m in 1..=4 {
        for o in 1..=4 {
            err = err.max(uid_split(&BosonicOperator::identity(m, o)?)?.1.max_abs());
        }
    }
    Ok((err, 1e-10))
}

fn raise_trace_identity(rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
    let mut err: f64 = 0.0;
    for m in 1..=4 {
        for o in 1..=4 {
            let b = random_operator(rng, m, o)?;
            let lhs = partial_trace(&raise(&b, 1)?, 1)?;
            let of = o as f64;
            let a = (2.0 * of + m as f64) / ((of + 1.0) * (of + 1.0));
            let c = (of / (of + 1.0)).powi(2);
            let mut rhs = b.scaled(a);
            rhs.axpy(c, &raise(&partial_trace(&b, 1)?, 1)?)?;
            err = err.max(lhs.max_abs_diff(&rhs)?);
        }
    }
    Ok((err, 1e-10))
}

fn join_vs_dense(rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
    let mut err: f64 = 0.0;
    for m in 1..=3usize {
        for o1 in 1..=3 {
            for o2 in 1..=3 {
                if m.pow((o1 + o2) as u32) > 100 {
                    continue;
                }
                let a = random_operator(rng, m, o1)?;
                let b = random_operator(rng, m, o2)?;
                err = err.max(join(&a, &b)?.max_abs_diff(&dense_join(&a, &b)?)?);
            }
        }
    }
    Ok((err, 1e-9))
}

fn partial_trace_vs_dense(rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
    let mut err: f64 = 0.0;
    for m in 1..=3 {
        for o in 1..=4 {
            let b = random_operator(rng, m, o)?;
            err = err.max(partial_trace(&b, 1)?.max_abs_diff(&dense_partial_trace(&b)?)?);
        }
    }
    Ok((err, 1e-10))
}

fn clusters_vs_dense(rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
    let mut err: f64 = 0.0;
    for m in 1..=3 {
        let a = random_state(rng, m, 5)?;
        let rhos = (1..=4).map(|o| extract_rdm(&a, o)).collect::<Result<Vec<_>>>()?;
        let set = compute_clusters(&rhos)?;
        let dense = dense_clusters(&rhos)?;
        for (c, d) in set.clusters().iter().zip(&dense) {
            err = err.max(c.max_abs_diff(d)?);
        }
    }
    Ok((err, 1e-9))
}

fn collision_contraction_free(rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
    let mut err: f64 = 0.0;
    for m in 2..=3 {
        let spec = random_model(rng, m, 6)?;
        for o in 1..=3 {
            let (_, irr) = uid_split(&random_operator(rng, m, o + 1)?)?;
            let i = collision_integral(&irr, &spec, o)?;
            err = err.max(partial_trace(&i, 1)?.max_abs());
        }
    }
    Ok((err, 1e-10))
}

fn bec_clusters_vanish(rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
    let mut err: f64 = 0.0;
    for m in 2..=3 {
        let mut phi: Vec<Complex64> =
            (0..m).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let norm = phi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        phi.iter_mut().for_each(|z| *z /= norm);
        let rhos = (1..=4).map(|o| bec_rdm(&phi, o)).collect::<Result<Vec<_>>>()?;
        let a = CIState::bec(&phi, 6)?;
        for (o, r) in rhos.iter().enumerate() {
            err = err.max(r.max_abs_diff(&extract_rdm(&a, o + 1)?)?);
        }
        let set = compute_clusters(&rhos)?;
        for c in &set.clusters()[1..] {
            err = err.max(c.max_abs());
        }
    }
    Ok((err, 1e-10))
}

fn second_cluster_trace(rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
    let mut err: f64 = 0.0;
    for m in 2..=4 {
        let a = random_state(rng, m, 4)?;
        let r1 = extract_rdm(&a, 1)?;
        let rhos = vec![r1.clone(), extract_rdm(&a, 2)?];
        let set = compute_clusters(&rhos)?;
        let c2 = set.cluster(2).expect("second cluster");
        let sq = r1.to_dense().dot(&r1.to_dense());
        let want = BosonicOperator::from_fn(m, 1, |i, j| (r1.get(i, j) - sq[[i, j]]) * 0.5)?;
        err = err.max(partial_trace(c2, 1)?.max_abs_diff(&want)?);
    }
    Ok((err, 1e-10))
}

fn noon_fixture(_: &mut ChaCha8Rng) -> Result<(f64, f64)> {
    let mut err: f64 = 0.0;
    for n in [4, 7] {
        let a = CIState::noon(n, 0.7)?;
        for o in 1..n.min(4) {
            err = err.max(extract_rdm(&a, o)?.max_abs_diff(&noon_rdm(o)?)?);
        }
    }
    Ok((err, 1e-10))
}

fn permanent_fixture(_: &mut ChaCha8Rng) -> Result<(f64, f64)> {
    let mut err: f64 = 0.0;
    for occ in [&[3u32, 2][..], &[2, 1, 2], &[4, 0, 1]] {
        let a = CIState::fock(occ)?;
        let n: u32 = occ.iter().sum();
        for o in 1..=(n as usize).min(4) {
            err = err.max(extract_rdm(&a, o)?.max_abs_diff(&permanent_rdm(occ, o)?)?);
        }
    }
    Ok((err, 1e-10))
}

/// First-order closure against its diagonal natural-orbital form.
fn first_order_closure(rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
    let mut err: f64 = 0.0;
    for m in 2..=4 {
        let a = random_state(rng, m, 5)?;
        let r1 = extract_rdm(&a, 1)?;
        let eig = r1.eig()?;
        let lam = &eig.values;
        let tr2: f64 = lam.iter().map(|x| x * x).sum();
        let mf = m as f64;
        let pairs = FockBasis::get(m, 2)?;
        let diag = BosonicOperator::from_fn(m, 2, |x, y| {
            if x != y {
                return ZERO;
            }
            let occ = &pairs.states()[x];
            let modes: Vec<usize> = (0..m).flat_map(|i| std::iter::repeat_n(i, occ[i] as usize)).collect();
            let (q, p) = (modes[0], modes[1]);
            let term = |q: usize, p: usize| lam[q] * (lam[p] / 2.0 + (1.0 - lam[q]) / (mf + 2.0));
            let mut v = if q == p { 2.0 * term(q, q) } else { term(q, p) + term(p, q) };
            v -= (1.0 - tr2) / ((mf + 2.0) * (mf + 1.0));
            Complex64::new(v, 0.0)
        })?;
        let ours = rotate_basis(&closure(&[r1])?, &eig.vectors)?;
        err = err.max(ours.max_abs_diff(&diag)?);
    }
    Ok((err, 1e-10))
}
