//! Bosonic number states for `m` modes and `o` particles.
//!
//! States are ordered lexicographically descending, so `(o, 0, ..., 0)` has
//! rank 0 and `(0, ..., 0, o)` has rank `dim - 1`. For one particle the rank
//! of `(0, .., 1, .., 0)` is the mode index, which lets order-1 operators be
//! read as plain `m x m` matrices.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use crate::error::{Error, Result};

/// Exact binomial coefficient, `None` on overflow.
pub fn binom_checked(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) is divisible by (i + 1) after the multiplication
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

/// Exact binomial coefficient. Panics on overflow, which cannot happen for
/// the particle numbers this crate handles.
pub fn binom(n: u64, k: u64) -> u128 {
    binom_checked(n, k).expect("binomial coefficient overflow")
}

/// Binomial coefficient as a float.
pub fn binom_f64(n: usize, k: usize) -> f64 {
    binom(n as u64, k as u64) as f64
}

/// Number of bosonic number states, `binom(o + m - 1, m - 1)`.
pub fn dimension(m: usize, o: usize) -> Result<usize> {
    if m == 0 {
        return Err(Error::InvalidArgument("mode count must be at least 1".into()));
    }
    binom_checked((o + m - 1) as u64, (m - 1) as u64)
        .and_then(|d| usize::try_from(d).ok())
        .ok_or(Error::DimensionOverflow { m, o })
}

/// Occupation numbers of one number state.
pub type Occupation = Vec<u32>;

/// Enumerated number-state basis for fixed `(m, o)`.
#[derive(Debug)]
pub struct FockBasis {
    m: usize,
    o: usize,
    states: Vec<Occupation>,
    // counts[r][n] = number of states of n particles in the modes r..m
    counts: Vec<Vec<usize>>,
}

impl FockBasis {
    /// Builds the basis directly. Prefer [`FockBasis::get`], which caches.
    pub fn new(m: usize, o: usize) -> Result<Self> {
        let dim = dimension(m, o)?;
        let mut counts = vec![vec![0usize; o + 1]; m + 1];
        for n in 0..=o {
            counts[m][n] = usize::from(n == 0);
        }
        for r in (0..m).rev() {
            for n in 0..=o {
                counts[r][n] = (0..=n).map(|k| counts[r + 1][n - k]).sum();
            }
        }
        let mut states = Vec::with_capacity(dim);
        let mut cur = vec![0u32; m];
        enumerate(&mut cur, 0, o, &mut states);
        debug_assert_eq!(states.len(), dim);
        Ok(Self { m, o, states, counts })
    }

    /// Shared, lazily built basis for `(m, o)`.
    pub fn get(m: usize, o: usize) -> Result<Arc<FockBasis>> {
        static CACHE: OnceLock<RwLock<HashMap<(usize, usize), Arc<FockBasis>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        if let Some(b) = cache.read().expect("basis cache poisoned").get(&(m, o)) {
            return Ok(b.clone());
        }
        let built = Arc::new(FockBasis::new(m, o)?);
        let mut w = cache.write().expect("basis cache poisoned");
        Ok(w.entry((m, o)).or_insert(built).clone())
    }

    pub fn modes(&self) -> usize {
        self.m
    }

    pub fn order(&self) -> usize {
        self.o
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[Occupation] {
        &self.states
    }

    /// Occupation vector at `index`.
    pub fn unrank(&self, index: usize) -> Result<&Occupation> {
        self.states.get(index).ok_or(Error::IndexOutOfRange { index, dim: self.dim() })
    }

    /// Index of an occupation vector.
    pub fn rank(&self, occ: &[u32]) -> Result<usize> {
        if occ.len() != self.m {
            return Err(Error::InvalidArgument(format!(
                "occupation has {} modes, basis has {}",
                occ.len(),
                self.m
            )));
        }
        let total: usize = occ.iter().map(|&n| n as usize).sum();
        if total != self.o {
            return Err(Error::InvalidArgument(format!(
                "occupation sums to {total}, basis order is {}",
                self.o
            )));
        }
        Ok(self.rank_unchecked(occ))
    }

    fn rank_unchecked(&self, occ: &[u32]) -> usize {
        let mut rem = self.o;
        let mut idx = 0;
        for r in 0..self.m.saturating_sub(1) {
            let v = occ[r] as usize;
            // states sharing the prefix but with more particles in mode r come first
            for k in (v + 1)..=rem {
                idx += self.counts[r + 1][rem - k];
            }
            rem -= v;
        }
        idx
    }
}

fn enumerate(cur: &mut [u32], r: usize, rem: usize, out: &mut Vec<Occupation>) {
    let m = cur.len();
    if r == m - 1 {
        cur[r] = rem as u32;
        out.push(cur.to_vec());
        return;
    }
    for k in (0..=rem).rev() {
        cur[r] = k as u32;
        enumerate(cur, r + 1, rem - k, out);
    }
    cur[r] = 0;
}

/// Index table for adding number states of orders `o1` and `o2`.
///
/// `index[i * d2 + j]` is the rank of `unrank(i) + unrank(j)` at order
/// `o1 + o2`, and `weight[i * d2 + j] = prod_r sqrt(binom(a_r + c_r, c_r))`.
#[derive(Debug)]
pub struct ComposeTable {
    pub m: usize,
    pub o1: usize,
    pub o2: usize,
    pub d1: usize,
    pub d2: usize,
    pub index: Vec<usize>,
    pub weight: Vec<f64>,
}

impl ComposeTable {
    pub fn new(m: usize, o1: usize, o2: usize) -> Result<Self> {
        let b1 = FockBasis::get(m, o1)?;
        let b2 = FockBasis::get(m, o2)?;
        let b = FockBasis::get(m, o1 + o2)?;
        let (d1, d2) = (b1.dim(), b2.dim());
        let mut index = Vec::with_capacity(d1 * d2);
        let mut weight = Vec::with_capacity(d1 * d2);
        let mut sum = vec![0u32; m];
        for a in b1.states() {
            for c in b2.states() {
                let mut w = 1.0;
                for r in 0..m {
                    sum[r] = a[r] + c[r];
                    if a[r] > 0 && c[r] > 0 {
                        w *= binom_f64(sum[r] as usize, c[r] as usize);
                    }
                }
                index.push(b.rank_unchecked(&sum));
                weight.push(w.sqrt());
            }
        }
        Ok(Self { m, o1, o2, d1, d2, index, weight })
    }

    /// Shared, lazily built table for `(m, o1, o2)`.
    pub fn get(m: usize, o1: usize, o2: usize) -> Result<Arc<ComposeTable>> {
        type Cache = RwLock<HashMap<(usize, usize, usize), Arc<ComposeTable>>>;
        static CACHE: OnceLock<Cache> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        let key = (m, o1, o2);
        if let Some(t) = cache.read().expect("compose cache poisoned").get(&key) {
            return Ok(t.clone());
        }
        let built = Arc::new(ComposeTable::new(m, o1, o2)?);
        let mut w = cache.write().expect("compose cache poisoned");
        Ok(w.entry(key).or_insert(built).clone())
    }

    #[inline]
    pub fn compose(&self, i: usize, j: usize) -> usize {
        self.index[i * self.d2 + j]
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weight[i * self.d2 + j]
    }
}

/// Rank of the sum of state `i` at order `o1` and state `j` at order `o2`.
pub fn compose_index(m: usize, o1: usize, i: usize, o2: usize, j: usize) -> Result<usize> {
    let t = ComposeTable::get(m, o1, o2)?;
    if i >= t.d1 {
        return Err(Error::IndexOutOfRange { index: i, dim: t.d1 });
    }
    if j >= t.d2 {
        return Err(Error::IndexOutOfRange { index: j, dim: t.d2 });
    }
    Ok(t.compose(i, j))
}

/// Sparse action of `a_q^dagger a_p` on every basis state of one order.
///
/// `entries[(q * m + p)]` lists `(source, target, amplitude)` with
/// `a_q^dagger a_p |source> = amplitude |target>`.
#[derive(Debug)]
pub struct HoppingTable {
    pub m: usize,
    pub o: usize,
    pub entries: Vec<Vec<(usize, usize, f64)>>,
}

impl HoppingTable {
    pub fn new(m: usize, o: usize) -> Result<Self> {
        let basis = FockBasis::get(m, o)?;
        let mut entries = vec![Vec::new(); m * m];
        let mut tmp = vec![0u32; m];
        for (s, occ) in basis.states().iter().enumerate() {
            for p in 0..m {
                if occ[p] == 0 {
                    continue;
                }
                for q in 0..m {
                    tmp.copy_from_slice(occ);
                    let mut amp = (tmp[p] as f64).sqrt();
                    tmp[p] -= 1;
                    amp *= (tmp[q] as f64 + 1.0).sqrt();
                    tmp[q] += 1;
                    entries[q * m + p].push((s, basis.rank_unchecked(&tmp), amp));
                }
            }
        }
        Ok(Self { m, o, entries })
    }

    pub fn get(m: usize, o: usize) -> Result<Arc<HoppingTable>> {
        static CACHE: OnceLock<RwLock<HashMap<(usize, usize), Arc<HoppingTable>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        if let Some(t) = cache.read().expect("hopping cache poisoned").get(&(m, o)) {
            return Ok(t.clone());
        }
        let built = Arc::new(HoppingTable::new(m, o)?);
        let mut w = cache.write().expect("hopping cache poisoned");
        Ok(w.entry((m, o)).or_insert(built).clone())
    }

    pub fn pair(&self, q: usize, p: usize) -> &[(usize, usize, f64)] {
        &self.entries[q * self.m + p]
    }
}
