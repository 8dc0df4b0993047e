//! Symmetrized cluster expansion and the compatible closure.
//!
//! `rho_o = (sum over products of lower clusters) S_o + c_o`. The product
//! terms are grouped by integer partitions of `o` and evaluated with two
//! joining rules, so no explicit permutation sums are needed.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::operator::{join, partial_trace, reducible_from_traces, all_traces, trace_norm, BosonicOperator};

/// Compatibility tolerance on `trace_norm(tr_1 rho_{o+1} - rho_o)`.
pub const COMPATIBILITY_TOL: f64 = 1e-6;

/// An integer partition of the order written as `(size, multiplicity)`
/// pairs with strictly increasing sizes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PartitionSymbol {
    parts: Vec<(usize, usize)>,
}

impl PartitionSymbol {
    pub fn new(mut parts: Vec<(usize, usize)>) -> Result<Self> {
        parts.sort_unstable();
        for w in parts.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidArgument(format!("repeated cluster size {}", w[0].0)));
            }
        }
        if parts.is_empty() || parts.iter().any(|&(s, n)| s == 0 || n == 0) {
            return Err(Error::InvalidArgument("sizes and multiplicities must be positive".into()));
        }
        Ok(Self { parts })
    }

    pub fn parts(&self) -> &[(usize, usize)] {
        &self.parts
    }

    pub fn order(&self) -> usize {
        self.parts.iter().map(|&(s, n)| s * n).sum()
    }

    /// The partition `{o}` standing for the cluster itself.
    pub fn is_trivial(&self) -> bool {
        self.parts.len() == 1 && self.parts[0].1 == 1
    }
}

/// All partitions of `o`, in reverse lexicographic order of their
/// non-increasing part lists (`{o}` first, `{1, ..., 1}` last).
pub fn integer_partitions(o: usize) -> Vec<PartitionSymbol> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(rem: usize, max: usize, cur: &mut Vec<usize>, out: &mut Vec<PartitionSymbol>) {
        if rem == 0 {
            let mut parts: Vec<(usize, usize)> = Vec::new();
            for &s in cur.iter().rev() {
                match parts.last_mut() {
                    Some((ls, n)) if *ls == s => *n += 1,
                    _ => parts.push((s, 1)),
                }
            }
            out.push(PartitionSymbol { parts });
            return;
        }
        for s in (1..=rem.min(max)).rev() {
            cur.push(s);
            rec(rem - s, s, cur, out);
            cur.pop();
        }
    }
    if o > 0 {
        rec(o, o, &mut cur, &mut out);
    }
    out
}

/// Partitions of `o` other than `{o}`.
pub fn nontrivial_symbols(o: usize) -> Vec<PartitionSymbol> {
    integer_partitions(o).into_iter().filter(|s| !s.is_trivial()).collect()
}

/// Clusters `c_1 = rho_1, ..., c_max` with a cache of evaluated symbols.
#[derive(Debug, Clone)]
pub struct ClusterSet {
    clusters: Vec<BosonicOperator>,
    cache: HashMap<PartitionSymbol, BosonicOperator>,
}

impl ClusterSet {
    /// Cluster of order `o` (1-based).
    pub fn cluster(&self, o: usize) -> Option<&BosonicOperator> {
        o.checked_sub(1).and_then(|i| self.clusters.get(i))
    }

    pub fn max_order(&self) -> usize {
        self.clusters.len()
    }

    pub fn clusters(&self) -> &[BosonicOperator] {
        &self.clusters
    }

    /// Evaluates a product symbol, caching every intermediate.
    pub fn eval_symbol(&mut self, s: &PartitionSymbol) -> Result<BosonicOperator> {
        if let Some(v) = self.cache.get(s) {
            return Ok(v.clone());
        }
        let parts = s.parts();
        let value = if parts.len() == 1 {
            let (sigma, n) = parts[0];
            let c = self
                .cluster(sigma)
                .ok_or_else(|| Error::InvalidArgument(format!("cluster of order {sigma} is not available")))?
                .clone();
            if n == 1 {
                c
            } else {
                let prev = self.eval_symbol(&PartitionSymbol { parts: vec![(sigma, n - 1)] })?;
                join(&prev, &c)?.scaled(1.0 / n as f64)
            }
        } else {
            let head = PartitionSymbol { parts: parts[..parts.len() - 1].to_vec() };
            let tail = PartitionSymbol { parts: vec![parts[parts.len() - 1]] };
            let a = self.eval_symbol(&head)?;
            let b = self.eval_symbol(&tail)?;
            join(&a, &b)?
        };
        self.cache.insert(s.clone(), value.clone());
        Ok(value)
    }

    /// Sum of all product terms of order `o`, i.e. `rho_o - c_o`.
    pub fn product_terms(&mut self, o: usize) -> Result<BosonicOperator> {
        let m = self.clusters[0].modes();
        let mut sum = BosonicOperator::zeros(m, o)?;
        for s in nontrivial_symbols(o) {
            sum.axpy(1.0, &self.eval_symbol(&s)?)?;
        }
        Ok(sum)
    }
}

/// `trace_norm(tr_1(upper) - lower)`, skipping the eigensolver when the
/// difference is negligible elementwise.
pub fn compatibility_defect(upper: &BosonicOperator, lower: &BosonicOperator) -> Result<f64> {
    let d = partial_trace(upper, 1)?.sub(lower)?;
    if d.max_abs() < 1e-14 {
        return Ok(d.frobenius_norm() * (d.dim() as f64).sqrt());
    }
    trace_norm(&d)
}

fn check_inputs(rhos: &[BosonicOperator]) -> Result<()> {
    if rhos.is_empty() {
        return Err(Error::InvalidArgument("at least the 1-RDM is required".into()));
    }
    for (k, r) in rhos.iter().enumerate() {
        if r.order() != k + 1 || r.modes() != rhos[0].modes() {
            return Err(Error::Mismatch(format!("entry {k} has order {} and m={}", r.order(), r.modes())));
        }
    }
    for k in 1..rhos.len() {
        let defect = compatibility_defect(&rhos[k], &rhos[k - 1])?;
        if defect > COMPATIBILITY_TOL {
            return Err(Error::Incompatible { order: k, defect });
        }
    }
    Ok(())
}

/// Clusters of orders `1..=rhos.len()` from `rhos[k] = rho_{k+1}`.
pub fn compute_clusters(rhos: &[BosonicOperator]) -> Result<ClusterSet> {
    check_inputs(rhos)?;
    let mut set = ClusterSet { clusters: vec![rhos[0].clone()], cache: HashMap::new() };
    for o in 2..=rhos.len() {
        let c = rhos[o - 1].sub(&set.product_terms(o)?)?;
        set.clusters.push(c);
    }
    Ok(set)
}

/// Compatible closure: the order `n + 1` density matrix whose reducible part
/// follows from `rho_1, ..., rho_n` and whose contraction-free part is that
/// of the cluster expansion with the highest cluster set to zero.
pub fn closure(rhos: &[BosonicOperator]) -> Result<BosonicOperator> {
    let mut set = compute_clusters(rhos)?;
    closure_from_clusters(rhos, &mut set)
}

/// [`closure`] reusing already computed clusters.
pub fn closure_from_clusters(rhos: &[BosonicOperator], set: &mut ClusterSet) -> Result<BosonicOperator> {
    let top = rhos.len() + 1;
    let m = rhos[0].modes();
    let eta = set.product_terms(top)?;
    let eta_red = reducible_from_traces(m, top, &all_traces(&eta)?)?;
    let mut known = Vec::with_capacity(top);
    known.push(partial_trace(&rhos[0], 1)?);
    known.extend(rhos.iter().cloned());
    let rho_red = reducible_from_traces(m, top, &known)?;
    let mut out = eta;
    out.axpy(-1.0, &eta_red)?;
    out.axpy(1.0, &rho_red)?;
    Ok(out)
}
