//! Set partitions of `{1, ..., k}` and the Faà di Bruno sums built on them.
//!
//! The k-th derivative of a composite `f(u(x))` is a sum over all partitions
//! `π` of `{1, ..., k}`:
//!
//! ```text
//! (f ∘ u)^(k) = Σ_π f^(|π|)(u) · Π_{B ∈ π} u^(|B|)
//! ```
//!
//! The flow derivatives `X^(k)` solve an SDE whose drift, diffusion and jump
//! coefficients have exactly this shape, with `u` replaced by the flow and
//! `f` by the SDE coefficients.
//!
//! Partitions are generated from restricted-growth strings. Within a
//! partition, blocks are ordered by their smallest element; the list of all
//! partitions of `{1, ..., k}` is ordered by decreasing restricted-growth
//! string, which puts the all-singletons partition first and the one-block
//! partition last. All sums iterate in this order, so floating-point results
//! are reproducible run to run.

use std::fmt;

use crate::error::{Error, Result};
use crate::model::CoefficientSet;
use crate::simulate::FlowState;

/// Default largest order cached by [`PartitionTable::default`].
pub const DEFAULT_MAX_ORDER: usize = 6;

/// A partition of `{1, ..., k}` into nonempty disjoint blocks.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SetPartition {
    k: usize,
    blocks: Vec<Vec<usize>>,
}

impl SetPartition {
    /// Builds a partition from arbitrary blocks, validating coverage and
    /// disjointness and putting the blocks in canonical order.
    pub fn from_blocks(k: usize, blocks: Vec<Vec<usize>>) -> Result<Self> {
        if k == 0 {
            return Err(Error::param("k", "ground set must be nonempty"));
        }
        let mut seen = vec![false; k + 1];
        let mut blocks: Vec<Vec<usize>> = blocks
            .into_iter()
            .map(|mut b| {
                b.sort_unstable();
                b
            })
            .collect();
        for b in &blocks {
            if b.is_empty() {
                return Err(Error::param("blocks", "empty block"));
            }
            for &e in b {
                if e == 0 || e > k {
                    return Err(Error::param("blocks", format!("element {e} outside 1..={k}")));
                }
                if seen[e] {
                    return Err(Error::param("blocks", format!("element {e} appears twice")));
                }
                seen[e] = true;
            }
        }
        if let Some(missing) = (1..=k).find(|&e| !seen[e]) {
            return Err(Error::param("blocks", format!("element {missing} not covered")));
        }
        blocks.sort_unstable_by_key(|b| b[0]);
        Ok(SetPartition { k, blocks })
    }

    /// Decodes a restricted-growth string `a` (`a[0] = 0`,
    /// `a[i] <= 1 + max(a[..i])`): element `i + 1` goes to block `a[i]`.
    pub fn from_restricted_growth(rgs: &[usize]) -> Self {
        let n_blocks = rgs.iter().copied().max().map_or(0, |m| m + 1);
        let mut blocks = vec![Vec::new(); n_blocks];
        for (i, &b) in rgs.iter().enumerate() {
            blocks[b].push(i + 1);
        }
        // Restricted growth already yields blocks ordered by smallest element.
        SetPartition {
            k: rgs.len(),
            blocks,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    /// `|π|`
    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// `|B|` for each block, in canonical block order.
    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(Vec::len).collect()
    }
}

impl fmt::Display for SetPartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, b) in self.blocks.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{{")?;
            for (j, e) in b.iter().enumerate() {
                if j > 0 {
                    write!(f, ",")?;
                }
                write!(f, "{e}")?;
            }
            write!(f, "}}")?;
        }
        write!(f, "}}")
    }
}

fn restricted_growth_strings(k: usize) -> Vec<Vec<usize>> {
    fn extend(prefix: &mut Vec<usize>, max_so_far: usize, k: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == k {
            out.push(prefix.clone());
            return;
        }
        for b in 0..=max_so_far + 1 {
            prefix.push(b);
            extend(prefix, max_so_far.max(b), k, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    let mut prefix = vec![0];
    extend(&mut prefix, 0, k, &mut out);
    out
}

/// All partitions of `{1, ..., k}` in canonical order, for `1 <= k <= max_order`.
pub fn enumerate_partitions_with_limit(k: usize, max_order: usize) -> Result<Vec<SetPartition>> {
    if k == 0 || k > max_order {
        return Err(Error::InvalidOrder { k, max_order });
    }
    let mut strings = restricted_growth_strings(k);
    strings.reverse();
    Ok(strings
        .iter()
        .map(|s| SetPartition::from_restricted_growth(s))
        .collect())
}

/// All partitions of `{1, ..., k}`, `1 <= k <= DEFAULT_MAX_ORDER`.
pub fn enumerate_partitions(k: usize) -> Result<Vec<SetPartition>> {
    enumerate_partitions_with_limit(k, DEFAULT_MAX_ORDER)
}

/// A partition together with its block sizes, cached for the inner
/// simulation loop.
#[derive(Clone, Debug)]
pub struct CachedPartition {
    pub partition: SetPartition,
    pub block_sizes: Vec<usize>,
}

impl CachedPartition {
    fn new(partition: SetPartition) -> Self {
        let block_sizes = partition.block_sizes();
        CachedPartition {
            partition,
            block_sizes,
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.block_sizes.len()
    }
}

/// Immutable cache of `Π[k]` for every `k <= max_order`.
#[derive(Clone, Debug)]
pub struct PartitionTable {
    max_order: usize,
    table: Vec<Vec<CachedPartition>>,
}

impl PartitionTable {
    pub fn new(max_order: usize) -> Result<Self> {
        if max_order == 0 {
            return Err(Error::InvalidOrder { k: 0, max_order });
        }
        let mut table = vec![Vec::new()];
        for k in 1..=max_order {
            table.push(
                enumerate_partitions_with_limit(k, max_order)?
                    .into_iter()
                    .map(CachedPartition::new)
                    .collect(),
            );
        }
        Ok(PartitionTable { max_order, table })
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn partitions(&self, k: usize) -> Result<&[CachedPartition]> {
        if k == 0 || k > self.max_order {
            return Err(Error::InvalidOrder {
                k,
                max_order: self.max_order,
            });
        }
        Ok(&self.table[k])
    }

    /// `Σ_{π ∈ Π[k]} outer[|π|] · Π_{B ∈ π} values[|B|]`, summed in canonical
    /// order. `outer` and `values` are indexed by derivative order.
    pub fn faa_di_bruno_sum(&self, k: usize, outer: &[f64], values: &[f64]) -> Result<f64> {
        let parts = self.partitions(k)?;
        if values.len() <= k {
            return Err(Error::IncompleteState { order: values.len() });
        }
        if outer.len() <= k {
            return Err(Error::InsufficientSmoothness {
                k,
                n_max: outer.len().saturating_sub(1),
            });
        }
        Ok(sum_unchecked(parts, outer, values))
    }
}

impl Default for PartitionTable {
    fn default() -> Self {
        PartitionTable::new(DEFAULT_MAX_ORDER).expect("default order is positive")
    }
}

/// Bounds are the caller's responsibility: `outer.len() > k` and
/// `values.len() > k` for the order `k` the partitions belong to.
#[inline]
pub(crate) fn sum_unchecked(parts: &[CachedPartition], outer: &[f64], values: &[f64]) -> f64 {
    let mut acc = 0.0;
    for p in parts {
        let mut term = outer[p.num_blocks()];
        for &s in &p.block_sizes {
            term *= values[s];
        }
        acc += term;
    }
    acc
}

/// One Faà di Bruno term: `outer(|π|) · Π_{B ∈ π} block_values[|B|]`.
///
/// `block_values` is indexed by order; index 0 is ignored.
pub fn faa_di_bruno_term<F>(partition: &SetPartition, outer: F, block_values: &[f64]) -> Result<f64>
where
    F: Fn(usize) -> f64,
{
    let mut term = outer(partition.num_blocks());
    for b in partition.blocks() {
        let v = block_values
            .get(b.len())
            .ok_or(Error::IncompleteState { order: b.len() })?;
        term *= v;
    }
    Ok(term)
}

/// The three Faà di Bruno sums driving `X^(k)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VariationalCoefficients {
    pub drift: f64,
    pub diffusion: f64,
    /// Jump integrand at the requested mark; `None` when no mark was given.
    pub jump: Option<f64>,
}

/// Drift, diffusion and (per-mark) jump coefficients of the SDE for `X^(k)`.
///
/// For `k = 0` these are the coefficients of the SDE itself evaluated at
/// `X`. For `k >= 1`, each is a sum over `Π[k]` of the `|π|`-th x-partial of
/// `r`, `σ` or `g(·, ·, y)` times `Π X^(|B|)`.
pub fn assemble_variational_coefficients(
    k: usize,
    coeffs: &CoefficientSet,
    state: &FlowState,
    t: f64,
    mark: Option<f64>,
) -> Result<VariationalCoefficients> {
    if k > coeffs.n_max() {
        return Err(Error::InsufficientSmoothness {
            k,
            n_max: coeffs.n_max(),
        });
    }
    let values = state.values();
    if values.len() <= k {
        return Err(Error::IncompleteState { order: values.len() });
    }
    let x = values[0];
    let mut dr = vec![0.0; k + 1];
    let mut ds = vec![0.0; k + 1];
    coeffs.drift().derivatives(t, x, &mut dr);
    coeffs.diffusion().derivatives(t, x, &mut ds);
    let dg = mark.map(|y| {
        let mut dg = vec![0.0; k + 1];
        coeffs.jump_partials(t, x, y, &mut dg);
        dg
    });
    if k == 0 {
        return Ok(VariationalCoefficients {
            drift: dr[0],
            diffusion: ds[0],
            jump: dg.map(|g| g[0]),
        });
    }
    let table = coeffs.partition_table();
    Ok(VariationalCoefficients {
        drift: table.faa_di_bruno_sum(k, &dr, values)?,
        diffusion: table.faa_di_bruno_sum(k, &ds, values)?,
        jump: match dg {
            Some(g) => Some(table.faa_di_bruno_sum(k, &g, values)?),
            None => None,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    /// Bell numbers from the Bell triangle, independent of the generator.
    fn bell_triangle(n: usize) -> Vec<u64> {
        let mut bells = vec![1u64];
        let mut row = vec![1u64];
        for _ in 1..=n {
            let mut next = vec![*row.last().unwrap()];
            for &v in &row {
                let last = *next.last().unwrap();
                next.push(last + v);
            }
            bells.push(next[0]);
            row = next;
        }
        bells
    }

    /// Partitions by brute force: assign every element a label in 0..k and
    /// deduplicate the resulting sets of blocks.
    fn brute_force(k: usize) -> BTreeSet<Vec<Vec<usize>>> {
        let mut out = BTreeSet::new();
        let total = k.pow(k as u32);
        for code in 0..total {
            let mut c = code;
            let mut blocks: Vec<Vec<usize>> = vec![Vec::new(); k];
            for e in 1..=k {
                blocks[c % k].push(e);
                c /= k;
            }
            let mut blocks: Vec<Vec<usize>> = blocks.into_iter().filter(|b| !b.is_empty()).collect();
            blocks.sort();
            out.insert(blocks);
        }
        out
    }

    #[test]
    fn small_orders_match_hand_lists() {
        let p1 = enumerate_partitions(1).unwrap();
        assert_eq!(p1.len(), 1);
        assert_eq!(p1[0].blocks(), &[vec![1]]);
        let p2 = enumerate_partitions(2).unwrap();
        assert_eq!(p2.len(), 2);
        assert_eq!(p2[0].blocks(), &[vec![1], vec![2]]);
        assert_eq!(p2[1].blocks(), &[vec![1, 2]]);
        assert_eq!(p2[0].to_string(), "{{1},{2}}");
    }

    #[test]
    fn counts_match_bell_triangle() {
        let bells = bell_triangle(8);
        for k in 1..=8 {
            let parts = enumerate_partitions_with_limit(k, 8).unwrap();
            assert_eq!(parts.len() as u64, bells[k], "k = {k}");
        }
        assert_eq!(enumerate_partitions(4).unwrap().len(), 15);
        assert_eq!(enumerate_partitions(5).unwrap().len(), 52);
    }

    #[test]
    fn matches_brute_force_set_for_set() {
        for k in 1..=5 {
            let got: BTreeSet<Vec<Vec<usize>>> = enumerate_partitions(k)
                .unwrap()
                .into_iter()
                .map(|p| p.blocks().to_vec())
                .collect();
            assert_eq!(got, brute_force(k), "k = {k}");
            assert_eq!(got.len(), enumerate_partitions(k).unwrap().len(), "duplicates at k = {k}");
        }
    }

    #[test]
    fn invalid_orders_rejected() {
        assert!(matches!(enumerate_partitions(0), Err(Error::InvalidOrder { .. })));
        assert!(matches!(enumerate_partitions(7), Err(Error::InvalidOrder { .. })));
        assert!(enumerate_partitions_with_limit(7, 7).is_ok());
    }

    #[test]
    fn table_has_one_block_and_singleton_partitions() {
        let table = PartitionTable::new(6).unwrap();
        for k in 1..=6 {
            let parts = table.partitions(k).unwrap();
            assert_eq!(parts.iter().filter(|p| p.num_blocks() == 1).count(), 1);
            assert_eq!(parts.iter().filter(|p| p.num_blocks() == k).count(), 1);
            for p in parts {
                assert_eq!(p.block_sizes.iter().sum::<usize>(), k);
                let firsts: Vec<usize> = p.partition.blocks().iter().map(|b| b[0]).collect();
                assert!(firsts.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }

    #[test]
    fn from_blocks_validates() {
        assert!(SetPartition::from_blocks(3, vec![vec![1, 2], vec![2, 3]]).is_err());
        assert!(SetPartition::from_blocks(3, vec![vec![1, 2]]).is_err());
        assert!(SetPartition::from_blocks(3, vec![vec![1], vec![]]).is_err());
        let p = SetPartition::from_blocks(3, vec![vec![3, 2], vec![1]]).unwrap();
        assert_eq!(p.blocks(), &[vec![1], vec![2, 3]]);
    }

    #[test]
    fn chain_rule_terms() {
        let (f1, f2, u1, u2) = (0.7, -1.3, 2.0, 0.5);
        let outer = |n: usize| [0.0, f1, f2][n];
        let vals = [0.0, u1, u2];
        let one_block = SetPartition::from_blocks(2, vec![vec![1, 2]]).unwrap();
        let singletons = SetPartition::from_blocks(2, vec![vec![1], vec![2]]).unwrap();
        assert_eq!(faa_di_bruno_term(&one_block, outer, &vals).unwrap(), f1 * u2);
        assert_eq!(faa_di_bruno_term(&singletons, outer, &vals).unwrap(), f2 * u1 * u1);
        assert!(matches!(
            faa_di_bruno_term(&one_block, outer, &[0.0, u1]),
            Err(Error::IncompleteState { order: 2 })
        ));
    }

    // Third derivative of sin(x³) written out by hand:
    // f = sin, u = x³, f''' u'^3 + 3 f'' u' u'' + f' u'''.
    #[test]
    fn third_derivative_of_sin_cube() {
        let x: f64 = 0.8;
        let u = x.powi(3);
        let (u1, u2, u3) = (3.0 * x * x, 6.0 * x, 6.0);
        let outer = [u.sin(), u.cos(), -u.sin(), -u.cos()];
        let expected = outer[3] * u1.powi(3) + 3.0 * outer[2] * u1 * u2 + outer[1] * u3;
        let table = PartitionTable::default();
        let got = table.faa_di_bruno_sum(3, &outer, &[u, u1, u2, u3]).unwrap();
        assert!((got - expected).abs() <= 1e-14 * expected.abs().max(1.0));
    }

    // Richardson-extrapolated central differences of exp(sin x) against the
    // assembled sum.
    #[test]
    fn assembled_derivatives_match_finite_differences() {
        let h_of = |x: f64| x.sin().exp();
        let x: f64 = 0.3;
        let u = [x.sin(), x.cos(), -x.sin(), -x.cos(), x.sin()];
        let outer = [u[0].exp(); 5];
        let table = PartitionTable::default();
        let stencil = |k: usize, h: f64| -> f64 {
            match k {
                1 => (h_of(x + h) - h_of(x - h)) / (2.0 * h),
                2 => (h_of(x + h) - 2.0 * h_of(x) + h_of(x - h)) / (h * h),
                3 => {
                    (h_of(x + 2.0 * h) - 2.0 * h_of(x + h) + 2.0 * h_of(x - h) - h_of(x - 2.0 * h))
                        / (2.0 * h.powi(3))
                }
                _ => {
                    (h_of(x + 2.0 * h) - 4.0 * h_of(x + h) + 6.0 * h_of(x) - 4.0 * h_of(x - h)
                        + h_of(x - 2.0 * h))
                        / h.powi(4)
                }
            }
        };
        let steps = [1e-3, 3e-3, 1e-2, 2e-2];
        for k in 1..=4 {
            let h = steps[k - 1];
            let want = (4.0 * stencil(k, h / 2.0) - stencil(k, h)) / 3.0;
            let got = table.faa_di_bruno_sum(k, &outer, &u).unwrap();
            let rel = (got - want).abs() / want.abs();
            assert!(rel < 1e-6, "k = {k}: {got} vs {want} (rel {rel})");
        }
    }

    #[test]
    fn multilinear_in_block_values() {
        let table = PartitionTable::default();
        let outer = [0.0, 1.1, -0.4, 2.3, 0.9];
        let base = [0.0, 0.7, -1.2, 0.5, 1.9];
        let s: f64 = 1.7;
        for j in 1..=4 {
            let mut scaled = base;
            scaled[j] *= s;
            let parts = table.partitions(4).unwrap();
            let expected: f64 = parts
                .iter()
                .map(|p| {
                    let count = p.block_sizes.iter().filter(|&&b| b == j).count() as i32;
                    let mut term = outer[p.num_blocks()];
                    for &b in &p.block_sizes {
                        term *= base[b];
                    }
                    term * s.powi(count)
                })
                .sum();
            let got = table.faa_di_bruno_sum(4, &outer, &scaled).unwrap();
            assert!((got - expected).abs() < 1e-12 * expected.abs().max(1.0));
        }
    }
}
