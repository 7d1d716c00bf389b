//! Label-agreement metrics, generic over the float type.

use std::collections::HashMap;
use std::hash::Hash;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn cast<T: Float>(n: usize) -> T {
    T::from(n).expect("count fits the float type")
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch(a, b));
    }
    if a == 0 {
        return Err(Error::Empty);
    }
    Ok(())
}

/// Exact-match accuracy. Missing predictions count as wrong.
pub fn accuracy<T, L>(pred: &[Option<L>], gold: &[L]) -> Result<T>
where
    T: Float,
    L: PartialEq,
{
    check_lengths(pred.len(), gold.len())?;
    let hits = pred
        .iter()
        .zip(gold)
        .filter(|(p, g)| p.as_ref() == Some(*g))
        .count();
    Ok(cast::<T>(hits) / cast(gold.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseOutcome<T> {
    pub mse: T,
    /// Predictions left out because they were missing.
    pub excluded: usize,
}

/// Mean squared ordinal distance over the predictions that are present.
pub fn mse<T: Float>(pred: &[Option<u32>], gold: &[u32]) -> Result<MseOutcome<T>> {
    check_lengths(pred.len(), gold.len())?;
    let mut sum = T::zero();
    let mut used = 0usize;
    for (p, &g) in pred.iter().zip(gold) {
        if let Some(p) = *p {
            let d = T::from(i64::from(p) - i64::from(g)).expect("small integer");
            sum = sum + d * d;
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::AllExcluded);
    }
    Ok(MseOutcome {
        mse: sum / cast(used),
        excluded: gold.len() - used,
    })
}

/// Unweighted Cohen's kappa. Returns exactly 1 when both raters use a single
/// shared category throughout.
pub fn cohen_kappa<T, L>(a: &[L], b: &[L]) -> Result<T>
where
    T: Float,
    L: Eq + Hash,
{
    check_lengths(a.len(), b.len())?;
    let n = cast::<T>(a.len());
    let observed = cast::<T>(a.iter().zip(b).filter(|(x, y)| x == y).count()) / n;
    let mut counts: HashMap<&L, (usize, usize)> = HashMap::new();
    for x in a {
        counts.entry(x).or_default().0 += 1;
    }
    for y in b {
        counts.entry(y).or_default().1 += 1;
    }
    let expected = counts.values().fold(T::zero(), |acc, &(ca, cb)| {
        acc + (cast::<T>(ca) / n) * (cast::<T>(cb) / n)
    });
    if expected == T::one() {
        return Ok(T::one());
    }
    Ok((observed - expected) / (T::one() - expected))
}

/// Ranks starting at 1, ties share the mean of the positions they occupy.
pub fn average_ranks<T: Float>(values: &[T]) -> Vec<T> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).expect("no NaN in ranks"));
    let mut ranks = vec![T::zero(); values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let mean = cast::<T>(start + 1 + end) / cast(2);
        for &idx in &order[start..end] {
            ranks[idx] = mean;
        }
        start = end;
    }
    ranks
}

fn pearson<T: Float>(a: &[T], b: &[T]) -> T {
    let n = cast::<T>(a.len());
    let mean_a = a.iter().fold(T::zero(), |s, &x| s + x) / n;
    let mean_b = b.iter().fold(T::zero(), |s, &x| s + x) / n;
    let (mut cov, mut va, mut vb) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - mean_a, y - mean_b);
        cov = cov + dx * dy;
        va = va + dx * dx;
        vb = vb + dy * dy;
    }
    let r = cov / (va * vb).sqrt();
    r.max(-T::one()).min(T::one())
}

fn check_rank_input<T: Float>(a: &[T], b: &[T]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(Error::Empty);
    }
    let constant = |v: &[T]| v.iter().all(|&x| x == v[0]);
    if constant(a) || constant(b) {
        return Err(Error::DegenerateConstantVector);
    }
    Ok(())
}

/// Spearman's rho: Pearson correlation of the average-tie ranks.
pub fn spearman<T: Float>(a: &[T], b: &[T]) -> Result<T> {
    check_rank_input(a, b)?;
    Ok(pearson(&average_ranks(a), &average_ranks(b)))
}

/// Kendall's tau-b with tie correction.
pub fn kendall_tau_b<T: Float>(a: &[T], b: &[T]) -> Result<T> {
    check_rank_input(a, b)?;
    let n = a.len();
    let (mut concordant, mut discordant, mut ties_a, mut ties_b) = (0usize, 0usize, 0usize, 0usize);
    for i in 0..n {
        for j in i + 1..n {
            let da = a[i].partial_cmp(&a[j]).expect("no NaN");
            let db = b[i].partial_cmp(&b[j]).expect("no NaN");
            use std::cmp::Ordering::Equal;
            match (da, db) {
                (Equal, Equal) => {
                    ties_a += 1;
                    ties_b += 1;
                }
                (Equal, _) => ties_a += 1,
                (_, Equal) => ties_b += 1,
                (x, y) if x == y => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let pairs = n * (n - 1) / 2;
    let denom = (cast::<T>(pairs - ties_a) * cast::<T>(pairs - ties_b)).sqrt();
    let tau = (cast::<T>(concordant) - cast::<T>(discordant)) / denom;
    Ok(tau.max(-T::one()).min(T::one()))
}
