//! Clustering quality: misclassification rate up to relabeling, and
//! normalized mutual information.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

fn check_labels(pred: &[usize], truth: &[usize], r: usize) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), got: pred.len() });
    }
    if pred.is_empty() {
        return Err(Error::Empty("label vectors"));
    }
    if let Some(&label) = pred.iter().chain(truth).find(|&&l| l >= r) {
        return Err(Error::LabelOutOfRange { label, r });
    }
    Ok(())
}

/// `counts[a][b]` = number of points with predicted label `a` and true label `b`.
pub fn confusion_matrix(pred: &[usize], truth: &[usize], r: usize) -> Result<Vec<Vec<usize>>> {
    check_labels(pred, truth, r)?;
    let mut c = vec![vec![0usize; r]; r];
    for (&p, &t) in pred.iter().zip(truth) {
        c[p][t] += 1;
    }
    Ok(c)
}

/// Fraction of points misclassified under the best relabeling of `pred`.
///
/// Exhaustive over all `R!` permutations for `R <= 10`, otherwise an optimal
/// assignment on the confusion matrix.
pub fn misclassification_rate(pred: &[usize], truth: &[usize], r: usize) -> Result<f64> {
    let c = confusion_matrix(pred, truth, r)?;
    let matched = if r <= 10 { best_by_enumeration(&c) } else { best_by_assignment(&c) };
    Ok(1.0 - matched as f64 / pred.len() as f64)
}

/// Maximum of `sum_a c[a][perm(a)]` over permutations (Heap's algorithm).
fn best_by_enumeration(c: &[Vec<usize>]) -> usize {
    let r = c.len();
    let mut perm: Vec<usize> = (0..r).collect();
    let score = |p: &[usize]| p.iter().enumerate().map(|(a, &b)| c[a][b]).sum::<usize>();
    let mut best = score(&perm);
    let mut stack = vec![0usize; r];
    let mut i = 1;
    while i < r {
        if stack[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(stack[i], i);
            }
            best = best.max(score(&perm));
            stack[i] += 1;
            i = 1;
        } else {
            stack[i] = 0;
            i += 1;
        }
    }
    best
}

/// Hungarian algorithm (shortest augmenting paths with potentials) on the
/// cost `max - c`, returning the maximal matched count.
fn best_by_assignment(c: &[Vec<usize>]) -> usize {
    let n = c.len();
    let big = c.iter().flatten().copied().max().unwrap_or(0) as i64;
    let cost = |i: usize, j: usize| big - c[i - 1][j - 1] as i64;
    let inf = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| c[p[j] - 1][j - 1]).sum()
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information `I / sqrt(H(pred) H(truth))`, natural logs.
///
/// Labels may be any nonnegative integers. When either partition has zero
/// entropy the value is 1 if the two partitions coincide and 0 otherwise.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), got: pred.len() });
    }
    if pred.is_empty() {
        return Err(Error::Empty("label vectors"));
    }
    let rp = pred.iter().max().map_or(0, |m| m + 1);
    let rt = truth.iter().max().map_or(0, |m| m + 1);
    let mut joint = vec![0usize; rp * rt];
    let mut cp = vec![0usize; rp];
    let mut ct = vec![0usize; rt];
    for (&a, &b) in pred.iter().zip(truth) {
        joint[a * rt + b] += 1;
        cp[a] += 1;
        ct[b] += 1;
    }
    let n = pred.len() as f64;
    let hp = entropy(cp.iter().copied(), n);
    let ht = entropy(ct.iter().copied(), n);
    if hp == 0.0 || ht == 0.0 {
        // identical partitions have a joint cell per predicted cluster
        let nonzero_joint = joint.iter().filter(|&&c| c > 0).count();
        let kp = cp.iter().filter(|&&c| c > 0).count();
        let kt = ct.iter().filter(|&&c| c > 0).count();
        return Ok(if nonzero_joint == kp && kp == kt { 1.0 } else { 0.0 });
    }
    let mut mi = 0.0;
    for a in 0..rp {
        for b in 0..rt {
            let c = joint[a * rt + b];
            if c > 0 {
                let pab = c as f64 / n;
                mi += pab * (pab * n * n / (cp[a] as f64 * ct[b] as f64)).ln();
            }
        }
    }
    Ok((mi / (hp * ht).sqrt()).clamp(0.0, 1.0))
}
