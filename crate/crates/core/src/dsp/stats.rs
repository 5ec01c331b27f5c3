//! Mann-Whitney U rank-sum test.

use crate::error::{Error, Result};

/// Two-sided significance threshold used for pairwise comparisons.
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

/// Largest pooled size evaluated by exact enumeration.
const EXACT_LIMIT: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    pub p_two_sided: f64,
    /// Whether `p_two_sided` came from full enumeration.
    pub exact: bool,
}

impl MannWhitney {
    pub fn significant(&self) -> bool {
        self.p_two_sided < SIGNIFICANCE_LEVEL
    }
}

/// Ranks starting at 1, ties receive the mean of the ranks they span.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn mann_whitney_u(sample_a: &[f64], sample_b: &[f64]) -> Result<MannWhitney> {
    if sample_a.is_empty() || sample_b.is_empty() {
        return Err(Error::arg("mann-whitney needs two non-empty samples"));
    }
    let (na, nb) = (sample_a.len(), sample_b.len());
    let pooled: Vec<f64> = sample_a.iter().chain(sample_b).copied().collect();
    let ranks = midranks(&pooled);
    let offset = (na * (na + 1)) as f64 / 2.0;
    let u = ranks[..na].iter().sum::<f64>() - offset;
    let mean = (na * nb) as f64 / 2.0;

    if na + nb <= EXACT_LIMIT {
        let observed = (u - mean).abs();
        let (mut extreme, mut total) = (0u64, 0u64);
        for_each_subset(na + nb, na, |subset| {
            let us = subset.iter().map(|&i| ranks[i]).sum::<f64>() - offset;
            total += 1;
            if (us - mean).abs() >= observed - 1e-9 {
                extreme += 1;
            }
        });
        return Ok(MannWhitney {
            u,
            p_two_sided: extreme as f64 / total as f64,
            exact: true,
        });
    }

    let n = (na + nb) as f64;
    let mut tie_term = 0.0;
    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = (na * nb) as f64 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
        // 2 * (1 - Phi(z))
        libm::erfc(z / std::f64::consts::SQRT_2).min(1.0)
    };
    Ok(MannWhitney {
        u,
        p_two_sided: p,
        exact: false,
    })
}

/// Calls `f` with every `k`-element subset of `0..n` in lexicographic order.
fn for_each_subset(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}
