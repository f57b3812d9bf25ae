//! Silo membership, stability and entropy.

use std::collections::BTreeMap;

use crate::error::MetricsError;
use crate::model::SiloLabel;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SiloTally {
    /// Agents per non-empty silo, keyed by label id.
    pub counts: BTreeMap<u32, usize>,
    pub silo_count: usize,
    /// Answers carrying the unknown sentinel; not part of any silo.
    pub unknown: usize,
}

impl SiloTally {
    /// Number of agents that belong to some silo.
    pub fn known(&self) -> usize {
        self.counts.values().sum()
    }
}

pub fn silo_tally(labels: &[SiloLabel]) -> SiloTally {
    let mut counts = BTreeMap::new();
    let mut unknown = 0;
    for label in labels {
        match label.id() {
            Some(id) => *counts.entry(id).or_insert(0) += 1,
            None => unknown += 1,
        }
    }
    SiloTally {
        silo_count: counts.len(),
        counts,
        unknown,
    }
}

/// Fraction of agents whose label did not change. Two unknown labels compare equal.
pub fn stability(prev: &[SiloLabel], curr: &[SiloLabel]) -> Result<f64, MetricsError> {
    if prev.len() != curr.len() {
        return Err(MetricsError::LengthMismatch {
            prev: prev.len(),
            curr: curr.len(),
        });
    }
    if curr.is_empty() {
        return Err(MetricsError::ZeroPopulation);
    }
    let same = prev.iter().zip(curr).filter(|(a, b)| a == b).count();
    Ok(same as f64 / curr.len() as f64)
}

/// Shannon entropy in bits of the silo size distribution.
pub fn entropy(counts: &BTreeMap<u32, usize>, n: usize) -> Result<f64, MetricsError> {
    if n == 0 {
        return Err(MetricsError::ZeroPopulation);
    }
    let sum: usize = counts.values().sum();
    if sum != n {
        return Err(MetricsError::CountMismatch { sum, n });
    }
    let n = n as f64;
    // Summing over sorted sizes makes the result a function of the size multiset only.
    let mut sizes: Vec<usize> = counts.values().copied().filter(|&c| c > 0).collect();
    sizes.sort_unstable();
    let h = sizes
        .iter()
        .map(|&c| {
            let q = c as f64 / n;
            -q * q.log2()
        })
        .sum::<f64>();
    // A single silo gives -1·log2(1) = -0.0; normalize the sign.
    Ok(if h == 0.0 { 0.0 } else { h })
}
