//! Trajectory classification into silo patterns.
//!
//! The decision procedure looks at a trailing window `[T - W, T]` and tests, in
//! precedence order (default: one silo, stable, decaying, unstable):
//!
//! * **OneSilo**: every snapshot in the window has exactly one silo.
//! * **Stable**: silo count constant over the window, entropy spread at most
//!   `eps_entropy_const`, and stability equal to 1 throughout the window.
//! * **Decaying**: `T - t_min < m`, where `t_min` is the first tick whose entropy is
//!   within `eps_min` of the global minimum over the whole trajectory.
//! * **Unstable**: silo count constant over the window, every entropy value within
//!   `delta_entropy_approx` of the window mean, and some stability below 1.
//!
//! Anything else is **Indeterminate**.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::MetricsError;
use crate::model::{SystemSnapshot, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PatternLabel {
    OneSilo,
    Stable,
    Unstable,
    Decaying,
    Indeterminate,
}

impl PatternLabel {
    pub const DEFAULT_PRECEDENCE: [PatternLabel; 4] = [
        PatternLabel::OneSilo,
        PatternLabel::Stable,
        PatternLabel::Decaying,
        PatternLabel::Unstable,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PatternLabel::OneSilo => "OneSilo",
            PatternLabel::Stable => "Stable",
            PatternLabel::Unstable => "Unstable",
            PatternLabel::Decaying => "Decaying",
            PatternLabel::Indeterminate => "Indeterminate",
        }
    }
}

impl fmt::Display for PatternLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PatternLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "OneSilo" => Ok(PatternLabel::OneSilo),
            "Stable" => Ok(PatternLabel::Stable),
            "Unstable" => Ok(PatternLabel::Unstable),
            "Decaying" => Ok(PatternLabel::Decaying),
            "Indeterminate" => Ok(PatternLabel::Indeterminate),
            other => Err(format!("unknown pattern {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams {
    /// Lateness threshold for the decaying rule.
    pub m: usize,
    /// Trailing window length; the window holds `window + 1` snapshots.
    pub window: usize,
    pub eps_entropy_const: f64,
    pub delta_entropy_approx: f64,
    pub eps_min: f64,
    /// Order in which the four named patterns are tested.
    pub precedence: Vec<PatternLabel>,
}

impl ClassifierParams {
    pub fn for_horizon(t_final: usize) -> Self {
        crate::model::ClassifierConfig::default().resolve(t_final)
    }

    fn validate(&self) -> Result<(), MetricsError> {
        if self.m < 1 {
            return Err(MetricsError::InvalidParam {
                name: "m",
                message: "must be >= 1".into(),
            });
        }
        if self.window < 2 {
            return Err(MetricsError::InvalidParam {
                name: "W",
                message: "must be >= 2".into(),
            });
        }
        for (name, v) in [
            ("epsEntropyConst", self.eps_entropy_const),
            ("deltaEntropyApprox", self.delta_entropy_approx),
            ("epsMin", self.eps_min),
        ] {
            if !(v > 0.0) {
                return Err(MetricsError::InvalidParam {
                    name,
                    message: "must be > 0".into(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub t_min_entropy: usize,
    pub window_start: usize,
    pub silo_count_constant: bool,
    /// max - min entropy over the window.
    pub entropy_spread: f64,
    /// Largest absolute deviation of entropy from its window mean.
    pub entropy_max_deviation: f64,
    pub min_stability_in_window: f64,
    pub final_tick: usize,
    pub m: usize,
    pub window: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub label: PatternLabel,
    pub evidence: Evidence,
}

pub fn classify(
    traj: &Trajectory,
    params: &ClassifierParams,
) -> Result<ClassificationReport, MetricsError> {
    classify_snapshots(&traj.snapshots, params)
}

pub fn classify_snapshots(
    snapshots: &[SystemSnapshot],
    params: &ClassifierParams,
) -> Result<ClassificationReport, MetricsError> {
    params.validate()?;
    if snapshots.len() < params.window + 1 {
        return Err(MetricsError::TrajectoryTooShort {
            needed: params.window + 1,
            got: snapshots.len(),
        });
    }
    let final_tick = snapshots.last().map(|s| s.t).unwrap_or(0);
    let window = &snapshots[snapshots.len() - params.window - 1..];
    let window_start = window[0].t;

    let first_count = window[0].silo_count;
    let one_silo = window.iter().all(|s| s.silo_count == 1);
    let silo_count_constant = window.iter().all(|s| s.silo_count == first_count);

    let (e_min, e_max) = window
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
            (lo.min(s.entropy), hi.max(s.entropy))
        });
    let entropy_spread = e_max - e_min;
    let e_mean = window.iter().map(|s| s.entropy).sum::<f64>() / window.len() as f64;
    let entropy_max_deviation = window
        .iter()
        .map(|s| (s.entropy - e_mean).abs())
        .fold(0.0, f64::max);

    // Stability is absent only at t = 0; a window reaching back to t = 0 skips it.
    let min_stability_in_window = window
        .iter()
        .filter_map(|s| s.stability)
        .fold(1.0, f64::min);

    let global_min = snapshots
        .iter()
        .map(|s| s.entropy)
        .fold(f64::INFINITY, f64::min);
    let t_min_entropy = snapshots
        .iter()
        .find(|s| s.entropy <= global_min + params.eps_min)
        .map(|s| s.t)
        .unwrap_or(0);

    let holds = |pattern: PatternLabel| match pattern {
        PatternLabel::OneSilo => one_silo,
        PatternLabel::Stable => {
            silo_count_constant
                && entropy_spread <= params.eps_entropy_const
                && min_stability_in_window == 1.0
        }
        PatternLabel::Decaying => final_tick.saturating_sub(t_min_entropy) < params.m,
        PatternLabel::Unstable => {
            silo_count_constant
                && entropy_max_deviation <= params.delta_entropy_approx
                && min_stability_in_window < 1.0
        }
        PatternLabel::Indeterminate => false,
    };
    let label = params
        .precedence
        .iter()
        .copied()
        .find(|&p| holds(p))
        .unwrap_or(PatternLabel::Indeterminate);

    Ok(ClassificationReport {
        label,
        evidence: Evidence {
            t_min_entropy,
            window_start,
            silo_count_constant,
            entropy_spread,
            entropy_max_deviation,
            min_stability_in_window,
            final_tick,
            m: params.m,
            window: params.window,
        },
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::metrics::{entropy, silo_tally, stability};
    use crate::model::SiloLabel;

    /// Builds snapshots from per-tick label vectors using the metric functions.
    pub(crate) fn snapshots_from_labels(ticks: &[Vec<u32>]) -> Vec<SystemSnapshot> {
        let mut out = Vec::new();
        let mut prev: Option<Vec<SiloLabel>> = None;
        for (t, ids) in ticks.iter().enumerate() {
            let labels: Vec<SiloLabel> = ids.iter().copied().map(SiloLabel::new).collect();
            let tally = silo_tally(&labels);
            out.push(SystemSnapshot {
                t,
                stability: prev.as_ref().map(|p| stability(p, &labels).unwrap()),
                entropy: entropy(&tally.counts, labels.len()).unwrap(),
                silo_counts: tally.counts,
                silo_count: tally.silo_count,
                labels: labels.clone(),
                embeddings: None,
            });
            prev = Some(labels);
        }
        out
    }

    fn params(m: usize, window: usize) -> ClassifierParams {
        ClassifierParams {
            m,
            window,
            ..ClassifierParams::for_horizon(80)
        }
    }

    #[test]
    fn frozen_multi_silo_is_stable() {
        let ticks = vec![vec![0, 0, 1, 2, 2]; 81];
        let r = classify_snapshots(&snapshots_from_labels(&ticks), &params(8, 16)).unwrap();
        assert_eq!(r.label, PatternLabel::Stable);
        assert_eq!(r.evidence.entropy_spread, 0.0);
        assert_eq!(r.evidence.min_stability_in_window, 1.0);
    }

    #[test]
    fn frozen_single_silo_is_one_silo() {
        let ticks = vec![vec![4; 6]; 81];
        let r = classify_snapshots(&snapshots_from_labels(&ticks), &params(8, 16)).unwrap();
        assert_eq!(r.label, PatternLabel::OneSilo);
    }

    #[test]
    fn late_entropy_minimum_is_decaying() {
        // 200 agents, silo A grows by one per tick so entropy strictly decreases until
        // t = 79, then one agent returns at t = 80.
        let ticks: Vec<Vec<u32>> = (0..=80)
            .map(|t| {
                let a = if t == 80 { 178 } else { 100 + t };
                (0..200).map(|i| u32::from(i >= a)).collect()
            })
            .collect();
        let snaps = snapshots_from_labels(&ticks);
        for w in snaps[..80].windows(2) {
            assert!(w[1].entropy < w[0].entropy);
        }
        let r = classify_snapshots(&snaps, &params(8, 16)).unwrap();
        assert_eq!(r.evidence.t_min_entropy, 79);
        assert_eq!(r.label, PatternLabel::Decaying);
    }

    #[test]
    fn swapping_pair_is_unstable() {
        // 30 agents in two silos; from t = 40 agents 0 and 15 swap sides every tick so
        // the sizes alternate 14/16 and 16/14.
        let ticks: Vec<Vec<u32>> = (0..=80)
            .map(|t| {
                let mut ids: Vec<u32> = (0..30).map(|i| u32::from(i >= 15)).collect();
                if t >= 40 && t % 2 == 0 {
                    ids[0] = 1;
                } else if t >= 40 {
                    ids[15] = 0;
                }
                ids
            })
            .collect();
        let snaps = snapshots_from_labels(&ticks);
        let r = classify_snapshots(&snaps, &params(8, 16)).unwrap();
        assert_eq!(r.label, PatternLabel::Unstable, "{r:?}");
        assert!(r.evidence.silo_count_constant);
        assert_eq!(r.evidence.min_stability_in_window, 28.0 / 30.0);
        assert_eq!(r.evidence.entropy_spread, 0.0);
    }

    #[test]
    fn too_short_is_an_error() {
        let ticks = vec![vec![0, 1]; 10];
        assert_eq!(
            classify_snapshots(&snapshots_from_labels(&ticks), &params(8, 16)),
            Err(MetricsError::TrajectoryTooShort { needed: 17, got: 10 })
        );
    }

    #[test]
    fn oscillating_silo_count_is_indeterminate() {
        // Third silo appears and disappears every tick; entropy minimum is early.
        let ticks: Vec<Vec<u32>> = (0..=80)
            .map(|t| {
                let mut ids: Vec<u32> = (0..30).map(|i| u32::from(i >= 15)).collect();
                if t % 2 == 1 {
                    ids[0] = 2;
                }
                ids
            })
            .collect();
        let r = classify_snapshots(&snapshots_from_labels(&ticks), &params(8, 16)).unwrap();
        assert_eq!(r.label, PatternLabel::Indeterminate);
    }

    #[test]
    fn precedence_is_configurable() {
        // A frozen trajectory has t_min = 0, so Decaying cannot fire while T >= m.
        let ticks = vec![vec![0, 0, 1]; 81];
        let mut p = params(8, 16);
        p.precedence = vec![PatternLabel::Decaying, PatternLabel::Stable];
        let r = classify_snapshots(&snapshots_from_labels(&ticks), &p).unwrap();
        assert_eq!(r.label, PatternLabel::Stable);
        p.m = 81;
        let r = classify_snapshots(&snapshots_from_labels(&ticks), &p).unwrap();
        assert_eq!(r.label, PatternLabel::Decaying);
    }

    proptest! {
        #[test]
        fn frozen_multi_silo_never_decaying(
            ids in prop::collection::vec(0u32..4, 2..40),
            t_final in 20usize..120,
        ) {
            let ticks = vec![ids.clone(); t_final + 1];
            let p = ClassifierParams::for_horizon(t_final);
            prop_assume!(t_final >= p.m && p.window <= t_final);
            let r = classify_snapshots(&snapshots_from_labels(&ticks), &p).unwrap();
            prop_assert_ne!(r.label, PatternLabel::Decaying);
            prop_assert_eq!(r.evidence.t_min_entropy, 0);
        }

        #[test]
        fn relabeling_preserves_classification(
            seq in prop::collection::vec(prop::collection::vec(0u32..3, 12), 21..40),
        ) {
            let relabeled: Vec<Vec<u32>> =
                seq.iter().map(|v| v.iter().map(|&x| 7 - x).collect()).collect();
            let p = params(2, 8);
            let a = classify_snapshots(&snapshots_from_labels(&seq), &p).unwrap();
            let b = classify_snapshots(&snapshots_from_labels(&relabeled), &p).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
