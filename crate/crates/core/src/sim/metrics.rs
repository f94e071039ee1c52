use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p50: u64,
    pub p95: u64,
    pub max: u64,
}

impl Percentiles {
    /// Nearest-rank percentiles; all zero for no samples.
    pub fn of(samples: &[u64]) -> Percentiles {
        if samples.is_empty() {
            return Percentiles::default();
        }
        let mut sorted = samples.to_vec();
        sorted.sort_unstable();
        let rank = |p: usize| sorted[(p * sorted.len()).div_ceil(100).max(1) - 1];
        Percentiles { p50: rank(50), p95: rank(95), max: *sorted.last().unwrap() }
    }
}

/// Run summary; this is the `metrics.json` schema.
///
/// Latencies are virtual milliseconds, except `end_to_end_wallclock_ms`,
/// which is the only field that differs between identical runs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    /// Envelopes committed as VALID.
    pub committed_tx: u64,
    /// Envelopes committed with another flag, by flag name.
    pub invalid_tx: BTreeMap<String, u64>,
    /// Envelopes placed in a block by the orderer.
    pub total_ordered: u64,
    /// Transactions refused before ordering (endorsement or assembly).
    pub refused_tx: u64,
    /// Transactions given up after exhausting retries.
    pub abandoned_tx: u64,
    pub dropped_messages: u64,
    /// From submission to commit on every member peer.
    pub commit_latency_ms: Percentiles,
    /// One entry per trace or recall query, in completion order.
    pub recall_trace_latency_ms: Vec<u64>,
    /// Virtual time of the last event.
    pub virtual_end_ms: u64,
    pub end_to_end_wallclock_ms: u64,
}

impl Metrics {
    pub fn invalid_total(&self) -> u64 {
        self.invalid_tx.values().sum()
    }

    /// `self` with the wall-clock field cleared, for determinism checks.
    pub fn deterministic(&self) -> Metrics {
        Metrics { end_to_end_wallclock_ms: 0, ..self.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let samples: Vec<u64> = (1..=100).collect();
        assert_eq!(Percentiles::of(&samples), Percentiles { p50: 50, p95: 95, max: 100 });
        assert_eq!(Percentiles::of(&[7]), Percentiles { p50: 7, p95: 7, max: 7 });
        assert_eq!(Percentiles::of(&[3, 1, 2]), Percentiles { p50: 2, p95: 3, max: 3 });
        assert_eq!(Percentiles::of(&[]), Percentiles::default());
    }
}
