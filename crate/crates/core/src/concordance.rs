//! Harrell's concordance index for right-censored data.
//!
//! Pair conventions:
//! - `(i, j)` is comparable when `t_i < t_j` and subject `i` had the event, or
//!   when `t_i == t_j` and exactly one of the two had the event (the
//!   event-bearing subject is treated as failing first).
//! - Two events at the same time are not comparable; neither are two
//!   censored subjects.
//! - A comparable pair is concordant when the earlier-failing subject has the
//!   strictly higher score; equal scores credit 1/2.
//!
//! The implementation runs in O(n log n) using a Fenwick tree over the
//! compressed score ranks of already-failed subjects.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConcordanceError {
    #[error("empty input: at least one subject is required")]
    EmptyInput,
    #[error("scores/times/events length mismatch: {scores}/{times}/{events}")]
    LengthMismatch {
        scores: usize,
        times: usize,
        events: usize,
    },
    #[error("non-finite score {value} at index {index}")]
    NonFiniteScore { index: usize, value: f64 },
    #[error("invalid follow-up time {value} at index {index}: must be finite and positive")]
    InvalidTime { index: usize, value: f64 },
    #[error("concordance undefined: no comparable pairs")]
    NoComparablePairs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConcordanceResult {
    pub c_index: f64,
    pub n_concordant: u64,
    pub n_discordant: u64,
    pub n_tied_score: u64,
    pub n_comparable: u64,
}

struct Fenwick {
    tree: Vec<u64>,
    total: u64,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick {
            tree: vec![0; n + 1],
            total: 0,
        }
    }

    fn add(&mut self, mut i: usize) {
        self.total += 1;
        i += 1;
        while i < self.tree.len() {
            self.tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted ranks <= i.
    fn prefix(&self, mut i: usize) -> u64 {
        i += 1;
        let mut s = 0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }

    /// (below, equal, above) counts relative to rank i.
    fn partition(&self, i: usize) -> (u64, u64, u64) {
        let le = self.prefix(i);
        let lt = if i == 0 { 0 } else { self.prefix(i - 1) };
        (lt, le - lt, self.total - le)
    }
}

/// Harrell's C for `scores` against right-censored outcomes.
/// Higher scores must indicate higher risk (earlier failure).
pub fn c_index(
    scores: &[f64],
    times: &[f64],
    events: &[bool],
) -> Result<ConcordanceResult, ConcordanceError> {
    let n = scores.len();
    if n != times.len() || n != events.len() {
        return Err(ConcordanceError::LengthMismatch {
            scores: n,
            times: times.len(),
            events: events.len(),
        });
    }
    if n == 0 {
        return Err(ConcordanceError::EmptyInput);
    }
    for (i, &s) in scores.iter().enumerate() {
        if !s.is_finite() {
            return Err(ConcordanceError::NonFiniteScore { index: i, value: s });
        }
    }
    for (i, &t) in times.iter().enumerate() {
        if !t.is_finite() || t <= 0.0 {
            return Err(ConcordanceError::InvalidTime { index: i, value: t });
        }
    }

    // compress scores to ranks
    let mut unique: Vec<f64> = scores.to_vec();
    unique.sort_by(|a, b| a.partial_cmp(b).unwrap());
    unique.dedup();
    let rank = |s: f64| unique.partition_point(|&u| u < s);

    let order = crate::util::argsort_by_f64(times);
    let mut failed = Fenwick::new(unique.len());

    let mut concordant = 0u64;
    let mut discordant = 0u64;
    let mut tied = 0u64;

    let mut i = 0;
    while i < n {
        let t = times[order[i]];
        let mut j = i;
        let mut deaths: Vec<usize> = Vec::new();
        let mut censored: Vec<usize> = Vec::new();
        while j < n && times[order[j]] == t {
            if events[order[j]] {
                deaths.push(order[j]);
            } else {
                censored.push(order[j]);
            }
            j += 1;
        }
        // deaths here vs deaths at strictly earlier times; the earlier death
        // wins the pair when its score is strictly higher
        for &d in &deaths {
            let (below, equal, above) = failed.partition(rank(scores[d]));
            concordant += above;
            discordant += below;
            tied += equal;
        }
        for &d in &deaths {
            failed.add(rank(scores[d]));
        }
        // censored here vs deaths at times <= t (same-time deaths fail first)
        for &c in &censored {
            let (below, equal, above) = failed.partition(rank(scores[c]));
            concordant += above;
            discordant += below;
            tied += equal;
        }
        i = j;
    }

    let comparable = concordant + discordant + tied;
    if comparable == 0 {
        return Err(ConcordanceError::NoComparablePairs);
    }
    Ok(ConcordanceResult {
        c_index: (concordant as f64 + 0.5 * tied as f64) / comparable as f64,
        n_concordant: concordant,
        n_discordant: discordant,
        n_tied_score: tied,
        n_comparable: comparable,
    })
}
