//! Count-based baselines: document CTR and rank-document CTR, smoothed with
//! an empirical-Bayes Beta prior.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::usersim::ClickLog;

/// Click/impression counts for one key.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub clicks: u64,
    pub imps: u64,
}

impl Counts {
    pub fn ctr(&self) -> f64 {
        if self.imps == 0 {
            0.0
        } else {
            self.clicks as f64 / self.imps as f64
        }
    }
}

/// Moment-match a Beta(a, b) prior to a set of observed CTRs. Falls back to
/// Beta(1, 1) when the moments are degenerate (no spread, or spread too
/// large for a Beta).
pub fn moment_matched_beta(ctrs: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut n = 0.0;
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    for c in ctrs {
        n += 1.0;
        sum += c;
        sum2 += c * c;
    }
    if n < 2.0 {
        return (1.0, 1.0);
    }
    let m = sum / n;
    let v = (sum2 / n - m * m).max(0.0);
    if v <= 1e-12 || m <= 0.0 || m >= 1.0 {
        return (1.0, 1.0);
    }
    let common = m * (1.0 - m) / v - 1.0;
    if common <= 0.0 {
        return (1.0, 1.0);
    }
    (m * common, (1.0 - m) * common)
}

/// CTRs in sorted key order: map iteration order must not leak into the
/// prior's floating-point accumulation.
fn sorted_ctrs<K: Ord + Copy + std::hash::Hash>(
    stats: &HashMap<K, Counts>,
) -> impl Iterator<Item = f64> + '_ {
    let mut keys: Vec<K> = stats.keys().copied().collect();
    keys.sort_unstable();
    keys.into_iter().map(|k| stats[&k].ctr())
}

// ---------------------------------------------------------------------------
// DCTR
// ---------------------------------------------------------------------------

/// Document CTR: the same smoothed per-(query, doc) click rate at every
/// rank, as both click prediction and relevance.
#[derive(Debug, Clone, PartialEq)]
pub struct DctrModel {
    pub prior_a: f64,
    pub prior_b: f64,
    pub stats: HashMap<(u64, u32), Counts>,
}

#[derive(Serialize, Deserialize)]
pub(super) struct DctrParams {
    pub prior_a: f64,
    pub prior_b: f64,
    pub stats: Vec<(u64, u32, u64, u64)>,
}

impl DctrModel {
    pub fn fit(log: &ClickLog, prior: Option<(f64, f64)>) -> Result<Self> {
        if log.records.is_empty() {
            return Err(Error::Training("cannot fit DCTR on an empty log".into()));
        }
        let mut stats: HashMap<(u64, u32), Counts> = HashMap::new();
        for r in &log.records {
            for (&d, &c) in r.ranking.iter().zip(r.clicks.iter()) {
                let e = stats.entry((r.query_id, d)).or_default();
                e.imps += 1;
                e.clicks += c as u64;
            }
        }
        let (prior_a, prior_b) = prior.unwrap_or_else(|| moment_matched_beta(sorted_ctrs(&stats)));
        Ok(DctrModel {
            prior_a,
            prior_b,
            stats,
        })
    }

    pub fn prediction(&self, query_id: u64, doc_id: u32) -> f64 {
        let c = self
            .stats
            .get(&(query_id, doc_id))
            .copied()
            .unwrap_or_default();
        (c.clicks as f64 + self.prior_a) / (c.imps as f64 + self.prior_a + self.prior_b)
    }

    pub fn predict(&self, query_id: u64, slots: &[u32]) -> Vec<f64> {
        slots
            .iter()
            .map(|&d| self.prediction(query_id, d))
            .collect()
    }

    pub(super) fn to_params(&self) -> DctrParams {
        let mut stats: Vec<(u64, u32, u64, u64)> = self
            .stats
            .iter()
            .map(|(&(q, d), c)| (q, d, c.clicks, c.imps))
            .collect();
        stats.sort_unstable();
        DctrParams {
            prior_a: self.prior_a,
            prior_b: self.prior_b,
            stats,
        }
    }

    pub(super) fn from_params(p: DctrParams) -> Self {
        DctrModel {
            prior_a: p.prior_a,
            prior_b: p.prior_b,
            stats: p
                .stats
                .into_iter()
                .map(|(q, d, clicks, imps)| ((q, d), Counts { clicks, imps }))
                .collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// RDCTR
// ---------------------------------------------------------------------------

/// Rank-document CTR: smoothed per-(query, doc, rank) click rate as click
/// prediction; relevance is the document's raw CTR at each shown rank
/// weighted by the inverse average CTR of that rank.
#[derive(Debug, Clone, PartialEq)]
pub struct RdctrModel {
    pub k: usize,
    pub prior_a: f64,
    pub prior_b: f64,
    pub stats: HashMap<(u64, u32, u8), Counts>,
    pub rank_totals: Vec<Counts>,
}

#[derive(Serialize, Deserialize)]
pub(super) struct RdctrParams {
    pub k: usize,
    pub prior_a: f64,
    pub prior_b: f64,
    pub stats: Vec<(u64, u32, u8, u64, u64)>,
    pub rank_totals: Vec<(u64, u64)>,
}

impl RdctrModel {
    pub fn fit(log: &ClickLog, prior: Option<(f64, f64)>) -> Result<Self> {
        if log.records.is_empty() {
            return Err(Error::Training("cannot fit RDCTR on an empty log".into()));
        }
        let k = log.meta.k;
        let mut stats: HashMap<(u64, u32, u8), Counts> = HashMap::new();
        let mut rank_totals = vec![Counts::default(); k];
        for r in &log.records {
            for (rank, (&d, &c)) in r.ranking.iter().zip(r.clicks.iter()).enumerate() {
                let e = stats.entry((r.query_id, d, rank as u8)).or_default();
                e.imps += 1;
                e.clicks += c as u64;
                rank_totals[rank].imps += 1;
                rank_totals[rank].clicks += c as u64;
            }
        }
        let (prior_a, prior_b) = prior.unwrap_or_else(|| moment_matched_beta(sorted_ctrs(&stats)));
        Ok(RdctrModel {
            k,
            prior_a,
            prior_b,
            stats,
            rank_totals,
        })
    }

    pub fn prediction(&self, query_id: u64, doc_id: u32, rank: usize) -> f64 {
        let c = self
            .stats
            .get(&(query_id, doc_id, rank as u8))
            .copied()
            .unwrap_or_default();
        (c.clicks as f64 + self.prior_a) / (c.imps as f64 + self.prior_a + self.prior_b)
    }

    pub fn predict(&self, query_id: u64, slots: &[u32]) -> Vec<f64> {
        slots
            .iter()
            .enumerate()
            .map(|(rank, &d)| self.prediction(query_id, d, rank))
            .collect()
    }

    /// Mean over shown ranks of `ctr(d, rank) / avg_ctr(rank)`; documents
    /// never shown fall back to the prior mean.
    pub fn relevance(&self, query_id: u64, doc_id: u32) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for rank in 0..self.k {
            if let Some(c) = self.stats.get(&(query_id, doc_id, rank as u8)) {
                if c.imps > 0 {
                    let avg = self.rank_totals[rank].ctr();
                    // avg == 0 implies this doc's ctr is 0 too
                    sum += if avg > 0.0 { c.ctr() / avg } else { 0.0 };
                    n += 1;
                }
            }
        }
        if n == 0 {
            self.prior_a / (self.prior_a + self.prior_b)
        } else {
            sum / n as f64
        }
    }

    pub(super) fn to_params(&self) -> RdctrParams {
        let mut stats: Vec<(u64, u32, u8, u64, u64)> = self
            .stats
            .iter()
            .map(|(&(q, d, r), c)| (q, d, r, c.clicks, c.imps))
            .collect();
        stats.sort_unstable();
        RdctrParams {
            k: self.k,
            prior_a: self.prior_a,
            prior_b: self.prior_b,
            stats,
            rank_totals: self
                .rank_totals
                .iter()
                .map(|c| (c.clicks, c.imps))
                .collect(),
        }
    }

    pub(super) fn from_params(p: RdctrParams) -> Self {
        RdctrModel {
            k: p.k,
            prior_a: p.prior_a,
            prior_b: p.prior_b,
            stats: p
                .stats
                .into_iter()
                .map(|(q, d, r, clicks, imps)| ((q, d, r), Counts { clicks, imps }))
                .collect(),
            rank_totals: p
                .rank_totals
                .into_iter()
                .map(|(clicks, imps)| Counts { clicks, imps })
                .collect(),
        }
    }
}
