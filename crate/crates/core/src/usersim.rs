//! Synthetic users: click generation on sampled rankings.
//!
//! Four behaviors are simulated. PBM users examine each rank independently
//! with probability 1/k. DBN users scan top-down until satisfied or the
//! list ends. MixtureDBN users sometimes scan in reverse. Carousel users
//! see the list as consecutive groups and enter each group independently
//! with a position-discounted probability before scanning it like a DBN.
//!
//! Document attractiveness is derived from the annotation grade:
//! `R = eps + (1 - eps) * (2^grade - 1) / (2^4 - 1)`.

use std::io::{BufRead, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, MAX_GRADE};
use crate::error::{Error, Result};
use crate::policy::{PolicyScores, Ranking};
use crate::rng::{stream_rng, Purpose};

/// Which synthetic user behavior to simulate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserKind {
    Pbm,
    Dbn,
    MixtureDbn,
    Carousel,
}

impl std::fmt::Display for UserKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            UserKind::Pbm => "pbm",
            UserKind::Dbn => "dbn",
            UserKind::MixtureDbn => "mixture_dbn",
            UserKind::Carousel => "carousel",
        };
        f.write_str(s)
    }
}

/// Parameters of a synthetic user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserModelConfig {
    pub kind: UserKind,
    /// Click noise floor; relevance probability of a grade-0 document.
    pub epsilon: f64,
    /// DBN-family continuation probability after an unsatisfying position.
    pub gamma: f64,
    /// MixtureDBN only: probability of scanning in reverse order.
    pub p_reverse: f64,
    /// Carousel only: number of consecutive groups.
    pub n_carousels: usize,
    /// Carousel only: documents per group.
    pub carousel_size: usize,
}

impl UserModelConfig {
    pub fn new(kind: UserKind) -> Self {
        UserModelConfig {
            kind,
            epsilon: 0.1,
            gamma: 1.0,
            p_reverse: 0.3,
            n_carousels: 5,
            carousel_size: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!(
                "epsilon must be in [0,1), got {}",
                self.epsilon
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "gamma must be in [0,1], got {}",
                self.gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.p_reverse) {
            return Err(Error::Config(format!(
                "p_reverse must be in [0,1], got {}",
                self.p_reverse
            )));
        }
        if self.kind == UserKind::Carousel && (self.n_carousels == 0 || self.carousel_size == 0) {
            return Err(Error::Config(
                "carousel user needs n_carousels >= 1 and carousel_size >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Check that a list length is servable by this user.
    pub fn validate_k(&self, k: usize) -> Result<()> {
        if self.kind == UserKind::Carousel && k != self.n_carousels * self.carousel_size {
            return Err(Error::Config(format!(
                "carousel user requires K = n_carousels * carousel_size ({} * {}), got K = {k}",
                self.n_carousels, self.carousel_size
            )));
        }
        Ok(())
    }
}

/// One simulated session: the displayed ranking and its click vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickRecord {
    pub query_id: u64,
    pub ranking: Vec<u32>,
    pub clicks: Vec<u8>,
}

/// Provenance of a click log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogMeta {
    pub policy_id: String,
    pub user_kind: UserKind,
    pub seed: u64,
    pub n_sessions: usize,
    pub k: usize,
}

/// A set of simulated sessions plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ClickLog {
    pub records: Vec<ClickRecord>,
    pub meta: LogMeta,
}

impl ClickLog {
    pub fn total_clicks(&self) -> u64 {
        self.records
            .iter()
            .map(|r| r.clicks.iter().map(|&c| c as u64).sum::<u64>())
            .sum()
    }
}

/// Probability that a document of the given grade is perceived as relevant.
pub fn relevance_prob(grade: u8, epsilon: f64) -> Result<f64> {
    if grade > MAX_GRADE {
        return Err(Error::Argument(format!(
            "grade {grade} outside 0..={MAX_GRADE}"
        )));
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::Argument(format!(
            "epsilon must be in [0,1), got {epsilon}"
        )));
    }
    let denom = (1u32 << MAX_GRADE) as f64 - 1.0;
    Ok(epsilon + (1.0 - epsilon) * (((1u32 << grade) as f64 - 1.0) / denom))
}

/// DBN scan over attractiveness probabilities, in the given order.
/// Returns clicks aligned with `rel` and, when `trace` is set, the 1-based
/// position of the satisfying click (0 = none).
fn dbn_scan<R: Rng>(rel: &[f64], gamma: f64, rng: &mut R, trace: Option<&mut usize>) -> Vec<u8> {
    let mut clicks = vec![0u8; rel.len()];
    let mut satisfied_at = 0usize;
    let mut examining = true;
    for (i, &r) in rel.iter().enumerate() {
        if !examining {
            break;
        }
        let clicked = rng.random::<f64>() < r;
        if clicked {
            clicks[i] = 1;
            if rng.random::<f64>() < r / 2.0 {
                satisfied_at = i + 1;
                examining = false;
                continue;
            }
        }
        examining = rng.random::<f64>() < gamma;
    }
    if let Some(t) = trace {
        *t = satisfied_at;
    }
    clicks
}

/// Simulate one session: clicks on `ranking`, whose slot grades are given
/// in display order.
pub fn simulate_session<R: Rng>(
    config: &UserModelConfig,
    ranking: &Ranking,
    grades: &[u8],
    rng: &mut R,
) -> Result<ClickRecord> {
    config.validate()?;
    config.validate_k(ranking.slots.len())?;
    if grades.len() != ranking.slots.len() {
        return Err(Error::Argument(
            "grades must align with ranking slots".into(),
        ));
    }
    let rel: Vec<f64> = grades
        .iter()
        .map(|&g| relevance_prob(g, config.epsilon))
        .collect::<Result<_>>()?;

    let clicks = match config.kind {
        UserKind::Pbm => rel
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let p = r / (i + 1) as f64;
                (rng.random::<f64>() < p) as u8
            })
            .collect(),
        UserKind::Dbn => dbn_scan(&rel, config.gamma, rng, None),
        UserKind::MixtureDbn => {
            if rng.random::<f64>() < config.p_reverse {
                let rev: Vec<f64> = rel.iter().rev().copied().collect();
                let mut c = dbn_scan(&rev, config.gamma, rng, None);
                c.reverse();
                c
            } else {
                dbn_scan(&rel, config.gamma, rng, None)
            }
        }
        UserKind::Carousel => {
            let size = config.carousel_size;
            let mut clicks = vec![0u8; rel.len()];
            for j in 0..config.n_carousels {
                let group = &rel[j * size..(j + 1) * size];
                let mean_rel: f64 = group.iter().sum::<f64>() / size as f64;
                let enter_p = mean_rel / (j + 1) as f64;
                if rng.random::<f64>() < enter_p {
                    let group_clicks = dbn_scan(group, config.gamma, rng, None);
                    clicks[j * size..(j + 1) * size].copy_from_slice(&group_clicks);
                }
            }
            clicks
        }
    };

    Ok(ClickRecord {
        query_id: ranking.query_id,
        ranking: ranking.slots.clone(),
        clicks,
    })
}

/// Simulate `n_sessions` sessions: each picks a query uniformly, draws a
/// ranking from the policy, and samples clicks. Session `i` draws only from
/// stream `(seed, Session, i)`, so output is byte-identical for any thread
/// count or execution order.
pub fn generate_dataset(
    corpus: &Corpus,
    scores: &PolicyScores,
    config: &UserModelConfig,
    n_sessions: usize,
    seed: u64,
) -> Result<ClickLog> {
    config.validate()?;
    let k = corpus.require_uniform_k()?;
    config.validate_k(k)?;

    // Per-query arrays: (query_id, doc ids with scores in corpus order,
    // grade per doc position).
    struct Prepared {
        query_id: u64,
        docs: Vec<(u32, f64)>,
        grade_of: std::collections::HashMap<u32, u8>,
    }
    let prepared: Vec<Prepared> = corpus
        .queries
        .iter()
        .map(|q| {
            let docs = scores
                .docs(q.query_id)
                .ok_or_else(|| {
                    Error::Validation(format!("policy does not cover query {}", q.query_id))
                })?
                .to_vec();
            if docs.len() != q.docs.len() {
                return Err(Error::Validation(format!(
                    "policy covers {} docs for query {}, corpus has {}",
                    docs.len(),
                    q.query_id,
                    q.docs.len()
                )));
            }
            Ok(Prepared {
                query_id: q.query_id,
                docs,
                grade_of: q.docs.iter().map(|d| (d.doc_id, d.grade)).collect(),
            })
        })
        .collect::<Result<_>>()?;
    if prepared.is_empty() && n_sessions > 0 {
        return Err(Error::Argument(
            "cannot simulate sessions on an empty corpus".into(),
        ));
    }

    let records: Vec<ClickRecord> = (0..n_sessions)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, Purpose::Session, i as u64);
            let q = &prepared[rng.random_range(0..prepared.len())];
            let ranking = crate::policy::sample_ranking_with(
                &q.docs,
                scores.temperature,
                q.query_id,
                &mut rng,
            );
            let grades: Vec<u8> = ranking.slots.iter().map(|d| q.grade_of[d]).collect();
            simulate_session(config, &ranking, &grades, &mut rng)
        })
        .collect::<Result<_>>()?;

    Ok(ClickLog {
        records,
        meta: LogMeta {
            policy_id: scores.policy_id.clone(),
            user_kind: config.kind,
            seed,
            n_sessions,
            k,
        },
    })
}

// ---------------------------------------------------------------------------
// Log I/O
// ---------------------------------------------------------------------------

/// Write a click log as JSON Lines: one metadata header line, then one
/// record per session.
pub fn write_log_jsonl<W: Write>(log: &ClickLog, mut writer: W) -> Result<()> {
    serde_json::to_writer(&mut writer, &log.meta)?;
    writeln!(writer)?;
    for r in &log.records {
        serde_json::to_writer(&mut writer, r)?;
        writeln!(writer)?;
    }
    Ok(())
}

/// Read a click log written by [`write_log_jsonl`].
pub fn read_log_jsonl<R: BufRead>(reader: R) -> Result<ClickLog> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Validation("click log is empty (missing header)".into()))??;
    let meta: LogMeta = serde_json::from_str(&header).map_err(|e| Error::Parse {
        line: 1,
        msg: format!("bad log header: {e}"),
    })?;
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: ClickRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 2,
            msg: e.to_string(),
        })?;
        records.push(r);
    }
    Ok(ClickLog { records, meta })
}

/// Compact CSV export: `session,query_id,ranking,clicks` with
/// space-separated doc ids and a 0/1 click string.
pub fn write_log_csv<W: Write>(log: &ClickLog, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["session", "query_id", "ranking", "clicks"])?;
    for (i, r) in log.records.iter().enumerate() {
        let ranking = r
            .ranking
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        let clicks: String = r.clicks.iter().map(|&c| if c == 1 { '1' } else { '0' }).collect();
        w.write_record([i.to_string(), r.query_id.to_string(), ranking, clicks])?;
    }
    w.flush()?;
    Ok(())
}
