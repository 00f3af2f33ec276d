//! Stochastic ranking policies.
//!
//! A policy is a per-(query, doc) score map plus a softmax temperature.
//! Rankings are drawn from the induced Plackett-Luce distribution with the
//! Gumbel trick: perturb `score/T` with standard Gumbel noise and sort
//! descending. The expected display rank of each document under the policy
//! is estimated by Monte Carlo.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Purpose};

/// Softmax temperature used when none is given explicitly.
pub const DEFAULT_TEMPERATURE: f64 = 0.1;

/// Default Monte-Carlo sample count per query for expected ranks.
pub const DEFAULT_RANK_SAMPLES: usize = 1_000;

/// Per-(query, doc) policy scores with a sampling temperature.
///
/// Immutable after construction; holds one entry per corpus document, in
/// corpus order, so sampled slot indices map straight back to documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyScores {
    pub policy_id: String,
    pub temperature: f64,
    queries: BTreeMap<u64, Vec<(u32, f64)>>,
}

/// An ordered list of doc ids for one query (slot 0 = rank 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub query_id: u64,
    pub slots: Vec<u32>,
}

/// Monte-Carlo expected 1-based rank per (query, doc).
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedRanks {
    pub values: BTreeMap<(u64, u32), f64>,
    pub n_samples: usize,
}

impl PolicyScores {
    fn from_fn(
        policy_id: &str,
        corpus: &Corpus,
        mut score: impl FnMut(&crate::corpus::Query, &crate::corpus::Document) -> f64,
    ) -> Self {
        let queries = corpus
            .queries
            .iter()
            .map(|q| {
                (
                    q.query_id,
                    q.docs.iter().map(|d| (d.doc_id, score(q, d))).collect(),
                )
            })
            .collect();
        PolicyScores {
            policy_id: policy_id.to_string(),
            temperature: DEFAULT_TEMPERATURE,
            queries,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::Argument(format!(
                "temperature must be positive and finite, got {temperature}"
            )));
        }
        self.temperature = temperature;
        Ok(self)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.queries.keys().copied()
    }

    /// `(doc_id, score)` pairs for a query, in corpus order.
    pub fn docs(&self, query_id: u64) -> Option<&[(u32, f64)]> {
        self.queries.get(&query_id).map(|v| v.as_slice())
    }

    pub fn score(&self, query_id: u64, doc_id: u32) -> Option<f64> {
        self.queries
            .get(&query_id)?
            .iter()
            .find(|(d, _)| *d == doc_id)
            .map(|(_, s)| *s)
    }

    pub fn num_entries(&self) -> usize {
        self.queries.values().map(|v| v.len()).sum()
    }
}

// ---------------------------------------------------------------------------
// Policy constructors
// ---------------------------------------------------------------------------

/// The uninformed policy: every document scores 0, so sampled rankings are
/// uniform over permutations.
pub fn uniform_scores(corpus: &Corpus) -> PolicyScores {
    PolicyScores::from_fn("uniform", corpus, |_, _| 0.0)
}

/// Near-optimal policy: the annotation grade plus Gaussian noise of the
/// given variance, drawn once per (query, doc) at construction.
pub fn noisy_oracle_scores(corpus: &Corpus, variance: f64, seed: u64) -> Result<PolicyScores> {
    if variance < 0.0 || !variance.is_finite() {
        return Err(Error::Argument(format!(
            "noise variance must be non-negative, got {variance}"
        )));
    }
    let normal = Normal::new(0.0, variance.sqrt()).expect("finite std dev");
    let mut current_qid = u64::MAX;
    let mut rng = stream_rng(seed, Purpose::PolicyNoise, 0);
    Ok(PolicyScores::from_fn("noisy_oracle", corpus, |q, d| {
        if q.query_id != current_qid {
            current_qid = q.query_id;
            rng = stream_rng(seed, Purpose::PolicyNoise, q.query_id);
        }
        let noise = if variance == 0.0 {
            0.0
        } else {
            normal.sample(&mut rng)
        };
        d.grade as f64 + noise
    }))
}

/// Ridge-regularized least-squares fit of grade on min-max-normalized
/// features, evaluated on the same corpus. A stand-in for an externally
/// trained ranker; use [`load_scores`] to import one instead.
///
/// Missing feature values are treated as raw 0 before normalization. If no
/// document carries features, the fit degenerates to the mean grade and a
/// warning is logged.
pub fn pointwise_ranker_scores(corpus: &Corpus) -> Result<PolicyScores> {
    const RIDGE: f64 = 1e-6;

    // Feature id -> dense column, plus per-feature min/max over the corpus
    // (missing entries count as raw 0).
    let mut feature_ids: Vec<u32> = Vec::new();
    {
        let mut seen = std::collections::BTreeSet::new();
        for q in &corpus.queries {
            for d in &q.docs {
                if let Some(f) = &d.features {
                    seen.extend(f.keys().copied());
                }
            }
        }
        feature_ids.extend(seen);
    }
    if feature_ids.is_empty() {
        log::warn!(
            "pointwise ranker: corpus '{}' has no features; falling back to mean grade",
            corpus.source
        );
    }
    let n_docs = corpus.num_docs();
    if n_docs == 0 {
        return Err(Error::Argument("cannot fit ranker on empty corpus".into()));
    }
    let col_of: BTreeMap<u32, usize> = feature_ids
        .iter()
        .enumerate()
        .map(|(i, &f)| (f, i))
        .collect();
    let p = feature_ids.len();

    let mut mins = vec![0.0f64; p];
    let mut maxs = vec![0.0f64; p];
    let mut any = vec![false; p];
    for q in &corpus.queries {
        for d in &q.docs {
            let mut present = vec![false; p];
            if let Some(f) = &d.features {
                for (fid, &v) in f {
                    let j = col_of[fid];
                    present[j] = true;
                    if !any[j] {
                        mins[j] = v;
                        maxs[j] = v;
                        any[j] = true;
                    } else {
                        mins[j] = mins[j].min(v);
                        maxs[j] = maxs[j].max(v);
                    }
                }
            }
            for j in 0..p {
                if !present[j] {
                    // implicit raw zero
                    if !any[j] {
                        mins[j] = 0.0;
                        maxs[j] = 0.0;
                        any[j] = true;
                    } else {
                        mins[j] = mins[j].min(0.0);
                        maxs[j] = maxs[j].max(0.0);
                    }
                }
            }
        }
    }
    let ranges: Vec<f64> = (0..p)
        .map(|j| {
            let r = maxs[j] - mins[j];
            if r > 0.0 {
                r
            } else {
                1.0 // constant column normalizes to 0
            }
        })
        .collect();

    // Normal equations over [bias, features]: (X^T X + ridge I) w = X^T y.
    let dim = p + 1;
    let mut xtx = nalgebra::DMatrix::<f64>::zeros(dim, dim);
    let mut xty = nalgebra::DVector::<f64>::zeros(dim);
    let mut x = vec![0.0f64; dim];
    for q in &corpus.queries {
        for d in &q.docs {
            x[0] = 1.0;
            for j in 0..p {
                x[j + 1] = (0.0 - mins[j]) / ranges[j];
            }
            if let Some(f) = &d.features {
                for (fid, &v) in f {
                    let j = col_of[fid];
                    x[j + 1] = (v - mins[j]) / ranges[j];
                }
            }
            for a in 0..dim {
                for b in a..dim {
                    xtx[(a, b)] += x[a] * x[b];
                }
                xty[a] += x[a] * d.grade as f64;
            }
        }
    }
    for a in 0..dim {
        for b in 0..a {
            xtx[(a, b)] = xtx[(b, a)];
        }
        xtx[(a, a)] += RIDGE;
    }
    let w = xtx
        .cholesky()
        .ok_or_else(|| Error::Estimation("pointwise ranker normal equations not SPD".into()))?
        .solve(&xty);

    Ok(PolicyScores::from_fn("pointwise", corpus, |_, d| {
        let mut pred = w[0];
        for j in 0..p {
            pred += w[j + 1] * (0.0 - mins[j]) / ranges[j];
        }
        if let Some(f) = &d.features {
            for (fid, &v) in f {
                let j = col_of[fid];
                // replace the implicit-zero contribution with the real one
                pred += w[j + 1] * ((v - mins[j]) / ranges[j] - (0.0 - mins[j]) / ranges[j]);
            }
        }
        pred
    }))
}

// ---------------------------------------------------------------------------
// Score file I/O
// ---------------------------------------------------------------------------

/// Read a `query_id,doc_id,score` CSV and validate that it covers every
/// (query, doc) of `corpus`.
pub fn load_scores<R: Read>(reader: R, corpus: &Corpus, policy_id: &str) -> Result<PolicyScores> {
    let mut csv_reader = csv::Reader::from_reader(reader);
    {
        let headers = csv_reader.headers()?;
        let expect = ["query_id", "doc_id", "score"];
        if headers.iter().collect::<Vec<_>>() != expect {
            return Err(Error::Validation(format!(
                "score file header must be 'query_id,doc_id,score', got '{}'",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
    }
    let mut map: BTreeMap<(u64, u32), f64> = BTreeMap::new();
    for (i, record) in csv_reader.records().enumerate() {
        let record = record?;
        let line = i + 2; // header is line 1
        let parse = |field: usize, name: &str| -> Result<&str> {
            record.get(field).ok_or_else(|| Error::Parse {
                line,
                msg: format!("missing {name}"),
            })
        };
        let qid: u64 = parse(0, "query_id")?.parse().map_err(|_| Error::Parse {
            line,
            msg: "query_id is not an integer".into(),
        })?;
        let did: u32 = parse(1, "doc_id")?.parse().map_err(|_| Error::Parse {
            line,
            msg: "doc_id is not an integer".into(),
        })?;
        let score: f64 = parse(2, "score")?.parse().map_err(|_| Error::Parse {
            line,
            msg: "score is not a number".into(),
        })?;
        map.insert((qid, did), score);
    }

    let queries = corpus
        .queries
        .iter()
        .map(|q| {
            let docs = q
                .docs
                .iter()
                .map(|d| {
                    map.get(&(q.query_id, d.doc_id))
                        .map(|&s| (d.doc_id, s))
                        .ok_or_else(|| {
                            Error::Validation(format!(
                                "score file misses (query {}, doc {})",
                                q.query_id, d.doc_id
                            ))
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((q.query_id, docs))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;

    Ok(PolicyScores {
        policy_id: policy_id.to_string(),
        temperature: DEFAULT_TEMPERATURE,
        queries,
    })
}

/// Write scores as `query_id,doc_id,score` CSV.
pub fn write_scores<W: Write>(scores: &PolicyScores, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["query_id", "doc_id", "score"])?;
    for (qid, docs) in &scores.queries {
        for (did, s) in docs {
            w.write_record([qid.to_string(), did.to_string(), s.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// Standard Gumbel(0,1) noise, clamped away from the log singularities.
fn gumbel<R: Rng>(rng: &mut R) -> f64 {
    let u: f64 = rng.random::<f64>().clamp(1e-12, 1.0 - 1e-12);
    -(-u.ln()).ln()
}

/// Slot order for one query: doc ids sorted by `score/T + Gumbel` descending.
/// Equivalent to Plackett-Luce sampling with weights `exp(score/T)`.
fn sample_slots<R: Rng>(docs: &[(u32, f64)], temperature: f64, rng: &mut R) -> Vec<u32> {
    let mut keyed: Vec<(u32, f64)> = docs
        .iter()
        .map(|&(d, s)| (d, s / temperature + gumbel(rng)))
        .collect();
    keyed.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    keyed.into_iter().map(|(d, _)| d).collect()
}

/// Sample a ranking straight from prepared `(doc_id, score)` pairs.
/// Shared with the simulator, which pre-resolves per-query doc arrays.
pub(crate) fn sample_ranking_with<R: Rng>(
    docs: &[(u32, f64)],
    temperature: f64,
    query_id: u64,
    rng: &mut R,
) -> Ranking {
    let slots = sample_slots(docs, temperature, rng);
    debug_assert!(is_permutation(docs, &slots));
    Ranking { query_id, slots }
}

/// Draw one ranking for `query_id` from the policy's Plackett-Luce
/// distribution.
pub fn sample_ranking<R: Rng>(
    scores: &PolicyScores,
    query_id: u64,
    rng: &mut R,
) -> Result<Ranking> {
    let docs = scores
        .docs(query_id)
        .ok_or_else(|| Error::Argument(format!("query {query_id} not covered by policy")))?;
    let slots = sample_slots(docs, scores.temperature, rng);
    debug_assert!(is_permutation(docs, &slots));
    Ok(Ranking { query_id, slots })
}

fn is_permutation(docs: &[(u32, f64)], slots: &[u32]) -> bool {
    let mut a: Vec<u32> = docs.iter().map(|&(d, _)| d).collect();
    let mut b = slots.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    a == b
}

/// Exact Plackett-Luce probability of `ranking` under the policy:
/// the product over slots of `exp(s_k/T) / sum_remaining exp(s_j/T)`.
pub fn pl_probability(scores: &PolicyScores, ranking: &Ranking) -> Result<f64> {
    let docs = scores.docs(ranking.query_id).ok_or_else(|| {
        Error::Argument(format!("query {} not covered by policy", ranking.query_id))
    })?;
    if !is_permutation(docs, &ranking.slots) {
        return Err(Error::Argument(
            "ranking is not a permutation of the query's documents".into(),
        ));
    }
    let t = scores.temperature;
    let max = docs.iter().map(|&(_, s)| s / t).fold(f64::NEG_INFINITY, f64::max);
    let weight: BTreeMap<u32, f64> = docs
        .iter()
        .map(|&(d, s)| (d, (s / t - max).exp()))
        .collect();
    let mut remaining: f64 = weight.values().sum();
    let mut prob = 1.0;
    for &d in &ranking.slots {
        let w = weight[&d];
        prob *= w / remaining;
        remaining -= w;
    }
    Ok(prob)
}

/// Monte-Carlo estimate of each document's expected 1-based rank, with
/// `n_samples` sampled rankings per query on stream
/// `(seed, ExpectedRank, query_id)`.
///
/// Per-query rank sums are accumulated as integers, so the total over a
/// query's documents is exactly `n * K(K+1)/2` before the final division.
pub fn expected_rank(scores: &PolicyScores, n_samples: usize, seed: u64) -> Result<ExpectedRanks> {
    if n_samples == 0 {
        return Err(Error::Argument("n_samples must be >= 1".into()));
    }
    let mut values = BTreeMap::new();
    for (&qid, docs) in &scores.queries {
        let mut rng = stream_rng(seed, Purpose::ExpectedRank, qid);
        let index_of: BTreeMap<u32, usize> =
            docs.iter().enumerate().map(|(i, &(d, _))| (d, i)).collect();
        let mut rank_sums = vec![0u64; docs.len()];
        for _ in 0..n_samples {
            let slots = sample_slots(docs, scores.temperature, &mut rng);
            for (slot, d) in slots.iter().enumerate() {
                rank_sums[index_of[d]] += slot as u64 + 1;
            }
        }
        for (&(d, _), &sum) in docs.iter().zip(rank_sums.iter()) {
            values.insert((qid, d), sum as f64 / n_samples as f64);
        }
    }
    Ok(ExpectedRanks { values, n_samples })
}

impl ExpectedRanks {
    pub fn get(&self, query_id: u64, doc_id: u32) -> Option<f64> {
        self.values.get(&(query_id, doc_id)).copied()
    }
}

/// Write expected ranks as `query_id,doc_id,expected_rank` CSV.
pub fn write_expected_ranks<W: Write>(ranks: &ExpectedRanks, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["query_id", "doc_id", "expected_rank"])?;
    for (&(qid, did), v) in &ranks.values {
        w.write_record([qid.to_string(), did.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Read expected ranks written by [`write_expected_ranks`].
///
/// `n_samples` is informational only (the file does not store it).
pub fn read_expected_ranks<R: Read>(reader: R, n_samples: usize) -> Result<ExpectedRanks> {
    let mut csv_reader = csv::Reader::from_reader(reader);
    let mut values = BTreeMap::new();
    for (i, record) in csv_reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let bad = |msg: &str| Error::Parse {
            line,
            msg: msg.into(),
        };
        let qid: u64 = record
            .get(0)
            .ok_or_else(|| bad("missing query_id"))?
            .parse()
            .map_err(|_| bad("query_id is not an integer"))?;
        let did: u32 = record
            .get(1)
            .ok_or_else(|| bad("missing doc_id"))?
            .parse()
            .map_err(|_| bad("doc_id is not an integer"))?;
        let v: f64 = record
            .get(2)
            .ok_or_else(|| bad("missing expected_rank"))?
            .parse()
            .map_err(|_| bad("expected_rank is not a number"))?;
        values.insert((qid, did), v);
    }
    Ok(ExpectedRanks { values, n_samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth_corpus;

    fn corpus_with_grades(grades: &[&[u8]]) -> Corpus {
        let queries = grades
            .iter()
            .enumerate()
            .map(|(qi, gs)| crate::corpus::Query {
                query_id: qi as u64 + 1,
                docs: gs
                    .iter()
                    .enumerate()
                    .map(|(di, &g)| crate::corpus::Document {
                        doc_id: di as u32,
                        grade: g,
                        features: None,
                    })
                    .collect(),
            })
            .collect();
        Corpus {
            queries,
            k: None,
            source: "test".into(),
        }
    }

    /// All K! permutations of the query's doc ids.
    fn all_rankings(scores: &PolicyScores, query_id: u64) -> Vec<Ranking> {
        let docs: Vec<u32> = scores
            .docs(query_id)
            .unwrap()
            .iter()
            .map(|&(d, _)| d)
            .collect();
        let mut out = Vec::new();
        permute(&mut docs.clone(), 0, &mut |perm| {
            out.push(Ranking {
                query_id,
                slots: perm.to_vec(),
            })
        });
        out
    }

    fn permute(items: &mut [u32], start: usize, visit: &mut impl FnMut(&[u32])) {
        if start == items.len() {
            visit(items);
            return;
        }
        for i in start..items.len() {
            items.swap(start, i);
            permute(items, start + 1, visit);
            items.swap(start, i);
        }
    }

    #[test]
    fn uniform_scores_are_all_zero() {
        let c = synth_corpus(3, 4, &[1.0; 5], 1).unwrap();
        let s = uniform_scores(&c);
        assert_eq!(s.temperature, DEFAULT_TEMPERATURE);
        for qid in s.query_ids().collect::<Vec<_>>() {
            for &(_, v) in s.docs(qid).unwrap() {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn uniform_policy_samples_uniform_permutations() {
        // chi-square over the 6 permutations of K=3, 30k samples
        let c = corpus_with_grades(&[&[0, 2, 4]]);
        let s = uniform_scores(&c);
        let rankings = all_rankings(&s, 1);
        let mut counts = std::collections::HashMap::new();
        let n = 30_000;
        let mut rng = stream_rng(7, Purpose::Test, 0);
        for _ in 0..n {
            let r = sample_ranking(&s, 1, &mut rng).unwrap();
            *counts.entry(r.slots).or_insert(0usize) += 1;
        }
        let expected = n as f64 / 6.0;
        let chi2: f64 = rankings
            .iter()
            .map(|r| {
                let o = *counts.get(&r.slots).unwrap_or(&0) as f64;
                (o - expected).powi(2) / expected
            })
            .sum();
        // critical value for df=5 at p=0.001
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let crit = ChiSquared::new(5.0).unwrap().inverse_cdf(0.999);
        assert!(chi2 < crit, "chi2 {chi2} >= {crit}");
    }

    #[test]
    fn uniform_expected_ranks_are_center() {
        // tolerance 0.15 ~ 1.65 standard errors at n=1000; fixed seed
        let c = synth_corpus(1, 10, &[1.0; 5], 3).unwrap();
        let s = uniform_scores(&c);
        let er = expected_rank(&s, 1_000, 19).unwrap();
        for (_, &v) in &er.values {
            assert!((v - 5.5).abs() <= 0.15, "expected ~5.5, got {v}");
        }
    }

    #[test]
    fn noisy_oracle_zero_variance_equals_grades() {
        let c = synth_corpus(5, 8, &[1.0; 5], 2).unwrap();
        let s = noisy_oracle_scores(&c, 0.0, 9).unwrap();
        for q in &c.queries {
            for d in &q.docs {
                assert_eq!(s.score(q.query_id, d.doc_id).unwrap(), d.grade as f64);
            }
        }
    }

    #[test]
    fn noisy_oracle_noise_std_matches() {
        let c = synth_corpus(1000, 10, &[1.0; 5], 4).unwrap();
        let s = noisy_oracle_scores(&c, 0.5, 21).unwrap();
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        let mut n = 0.0;
        for q in &c.queries {
            for d in &q.docs {
                let noise = s.score(q.query_id, d.doc_id).unwrap() - d.grade as f64;
                sum += noise;
                sum2 += noise * noise;
                n += 1.0;
            }
        }
        let var = sum2 / n - (sum / n).powi(2);
        let sd = var.sqrt();
        let target = 0.5f64.sqrt();
        assert!(
            (sd - target).abs() <= 0.05 * target,
            "sd {sd} not within 5% of {target}"
        );
    }

    #[test]
    fn noisy_oracle_is_deterministic() {
        let c = synth_corpus(10, 5, &[1.0; 5], 5).unwrap();
        let a = noisy_oracle_scores(&c, 0.5, 77).unwrap();
        let b = noisy_oracle_scores(&c, 0.5, 77).unwrap();
        assert_eq!(a, b);
        let d = noisy_oracle_scores(&c, 0.5, 78).unwrap();
        assert_ne!(a, d);
        assert!(matches!(
            noisy_oracle_scores(&c, -0.1, 0),
            Err(Error::Argument(_))
        ));
    }

    fn corpus_with_features(rows: &[(u64, u8, &[(u32, f64)])]) -> Corpus {
        let mut queries: Vec<crate::corpus::Query> = Vec::new();
        for &(qid, grade, feats) in rows {
            if queries.last().map(|q| q.query_id) != Some(qid) {
                queries.push(crate::corpus::Query {
                    query_id: qid,
                    docs: Vec::new(),
                });
            }
            let q = queries.last_mut().unwrap();
            q.docs.push(crate::corpus::Document {
                doc_id: q.docs.len() as u32,
                grade,
                features: Some(feats.iter().copied().collect()),
            });
        }
        Corpus {
            queries,
            k: None,
            source: "test".into(),
        }
    }

    #[test]
    fn pointwise_recovers_linear_target() {
        // grade = 2 * feature_1 exactly
        let rows: Vec<(u64, u8, Vec<(u32, f64)>)> = (0..40u64)
            .map(|i| {
                let g = (i % 3) as u8; // grades 0,1,2
                (i / 4 + 1, g, vec![(1u32, g as f64 / 2.0)])
            })
            .collect();
        let refs: Vec<(u64, u8, &[(u32, f64)])> =
            rows.iter().map(|(q, g, f)| (*q, *g, f.as_slice())).collect();
        let c = corpus_with_features(&refs);
        let s = pointwise_ranker_scores(&c).unwrap();
        for q in &c.queries {
            for d in &q.docs {
                let pred = s.score(q.query_id, d.doc_id).unwrap();
                assert!(
                    (pred - d.grade as f64).abs() < 1e-6,
                    "pred {pred} vs grade {}",
                    d.grade
                );
            }
        }
    }

    #[test]
    fn pointwise_constant_features_mean_grade() {
        let rows: Vec<(u64, u8, Vec<(u32, f64)>)> = (0..10u64)
            .map(|i| (1u64, (i % 5) as u8, vec![(1u32, 3.0)]))
            .collect();
        let refs: Vec<(u64, u8, &[(u32, f64)])> =
            rows.iter().map(|(q, g, f)| (*q, *g, f.as_slice())).collect();
        let c = corpus_with_features(&refs);
        let s = pointwise_ranker_scores(&c).unwrap();
        let mean = 10.0 / 5.0; // grades 0..4 twice each -> mean 2.0
        for q in &c.queries {
            for d in &q.docs {
                let pred = s.score(q.query_id, d.doc_id).unwrap();
                assert!((pred - mean).abs() < 1e-4, "pred {pred} vs mean {mean}");
            }
        }
    }

    #[test]
    fn score_csv_roundtrip_and_coverage() {
        let c = synth_corpus(3, 4, &[1.0; 5], 8).unwrap();
        let s = noisy_oracle_scores(&c, 0.5, 1).unwrap();
        let mut buf = Vec::new();
        write_scores(&s, &mut buf).unwrap();
        let s2 = load_scores(buf.as_slice(), &c, "noisy_oracle").unwrap();
        assert_eq!(s.queries, s2.queries);

        // drop one line -> validation error naming the missing pair
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines.remove(1); // first data row: query 0 doc 0
        let err = load_scores(lines.join("\n").as_bytes(), &c, "x").unwrap_err();
        match err {
            Error::Validation(msg) => assert!(msg.contains("query 0") && msg.contains("doc 0")),
            other => panic!("expected Validation, got {other:?}"),
        }
    }

    #[test]
    fn two_doc_first_slot_probability() {
        // scores (ln 2, 0), temperature 1 -> P(first = doc 0) = 2/3
        let c = corpus_with_grades(&[&[0, 0]]);
        let mut s = uniform_scores(&c).with_temperature(1.0).unwrap();
        s.queries.get_mut(&1).unwrap()[0].1 = 2.0f64.ln();
        let n = 100_000;
        let mut rng = stream_rng(3, Purpose::Test, 1);
        let mut first = 0usize;
        for _ in 0..n {
            let r = sample_ranking(&s, 1, &mut rng).unwrap();
            if r.slots[0] == 0 {
                first += 1;
            }
        }
        let freq = first as f64 / n as f64;
        assert!((freq - 2.0 / 3.0).abs() < 0.01, "freq {freq}");
    }

    #[test]
    fn near_zero_temperature_sorts_by_score() {
        let c = corpus_with_grades(&[&[0, 0, 0, 0]]);
        let mut s = uniform_scores(&c).with_temperature(1e-6).unwrap();
        for (i, e) in s.queries.get_mut(&1).unwrap().iter_mut().enumerate() {
            e.1 = (4 - i) as f64; // doc 0 highest
        }
        let mut rng = stream_rng(5, Purpose::Test, 2);
        for _ in 0..1000 {
            let r = sample_ranking(&s, 1, &mut rng).unwrap();
            assert_eq!(r.slots, vec![0, 1, 2, 3]);
        }
    }

    #[test]
    fn sampled_permutations_match_pl_probabilities() {
        // TV distance over all 6 permutations of K=3, scores (1,0,-1), T=1
        let c = corpus_with_grades(&[&[0, 0, 0]]);
        let mut s = uniform_scores(&c).with_temperature(1.0).unwrap();
        let scores = [1.0, 0.0, -1.0];
        for (i, e) in s.queries.get_mut(&1).unwrap().iter_mut().enumerate() {
            e.1 = scores[i];
        }
        let rankings = all_rankings(&s, 1);
        let n = 100_000;
        let mut counts = std::collections::HashMap::new();
        let mut rng = stream_rng(17, Purpose::Test, 3);
        for _ in 0..n {
            let r = sample_ranking(&s, 1, &mut rng).unwrap();
            *counts.entry(r.slots).or_insert(0usize) += 1;
        }
        let tv: f64 = rankings
            .iter()
            .map(|r| {
                let emp = *counts.get(&r.slots).unwrap_or(&0) as f64 / n as f64;
                let exact = pl_probability(&s, r).unwrap();
                (emp - exact).abs()
            })
            .sum::<f64>()
            / 2.0;
        assert!(tv <= 0.02, "total variation {tv} > 0.02");
    }

    #[test]
    fn pl_probability_edge_cases() {
        let c1 = corpus_with_grades(&[&[3]]);
        let s1 = uniform_scores(&c1);
        let r1 = Ranking {
            query_id: 1,
            slots: vec![0],
        };
        assert_eq!(pl_probability(&s1, &r1).unwrap(), 1.0);

        let c2 = corpus_with_grades(&[&[1, 1]]);
        let s2 = uniform_scores(&c2);
        for slots in [vec![0, 1], vec![1, 0]] {
            let r = Ranking { query_id: 1, slots };
            assert!((pl_probability(&s2, &r).unwrap() - 0.5).abs() < 1e-12);
        }

        let bad = Ranking {
            query_id: 1,
            slots: vec![0, 0],
        };
        assert!(matches!(
            pl_probability(&s2, &bad),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn pl_probabilities_sum_to_one_k4() {
        let c = corpus_with_grades(&[&[0, 0, 0, 0]]);
        let mut s = uniform_scores(&c).with_temperature(1.0).unwrap();
        let mut rng = stream_rng(19, Purpose::Test, 4);
        for trial in 0..5 {
            for e in s.queries.get_mut(&1).unwrap().iter_mut() {
                e.1 = rng.random::<f64>() * 4.0 - 2.0;
            }
            let total: f64 = all_rankings(&s, 1)
                .iter()
                .map(|r| pl_probability(&s, r).unwrap())
                .sum();
            assert!((total - 1.0).abs() <= 1e-9, "trial {trial}: sum {total}");
        }
    }

    #[test]
    fn expected_ranks_match_enumeration() {
        // K=3, scores (1,0,-1), T=1: exact expectation from enumeration
        let c = corpus_with_grades(&[&[0, 0, 0]]);
        let mut s = uniform_scores(&c).with_temperature(1.0).unwrap();
        let scores = [1.0, 0.0, -1.0];
        for (i, e) in s.queries.get_mut(&1).unwrap().iter_mut().enumerate() {
            e.1 = scores[i];
        }
        let mut exact = [0.0f64; 3];
        let mut var = [0.0f64; 3];
        for r in all_rankings(&s, 1) {
            let p = pl_probability(&s, &r).unwrap();
            for (slot, &d) in r.slots.iter().enumerate() {
                exact[d as usize] += p * (slot + 1) as f64;
            }
        }
        for r in all_rankings(&s, 1) {
            let p = pl_probability(&s, &r).unwrap();
            for (slot, &d) in r.slots.iter().enumerate() {
                var[d as usize] += p * ((slot + 1) as f64 - exact[d as usize]).powi(2);
            }
        }
        let n = 2_000;
        let er = expected_rank(&s, n, 23).unwrap();
        for d in 0..3u32 {
            let se = (var[d as usize] / n as f64).sqrt();
            let got = er.get(1, d).unwrap();
            assert!(
                (got - exact[d as usize]).abs() <= 3.0 * se,
                "doc {d}: {got} vs exact {} (se {se})",
                exact[d as usize]
            );
        }
    }

    #[test]
    fn expected_rank_sums_are_exact() {
        let c = synth_corpus(4, 7, &[1.0; 5], 31).unwrap();
        let s = noisy_oracle_scores(&c, 0.5, 13).unwrap();
        let er = expected_rank(&s, 250, 5).unwrap();
        for q in &c.queries {
            let sum: f64 = q
                .docs
                .iter()
                .map(|d| er.get(q.query_id, d.doc_id).unwrap())
                .sum();
            let expect = (7 * 8 / 2) as f64;
            assert!((sum - expect).abs() < 1e-9, "sum {sum}");
        }
        assert!(matches!(expected_rank(&s, 0, 5), Err(Error::Argument(_))));
    }

    #[test]
    fn expected_ranks_csv_roundtrip() {
        let c = synth_corpus(2, 3, &[1.0; 5], 6).unwrap();
        let s = uniform_scores(&c);
        let er = expected_rank(&s, 100, 2).unwrap();
        let mut buf = Vec::new();
        write_expected_ranks(&er, &mut buf).unwrap();
        let er2 = read_expected_ranks(buf.as_slice(), 100).unwrap();
        assert_eq!(er.values, er2.values);
    }

    proptest::proptest! {
        #[test]
        fn sampled_ranking_is_permutation(
            k in 1usize..8,
            seed in 0u64..500,
        ) {
            let c = synth_corpus(1, k, &[1.0; 5], seed).unwrap();
            let s = noisy_oracle_scores(&c, 0.5, seed).unwrap();
            let mut rng = stream_rng(seed, Purpose::Test, 5);
            let r = sample_ranking(&s, 0, &mut rng).unwrap();
            let mut slots = r.slots.clone();
            slots.sort_unstable();
            let expect: Vec<u32> = (0..k as u32).collect();
            proptest::prop_assert_eq!(slots, expect);
        }

        #[test]
        fn first_slot_follows_softmax(seed in 0u64..20) {
            let c = corpus_with_grades(&[&[0, 0, 0]]);
            let mut s = uniform_scores(&c).with_temperature(1.0).unwrap();
            let mut rng = stream_rng(seed, Purpose::Test, 6);
            let raw: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 3.0 - 1.5).collect();
            for (i, e) in s.queries.get_mut(&1).unwrap().iter_mut().enumerate() {
                e.1 = raw[i];
            }
            let z: f64 = raw.iter().map(|v| v.exp()).sum();
            let n = 100_000;
            let mut counts = [0usize; 3];
            for _ in 0..n {
                let r = sample_ranking(&s, 1, &mut rng).unwrap();
                counts[r.slots[0] as usize] += 1;
            }
            for d in 0..3 {
                let emp = counts[d] as f64 / n as f64;
                let exact = raw[d].exp() / z;
                proptest::prop_assert!((emp - exact).abs() <= 0.02);
            }
        }
    }
}
