//! Ranking corpora: LETOR ingestion, stratified subsampling, synthesis.
//!
//! A corpus holds graded candidate documents per query. Real corpora come in
//! as LETOR/SVMlight text (`<grade> qid:<qid> <fid>:<val> ... # comment`);
//! synthetic corpora are generated for desk-scale runs and tests.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Purpose};

/// Highest relevance grade on the judgment scale (grades run 0..=4).
pub const MAX_GRADE: u8 = 4;

/// One judged candidate document within a query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: u32,
    pub grade: u8,
    /// Sparse feature vector; absent for synthetic corpora.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<BTreeMap<u32, f64>>,
}

/// A query with its candidate set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: u64,
    pub docs: Vec<Document>,
}

/// A set of queries, each with judged candidate documents.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub queries: Vec<Query>,
    /// `Some(k)` once every query holds exactly `k` documents; `None` for
    /// raw parses with variable candidate counts.
    pub k: Option<usize>,
    /// Provenance: a file path or a synthetic-generation tag.
    pub source: String,
}

impl Corpus {
    /// Docs-per-query if uniform across the corpus.
    pub fn uniform_k(&self) -> Option<usize> {
        let first = self.queries.first()?.docs.len();
        self.queries
            .iter()
            .all(|q| q.docs.len() == first)
            .then_some(first)
    }

    pub fn require_uniform_k(&self) -> Result<usize> {
        self.uniform_k().ok_or_else(|| {
            Error::Validation(format!(
                "corpus '{}' does not have a uniform docs-per-query count",
                self.source
            ))
        })
    }

    pub fn num_docs(&self) -> usize {
        self.queries.iter().map(|q| q.docs.len()).sum()
    }

    pub fn query(&self, query_id: u64) -> Option<&Query> {
        self.queries.iter().find(|q| q.query_id == query_id)
    }
}

// ---------------------------------------------------------------------------
// LETOR parsing and serialization
// ---------------------------------------------------------------------------

/// Parse LETOR/SVMlight text: one document per line,
/// `<grade> qid:<qid> <fid>:<val> ...` with optional `# comment`.
///
/// Documents are grouped by qid in input order; `doc_id` is assigned by
/// order of appearance within each query. Queries may end up with variable
/// candidate counts, so the result carries `k = None`.
pub fn parse_letor<R: BufRead>(reader: R, source: &str) -> Result<Corpus> {
    let mut queries: Vec<Query> = Vec::new();
    let mut index: BTreeMap<u64, usize> = BTreeMap::new();

    for (line_no, line) in reader.lines().enumerate() {
        let line_no = line_no + 1;
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }

        let mut tokens = content.split_ascii_whitespace();
        let grade: u8 = tokens
            .next()
            .ok_or_else(|| parse_err(line_no, "missing grade"))?
            .parse()
            .map_err(|_| parse_err(line_no, "grade is not an integer"))?;
        if grade > MAX_GRADE {
            return Err(Error::Validation(format!(
                "line {line_no}: grade {grade} outside 0..={MAX_GRADE}"
            )));
        }

        let qid_tok = tokens
            .next()
            .ok_or_else(|| parse_err(line_no, "missing qid field"))?;
        let query_id: u64 = qid_tok
            .strip_prefix("qid:")
            .ok_or_else(|| parse_err(line_no, "second field must be qid:<id>"))?
            .parse()
            .map_err(|_| parse_err(line_no, "qid is not an integer"))?;

        let mut features = BTreeMap::new();
        for tok in tokens {
            let (fid, val) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(line_no, &format!("malformed feature '{tok}'")))?;
            let fid: u32 = fid
                .parse()
                .map_err(|_| parse_err(line_no, &format!("feature id '{fid}' not an integer")))?;
            let val: f64 = val
                .parse()
                .map_err(|_| parse_err(line_no, &format!("feature value '{val}' not a number")))?;
            features.insert(fid, val);
        }

        let qi = *index.entry(query_id).or_insert_with(|| {
            queries.push(Query {
                query_id,
                docs: Vec::new(),
            });
            queries.len() - 1
        });
        let doc_id = queries[qi].docs.len() as u32;
        queries[qi].docs.push(Document {
            doc_id,
            grade,
            features: if features.is_empty() {
                None
            } else {
                Some(features)
            },
        });
    }

    Ok(Corpus {
        queries,
        k: None,
        source: source.to_string(),
    })
}

fn parse_err(line: usize, msg: &str) -> Error {
    Error::Parse {
        line,
        msg: msg.to_string(),
    }
}

/// Serialize a corpus back to LETOR text (feature ids in ascending order).
pub fn write_letor<W: Write>(corpus: &Corpus, mut writer: W) -> Result<()> {
    for q in &corpus.queries {
        for d in &q.docs {
            write!(writer, "{} qid:{}", d.grade, q.query_id)?;
            if let Some(features) = &d.features {
                for (fid, val) in features {
                    write!(writer, " {fid}:{val}")?;
                }
            }
            writeln!(writer)?;
        }
    }
    Ok(())
}

/// Write a corpus as JSON Lines, one query per line. Features are omitted
/// unless `include_features` is set.
pub fn write_corpus_jsonl<W: Write>(
    corpus: &Corpus,
    mut writer: W,
    include_features: bool,
) -> Result<()> {
    for q in &corpus.queries {
        if include_features {
            serde_json::to_writer(&mut writer, q)?;
        } else {
            let stripped = Query {
                query_id: q.query_id,
                docs: q
                    .docs
                    .iter()
                    .map(|d| Document {
                        doc_id: d.doc_id,
                        grade: d.grade,
                        features: None,
                    })
                    .collect(),
            };
            serde_json::to_writer(&mut writer, &stripped)?;
        }
        writeln!(writer)?;
    }
    Ok(())
}

/// Read a corpus from JSON Lines produced by [`write_corpus_jsonl`].
pub fn read_corpus_jsonl<R: BufRead>(reader: R, source: &str) -> Result<Corpus> {
    let mut queries = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let q: Query = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no + 1,
            msg: e.to_string(),
        })?;
        queries.push(q);
    }
    let mut corpus = Corpus {
        queries,
        k: None,
        source: source.to_string(),
    };
    corpus.k = corpus.uniform_k();
    Ok(corpus)
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

/// Reduce every query to exactly `k` documents by per-grade stratified
/// sampling; queries with fewer than `k` documents are discarded.
///
/// Per-grade quotas come from largest-remainder apportionment of the query's
/// grade counts to `k` slots (remainder ties broken toward the higher
/// grade); documents are then drawn uniformly without replacement within
/// each grade. Deterministic given `(corpus, k, seed)`.
pub fn stratified_subsample(corpus: &Corpus, k: usize, seed: u64) -> Result<Corpus> {
    if k == 0 {
        return Err(Error::Argument("subsample k must be >= 1".into()));
    }

    let mut queries = Vec::new();
    for q in &corpus.queries {
        if q.docs.len() < k {
            continue;
        }
        let mut by_grade: [Vec<usize>; 5] = Default::default();
        for (i, d) in q.docs.iter().enumerate() {
            by_grade[d.grade as usize].push(i);
        }
        let counts: [usize; 5] = std::array::from_fn(|g| by_grade[g].len());
        let quotas = largest_remainder(&counts, k);

        let mut rng = stream_rng(seed, Purpose::Subsample, q.query_id);
        let mut keep: Vec<usize> = Vec::with_capacity(k);
        for g in 0..5 {
            let mut pool = by_grade[g].clone();
            pool.shuffle(&mut rng);
            keep.extend(pool.into_iter().take(quotas[g]));
        }
        keep.sort_unstable();

        queries.push(Query {
            query_id: q.query_id,
            docs: keep.into_iter().map(|i| q.docs[i].clone()).collect(),
        });
    }

    Ok(Corpus {
        queries,
        k: Some(k),
        source: corpus.source.clone(),
    })
}

/// Apportion `k` slots to grade buckets proportionally to `counts` via the
/// largest-remainder method. Remainder ties go to the higher grade.
///
/// Requires `sum(counts) >= k`; quotas never exceed the bucket counts.
pub fn largest_remainder(counts: &[usize; 5], k: usize) -> [usize; 5] {
    let n: usize = counts.iter().sum();
    assert!(n >= k, "cannot apportion {k} slots over {n} items");

    let mut quotas = [0usize; 5];
    let mut remainders = [0usize; 5]; // k*count mod n, exact integers
    let mut assigned = 0;
    for g in 0..5 {
        quotas[g] = k * counts[g] / n;
        remainders[g] = k * counts[g] % n;
        assigned += quotas[g];
    }

    let mut order: Vec<usize> = (0..5).collect();
    order.sort_by(|&a, &b| remainders[b].cmp(&remainders[a]).then(b.cmp(&a)));
    for &g in order.iter().take(k - assigned) {
        quotas[g] += 1;
    }
    quotas
}

// ---------------------------------------------------------------------------
// Synthesis
// ---------------------------------------------------------------------------

/// Generate a feature-less corpus of `num_queries` queries with `k` docs
/// each, grades drawn i.i.d. from `grade_weights`. Deterministic given seed.
pub fn synth_corpus(
    num_queries: usize,
    k: usize,
    grade_weights: &[f64; 5],
    seed: u64,
) -> Result<Corpus> {
    if grade_weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(Error::Argument(
            "grade weights must be finite and non-negative".into(),
        ));
    }
    let total: f64 = grade_weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::Argument("grade weights must not all be zero".into()));
    }

    let mut queries = Vec::with_capacity(num_queries);
    for qid in 0..num_queries as u64 {
        let mut rng = stream_rng(seed, Purpose::SynthGrades, qid);
        let docs = (0..k as u32)
            .map(|doc_id| Document {
                doc_id,
                grade: sample_grade(grade_weights, total, &mut rng),
                features: None,
            })
            .collect();
        queries.push(Query {
            query_id: qid,
            docs,
        });
    }

    Ok(Corpus {
        queries,
        k: Some(k),
        source: format!("synthetic(n={num_queries},k={k},seed={seed})"),
    })
}

/// Inverse-CDF draw over the five grade weights.
fn sample_grade<R: Rng>(weights: &[f64; 5], total: f64, rng: &mut R) -> u8 {
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (g, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return g as u8;
        }
    }
    // u == total can fall through on the last positive weight
    (weights.iter().rposition(|&w| w > 0.0).unwrap()) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Corpus {
        parse_letor(text.as_bytes(), "test").unwrap()
    }

    #[test]
    fn parses_single_line() {
        let c = parse("2 qid:10 1:0.5 3:1.0");
        assert_eq!(c.queries.len(), 1);
        let q = &c.queries[0];
        assert_eq!(q.query_id, 10);
        assert_eq!(q.docs.len(), 1);
        assert_eq!(q.docs[0].grade, 2);
        let f = q.docs[0].features.as_ref().unwrap();
        assert_eq!(f.get(&1), Some(&0.5));
        assert_eq!(f.get(&3), Some(&1.0));
    }

    #[test]
    fn empty_input_is_empty_corpus() {
        let c = parse("");
        assert!(c.queries.is_empty());
    }

    #[test]
    fn groups_by_qid_and_assigns_doc_ids_in_order() {
        let c = parse("0 qid:1 1:0.0\n4 qid:1 1:1.0");
        assert_eq!(c.queries.len(), 1);
        let grades: Vec<u8> = c.queries[0].docs.iter().map(|d| d.grade).collect();
        let ids: Vec<u32> = c.queries[0].docs.iter().map(|d| d.doc_id).collect();
        assert_eq!(grades, vec![0, 4]);
        assert_eq!(ids, vec![0, 1]);
    }

    #[test]
    fn comments_are_ignored() {
        let c = parse("1 qid:3 2:0.25 # docid = GX008\n");
        assert_eq!(c.queries[0].docs[0].features.as_ref().unwrap().len(), 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_letor("2 qid:1 1:0.5\nnot-a-grade qid:2".as_bytes(), "t").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_grade_is_validation_error() {
        let err = parse_letor("5 qid:1 1:0.5".as_bytes(), "t").unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn letor_roundtrip_preserves_grades_qids_features() {
        let text = "2 qid:10 1:0.5 3:1.25\n0 qid:10 2:-3.5\n4 qid:11 1:0.125\n";
        let c1 = parse(text);
        let mut buf = Vec::new();
        write_letor(&c1, &mut buf).unwrap();
        let c2 = parse_letor(buf.as_slice(), "test").unwrap();
        assert_eq!(c1.queries, c2.queries);
    }

    #[test]
    fn jsonl_roundtrip_with_and_without_features() {
        let c = parse("2 qid:10 1:0.5\n1 qid:10 2:0.75\n3 qid:11 1:0.5");
        let mut buf = Vec::new();
        write_corpus_jsonl(&c, &mut buf, true).unwrap();
        let c2 = read_corpus_jsonl(buf.as_slice(), "test").unwrap();
        assert_eq!(c.queries, c2.queries);

        let mut buf = Vec::new();
        write_corpus_jsonl(&c, &mut buf, false).unwrap();
        let c3 = read_corpus_jsonl(buf.as_slice(), "test").unwrap();
        assert!(c3.queries[0].docs[0].features.is_none());
    }

    #[test]
    fn subsample_rejects_zero_k() {
        let c = synth_corpus(2, 5, &[1.0; 5], 1).unwrap();
        assert!(matches!(
            stratified_subsample(&c, 0, 1),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn subsample_keeps_all_docs_when_exact() {
        let c = synth_corpus(3, 10, &[1.0; 5], 7).unwrap();
        for seed in [0, 1, 99] {
            let s = stratified_subsample(&c, 10, seed).unwrap();
            assert_eq!(s.queries, c.queries);
        }
    }

    #[test]
    fn subsample_discards_short_queries() {
        let c = parse("1 qid:1 1:0.1\n2 qid:2 1:0.1\n3 qid:2 1:0.2");
        let s = stratified_subsample(&c, 2, 0).unwrap();
        assert_eq!(s.queries.len(), 1);
        assert_eq!(s.queries[0].query_id, 2);
        assert_eq!(s.k, Some(2));
    }

    #[test]
    fn half_zero_half_four_splits_five_five() {
        // largest-remainder apportionment of (0.5, 0, 0, 0, 0.5) to 10 slots
        let mut docs = Vec::new();
        for i in 0..20u32 {
            docs.push(Document {
                doc_id: i,
                grade: if i < 10 { 0 } else { 4 },
                features: None,
            });
        }
        let c = Corpus {
            queries: vec![Query {
                query_id: 1,
                docs,
            }],
            k: None,
            source: "test".into(),
        };
        for seed in 0..20 {
            let s = stratified_subsample(&c, 10, seed).unwrap();
            let zeros = s.queries[0].docs.iter().filter(|d| d.grade == 0).count();
            let fours = s.queries[0].docs.iter().filter(|d| d.grade == 4).count();
            assert_eq!((zeros, fours), (5, 5), "seed {seed}");
        }
    }

    #[test]
    fn largest_remainder_tie_goes_to_higher_grade() {
        // counts (1,1,1,1,1), k=3: all remainders equal, grades 4,3,2 win
        assert_eq!(largest_remainder(&[1, 1, 1, 1, 1], 3), [0, 0, 1, 1, 1]);
    }

    #[test]
    fn subsample_is_deterministic() {
        let c = synth_corpus(20, 30, &[3.0, 1.0, 1.0, 1.0, 1.0], 5).unwrap();
        let a = stratified_subsample(&c, 10, 42).unwrap();
        let b = stratified_subsample(&c, 10, 42).unwrap();
        assert_eq!(a.queries, b.queries);
        let d = stratified_subsample(&c, 10, 43).unwrap();
        assert_ne!(a.queries, d.queries);
    }

    #[test]
    fn synth_rejects_bad_weights() {
        assert!(matches!(
            synth_corpus(1, 5, &[0.0; 5], 1),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            synth_corpus(1, 5, &[1.0, -1.0, 0.0, 0.0, 0.0], 1),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn synth_is_deterministic_and_sized() {
        let a = synth_corpus(1, 10, &[1.0; 5], 9).unwrap();
        let b = synth_corpus(1, 10, &[1.0; 5], 9).unwrap();
        assert_eq!(a.queries, b.queries);
        assert_eq!(a.queries[0].docs.len(), 10);
        assert_eq!(synth_corpus(0, 10, &[1.0; 5], 9).unwrap().queries.len(), 0);
    }

    #[test]
    fn synth_grade_frequencies_concentrate() {
        // 10,000 draws per grade bucket; binomial sd ~ 0.004, bound 0.02
        let c = synth_corpus(1000, 10, &[1.0; 5], 123).unwrap();
        let mut counts = [0usize; 5];
        for q in &c.queries {
            for d in &q.docs {
                counts[d.grade as usize] += 1;
            }
        }
        let n = c.num_docs() as f64;
        for g in 0..5 {
            let freq = counts[g] as f64 / n;
            assert!(
                (freq - 0.2).abs() <= 0.02,
                "grade {g} frequency {freq} outside 0.2 +- 0.02"
            );
        }
    }

    proptest::proptest! {
        #[test]
        fn subsample_quota_deviation_below_one(
            counts in proptest::array::uniform5(0usize..40),
            k_frac in 0.1f64..1.0,
        ) {
            let n: usize = counts.iter().sum();
            proptest::prop_assume!(n > 0);
            let k = ((n as f64 * k_frac) as usize).max(1);
            let quotas = largest_remainder(&counts, k);
            let total: usize = quotas.iter().sum();
            proptest::prop_assert_eq!(total, k);
            for g in 0..5 {
                let exact = k as f64 * counts[g] as f64 / n as f64;
                proptest::prop_assert!((quotas[g] as f64 - exact).abs() < 1.0);
                proptest::prop_assert!(quotas[g] <= counts[g]);
            }
        }

        #[test]
        fn letor_roundtrip_random_corpora(
            grades in proptest::collection::vec(0u8..=4, 1..30),
            seed in 0u64..1000,
        ) {
            let c = {
                let mut queries = Vec::new();
                let mut rng = stream_rng(seed, Purpose::Test, 0);
                let mut docs = Vec::new();
                let mut qid = 0u64;
                for (i, &g) in grades.iter().enumerate() {
                    let mut features = BTreeMap::new();
                    for f in 0..rng.random_range(0..4u32) {
                        features.insert(f + 1, rng.random::<f64>());
                    }
                    docs.push(Document {
                        doc_id: docs.len() as u32,
                        grade: g,
                        features: (!features.is_empty()).then_some(features),
                    });
                    if rng.random::<f64>() < 0.3 || i == grades.len() - 1 {
                        queries.push(Query { query_id: qid, docs: std::mem::take(&mut docs) });
                        qid += 1;
                    }
                }
                Corpus { queries, k: None, source: "prop".into() }
            };
            let mut buf = Vec::new();
            write_letor(&c, &mut buf).unwrap();
            let c2 = parse_letor(buf.as_slice(), "prop").unwrap();
            proptest::prop_assert_eq!(c.queries, c2.queries);
        }
    }
}
