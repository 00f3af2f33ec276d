//! Experiment grids: policy-shift runs, metric-combination regression, and
//! off-policy model selection.
//!
//! A run (one "cell") trains every candidate model on clicks from a logging
//! policy and scores each with in-distribution perplexity, perplexity under
//! a different test policy, nDCG, and CMIP. Downstream analyses quantify
//! how well metric combinations predict the out-of-distribution perplexity
//! and how much regret metric-based selection strategies incur.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::clickmodels::{fit, ModelSpec};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::metrics::{build_triplets, cmip, ndcg, perplexity, CmipConfig};
use crate::policy::{
    expected_rank, load_scores, noisy_oracle_scores, pointwise_ranker_scores, uniform_scores,
    PolicyScores, DEFAULT_RANK_SAMPLES, DEFAULT_TEMPERATURE,
};
use crate::rng::{stream_rng, sub_seed, Purpose};
use crate::usersim::{generate_dataset, UserModelConfig};

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

/// How to build a policy over the run corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PolicySpec {
    Uniform,
    NoisyOracle { variance: f64 },
    Pointwise,
    Scores { path: PathBuf },
}

impl std::str::FromStr for PolicySpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(PolicySpec::Uniform),
            "noisy_oracle" | "noisy-oracle" => Ok(PolicySpec::NoisyOracle { variance: 0.5 }),
            "pointwise" => Ok(PolicySpec::Pointwise),
            other => {
                if let Some(path) = other.strip_prefix("scores:") {
                    Ok(PolicySpec::Scores { path: path.into() })
                } else {
                    Err(Error::Argument(format!("unknown policy spec '{other}'")))
                }
            }
        }
    }
}

impl PolicySpec {
    pub fn id(&self) -> String {
        match self {
            PolicySpec::Uniform => "uniform".into(),
            PolicySpec::NoisyOracle { .. } => "noisy_oracle".into(),
            PolicySpec::Pointwise => "pointwise".into(),
            PolicySpec::Scores { path } => format!("scores:{}", path.display()),
        }
    }
}

/// Materialize a policy over `corpus`.
pub fn build_policy(spec: &PolicySpec, corpus: &Corpus, seed: u64) -> Result<PolicyScores> {
    match spec {
        PolicySpec::Uniform => Ok(uniform_scores(corpus)),
        PolicySpec::NoisyOracle { variance } => noisy_oracle_scores(corpus, *variance, seed),
        PolicySpec::Pointwise => pointwise_ranker_scores(corpus),
        PolicySpec::Scores { path } => {
            let file = std::fs::File::open(path)?;
            load_scores(std::io::BufReader::new(file), corpus, &format!("scores:{}", path.display()))
        }
    }
}

/// One experiment cell: user model, logging/test policies, session budget,
/// candidate models, and the master seed for every stream in the cell.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub config_id: String,
    pub user: UserModelConfig,
    pub logging_policy: PolicySpec,
    pub test_policy: PolicySpec,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub models: Vec<ModelSpec>,
    pub seed: u64,
    pub temperature: f64,
    pub expected_rank_samples: usize,
    pub cmip: CmipConfig,
}

impl RunConfig {
    pub fn new(
        config_id: &str,
        user: UserModelConfig,
        logging_policy: PolicySpec,
        test_policy: PolicySpec,
        models: Vec<ModelSpec>,
        seed: u64,
    ) -> Self {
        RunConfig {
            config_id: config_id.to_string(),
            user,
            logging_policy,
            test_policy,
            n_train: 500_000,
            n_val: 100_000,
            n_test: 100_000,
            models,
            seed,
            temperature: DEFAULT_TEMPERATURE,
            expected_rank_samples: DEFAULT_RANK_SAMPLES,
            cmip: CmipConfig::default(),
        }
    }
}

/// One (config, model, seed) result line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub config_id: String,
    pub model: String,
    pub seed: u64,
    pub ind_ppl: f64,
    pub ood_ppl: f64,
    pub ndcg: f64,
    pub cmip: f64,
}

// seed-derivation tags within a cell
const TAG_LOGGING_POLICY: u64 = 1;
const TAG_TEST_POLICY: u64 = 2;
const TAG_TRAIN_LOG: u64 = 3;
const TAG_VAL_LOG: u64 = 4;
const TAG_IND_TEST_LOG: u64 = 5;
const TAG_OOD_TEST_LOG: u64 = 6;
const TAG_EXPECTED_RANKS: u64 = 7;
const TAG_MODEL_FIT: u64 = 0x10;
const TAG_MODEL_CMIP: u64 = 0x100;

/// Run one cell: generate logs, fit every model, and compute the four
/// metrics per model. Deterministic given `config.seed`.
pub fn run_config(config: &RunConfig, corpus: &Corpus) -> Result<Vec<BenchRow>> {
    let seed = config.seed;
    let logging = build_policy(
        &config.logging_policy,
        corpus,
        sub_seed(seed, TAG_LOGGING_POLICY),
    )?
    .with_temperature(config.temperature)?;
    let test = build_policy(&config.test_policy, corpus, sub_seed(seed, TAG_TEST_POLICY))?
        .with_temperature(config.temperature)?;

    let train = generate_dataset(
        corpus,
        &logging,
        &config.user,
        config.n_train,
        sub_seed(seed, TAG_TRAIN_LOG),
    )?;
    let val = generate_dataset(
        corpus,
        &logging,
        &config.user,
        config.n_val,
        sub_seed(seed, TAG_VAL_LOG),
    )?;
    let ind_test = generate_dataset(
        corpus,
        &logging,
        &config.user,
        config.n_test,
        sub_seed(seed, TAG_IND_TEST_LOG),
    )?;
    let ood_test = generate_dataset(
        corpus,
        &test,
        &config.user,
        config.n_test,
        sub_seed(seed, TAG_OOD_TEST_LOG),
    )?;

    let ranks = expected_rank(
        &logging,
        config.expected_rank_samples,
        sub_seed(seed, TAG_EXPECTED_RANKS),
    )?;

    let mut rows = Vec::with_capacity(config.models.len());
    for (mi, spec) in config.models.iter().enumerate() {
        let model = fit(spec, &train, Some(&val), sub_seed(seed, TAG_MODEL_FIT + mi as u64))?;
        let ind_ppl = perplexity(&model, &ind_test)?.ppl;
        let ood_ppl = perplexity(&model, &ood_test)?.ppl;
        let scores = model.relevance_scores(corpus);
        let ndcg_value = ndcg(&scores, corpus)?;
        let triplets = build_triplets(&scores, &ranks, corpus)?;
        let cmip_config = CmipConfig {
            seed: sub_seed(seed, TAG_MODEL_CMIP + mi as u64),
            ..config.cmip.clone()
        };
        let cmip_value = cmip(&triplets, &cmip_config)?.mean;
        rows.push(BenchRow {
            config_id: config.config_id.clone(),
            model: spec.kind.name().to_string(),
            seed,
            ind_ppl,
            ood_ppl,
            ndcg: ndcg_value,
            cmip: cmip_value,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Metric-combination regression
// ---------------------------------------------------------------------------

/// Features available to the out-of-distribution perplexity regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegFeature {
    IndPpl,
    Ndcg,
    Cmip,
}

impl RegFeature {
    fn of(&self, row: &BenchRow) -> f64 {
        match self {
            RegFeature::IndPpl => row.ind_ppl,
            RegFeature::Ndcg => row.ndcg,
            RegFeature::Cmip => row.cmip,
        }
    }
}

/// The seven feature combinations reported per configuration, in table
/// column order.
pub const FEATURE_SETS: [(&str, &[RegFeature]); 7] = [
    ("ind_ppl", &[RegFeature::IndPpl]),
    ("ndcg", &[RegFeature::Ndcg]),
    ("cmip", &[RegFeature::Cmip]),
    ("ind_ppl+ndcg", &[RegFeature::IndPpl, RegFeature::Ndcg]),
    ("cmip+ind_ppl", &[RegFeature::Cmip, RegFeature::IndPpl]),
    ("cmip+ndcg", &[RegFeature::Cmip, RegFeature::Ndcg]),
    (
        "joint",
        &[RegFeature::IndPpl, RegFeature::Ndcg, RegFeature::Cmip],
    ),
];

/// Cross-validated adjusted R-squared of predicting `ood_ppl` from the
/// given features with ordinary least squares.
///
/// Each repetition shuffles the rows, splits them into two folds, fits on
/// one and scores on the other (both directions). The adjustment
/// `1 - (1 - R^2)(n - 1)/(n - p - 1)` uses the held-out fold size.
pub fn fit_regression(
    rows: &[BenchRow],
    features: &[RegFeature],
    repetitions: usize,
    seed: u64,
) -> Result<f64> {
    if rows.len() < 8 {
        return Err(Error::Argument(format!(
            "regression needs at least 8 rows, got {}",
            rows.len()
        )));
    }
    if features.is_empty() {
        return Err(Error::Argument("regression needs at least 1 feature".into()));
    }
    let p = features.len();
    let n = rows.len();
    let fold = n / 2;
    if p >= fold.min(n - fold).saturating_sub(1) {
        return Err(Error::Argument(format!(
            "degenerate fit: {p} features against folds of {} and {} rows",
            fold,
            n - fold
        )));
    }

    let xs: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| features.iter().map(|f| f.of(r)).collect())
        .collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.ood_ppl).collect();

    let mut total = 0.0;
    let mut count = 0usize;
    let mut idx: Vec<usize> = (0..n).collect();
    for rep in 0..repetitions {
        let mut rng = stream_rng(seed, Purpose::Regression, rep as u64);
        rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut rng);
        let (a, b) = idx.split_at(fold);
        for (train, test) in [(a, b), (b, a)] {
            let r2 = ols_heldout_r2(&xs, &ys, train, test)?;
            total += adjusted_r2(r2, test.len() as f64, p as f64);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// `1 - (1 - R^2)(n - 1)/(n - p - 1)`.
fn adjusted_r2(r2: f64, n: f64, p: f64) -> f64 {
    1.0 - (1.0 - r2) * (n - 1.0) / (n - p - 1.0)
}

/// OLS (with intercept) on `train`, R-squared on `test` against the
/// held-out mean.
fn ols_heldout_r2(xs: &[Vec<f64>], ys: &[f64], train: &[usize], test: &[usize]) -> Result<f64> {
    let p = xs[0].len();
    let dim = p + 1;
    let mut xtx = nalgebra::DMatrix::<f64>::zeros(dim, dim);
    let mut xty = nalgebra::DVector::<f64>::zeros(dim);
    let mut row = vec![0.0; dim];
    for &i in train {
        row[0] = 1.0;
        row[1..].copy_from_slice(&xs[i]);
        for a in 0..dim {
            for b in a..dim {
                xtx[(a, b)] += row[a] * row[b];
            }
            xty[a] += row[a] * ys[i];
        }
    }
    for a in 0..dim {
        for b in 0..a {
            xtx[(a, b)] = xtx[(b, a)];
        }
        xtx[(a, a)] += 1e-10;
    }
    let w = xtx
        .cholesky()
        .ok_or_else(|| Error::Estimation("regression normal equations not SPD".into()))?
        .solve(&xty);

    let mean_y: f64 = test.iter().map(|&i| ys[i]).sum::<f64>() / test.len() as f64;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for &i in test {
        let mut pred = w[0];
        for (j, &x) in xs[i].iter().enumerate() {
            pred += w[j + 1] * x;
        }
        ss_res += (ys[i] - pred).powi(2);
        ss_tot += (ys[i] - mean_y).powi(2);
    }
    Ok(1.0 - ss_res / ss_tot.max(1e-30))
}

/// In-sample (training) R-squared, used by the feature-nesting property
/// tests: a feature superset can never fit worse on the same rows.
pub fn training_r2(rows: &[BenchRow], features: &[RegFeature]) -> Result<f64> {
    let xs: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| features.iter().map(|f| f.of(r)).collect())
        .collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.ood_ppl).collect();
    let all: Vec<usize> = (0..rows.len()).collect();
    ols_heldout_r2(&xs, &ys, &all, &all)
}

// ---------------------------------------------------------------------------
// Statistical tests
// ---------------------------------------------------------------------------

/// Two-sided Welch's t-test with Satterthwaite degrees of freedom.
pub fn welch_ttest(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Argument(
            "welch test needs at least 2 values per sample".into(),
        ));
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let var = |s: &[f64], m: f64| {
        s.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (s.len() - 1) as f64
    };
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (var(a, ma), var(b, mb));
    if va <= 0.0 && vb <= 0.0 {
        return Err(Error::Argument(
            "welch test needs positive variance in at least one sample".into(),
        ));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let se2 = va / na + vb / nb;
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::Estimation(format!("t-distribution: {e}")))?;
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok((t, p.clamp(0.0, 1.0)))
}

/// Bonferroni correction: `min(1, p * m)`.
pub fn bonferroni(p: f64, m: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Argument(format!("p-value {p} outside [0, 1]")));
    }
    if m == 0 {
        return Err(Error::Argument("comparison count must be >= 1".into()));
    }
    Ok((p * m as f64).min(1.0))
}

// ---------------------------------------------------------------------------
// Off-policy selection
// ---------------------------------------------------------------------------

/// Metrics a selection strategy may read. Out-of-distribution perplexity is
/// deliberately not available: it is the quantity being protected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpsMetric {
    IndPpl,
    Ndcg,
    Cmip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Lower,
    Higher,
}

/// One offline metric view of a candidate model.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub model: String,
    pub ind_ppl: f64,
    pub ndcg: f64,
    pub cmip: f64,
}

impl Candidate {
    fn metric(&self, m: OpsMetric) -> f64 {
        match m {
            OpsMetric::IndPpl => self.ind_ppl,
            OpsMetric::Ndcg => self.ndcg,
            OpsMetric::Cmip => self.cmip,
        }
    }
}

/// A `top-m` pre-filter on one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct Filter {
    pub metric: OpsMetric,
    pub direction: Direction,
    pub top_m: usize,
}

/// A selection rule: optional top-m filters intersected, then an argbest
/// pick. An empty filter intersection falls back to the highest nDCG.
#[derive(Debug, Clone, PartialEq)]
pub struct Strategy {
    pub name: String,
    pub filters: Vec<Filter>,
    pub pick: (OpsMetric, Direction),
}

impl Strategy {
    pub fn argbest(name: &str, metric: OpsMetric, direction: Direction) -> Self {
        Strategy {
            name: name.to_string(),
            filters: Vec::new(),
            pick: (metric, direction),
        }
    }
}

/// Candidate names ordered best-first on one metric, ties by name.
fn ordered<'a>(
    candidates: &'a [Candidate],
    metric: OpsMetric,
    direction: Direction,
) -> Vec<&'a Candidate> {
    let mut v: Vec<&Candidate> = candidates.iter().collect();
    v.sort_by(|a, b| {
        let cmp = a.metric(metric).total_cmp(&b.metric(metric));
        let cmp = match direction {
            Direction::Lower => cmp,
            Direction::Higher => cmp.reverse(),
        };
        cmp.then_with(|| a.model.cmp(&b.model))
    });
    v
}

/// Apply a strategy to a candidate set; returns the chosen model name.
pub fn ops_select(strategy: &Strategy, candidates: &[Candidate]) -> Result<String> {
    if candidates.is_empty() {
        return Err(Error::Argument("ops_select needs candidates".into()));
    }
    let mut pool: Vec<&Candidate> = candidates.iter().collect();
    for f in &strategy.filters {
        let m = f.top_m.min(candidates.len());
        let keep: std::collections::BTreeSet<&str> = ordered(candidates, f.metric, f.direction)
            .into_iter()
            .take(m)
            .map(|c| c.model.as_str())
            .collect();
        pool.retain(|c| keep.contains(c.model.as_str()));
    }
    if pool.is_empty() {
        // stated fallback: the model with the highest nDCG overall
        return Ok(ordered(candidates, OpsMetric::Ndcg, Direction::Higher)[0]
            .model
            .clone());
    }
    let pool_owned: Vec<Candidate> = pool.into_iter().cloned().collect();
    Ok(ordered(&pool_owned, strategy.pick.0, strategy.pick.1)[0]
        .model
        .clone())
}

/// The nine pre-registered selection strategies.
pub fn table2_strategies() -> Vec<Strategy> {
    let f = |metric, direction| Filter {
        metric,
        direction,
        top_m: 4,
    };
    use Direction::{Higher, Lower};
    use OpsMetric::{Cmip, IndPpl, Ndcg};
    vec![
        Strategy::argbest("PPL↓", IndPpl, Lower),
        Strategy::argbest("nDCG↑", Ndcg, Higher),
        Strategy {
            name: "top-4 nDCG: PPL↓".into(),
            filters: vec![f(Ndcg, Higher)],
            pick: (IndPpl, Lower),
        },
        Strategy {
            name: "top-4 PPL: nDCG↑".into(),
            filters: vec![f(IndPpl, Lower)],
            pick: (Ndcg, Higher),
        },
        Strategy::argbest("CMIP↓", Cmip, Lower),
        Strategy {
            name: "top-4 CMIP: PPL↓".into(),
            filters: vec![f(Cmip, Lower)],
            pick: (IndPpl, Lower),
        },
        Strategy {
            name: "top-4 CMIP: nDCG↑".into(),
            filters: vec![f(Cmip, Lower)],
            pick: (Ndcg, Higher),
        },
        Strategy {
            name: "top-4 CMIP, top-4 nDCG: PPL↓".into(),
            filters: vec![f(Cmip, Lower), f(Ndcg, Higher)],
            pick: (IndPpl, Lower),
        },
        Strategy {
            name: "top-4 CMIP, top-4 PPL: nDCG↑".into(),
            filters: vec![f(Cmip, Lower), f(IndPpl, Lower)],
            pick: (Ndcg, Higher),
        },
    ]
}

/// Per-strategy mean selection regret with a normal-approximation 95% CI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretRow {
    pub strategy: String,
    pub mean_regret: f64,
    pub ci95: f64,
    pub n: usize,
}

/// Regret of each strategy over every (config, seed) group and every
/// candidate subset of the requested sizes, in units of
/// `(ood_ppl(selected) - min ood_ppl) * 1000`.
pub fn ops_regret(
    rows: &[BenchRow],
    strategies: &[Strategy],
    subset_sizes: &[usize],
) -> Result<Vec<RegretRow>> {
    let mut groups: BTreeMap<(String, u64), Vec<&BenchRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.config_id.clone(), r.seed))
            .or_default()
            .push(r);
    }
    let mut per_strategy: Vec<Vec<f64>> = vec![Vec::new(); strategies.len()];
    for group in groups.values_mut() {
        group.sort_by(|a, b| a.model.cmp(&b.model));
        for &size in subset_sizes {
            if size == 0 || size > group.len() {
                continue;
            }
            for combo in combinations(group.len(), size) {
                let candidates: Vec<Candidate> = combo
                    .iter()
                    .map(|&i| Candidate {
                        model: group[i].model.clone(),
                        ind_ppl: group[i].ind_ppl,
                        ndcg: group[i].ndcg,
                        cmip: group[i].cmip,
                    })
                    .collect();
                let best_ood = combo
                    .iter()
                    .map(|&i| group[i].ood_ppl)
                    .fold(f64::INFINITY, f64::min);
                for (si, strategy) in strategies.iter().enumerate() {
                    let chosen = ops_select(strategy, &candidates)?;
                    let chosen_ood = combo
                        .iter()
                        .map(|&i| group[i])
                        .find(|r| r.model == chosen)
                        .expect("selected model comes from the subset")
                        .ood_ppl;
                    per_strategy[si].push((chosen_ood - best_ood) * 1000.0);
                }
            }
        }
    }

    Ok(strategies
        .iter()
        .zip(per_strategy)
        .map(|(s, regrets)| {
            let n = regrets.len();
            let mean = regrets.iter().sum::<f64>() / n.max(1) as f64;
            let ci95 = if n > 1 {
                let var = regrets.iter().map(|r| (r - mean).powi(2)).sum::<f64>()
                    / (n - 1) as f64;
                1.96 * (var / n as f64).sqrt()
            } else {
                0.0
            };
            RegretRow {
                strategy: s.name.clone(),
                mean_regret: mean,
                ci95,
                n,
            }
        })
        .collect())
}

/// All k-subsets of 0..n in lexicographic order.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

// ---------------------------------------------------------------------------
// Report I/O
// ---------------------------------------------------------------------------

/// Write bench rows as `config_id,model,seed,ind_ppl,ood_ppl,ndcg,cmip`.
pub fn write_report<W: Write>(rows: &[BenchRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "config_id", "model", "seed", "ind_ppl", "ood_ppl", "ndcg", "cmip",
    ])?;
    for r in rows {
        w.write_record([
            r.config_id.clone(),
            r.model.clone(),
            r.seed.to_string(),
            r.ind_ppl.to_string(),
            r.ood_ppl.to_string(),
            r.ndcg.to_string(),
            r.cmip.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Read a report written by [`write_report`].
pub fn read_report<R: Read>(reader: R) -> Result<Vec<BenchRow>> {
    let mut csv_reader = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for (i, record) in csv_reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let get = |j: usize, name: &str| -> Result<&str> {
            record.get(j).ok_or_else(|| Error::Parse {
                line,
                msg: format!("missing {name}"),
            })
        };
        let num = |j: usize, name: &str| -> Result<f64> {
            get(j, name)?.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("{name} is not a number"),
            })
        };
        rows.push(BenchRow {
            config_id: get(0, "config_id")?.to_string(),
            model: get(1, "model")?.to_string(),
            seed: get(2, "seed")?.parse().map_err(|_| Error::Parse {
                line,
                msg: "seed is not an integer".into(),
            })?,
            ind_ppl: num(3, "ind_ppl")?,
            ood_ppl: num(4, "ood_ppl")?,
            ndcg: num(5, "ndcg")?,
            cmip: num(6, "cmip")?,
        });
    }
    Ok(rows)
}

/// One regression-table line: adjusted R-squared per feature set for one
/// configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTableRow {
    pub config_id: String,
    pub values: [f64; 7],
}

/// Compute the regression table (one row per config id) from bench rows.
pub fn regression_table(
    rows: &[BenchRow],
    repetitions: usize,
    seed: u64,
) -> Result<Vec<RegressionTableRow>> {
    let mut by_config: BTreeMap<&str, Vec<BenchRow>> = BTreeMap::new();
    for r in rows {
        by_config.entry(&r.config_id).or_default().push(r.clone());
    }
    by_config
        .into_iter()
        .map(|(config_id, rows)| {
            let mut values = [0.0; 7];
            for (i, (_, features)) in FEATURE_SETS.iter().enumerate() {
                values[i] = fit_regression(&rows, features, repetitions, seed)?;
            }
            Ok(RegressionTableRow {
                config_id: config_id.to_string(),
                values,
            })
        })
        .collect()
}

/// Write the regression table with one column per feature set.
pub fn write_regression_table<W: Write>(table: &[RegressionTableRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["config_id".to_string()];
    header.extend(FEATURE_SETS.iter().map(|(name, _)| name.to_string()));
    w.write_record(&header)?;
    for row in table {
        let mut rec = vec![row.config_id.clone()];
        rec.extend(row.values.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Write regret rows as `strategy,mean_regret,ci95,n`.
pub fn write_regret<W: Write>(rows: &[RegretRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["strategy", "mean_regret", "ci95", "n"])?;
    for r in rows {
        w.write_record([
            r.strategy.clone(),
            r.mean_regret.to_string(),
            r.ci95.to_string(),
            r.n.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
