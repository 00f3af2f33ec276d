//! CMIP: conditional mutual information between model relevance estimates
//! and the logging policy's expected ranks, given true relevance.
//!
//! The estimate follows a two-step recipe. First, sample from the
//! conditionally-independent marginal: split the triplets in half and, for
//! each row of one half, swap in the expected rank of a row from the other
//! half that carries the same true-relevance label. Second, estimate the
//! KL divergence between the observed half and the swapped sample with a
//! binary classifier via the Donsker-Varadhan bound, clipping predictions
//! to keep likelihood ratios bounded. The reported value averages several
//! repetitions of both steps.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Purpose};

use super::mlp::MlpClassifier;
use super::{TripletRow, TripletSet};

/// Settings for the CMIP estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct CmipConfig {
    /// Independent sample/estimate repetitions to average.
    pub reps: usize,
    /// Classifier prediction clip bounds.
    pub clip: (f64, f64),
    /// Hidden layer widths of the classifier.
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Fraction of each class used for classifier training.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for CmipConfig {
    fn default() -> Self {
        CmipConfig {
            reps: 5,
            clip: (0.01, 0.99),
            hidden: vec![32, 32],
            learning_rate: 0.01,
            epochs: 200,
            batch_size: 256,
            train_fraction: 0.7,
            seed: 0,
        }
    }
}

impl CmipConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Argument("cmip reps must be >= 1".into()));
        }
        if !(0.0 < self.clip.0 && self.clip.0 < self.clip.1 && self.clip.1 < 1.0) {
            return Err(Error::Argument(format!(
                "clip bounds must satisfy 0 < low < high < 1, got {:?}",
                self.clip
            )));
        }
        if !(0.0 < self.train_fraction && self.train_fraction < 1.0) {
            return Err(Error::Argument(
                "train_fraction must be strictly between 0 and 1".into(),
            ));
        }
        Ok(())
    }
}

/// The averaged estimate with its per-repetition values and their sample
/// standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct CmipEstimate {
    pub mean: f64,
    pub per_rep: Vec<f64>,
    pub std: f64,
}

/// Split the triplets into halves `R_i`/`R_j` and emit, for each row of
/// `R_i`, the row with its `r_l` replaced by the `r_l` of a uniformly drawn
/// `R_j` row carrying the same `r_true` (nearest label if none matches,
/// distance ties broken uniformly).
///
/// Returns `(observed half, marginal sample)`: the first carries joint rows
/// from the data, the second is a sample from the distribution under which
/// model scores and logging-policy ranks are independent given relevance.
pub fn knn_marginal_sample<R: Rng>(
    triplets: &TripletSet,
    rng: &mut R,
) -> Result<(TripletSet, TripletSet)> {
    let n = triplets.len();
    if n < 2 {
        return Err(Error::Argument(
            "marginal sampling needs at least 2 triplet rows".into(),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let half = n / 2;
    let (ri, rj) = order.split_at(half);

    // R_j rows grouped by exact r_true bits, plus sorted labels for
    // nearest-label fallback.
    let mut groups: HashMap<u64, Vec<usize>> = HashMap::new();
    for &j in rj {
        groups
            .entry(triplets.rows[j].r_true.to_bits())
            .or_default()
            .push(j);
    }
    let mut labels: Vec<f64> = groups.keys().map(|&b| f64::from_bits(b)).collect();
    labels.sort_by(f64::total_cmp);

    let std = triplets.standardized();
    let mut p_rows = Vec::with_capacity(half);
    let mut p_std = Vec::with_capacity(half);
    let mut q_rows = Vec::with_capacity(half);
    let mut q_std = Vec::with_capacity(half);

    for &i in ri {
        let row = triplets.rows[i];
        p_rows.push(row);
        p_std.push(std[i]);

        let donors = match groups.get(&row.r_true.to_bits()) {
            Some(g) => g,
            None => {
                // nearest label; collect every label at minimal distance
                let pos = labels.partition_point(|&l| l < row.r_true);
                let mut best = f64::INFINITY;
                for cand in [pos.checked_sub(1), Some(pos)].into_iter().flatten() {
                    if let Some(&l) = labels.get(cand) {
                        best = best.min((l - row.r_true).abs());
                    }
                }
                let tied: Vec<u64> = labels
                    .iter()
                    .filter(|&&l| ((l - row.r_true).abs() - best).abs() < 1e-12)
                    .map(|&l| l.to_bits())
                    .collect();
                // uniform over all rows of the tied labels, via a flat draw
                let total: usize = tied.iter().map(|b| groups[b].len()).sum();
                let mut pick = rng.random_range(0..total);
                let mut chosen = &groups[&tied[0]];
                for b in &tied {
                    let g = &groups[b];
                    if pick < g.len() {
                        chosen = g;
                        break;
                    }
                    pick -= g.len();
                }
                chosen
            }
        };
        let j = donors[rng.random_range(0..donors.len())];
        let donor = triplets.rows[j];
        q_rows.push(TripletRow {
            r_l: donor.r_l,
            ..row
        });
        q_std.push([std[i][0], std[j][1], std[i][2]]);
    }

    Ok((
        TripletSet::from_parts(p_rows, p_std),
        TripletSet::from_parts(q_rows, q_std),
    ))
}

/// Donsker-Varadhan KL estimate `KL(p || q)` from a binary classifier
/// trained to tell `p` rows (label 1) from `q` rows (label 0):
///
/// `mean over p-test of log(P/(1-P)) - log(mean over q-test of P/(1-P))`
///
/// with predictions clipped to the configured bounds on the held-out split.
pub fn estimate_kl_dv<R: Rng>(
    p: &TripletSet,
    q: &TripletSet,
    config: &CmipConfig,
    rng: &mut R,
) -> Result<f64> {
    config.validate()?;
    if p.is_empty() || q.is_empty() {
        return Err(Error::Argument(
            "KL estimation needs non-empty p and q samples".into(),
        ));
    }

    // stratified split: shuffle each class, train on the first fraction
    let split = |set: &TripletSet, rng: &mut R| -> (Vec<usize>, Vec<usize>) {
        let n = set.len();
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            idx.swap(i, j);
        }
        let cut = ((n as f64 * config.train_fraction).round() as usize).clamp(1, n.max(2) - 1);
        let test = idx.split_off(cut);
        (idx, test)
    };
    let (p_train, p_test) = split(p, rng);
    let (q_train, q_test) = split(q, rng);

    let mut xs: Vec<Vec<f64>> = Vec::with_capacity(p_train.len() + q_train.len());
    let mut ys: Vec<f64> = Vec::with_capacity(xs.capacity());
    for &i in &p_train {
        xs.push(p.standardized()[i].to_vec());
        ys.push(1.0);
    }
    for &i in &q_train {
        xs.push(q.standardized()[i].to_vec());
        ys.push(0.0);
    }

    let mut clf = MlpClassifier::new(3, &config.hidden, rng);
    clf.train(
        &xs,
        &ys,
        config.learning_rate,
        config.epochs,
        config.batch_size,
        rng,
    )?;

    let (lo, hi) = config.clip;
    let mut log_ratio_p = 0.0;
    for &i in &p_test {
        let pr = clf.predict(&p.standardized()[i]).clamp(lo, hi);
        log_ratio_p += (pr / (1.0 - pr)).ln();
    }
    let mut ratio_q = 0.0;
    for &i in &q_test {
        let pr = clf.predict(&q.standardized()[i]).clamp(lo, hi);
        ratio_q += pr / (1.0 - pr);
    }
    let estimate =
        log_ratio_p / p_test.len() as f64 - (ratio_q / q_test.len() as f64).ln();
    if !estimate.is_finite() {
        return Err(Error::Estimation(format!(
            "KL estimate is not finite ({estimate})"
        )));
    }
    Ok(estimate)
}

/// CMIP of a triplet set: average over `config.reps` repetitions of a fresh
/// shuffle/split, marginal sampling, and classifier KL estimation.
/// Deterministic given `(triplets, config.seed)`.
pub fn cmip(triplets: &TripletSet, config: &CmipConfig) -> Result<CmipEstimate> {
    config.validate()?;
    if triplets.len() < 100 {
        log::warn!(
            "cmip: only {} triplet rows; the estimate will be noisy",
            triplets.len()
        );
    }
    let mut per_rep = Vec::with_capacity(config.reps);
    for rep in 0..config.reps {
        let mut rng = stream_rng(config.seed, Purpose::CmipRep, rep as u64);
        let (p, q) = knn_marginal_sample(triplets, &mut rng)?;
        per_rep.push(estimate_kl_dv(&p, &q, config, &mut rng)?);
    }
    let mean = per_rep.iter().sum::<f64>() / per_rep.len() as f64;
    let std = if per_rep.len() > 1 {
        (per_rep.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (per_rep.len() - 1) as f64)
            .sqrt()
    } else {
        0.0
    };
    Ok(CmipEstimate { mean, per_rep, std })
}
