//! Shared training machinery for the gradient-based click models.
//!
//! Sessions are resolved to dense parameter indices once, then epochs run
//! pure array math. Training is single-threaded with fixed-order batch
//! accumulation, so identical `(spec, logs, seed)` give bit-identical
//! parameters.

use std::collections::HashMap;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Purpose};
use crate::usersim::ClickLog;

use super::Hyperparams;

/// Sentinel for (query, doc) pairs absent from the training log; they
/// resolve to a relevance logit of 0 and receive no gradient.
pub const UNSEEN: u32 = u32::MAX;

/// Dense parameter index over (query, doc) pairs, in first-appearance order
/// of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct PairIndex {
    map: HashMap<(u64, u32), u32>,
    pairs: Vec<(u64, u32)>,
}

impl PairIndex {
    pub fn from_log(log: &ClickLog) -> Self {
        let mut map = HashMap::new();
        let mut pairs = Vec::new();
        for r in &log.records {
            for &d in &r.ranking {
                map.entry((r.query_id, d)).or_insert_with(|| {
                    pairs.push((r.query_id, d));
                    (pairs.len() - 1) as u32
                });
            }
        }
        PairIndex { map, pairs }
    }

    pub fn from_pairs(pairs: Vec<(u64, u32)>) -> Self {
        let map = pairs
            .iter()
            .enumerate()
            .map(|(i, &p)| (p, i as u32))
            .collect();
        PairIndex { map, pairs }
    }

    pub fn get(&self, query_id: u64, doc_id: u32) -> Option<u32> {
        self.map.get(&(query_id, doc_id)).copied()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(u64, u32)] {
        &self.pairs
    }
}

/// A click log resolved against a [`PairIndex`], flattened for cache-friendly
/// epoch passes.
#[derive(Debug, Clone)]
pub struct IndexedLog {
    pub k: usize,
    pub n_sessions: usize,
    doc_param: Vec<u32>,
    clicks: Vec<u8>,
}

impl IndexedLog {
    pub fn build(log: &ClickLog, index: &PairIndex) -> Result<Self> {
        let k = log.meta.k;
        let mut doc_param = Vec::with_capacity(log.records.len() * k);
        let mut clicks = Vec::with_capacity(log.records.len() * k);
        for r in &log.records {
            if r.ranking.len() != k || r.clicks.len() != k {
                return Err(Error::Validation(format!(
                    "record for query {} has length {} (clicks {}), log k = {k}",
                    r.query_id,
                    r.ranking.len(),
                    r.clicks.len()
                )));
            }
            for &d in &r.ranking {
                doc_param.push(index.get(r.query_id, d).unwrap_or(UNSEEN));
            }
            clicks.extend_from_slice(&r.clicks);
        }
        Ok(IndexedLog {
            k,
            n_sessions: log.records.len(),
            doc_param,
            clicks,
        })
    }

    /// `(param indices, clicks)` for one session.
    pub fn session(&self, i: usize) -> (&[u32], &[u8]) {
        let a = i * self.k;
        let b = a + self.k;
        (&self.doc_param[a..b], &self.clicks[a..b])
    }
}

/// A click model trained by gradient descent on its exact log-likelihood.
///
/// Parameters are exposed as one flat vector so generic training, gradient
/// checking, and snapshotting all share a single layout.
pub trait LoglikModel {
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, p: &[f64]);
    /// Session negative log-likelihood (natural log); adds the gradient of
    /// it to `grad` (same layout as [`LoglikModel::params`]).
    fn session_grad(&self, doc_param: &[u32], clicks: &[u8], grad: &mut [f64]) -> f64;
    /// Session negative log-likelihood without gradient work.
    fn session_nll(&self, doc_param: &[u32], clicks: &[u8]) -> f64;
}

/// Mean NLL per session over a whole log.
pub fn mean_nll<M: LoglikModel>(model: &M, log: &IndexedLog) -> f64 {
    let mut total = 0.0;
    for i in 0..log.n_sessions {
        let (p, c) = log.session(i);
        total += model.session_nll(p, c);
    }
    total / log.n_sessions.max(1) as f64
}

/// Full-log NLL and gradient, for gradient checking.
pub fn nll_and_grad<M: LoglikModel>(model: &M, log: &IndexedLog) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; model.params().len()];
    let mut total = 0.0;
    for i in 0..log.n_sessions {
        let (p, c) = log.session(i);
        total += model.session_grad(p, c, &mut grad);
    }
    (total, grad)
}

/// Mini-batch gradient descent with early stopping on validation NLL.
///
/// Shuffles sessions per epoch on stream `(seed, TrainShuffle, epoch)`,
/// steps by the mean batch gradient at a fixed learning rate, and restores
/// the best-validation parameters when a validation log is given.
pub fn train_sgd<M: LoglikModel>(
    model: &mut M,
    train: &IndexedLog,
    val: Option<&IndexedLog>,
    hp: &Hyperparams,
    seed: u64,
) -> Result<()> {
    let n_params = model.params().len();
    let mut order: Vec<u32> = (0..train.n_sessions as u32).collect();
    let mut grad = vec![0.0f64; n_params];

    let mut best_val = f64::INFINITY;
    let mut best_params: Option<Vec<f64>> = None;
    let mut bad_epochs = 0usize;

    for epoch in 0..hp.epochs {
        let mut rng = stream_rng(seed, Purpose::TrainShuffle, epoch as u64);
        order.shuffle(&mut rng);

        for (batch_no, batch) in order.chunks(hp.batch_size).enumerate() {
            grad.fill(0.0);
            let mut batch_nll = 0.0;
            for &i in batch {
                let (p, c) = train.session(i as usize);
                batch_nll += model.session_grad(p, c, &mut grad);
            }
            if !batch_nll.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch}, batch {batch_no} \
                     (batch nll = {batch_nll})"
                )));
            }
            let scale = hp.learning_rate / batch.len() as f64;
            let mut params = model.params();
            for (p, g) in params.iter_mut().zip(grad.iter()) {
                *p -= scale * g;
            }
            model.set_params(&params);
        }

        if let Some(val) = val {
            let val_nll = mean_nll(model, val);
            if !val_nll.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite validation loss after epoch {epoch}"
                )));
            }
            if val_nll < best_val {
                best_val = val_nll;
                best_params = Some(model.params());
                bad_epochs = 0;
            } else {
                bad_epochs += 1;
                if bad_epochs >= hp.patience {
                    break;
                }
            }
        }
    }

    if let Some(best) = best_params {
        model.set_params(&best);
    }
    Ok(())
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Bernoulli NLL with the probability clamped away from 0 and 1.
pub(crate) fn bce(p: f64, click: bool) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    if click {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}
