//! User browsing model: examination depends on the rank and on the rank of
//! the latest preceding click.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::sgd::{sigmoid, bce, LoglikModel, PairIndex, UNSEEN};

/// UBM with logit parameters:
/// `P(c_k=1 | c_<k) = sigmoid(rel) * sigmoid(exam(k, k'))`,
/// where `k'` is the 1-based rank of the latest preceding click (0 if none).
///
/// Examination logits are stored flattened: rank `k` (1-based) owns `k`
/// entries at offset `k(k-1)/2`, indexed by `k' in 0..k`.
#[derive(Debug, Clone)]
pub struct UbmModel {
    pub k: usize,
    pub pairs: PairIndex,
    pub rel_logits: Vec<f64>,
    pub exam_logits: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
pub(super) struct UbmParams {
    pub k: usize,
    pub pairs: Vec<(u64, u32)>,
    pub rel_logits: Vec<f64>,
    pub exam_logits: Vec<f64>,
}

/// Flat index of the examination logit for 1-based rank `k` and last-click
/// rank `k_prime` (0 = no click yet).
pub(super) fn exam_index(k: usize, k_prime: usize) -> usize {
    debug_assert!(k_prime < k);
    k * (k - 1) / 2 + k_prime
}

impl UbmModel {
    pub fn new(k: usize, pairs: PairIndex) -> Self {
        let n = pairs.len();
        UbmModel {
            k,
            pairs,
            rel_logits: vec![0.0; n],
            exam_logits: vec![0.0; k * (k + 1) / 2],
        }
    }

    fn rel_logit(&self, param: u32) -> f64 {
        if param == UNSEEN {
            0.0
        } else {
            self.rel_logits[param as usize]
        }
    }

    /// Teacher-forced predictions: position k conditions on the observed
    /// clicks before k.
    pub fn predict(&self, query_id: u64, slots: &[u32], observed: &[u8]) -> Result<Vec<f64>> {
        if slots.len() != self.k || observed.len() != self.k {
            return Err(Error::Contract(format!(
                "UBM trained for K={}, got ranking of length {} (observed {})",
                self.k,
                slots.len(),
                observed.len()
            )));
        }
        let mut out = Vec::with_capacity(self.k);
        let mut last_click = 0usize;
        for (i, &d) in slots.iter().enumerate() {
            let param = self.pairs.get(query_id, d).unwrap_or(UNSEEN);
            let e = sigmoid(self.exam_logits[exam_index(i + 1, last_click)]);
            out.push(sigmoid(self.rel_logit(param)) * e);
            if observed[i] == 1 {
                last_click = i + 1;
            }
        }
        Ok(out)
    }

    pub fn relevance(&self, query_id: u64, doc_id: u32) -> f64 {
        sigmoid(self.rel_logit(self.pairs.get(query_id, doc_id).unwrap_or(UNSEEN)))
    }

    pub(super) fn to_params(&self) -> UbmParams {
        UbmParams {
            k: self.k,
            pairs: self.pairs.pairs().to_vec(),
            rel_logits: self.rel_logits.clone(),
            exam_logits: self.exam_logits.clone(),
        }
    }

    pub(super) fn from_params(p: UbmParams) -> Self {
        UbmModel {
            k: p.k,
            pairs: PairIndex::from_pairs(p.pairs),
            rel_logits: p.rel_logits,
            exam_logits: p.exam_logits,
        }
    }
}

impl LoglikModel for UbmModel {
    fn params(&self) -> Vec<f64> {
        let mut v = self.rel_logits.clone();
        v.extend_from_slice(&self.exam_logits);
        v
    }

    fn set_params(&mut self, p: &[f64]) {
        let n = self.rel_logits.len();
        self.rel_logits.copy_from_slice(&p[..n]);
        self.exam_logits.copy_from_slice(&p[n..]);
    }

    fn session_grad(&self, doc_param: &[u32], clicks: &[u8], grad: &mut [f64]) -> f64 {
        let n = self.rel_logits.len();
        let mut nll = 0.0;
        let mut last_click = 0usize;
        for (i, (&param, &c)) in doc_param.iter().zip(clicks.iter()).enumerate() {
            let ei = exam_index(i + 1, last_click);
            let r = sigmoid(self.rel_logit(param));
            let e = sigmoid(self.exam_logits[ei]);
            let p = r * e;
            nll += bce(p, c == 1);
            let common = (p - c as f64) / (1.0 - p).max(1e-12);
            if param != UNSEEN {
                grad[param as usize] += common * (1.0 - r);
            }
            grad[n + ei] += common * (1.0 - e);
            if c == 1 {
                last_click = i + 1;
            }
        }
        nll
    }

    fn session_nll(&self, doc_param: &[u32], clicks: &[u8]) -> f64 {
        let mut nll = 0.0;
        let mut last_click = 0usize;
        for (i, (&param, &c)) in doc_param.iter().zip(clicks.iter()).enumerate() {
            let e = sigmoid(self.exam_logits[exam_index(i + 1, last_click)]);
            let p = sigmoid(self.rel_logit(param)) * e;
            nll += bce(p, c == 1);
            if c == 1 {
                last_click = i + 1;
            }
        }
        nll
    }
}
