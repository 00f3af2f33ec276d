//! Position-based model: click = relevance(q, d) x examination(rank).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::sgd::{sigmoid, bce, LoglikModel, PairIndex, UNSEEN};

/// PBM with logit parameters: `P(c_k=1) = sigmoid(rel) * sigmoid(exam_k)`.
#[derive(Debug, Clone)]
pub struct PbmModel {
    pub k: usize,
    pub pairs: PairIndex,
    pub rel_logits: Vec<f64>,
    pub exam_logits: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
pub(super) struct PbmParams {
    pub k: usize,
    pub pairs: Vec<(u64, u32)>,
    pub rel_logits: Vec<f64>,
    pub exam_logits: Vec<f64>,
}

impl PbmModel {
    pub fn new(k: usize, pairs: PairIndex) -> Self {
        let n = pairs.len();
        PbmModel {
            k,
            pairs,
            rel_logits: vec![0.0; n],
            exam_logits: vec![0.0; k],
        }
    }

    fn rel_logit(&self, param: u32) -> f64 {
        if param == UNSEEN {
            0.0
        } else {
            self.rel_logits[param as usize]
        }
    }

    pub fn predict(&self, query_id: u64, slots: &[u32]) -> Result<Vec<f64>> {
        if slots.len() != self.k {
            return Err(Error::Contract(format!(
                "PBM trained for K={}, got ranking of length {}",
                self.k,
                slots.len()
            )));
        }
        Ok(slots
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let param = self.pairs.get(query_id, d).unwrap_or(UNSEEN);
                sigmoid(self.rel_logit(param)) * sigmoid(self.exam_logits[i])
            })
            .collect())
    }

    pub fn relevance(&self, query_id: u64, doc_id: u32) -> f64 {
        sigmoid(self.rel_logit(self.pairs.get(query_id, doc_id).unwrap_or(UNSEEN)))
    }

    /// Examination probabilities normalized so rank 1 reports 1.0; the raw
    /// product r*e is scale-invariant, so only these ratios are meaningful.
    pub fn examination_profile(&self) -> Vec<f64> {
        let e1 = sigmoid(self.exam_logits[0]);
        self.exam_logits
            .iter()
            .map(|&g| sigmoid(g) / e1)
            .collect()
    }

    pub(super) fn to_params(&self) -> PbmParams {
        PbmParams {
            k: self.k,
            pairs: self.pairs.pairs().to_vec(),
            rel_logits: self.rel_logits.clone(),
            exam_logits: self.exam_logits.clone(),
        }
    }

    pub(super) fn from_params(p: PbmParams) -> Self {
        PbmModel {
            k: p.k,
            pairs: PairIndex::from_pairs(p.pairs),
            rel_logits: p.rel_logits,
            exam_logits: p.exam_logits,
        }
    }
}

impl LoglikModel for PbmModel {
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
        for (i, (&param, &c)) in doc_param.iter().zip(clicks.iter()).enumerate() {
            let r = sigmoid(self.rel_logit(param));
            let e = sigmoid(self.exam_logits[i]);
            let p = r * e;
            nll += bce(p, c == 1);
            // dL/d rel_logit = (p - c)(1 - r)/(1 - p); exam symmetric
            let common = (p - c as f64) / (1.0 - p).max(1e-12);
            if param != UNSEEN {
                grad[param as usize] += common * (1.0 - r);
            }
            grad[n + i] += common * (1.0 - e);
        }
        nll
    }

    fn session_nll(&self, doc_param: &[u32], clicks: &[u8]) -> f64 {
        doc_param
            .iter()
            .zip(clicks.iter())
            .enumerate()
            .map(|(i, (&param, &c))| {
                let p = sigmoid(self.rel_logit(param)) * sigmoid(self.exam_logits[i]);
                bce(p, c == 1)
            })
            .sum()
    }
}
