//! Dynamic Bayesian network click model with the examination state
//! marginalized into an exact sequential factorization.
//!
//! With attractiveness `a = sigmoid(attr)` and satisfaction
//! `s = sigmoid(sat)` per (query, doc), and continuation `gamma`:
//!
//! ```text
//! e_1 = 1
//! P(c_k = 1 | c_<k) = e_k * a_k
//! after c_k = 1:  e_{k+1} = gamma * (1 - s_k)
//! after c_k = 0:  e_{k+1} = gamma * e_k (1 - a_k) / (1 - e_k a_k)
//! ```
//!
//! Gradients run the recursion backwards (reverse-mode through the chain).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::sgd::{sigmoid, bce, LoglikModel, PairIndex, UNSEEN};

#[derive(Debug, Clone)]
pub struct DbnModel {
    pub k: usize,
    pub pairs: PairIndex,
    pub attr_logits: Vec<f64>,
    pub sat_logits: Vec<f64>,
    /// Continuation probability, fixed during fitting.
    pub gamma: f64,
}

#[derive(Serialize, Deserialize)]
pub(super) struct DbnParams {
    pub k: usize,
    pub pairs: Vec<(u64, u32)>,
    pub attr_logits: Vec<f64>,
    pub sat_logits: Vec<f64>,
    pub gamma: f64,
}

impl DbnModel {
    pub fn new(k: usize, pairs: PairIndex, gamma: f64) -> Self {
        let n = pairs.len();
        DbnModel {
            k,
            pairs,
            attr_logits: vec![0.0; n],
            sat_logits: vec![0.0; n],
            gamma,
        }
    }

    fn logits(&self, param: u32) -> (f64, f64) {
        if param == UNSEEN {
            (0.0, 0.0)
        } else {
            (
                self.attr_logits[param as usize],
                self.sat_logits[param as usize],
            )
        }
    }

    /// Teacher-forced conditional click probabilities along the chain.
    pub fn predict(&self, query_id: u64, slots: &[u32], observed: &[u8]) -> Result<Vec<f64>> {
        if slots.len() != self.k || observed.len() != self.k {
            return Err(Error::Contract(format!(
                "DBN trained for K={}, got ranking of length {} (observed {})",
                self.k,
                slots.len(),
                observed.len()
            )));
        }
        let mut out = Vec::with_capacity(self.k);
        let mut exam = 1.0f64;
        for (i, &d) in slots.iter().enumerate() {
            let (al, sl) = self.logits(self.pairs.get(query_id, d).unwrap_or(UNSEEN));
            let a = sigmoid(al);
            let p = exam * a;
            out.push(p);
            exam = if observed[i] == 1 {
                self.gamma * (1.0 - sigmoid(sl))
            } else {
                self.gamma * exam * (1.0 - a) / (1.0 - p).max(1e-12)
            };
        }
        Ok(out)
    }

    /// Probability of click and satisfaction: the DBN reading of true
    /// relevance.
    pub fn relevance(&self, query_id: u64, doc_id: u32) -> f64 {
        let (al, sl) = self.logits(self.pairs.get(query_id, doc_id).unwrap_or(UNSEEN));
        sigmoid(al) * sigmoid(sl)
    }

    pub(super) fn to_params(&self) -> DbnParams {
        DbnParams {
            k: self.k,
            pairs: self.pairs.pairs().to_vec(),
            attr_logits: self.attr_logits.clone(),
            sat_logits: self.sat_logits.clone(),
            gamma: self.gamma,
        }
    }

    pub(super) fn from_params(p: DbnParams) -> Self {
        DbnModel {
            k: p.k,
            pairs: PairIndex::from_pairs(p.pairs),
            attr_logits: p.attr_logits,
            sat_logits: p.sat_logits,
            gamma: p.gamma,
        }
    }
}

impl LoglikModel for DbnModel {
    fn params(&self) -> Vec<f64> {
        let mut v = self.attr_logits.clone();
        v.extend_from_slice(&self.sat_logits);
        v
    }

    fn set_params(&mut self, p: &[f64]) {
        let n = self.attr_logits.len();
        self.attr_logits.copy_from_slice(&p[..n]);
        self.sat_logits.copy_from_slice(&p[n..]);
    }

    fn session_grad(&self, doc_param: &[u32], clicks: &[u8], grad: &mut [f64]) -> f64 {
        let k = doc_param.len();
        let n = self.attr_logits.len();
        let gamma = self.gamma;

        // Forward pass: attractiveness, examination chain, NLL.
        let mut a = vec![0.0f64; k];
        let mut s = vec![0.0f64; k];
        let mut exam = vec![0.0f64; k + 1];
        exam[0] = 1.0;
        let mut nll = 0.0;
        for i in 0..k {
            let (al, sl) = self.logits(doc_param[i]);
            a[i] = sigmoid(al);
            s[i] = sigmoid(sl);
            let p = exam[i] * a[i];
            nll += bce(p, clicks[i] == 1);
            exam[i + 1] = if clicks[i] == 1 {
                gamma * (1.0 - s[i])
            } else {
                gamma * exam[i] * (1.0 - a[i]) / (1.0 - p).max(1e-12)
            };
        }

        // Backward pass: g_exam carries dL/d exam[i+1].
        let mut g_exam = 0.0f64;
        for i in (0..k).rev() {
            let param = doc_param[i];
            let c = clicks[i] as f64;
            let p = (exam[i] * a[i]).clamp(1e-12, 1.0 - 1e-12);

            // transition exam[i+1] = f(exam[i], a_i, s_i, c_i)
            let (mut g_a, g_s, g_exam_prev);
            if clicks[i] == 1 {
                g_a = 0.0;
                g_s = -gamma * g_exam;
                g_exam_prev = 0.0;
            } else {
                let denom = (1.0 - p).max(1e-12);
                let d2 = denom * denom;
                g_a = g_exam * gamma * exam[i] * (exam[i] - 1.0) / d2;
                g_s = 0.0;
                g_exam_prev = g_exam * gamma * (1.0 - a[i]) / d2;
            }

            // local loss at slot i: p = exam[i] * a_i
            let dldp = (p - c) / (p * (1.0 - p));
            g_a += dldp * exam[i];
            let g_exam_i = dldp * a[i] + g_exam_prev;

            if param != UNSEEN {
                let pi = param as usize;
                grad[pi] += g_a * a[i] * (1.0 - a[i]);
                grad[n + pi] += g_s * s[i] * (1.0 - s[i]);
            }
            g_exam = g_exam_i;
        }
        nll
    }

    fn session_nll(&self, doc_param: &[u32], clicks: &[u8]) -> f64 {
        let mut exam = 1.0f64;
        let mut nll = 0.0;
        for (&param, &c) in doc_param.iter().zip(clicks.iter()) {
            let (al, sl) = self.logits(param);
            let a = sigmoid(al);
            let p = exam * a;
            nll += bce(p, c == 1);
            exam = if c == 1 {
                self.gamma * (1.0 - sigmoid(sl))
            } else {
                self.gamma * exam * (1.0 - a) / (1.0 - p).max(1e-12)
            };
        }
        nll
    }
}
