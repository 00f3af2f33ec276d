//! Small feedforward binary classifier for the divergence estimator.
//!
//! Rectifier hidden layers, sigmoid output, cross-entropy loss, plain
//! mini-batch gradient descent. Single-threaded with fixed-order
//! accumulation: training is deterministic given the RNG stream.

use rand::Rng;

use crate::error::{Error, Result};

struct Layer {
    w: Vec<f64>, // out x in, row-major
    b: Vec<f64>,
    n_in: usize,
    n_out: usize,
}

pub struct MlpClassifier {
    layers: Vec<Layer>,
}

impl MlpClassifier {
    /// Xavier-uniform initialization from the caller's RNG stream.
    pub fn new<R: Rng>(input_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let layers = dims
            .windows(2)
            .map(|d| {
                let (n_in, n_out) = (d[0], d[1]);
                let bound = (6.0 / (n_in + n_out) as f64).sqrt();
                Layer {
                    w: (0..n_in * n_out)
                        .map(|_| rng.random_range(-bound..bound))
                        .collect(),
                    b: vec![0.0; n_out],
                    n_in,
                    n_out,
                }
            })
            .collect();
        MlpClassifier { layers }
    }

    /// All-zero weights: outputs exactly 0.5 everywhere. Test hook for the
    /// divergence estimator's fixed point.
    pub fn zeroed(input_dim: usize, hidden: &[usize]) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let layers = dims
            .windows(2)
            .map(|d| Layer {
                w: vec![0.0; d[0] * d[1]],
                b: vec![0.0; d[1]],
                n_in: d[0],
                n_out: d[1],
            })
            .collect();
        MlpClassifier { layers }
    }

    fn forward(&self, x: &[f64], activations: &mut Vec<Vec<f64>>) -> f64 {
        activations.clear();
        activations.push(x.to_vec());
        for (li, layer) in self.layers.iter().enumerate() {
            let input = activations.last().unwrap().clone();
            let last = li == self.layers.len() - 1;
            let mut out = vec![0.0; layer.n_out];
            for o in 0..layer.n_out {
                let row = &layer.w[o * layer.n_in..(o + 1) * layer.n_in];
                let mut z = layer.b[o];
                for (wi, xi) in row.iter().zip(input.iter()) {
                    z += wi * xi;
                }
                out[o] = if last { z } else { z.max(0.0) };
            }
            activations.push(out);
        }
        let z = activations.last().unwrap()[0];
        1.0 / (1.0 + (-z).exp())
    }

    /// P(label = 1 | x).
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut scratch = Vec::new();
        self.forward(x, &mut scratch)
    }

    /// Mini-batch SGD on cross-entropy. `labels` are 0/1.
    pub fn train<R: Rng>(
        &mut self,
        xs: &[Vec<f64>],
        labels: &[f64],
        learning_rate: f64,
        epochs: usize,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<()> {
        assert_eq!(xs.len(), labels.len());
        let n = xs.len();
        let mut order: Vec<usize> = (0..n).collect();

        let mut grads: Vec<(Vec<f64>, Vec<f64>)> = self
            .layers
            .iter()
            .map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()]))
            .collect();
        let mut activations: Vec<Vec<f64>> = Vec::new();
        let mut deltas: Vec<Vec<f64>> = self.layers.iter().map(|l| vec![0.0; l.n_out]).collect();

        for epoch in 0..epochs {
            // Fisher-Yates from the caller's stream
            for i in (1..n).rev() {
                let j = rng.random_range(0..=i);
                order.swap(i, j);
            }
            for batch in order.chunks(batch_size) {
                for (gw, gb) in grads.iter_mut() {
                    gw.fill(0.0);
                    gb.fill(0.0);
                }
                for &idx in batch {
                    let p = self.forward(&xs[idx], &mut activations);
                    if !p.is_finite() {
                        return Err(Error::Estimation(format!(
                            "classifier diverged at epoch {epoch}"
                        )));
                    }
                    // dL/dz_out for sigmoid + cross-entropy
                    let mut upstream = vec![p - labels[idx]];
                    for li in (0..self.layers.len()).rev() {
                        let layer = &self.layers[li];
                        let input = &activations[li];
                        let delta = &mut deltas[li];
                        delta.copy_from_slice(&upstream);
                        let (gw, gb) = &mut grads[li];
                        for o in 0..layer.n_out {
                            let d = delta[o];
                            gb[o] += d;
                            let row = &mut gw[o * layer.n_in..(o + 1) * layer.n_in];
                            for (g, xi) in row.iter_mut().zip(input.iter()) {
                                *g += d * xi;
                            }
                        }
                        if li > 0 {
                            // propagate through weights and the rectifier
                            let mut next = vec![0.0; layer.n_in];
                            for o in 0..layer.n_out {
                                let d = delta[o];
                                let row = &layer.w[o * layer.n_in..(o + 1) * layer.n_in];
                                for (ni, wi) in next.iter_mut().zip(row.iter()) {
                                    *ni += d * wi;
                                }
                            }
                            for (ni, ai) in next.iter_mut().zip(activations[li].iter()) {
                                if *ai <= 0.0 {
                                    *ni = 0.0;
                                }
                            }
                            upstream = next;
                        }
                    }
                }
                let scale = learning_rate / batch.len() as f64;
                for (layer, (gw, gb)) in self.layers.iter_mut().zip(grads.iter()) {
                    for (w, g) in layer.w.iter_mut().zip(gw.iter()) {
                        *w -= scale * g;
                    }
                    for (b, g) in layer.b.iter_mut().zip(gb.iter()) {
                        *b -= scale * g;
                    }
                }
            }
        }
        Ok(())
    }
}
