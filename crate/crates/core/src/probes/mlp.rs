//! Feed-forward network: ReLU hidden layers, one sigmoid output unit,
//! cross-entropy loss with an L2 penalty, trained by Adam on minibatches.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::logreg::{sigmoid, softplus};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub hidden: Vec<usize>,
    /// L2 strength; the penalty is `alpha / (2 n) * sum(W^2)`.
    pub alpha: f64,
    pub learning_rate: f64,
    /// Maximum number of epochs.
    pub max_iter: usize,
    pub batch_size: usize,
    pub tol: f64,
    pub n_iter_no_change: usize,
    pub seed: u64,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            hidden: vec![144],
            alpha: 1e-4,
            learning_rate: 1e-3,
            max_iter: 200,
            batch_size: 200,
            tol: 1e-4,
            n_iter_no_change: 10,
            seed: 0,
        }
    }
}

/// Weights stored row-major as `inputs x outputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn w(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.inputs, self.outputs), &self.weights).expect("dense shape")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub epochs: usize,
}

/// Gradients in the layout of [`Mlp::layers`].
#[derive(Debug, Clone)]
pub struct Gradient {
    pub weights: Vec<Array2<f64>>,
    pub bias: Vec<Array1<f64>>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Mlp {
    /// Glorot-uniform initialization.
    pub fn init(inputs: usize, hidden: &[usize], rng: &mut SeededRng) -> Self {
        let mut sizes = vec![inputs];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let (fi, fo) = (w[0], w[1]);
                let factor = if k == last { 2.0 } else { 6.0 };
                let bound = (factor / (fi + fo) as f64).sqrt();
                Dense {
                    inputs: fi,
                    outputs: fo,
                    weights: (0..fi * fo).map(|_| rng.uniform(-bound, bound)).collect(),
                    bias: (0..fo).map(|_| rng.uniform(-bound, bound)).collect(),
                }
            })
            .collect();
        Self { layers, epochs: 0 }
    }

    /// Pre-activations of the output unit.
    pub fn logits(&self, x: ArrayView2<f64>) -> Array1<f64> {
        let mut a = x.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            a = a.dot(&layer.w()) + ArrayView1::from(&layer.bias);
            if k + 1 < self.layers.len() {
                a.mapv_inplace(|v| v.max(0.0));
            }
        }
        a.column(0).to_owned()
    }

    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Vec<f64> {
        self.logits(x).iter().map(|&z| sigmoid(z)).collect()
    }

    /// Penalized loss over `(x, y)` and its analytic gradient.
    pub fn loss_and_gradient(&self, x: ArrayView2<f64>, y: &[bool], alpha: f64) -> (f64, Gradient) {
        let n = x.nrows() as f64;
        let mut acts = vec![x.to_owned()];
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = acts[k].dot(&layer.w()) + ArrayView1::from(&layer.bias);
            if k + 1 < self.layers.len() {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        let logits = acts.last().unwrap().column(0).to_owned();
        let mut loss = 0.0;
        let mut delta = Array2::zeros((x.nrows(), 1));
        for (i, &z) in logits.iter().enumerate() {
            loss += if y[i] { softplus(-z) } else { softplus(z) };
            delta[[i, 0]] = (sigmoid(z) - if y[i] { 1.0 } else { 0.0 }) / n;
        }
        let wsq: f64 = self
            .layers
            .iter()
            .flat_map(|l| l.weights.iter())
            .map(|w| w * w)
            .sum();
        loss = loss / n + alpha / (2.0 * n) * wsq;

        let mut gw = Vec::with_capacity(self.layers.len());
        let mut gb = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            let w = self.layers[k].w();
            gw.push(acts[k].t().dot(&delta) + &(&w * (alpha / n)));
            gb.push(delta.sum_axis(Axis(0)));
            if k > 0 {
                let mut prev = delta.dot(&w.t());
                prev.zip_mut_with(&acts[k], |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = prev;
            }
        }
        gw.reverse();
        gb.reverse();
        (loss, Gradient { weights: gw, bias: gb })
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn flat_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, params: &[f64]) {
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().expect("parameter count");
            }
        }
    }

    pub fn flat_gradient(g: &Gradient) -> Vec<f64> {
        g.weights
            .iter()
            .zip(&g.bias)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }

    pub fn fit(x: ArrayView2<f64>, y: &[bool], params: &MlpParams) -> Self {
        let mut rng = SeededRng::new(params.seed);
        let mut net = Self::init(x.ncols(), &params.hidden, &mut rng);
        let n = x.nrows();
        let batch = params.batch_size.clamp(1, n.max(1));
        let mut m: Vec<f64> = vec![0.0; net.flat_params().len()];
        let mut v = m.clone();
        let mut t = 0i32;
        let mut order: Vec<usize> = (0..n).collect();
        let mut best = f64::INFINITY;
        let mut stale = 0;

        for epoch in 0..params.max_iter {
            rng.shuffle(&mut order);
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(batch) {
                let xb = x.select(Axis(0), chunk);
                let yb: Vec<bool> = chunk.iter().map(|&i| y[i]).collect();
                let (loss, grad) = net.loss_and_gradient(xb.view(), &yb, params.alpha);
                epoch_loss += loss * chunk.len() as f64;
                t += 1;
                let g = Self::flat_gradient(&grad);
                let mut p = net.flat_params();
                let lr = params.learning_rate * (1.0 - BETA2.powi(t)).sqrt() / (1.0 - BETA1.powi(t));
                for j in 0..p.len() {
                    m[j] = BETA1 * m[j] + (1.0 - BETA1) * g[j];
                    v[j] = BETA2 * v[j] + (1.0 - BETA2) * g[j] * g[j];
                    p[j] -= lr * m[j] / (v[j].sqrt() + EPS);
                }
                net.set_flat_params(&p);
            }
            net.epochs = epoch + 1;
            let epoch_loss = epoch_loss / n as f64;
            if epoch_loss > best - params.tol {
                stale += 1;
            } else {
                stale = 0;
            }
            best = best.min(epoch_loss);
            if stale >= params.n_iter_no_change {
                break;
            }
        }
        net
    }
}
