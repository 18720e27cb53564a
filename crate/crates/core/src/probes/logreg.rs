//! L2-regularized logistic regression fitted with L-BFGS.
//!
//! Objective: mean log-loss plus `||w||^2 / (2 C n)`; the intercept is not
//! penalized. This has the same minimizer as `C * sum(loss) + ||w||^2 / 2`.

use std::collections::VecDeque;

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRegParams {
    /// Inverse regularization strength.
    pub c: f64,
    pub max_iter: usize,
    /// Stop once every gradient component is at most this in magnitude.
    pub tol: f64,
}

impl Default for LogRegParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            max_iter: 10_000,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    pub coef: Vec<f64>,
    pub intercept: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^t)` without overflow.
pub(crate) fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// Objective and gradient at `theta = [w..., b]`.
pub fn objective(theta: &[f64], x: ArrayView2<f64>, y: &[bool], c: f64) -> (f64, Vec<f64>) {
    let (n, d) = x.dim();
    let w = ArrayView1::from(&theta[..d]);
    let b = theta[d];
    let z = x.dot(&w) + b;
    let nf = n as f64;
    let mut loss = 0.0;
    let mut resid = Array1::zeros(n);
    for i in 0..n {
        let zi = z[i];
        loss += if y[i] { softplus(-zi) } else { softplus(zi) };
        resid[i] = (sigmoid(zi) - if y[i] { 1.0 } else { 0.0 }) / nf;
    }
    let penalty = 1.0 / (c * nf);
    let wsq: f64 = w.iter().map(|v| v * v).sum();
    let mut grad: Vec<f64> = x.t().dot(&resid).to_vec();
    for (g, wj) in grad.iter_mut().zip(w.iter()) {
        *g += penalty * wj;
    }
    grad.push(resid.sum());
    (loss / nf + 0.5 * penalty * wsq, grad)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

const MEMORY: usize = 10;

pub fn fit(x: ArrayView2<f64>, y: &[bool], params: &LogRegParams) -> LogisticRegression {
    let d = x.ncols();
    let mut theta = vec![0.0; d + 1];
    let (mut f, mut g) = objective(&theta, x, y, params.c);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(MEMORY);
    let mut iterations = 0;
    let mut converged = max_abs(&g) <= params.tol;

    while !converged && iterations < params.max_iter {
        iterations += 1;
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, yv, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(yv) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let gamma = match history.back() {
            Some((s, yv, _)) => dot(s, yv) / dot(yv, yv),
            None => 1.0 / max_abs(&g).max(1.0),
        };
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
        for ((s, yv, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let beta = rho * dot(yv, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - beta) * si;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            // not a descent direction; restart from steepest descent
            history.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }

        // Armijo backtracking
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(&dir).map(|(t, p)| t + step * p).collect();
            let (fc, gc) = objective(&cand, x, y, params.c);
            if fc <= f + 1e-4 * step * slope {
                accepted = Some((cand, fc, gc));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, fc, gc)) = accepted else {
            break;
        };
        let s: Vec<f64> = cand.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gc.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 {
            if history.len() == MEMORY {
                history.pop_front();
            }
            history.push_back((s, yv, 1.0 / sy));
        }
        let progress = f - fc;
        theta = cand;
        f = fc;
        g = gc;
        converged = max_abs(&g) <= params.tol;
        if !converged && progress <= f64::EPSILON * f.abs().max(1.0) {
            break;
        }
    }

    LogisticRegression {
        intercept: theta[d],
        coef: theta[..d].to_vec(),
        iterations,
        converged,
    }
}

impl LogisticRegression {
    pub fn decision(&self, x: ArrayView2<f64>) -> Array1<f64> {
        x.dot(&ArrayView1::from(&self.coef)) + self.intercept
    }

    /// Probability of POSITIVE per row.
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Vec<f64> {
        self.decision(x).iter().map(|&z| sigmoid(z)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn gradient_matches_finite_differences() {
        let x = array![[0.5, -1.0], [1.5, 0.3], [-0.2, 0.8], [2.0, 2.0]];
        let y = [true, false, true, false];
        let theta = [0.3, -0.7, 0.1];
        let (_, g) = objective(&theta, x.view(), &y, 0.5);
        for k in 0..3 {
            let h = 1e-6;
            let mut p = theta;
            p[k] += h;
            let mut m = theta;
            m[k] -= h;
            let fd = (objective(&p, x.view(), &y, 0.5).0 - objective(&m, x.view(), &y, 0.5).0) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-8, "{k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn converges_on_one_dimensional_data() {
        let x = array![[0.0], [1.0], [2.0], [3.0]];
        let y = [false, false, true, true];
        let m = fit(x.view(), &y, &LogRegParams::default());
        assert!(m.converged);
        assert!(m.coef[0] > 0.0);
        let p = m.predict_proba(x.view());
        assert!(p[0] < 0.5 && p[3] > 0.5);
        // symmetric data puts the boundary at 1.5
        assert!((m.intercept / m.coef[0] + 1.5).abs() < 1e-3);
    }

    #[test]
    fn stable_helpers() {
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }
}
