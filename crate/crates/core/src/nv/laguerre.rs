//! Gauss–Laguerre rule for `∫_0^∞ e^{-θ} f(θ) dθ`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaQuadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// `(L_n(x), L_{n-1}(x))` by the three-term recurrence.
fn laguerre_pair(n: usize, x: f64) -> (f64, f64) {
    let (mut prev, mut cur) = (0.0, 1.0);
    for k in 0..n {
        let k = k as f64;
        let next = ((2.0 * k + 1.0 - x) * cur - k * prev) / (k + 1.0);
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

impl ThetaQuadrature {
    /// `n`-node rule: roots of `L_n` by Newton from asymptotic guesses, weights
    /// `x_i / ((n+1)² L_{n+1}(x_i)²)`.
    pub fn gauss_laguerre(n: usize) -> Self {
        assert!(n >= 1, "at least one node");
        let nf = n as f64;
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        let mut z = 0.0;
        for i in 0..n {
            z = match i {
                0 => 3.0 / (1.0 + 2.4 * nf),
                1 => z + 15.0 / (1.0 + 2.5 * nf),
                _ => {
                    let ai = (i - 1) as f64;
                    z + (1.0 + 2.55 * ai) / (1.9 * ai) * (z - nodes[i - 2])
                }
            };
            for _ in 0..100 {
                let (p, p_prev) = laguerre_pair(n, z);
                // x L_n' = n (L_n - L_{n-1})
                let dp = nf * (p - p_prev) / z;
                let step = p / dp;
                z -= step;
                if step.abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            let (next, _) = laguerre_pair(n + 1, z);
            nodes.push(z);
            weights.push(z / ((nf + 1.0) * (nf + 1.0) * next * next));
        }
        ThetaQuadrature { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}
