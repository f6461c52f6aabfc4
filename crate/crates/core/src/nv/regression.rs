//! Nadaraya–Watson regression with a truncated Gaussian kernel.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{StreamKey, RESAMPLE_STREAM};

/// Kernel support in bandwidths.
const SUPPORT: f64 = 5.0;

/// Points sorted by abscissa with optional multiplicities.
#[derive(Debug, Clone)]
pub struct KernelRegression {
    x: Vec<f64>,
    y: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFit {
    pub value: f64,
    /// Kish effective sample size of the kernel weights.
    pub effective_n: f64,
}

impl KernelRegression {
    pub fn new(x: &[f64], y: &[f64]) -> Self {
        assert_eq!(x.len(), y.len());
        let mut order: Vec<usize> = (0..x.len()).collect();
        order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
        KernelRegression {
            x: order.iter().map(|&i| x[i]).collect(),
            y: order.iter().map(|&i| y[i]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    fn window(&self, z: f64, h: f64) -> std::ops::Range<usize> {
        let lo = self.x.partition_point(|&v| v < z - SUPPORT * h);
        let hi = self.x.partition_point(|&v| v <= z + SUPPORT * h);
        lo..hi
    }

    /// Weighted local mean at `z`; `mult[i]` multiplies the `i`-th sorted point,
    /// `skip` leaves one sorted point out.
    fn fit(&self, z: f64, h: f64, mult: Option<&[f64]>, skip: Option<usize>) -> LocalFit {
        let inv = 1.0 / (2.0 * h * h);
        let (mut sw, mut sw2, mut swy) = (0.0, 0.0, 0.0);
        for i in self.window(z, h) {
            if Some(i) == skip {
                continue;
            }
            let m = mult.map_or(1.0, |m| m[i]);
            if m == 0.0 {
                continue;
            }
            let d = self.x[i] - z;
            let k = (-d * d * inv).exp();
            sw += m * k;
            sw2 += m * k * k;
            swy += m * k * self.y[i];
        }
        if sw == 0.0 {
            return LocalFit {
                value: f64::NAN,
                effective_n: 0.0,
            };
        }
        LocalFit {
            value: swy / sw,
            effective_n: sw * sw / sw2,
        }
    }

    pub fn at(&self, z: f64, h: f64) -> LocalFit {
        self.fit(z, h, None, None)
    }

    /// Mean squared leave-one-out error at up to `max_points` evenly strided
    /// data points.
    pub fn loo_score(&self, h: f64, max_points: usize) -> f64 {
        let n = self.len();
        let stride = n.div_ceil(max_points.max(1)).max(1);
        let (mut sse, mut count) = (0.0, 0usize);
        for i in (0..n).step_by(stride) {
            let fit = self.fit(self.x[i], h, None, Some(i));
            if fit.value.is_finite() {
                let e = self.y[i] - fit.value;
                sse += e * e;
                count += 1;
            }
        }
        if count == 0 {
            f64::INFINITY
        } else {
            sse / count as f64
        }
    }

    /// Normal-reference bandwidth `0.9 min(sd, IQR/1.34) n^{-1/5}`.
    pub fn silverman(&self) -> f64 {
        silverman(&self.x)
    }

    /// Bandwidth with the smallest leave-one-out score among
    /// `silverman · 2^{k/2}`, `k = -6..=4`.
    pub fn cross_validated_bandwidth(&self, max_points: usize) -> BandwidthChoice {
        let base = self.silverman();
        let candidates: Vec<f64> = (-6..=4).map(|k| base * 2f64.powf(k as f64 / 2.0)).collect();
        let scores: Vec<f64> = candidates.iter().map(|&h| self.loo_score(h, max_points)).collect();
        let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
        let scale = self.y.iter().map(|v| v * v).sum::<f64>() / self.len().max(1) as f64;
        // Scores equal up to rounding count as ties and go to the smoothest fit.
        let tol = 1e-9 * min + 1e-24 * scale;
        let best = scores.iter().rposition(|&s| s - min <= tol).unwrap_or(0);
        BandwidthChoice {
            bandwidth: candidates[best],
            candidates,
            scores,
        }
    }

    /// Standard error of the fit at each `z` over `resamples` multinomial
    /// bootstrap resamples drawn from `key`. With `recenter`, each resample is
    /// shifted so that its abscissae have the mean of the full data, which
    /// carries the noise of an estimated centering into the error.
    pub fn bootstrap_se(&self, zs: &[f64], h: f64, resamples: usize, key: StreamKey, recenter: bool) -> Vec<f64> {
        let n = self.len();
        let mean = self.x.iter().sum::<f64>() / n as f64;
        // Welford accumulators: count, mean, sum of squared deviations.
        let mut acc = vec![(0usize, 0.0, 0.0); zs.len()];
        let mut mult = vec![0.0; n];
        let key = StreamKey::new(key.seed, key.path, RESAMPLE_STREAM + key.stream);
        for b in 0..resamples {
            let mut rng = key.rng(b as u64);
            mult.fill(0.0);
            for _ in 0..n {
                mult[rng.random_range(0..n)] += 1.0;
            }
            let shift = if recenter {
                self.x.iter().zip(&mult).map(|(x, m)| x * m).sum::<f64>() / n as f64 - mean
            } else {
                0.0
            };
            for (a, &z) in acc.iter_mut().zip(zs) {
                let v = self.fit(z + shift, h, Some(&mult), None).value;
                if v.is_finite() {
                    a.0 += 1;
                    let d = v - a.1;
                    a.1 += d / a.0 as f64;
                    a.2 += d * (v - a.1);
                }
            }
        }
        acc.iter()
            .map(|&(c, _, m2)| if c < 2 { f64::NAN } else { (m2 / (c - 1) as f64).max(0.0).sqrt() })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthChoice {
    pub bandwidth: f64,
    pub candidates: Vec<f64>,
    pub scores: Vec<f64>,
}

pub fn silverman(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    }
}
