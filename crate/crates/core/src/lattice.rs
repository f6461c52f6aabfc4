//! Periodic space-time lattice standing in for `[0, T] × ℝ^d`.
//!
//! Space is a torus of side `L` sampled at `N` points per axis, time is a
//! uniform grid `t_n = n·Δt`, `n = 0..=M`. Lattice frequencies are
//! `ξ_k = k / L` with signed integer `k ∈ [-N/2, N/2)` per axis, so a field
//! with Fourier coefficients `f̂_k` evaluates to `f(x) = Σ_k f̂_k e^{2πi x·ξ_k}`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("points per side must be a power of two, got {0}")]
    NotPowerOfTwo(usize),
    #[error("lattice dimension must be positive")]
    ZeroDimension,
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("number of time steps must be positive")]
    NoSteps,
    #[error(
        "Nyquist frequency {nyquist} = N/(2L) does not exceed the spectral cutoff {cutoff}; \
         increase points per side or shrink the side length"
    )]
    Nyquist { nyquist: f64, cutoff: f64 },
}

/// Geometry of the discretization. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    dim: usize,
    side: f64,
    points: usize,
    horizon: f64,
    steps: usize,
    spectral_cutoff: f64,
}

impl Lattice {
    pub fn new(
        dim: usize,
        side: f64,
        points: usize,
        horizon: f64,
        steps: usize,
        spectral_cutoff: f64,
    ) -> Result<Self, LatticeError> {
        if dim == 0 {
            return Err(LatticeError::ZeroDimension);
        }
        if points < 2 || !points.is_power_of_two() {
            return Err(LatticeError::NotPowerOfTwo(points));
        }
        for (name, value) in [("side length", side), ("horizon", horizon)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(LatticeError::NonPositive { name, value });
            }
        }
        if !(spectral_cutoff >= 0.0 && spectral_cutoff.is_finite()) {
            return Err(LatticeError::NonPositive {
                name: "spectral cutoff",
                value: spectral_cutoff,
            });
        }
        if steps == 0 {
            return Err(LatticeError::NoSteps);
        }
        let lattice = Lattice {
            dim,
            side,
            points,
            horizon,
            steps,
            spectral_cutoff,
        };
        if lattice.nyquist() <= spectral_cutoff {
            return Err(LatticeError::Nyquist {
                nyquist: lattice.nyquist(),
                cutoff: spectral_cutoff,
            });
        }
        Ok(lattice)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn spectral_cutoff(&self) -> f64 {
        self.spectral_cutoff
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn spacing(&self) -> f64 {
        self.side / self.points as f64
    }

    /// Number of spatial sites, `N^d`.
    pub fn sites(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn nyquist(&self) -> f64 {
        self.points as f64 / (2.0 * self.side)
    }

    /// Volume of one frequency cell, `L^{-d}`.
    pub fn frequency_cell(&self) -> f64 {
        self.side.powi(-(self.dim as i32))
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt()
    }

    /// Nearest time level to `t`, clamped to `0..=M`.
    pub fn step_of(&self, t: f64) -> usize {
        ((t / self.dt()).round().max(0.0) as usize).min(self.steps)
    }

    /// Signed frequency index of component `i` (`0..N`) along one axis.
    pub fn signed_index(&self, i: usize) -> i64 {
        let n = self.points as i64;
        let i = i as i64;
        if i < n / 2 {
            i
        } else {
            i - n
        }
    }

    /// Multi-index of a flat (row-major) site or mode index.
    pub fn unflatten(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim];
        for slot in idx.iter_mut().rev() {
            *slot = flat % self.points;
            flat /= self.points;
        }
        idx
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.points + i)
    }

    /// Frequency vector `ξ_k` of a flat mode index.
    pub fn frequency(&self, flat: usize) -> Vec<f64> {
        self.unflatten(flat)
            .into_iter()
            .map(|i| self.signed_index(i) as f64 / self.side)
            .collect()
    }

    /// Tables of `|ξ_k|` and of the index of `-ξ_k`, in flat mode order.
    pub fn modes(&self) -> ModeTable {
        let sites = self.sites();
        let mut radius = Vec::with_capacity(sites);
        let mut partner = Vec::with_capacity(sites);
        for flat in 0..sites {
            let idx = self.unflatten(flat);
            let r2: f64 = idx
                .iter()
                .map(|&i| {
                    let xi = self.signed_index(i) as f64 / self.side;
                    xi * xi
                })
                .sum();
            radius.push(r2.sqrt());
            let neg: Vec<usize> = idx
                .iter()
                .map(|&i| (self.points - i) % self.points)
                .collect();
            partner.push(self.flatten(&neg));
        }
        ModeTable { radius, partner }
    }
}

#[derive(Debug, Clone)]
pub struct ModeTable {
    pub radius: Vec<f64>,
    pub partner: Vec<usize>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("field holds {got} values, expected {expected}")]
    Shape { expected: usize, got: usize },
    #[error("non-finite value at time level {level}, site {site}")]
    NonFinite { level: usize, site: usize },
}

/// Real space-time field on the lattice, levels `0..=levels`, row-major in space.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeField {
    lattice: Lattice,
    levels: usize,
    values: Vec<f64>,
}

impl LatticeField {
    pub fn zeros(lattice: &Lattice, levels: usize) -> Self {
        LatticeField {
            lattice: lattice.clone(),
            levels,
            values: vec![0.0; (levels + 1) * lattice.sites()],
        }
    }

    pub fn from_values(lattice: &Lattice, levels: usize, values: Vec<f64>) -> Result<Self, FieldError> {
        let expected = (levels + 1) * lattice.sites();
        if values.len() != expected {
            return Err(FieldError::Shape {
                expected,
                got: values.len(),
            });
        }
        let field = LatticeField {
            lattice: lattice.clone(),
            levels,
            values,
        };
        field.check_finite()?;
        Ok(field)
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    /// Last time level held (the field covers `0..=levels`).
    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn level(&self, n: usize) -> &[f64] {
        let s = self.lattice.sites();
        &self.values[n * s..(n + 1) * s]
    }

    pub fn level_mut(&mut self, n: usize) -> &mut [f64] {
        let s = self.lattice.sites();
        &mut self.values[n * s..(n + 1) * s]
    }

    pub fn at(&self, n: usize, site: usize) -> f64 {
        self.values[n * self.lattice.sites() + site]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn check_finite(&self) -> Result<(), FieldError> {
        let s = self.lattice.sites();
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(pos) => Err(FieldError::NonFinite {
                level: pos / s,
                site: pos % s,
            }),
            None => Ok(()),
        }
    }

    /// Debug dump: `d, N, M` as little-endian u64, then the values as
    /// little-endian f64 in row-major (time, space) order.
    pub fn write_binary<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        for header in [self.lattice.dim, self.lattice.points, self.levels] {
            out.write_all(&(header as u64).to_le_bytes())?;
        }
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Inverse of [`write_binary`](Self::write_binary); the lattice supplies
    /// side length and time step, the header must agree with it.
    pub fn read_binary<R: std::io::Read>(lattice: &Lattice, mut input: R) -> std::io::Result<Self> {
        use std::io::{Error, ErrorKind};
        let mut word = [0u8; 8];
        let mut header = [0usize; 3];
        for h in header.iter_mut() {
            input.read_exact(&mut word)?;
            *h = u64::from_le_bytes(word) as usize;
        }
        if header[0] != lattice.dim || header[1] != lattice.points {
            return Err(Error::new(ErrorKind::InvalidData, "header does not match lattice"));
        }
        let levels = header[2];
        let mut values = Vec::with_capacity((levels + 1) * lattice.sites());
        for _ in 0..(levels + 1) * lattice.sites() {
            input.read_exact(&mut word)?;
            values.push(f64::from_le_bytes(word));
        }
        LatticeField::from_values(lattice, levels, values)
            .map_err(|e| Error::new(ErrorKind::InvalidData, e.to_string()))
    }
}

/// Unnormalized d-dimensional FFT over the lattice sites.
///
/// `forward` uses `e^{-2πi m·k/N}`, `inverse` uses `e^{+2πi m·k/N}`; neither
/// rescales. Holds its own scratch space, so keep one per worker.
pub struct LatticeFft {
    points: usize,
    dim: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    line: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl LatticeFft {
    pub fn new(lattice: &Lattice) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(lattice.points);
        let inverse = planner.plan_fft_inverse(lattice.points);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        LatticeFft {
            points: lattice.points,
            dim: lattice.dim,
            forward,
            inverse,
            line: vec![Complex64::new(0.0, 0.0); lattice.points],
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
        }
    }

    pub fn forward(&mut self, data: &mut [Complex64]) {
        let plan = Arc::clone(&self.forward);
        self.transform(plan.as_ref(), data);
    }

    pub fn inverse(&mut self, data: &mut [Complex64]) {
        let plan = Arc::clone(&self.inverse);
        self.transform(plan.as_ref(), data);
    }

    fn transform(&mut self, plan: &dyn Fft<f64>, data: &mut [Complex64]) {
        let n = self.points;
        debug_assert_eq!(data.len(), n.pow(self.dim as u32));
        // Last axis is contiguous: rustfft handles all rows in one call.
        plan.process_with_scratch(data, &mut self.scratch);
        for axis in 0..self.dim.saturating_sub(1) {
            let stride = n.pow((self.dim - 1 - axis) as u32);
            let outer = data.len() / (n * stride);
            for o in 0..outer {
                for inner in 0..stride {
                    let base = o * n * stride + inner;
                    for (i, slot) in self.line.iter_mut().enumerate() {
                        *slot = data[base + i * stride];
                    }
                    plan.process_with_scratch(&mut self.line, &mut self.scratch);
                    for (i, v) in self.line.iter().enumerate() {
                        data[base + i * stride] = *v;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lattice(dim: usize, points: usize) -> Lattice {
        Lattice::new(dim, 4.0, points, 1.0, 10, 0.0).unwrap()
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert_eq!(
            Lattice::new(1, 8.0, 100, 0.5, 200, 1.0),
            Err(LatticeError::NotPowerOfTwo(100))
        );
    }

    #[test]
    fn rejects_nyquist_below_cutoff() {
        let err = Lattice::new(1, 8.0, 64, 0.5, 200, 4.0).unwrap_err();
        assert!(matches!(err, LatticeError::Nyquist { .. }));
        assert!(err.to_string().contains("Nyquist"));
    }

    #[test]
    fn partner_is_negated_frequency() {
        let lat = lattice(2, 8);
        let modes = lat.modes();
        for k in 0..lat.sites() {
            let xi = lat.frequency(k);
            let neg = lat.frequency(modes.partner[k]);
            for (a, b) in xi.iter().zip(&neg) {
                // Nyquist components are their own negatives on the torus.
                let nyq = lat.nyquist();
                assert!((a + b).abs() < 1e-12 || (a.abs() - nyq).abs() < 1e-12);
            }
            assert_eq!(modes.partner[modes.partner[k]], k);
        }
    }

    #[test]
    fn fft_matches_direct_dft_in_2d() {
        let lat = lattice(2, 4);
        let mut fft = LatticeFft::new(&lat);
        let data: Vec<Complex64> = (0..16)
            .map(|i| Complex64::new((i as f64 * 0.7).sin(), (i as f64 * 0.3).cos()))
            .collect();
        let mut out = data.clone();
        fft.forward(&mut out);
        for k in 0..16 {
            let kk = lat.unflatten(k);
            let mut acc = Complex64::new(0.0, 0.0);
            for m in 0..16 {
                let mm = lat.unflatten(m);
                let phase = -2.0 * std::f64::consts::PI
                    * (kk[0] * mm[0] + kk[1] * mm[1]) as f64
                    / 4.0;
                acc += data[m] * Complex64::from_polar(1.0, phase);
            }
            assert!((acc - out[k]).norm() < 1e-12);
        }
        fft.inverse(&mut out);
        for (a, b) in out.iter().zip(&data) {
            assert!((a / 16.0 - b).norm() < 1e-12);
        }
    }

    #[test]
    fn binary_dump_round_trips() {
        let lat = lattice(1, 8);
        let values: Vec<f64> = (0..24).map(|i| i as f64 * 0.25 - 1.0).collect();
        let field = LatticeField::from_values(&lat, 2, values).unwrap();
        let mut buf = Vec::new();
        field.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 24 + 24 * 8);
        assert_eq!(&buf[..8], &1u64.to_le_bytes());
        let back = LatticeField::read_binary(&lat, buf.as_slice()).unwrap();
        assert_eq!(back, field);
    }
}
