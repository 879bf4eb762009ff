//! One-dimensional Gaussian paths: fractional Brownian motion and the
//! stationary fractional Ornstein-Uhlenbeck process.
//!
//! Both are generated by circulant embedding of a stationary covariance
//! (fractional Gaussian noise for fBm, the process itself for fOU). When the
//! embedding is not nonnegative definite even after `MAX_DOUBLINGS`
//! enlargements, the exact covariance matrix is factorised instead.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{DiregError, Result};

/// Negative circulant eigenvalues above `-EIG_TOL * max_eigenvalue` are clipped to zero.
pub const EIG_TOL: f64 = 1e-10;
pub const MAX_DOUBLINGS: u32 = 6;
/// Largest path handled by the dense Cholesky fallback.
pub const CHOLESKY_CAP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathKind {
    Fbm,
    Fou,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    pub kind: PathKind,
    /// Hurst index `H`; for fOU this is `ρ/2`.
    pub hurst: f64,
    /// fOU scale `a` in `exp(-a|t-s|^ρ)`; unused for fBm.
    pub scale_a: f64,
    pub n_points: usize,
    pub extent: f64,
}

impl PathSpec {
    pub fn fbm(hurst: f64, n_points: usize, extent: f64) -> Self {
        Self {
            kind: PathKind::Fbm,
            hurst,
            scale_a: 1.0,
            n_points,
            extent,
        }
    }

    pub fn fou(rho: f64, scale_a: f64, n_points: usize, extent: f64) -> Self {
        Self {
            kind: PathKind::Fou,
            hurst: rho / 2.0,
            scale_a,
            n_points,
            extent,
        }
    }

    pub fn step(&self) -> f64 {
        self.extent / self.n_points as f64
    }

    fn validate(&self) -> Result<()> {
        if !(self.hurst > 0.0 && self.hurst < 1.0) {
            return Err(DiregError::invalid(format!("hurst must lie in (0,1), got {}", self.hurst)));
        }
        if !(self.extent > 0.0 && self.extent.is_finite()) {
            return Err(DiregError::invalid(format!("extent must be > 0, got {}", self.extent)));
        }
        if self.n_points == 0 {
            return Err(DiregError::invalid("n_points must be positive"));
        }
        if self.kind == PathKind::Fou && !(self.scale_a > 0.0) {
            return Err(DiregError::invalid(format!("fOU scale a must be > 0, got {}", self.scale_a)));
        }
        Ok(())
    }
}

/// Sampled path: `values[k]` is the process at `grid[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Path1D {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

impl Path1D {
    /// Value at the abscissa closest to `s` (ties to the smaller abscissa).
    pub fn nearest_value(&self, s: f64) -> f64 {
        let k = self.grid.partition_point(|&x| x < s);
        if k == 0 {
            return self.values[0];
        }
        if k == self.grid.len() {
            return self.values[k - 1];
        }
        if s - self.grid[k - 1] <= self.grid[k] - s {
            self.values[k - 1]
        } else {
            self.values[k]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// Circulant embedding, falling back to Cholesky if the embedding fails.
    #[default]
    Auto,
    Circulant,
    Cholesky,
}

enum Generator {
    Circulant {
        /// `sqrt(λ_k / m)` for each circulant eigenvalue.
        scaled_sqrt_eig: Vec<f64>,
        fft: Arc<dyn Fft<f64>>,
    },
    Cholesky(DMatrix<f64>),
}

/// Reusable sampler for one [`PathSpec`]. Construction does the eigen- or
/// Cholesky decomposition once; each `sample` call only draws normals.
pub struct PathSampler {
    spec: PathSpec,
    generator: Generator,
}

/// Autocovariance of unit-step fractional Gaussian noise at lag `k`.
pub fn fgn_autocov(hurst: f64, k: usize) -> f64 {
    let k = k as f64;
    let e = 2.0 * hurst;
    0.5 * ((k + 1.0).powf(e) - 2.0 * k.powf(e) + (k - 1.0).abs().powf(e))
}

pub fn fbm_cov(hurst: f64, t: f64, s: f64) -> f64 {
    let e = 2.0 * hurst;
    0.5 * (t.abs().powf(e) + s.abs().powf(e) - (t - s).abs().powf(e))
}

pub fn fou_cov(rho: f64, a: f64, t: f64, s: f64) -> f64 {
    (-a * (t - s).abs().powf(rho)).exp()
}

impl PathSampler {
    pub fn new(spec: PathSpec) -> Result<Self> {
        Self::with_backend(spec, Backend::Auto)
    }

    pub fn with_backend(spec: PathSpec, backend: Backend) -> Result<Self> {
        spec.validate()?;
        let generator = match backend {
            Backend::Cholesky => Self::cholesky(&spec)?,
            Backend::Circulant => Self::circulant(&spec).ok_or_else(|| {
                DiregError::Numerical(format!(
                    "circulant embedding not nonnegative definite after {MAX_DOUBLINGS} doublings"
                ))
            })?,
            Backend::Auto => match Self::circulant(&spec) {
                Some(g) => g,
                None => Self::cholesky(&spec)?,
            },
        };
        Ok(Self { spec, generator })
    }

    pub fn spec(&self) -> &PathSpec {
        &self.spec
    }

    pub fn uses_circulant(&self) -> bool {
        matches!(self.generator, Generator::Circulant { .. })
    }

    /// Length of the stationary sequence that is embedded, with its autocovariance.
    fn stationary_sequence(spec: &PathSpec) -> (usize, Box<dyn Fn(usize) -> f64>) {
        let (h, n) = (spec.hurst, spec.n_points);
        match spec.kind {
            PathKind::Fbm => (n, Box::new(move |k| fgn_autocov(h, k))),
            PathKind::Fou => {
                let (rho, a, step) = (2.0 * h, spec.scale_a, spec.step());
                (n + 1, Box::new(move |k| fou_cov(rho, a, 0.0, k as f64 * step)))
            }
        }
    }

    fn circulant(spec: &PathSpec) -> Option<Generator> {
        let (len, cov) = Self::stationary_sequence(spec);
        let mut m = (2 * len.saturating_sub(1)).max(2).next_power_of_two();
        let mut planner = FftPlanner::<f64>::new();
        for _ in 0..=MAX_DOUBLINGS {
            let mut row: Vec<Complex<f64>> = (0..m).map(|k| Complex::new(cov(k.min(m - k)), 0.0)).collect();
            let fft = planner.plan_fft_forward(m);
            fft.process(&mut row);
            let max = row.iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max);
            let min = row.iter().map(|c| c.re).fold(f64::INFINITY, f64::min);
            if min >= -EIG_TOL * max.abs() {
                let scaled_sqrt_eig = row.iter().map(|c| (c.re.max(0.0) / m as f64).sqrt()).collect();
                return Some(Generator::Circulant { scaled_sqrt_eig, fft });
            }
            m *= 2;
        }
        None
    }

    fn cholesky(spec: &PathSpec) -> Result<Generator> {
        let n = spec.n_points;
        if n > CHOLESKY_CAP {
            return Err(DiregError::Numerical(format!(
                "Cholesky fallback needs n_points <= {CHOLESKY_CAP}, got {n}"
            )));
        }
        let step = spec.step();
        let (dim, cov): (usize, Box<dyn Fn(usize, usize) -> f64>) = match spec.kind {
            // B(0) = 0 is fixed, so only the n positive abscissae are random.
            PathKind::Fbm => {
                let h = spec.hurst;
                (n, Box::new(move |i, j| fbm_cov(h, (i + 1) as f64 * step, (j + 1) as f64 * step)))
            }
            PathKind::Fou => {
                let (rho, a) = (2.0 * spec.hurst, spec.scale_a);
                (n + 1, Box::new(move |i, j| fou_cov(rho, a, i as f64 * step, j as f64 * step)))
            }
        };
        let base = DMatrix::from_fn(dim, dim, cov);
        let mut jitter = 0.0;
        for _ in 0..8 {
            let mut m = base.clone();
            for i in 0..dim {
                m[(i, i)] += jitter;
            }
            if let Some(ch) = m.cholesky() {
                return Ok(Generator::Cholesky(ch.unpack()));
            }
            jitter = if jitter == 0.0 { 1e-12 } else { jitter * 100.0 };
        }
        Err(DiregError::Numerical("covariance matrix is not positive definite".into()))
    }

    /// Draws the stationary sequence (fGn increments or fOU values).
    fn draw_sequence<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<f64> {
        match &self.generator {
            Generator::Circulant { scaled_sqrt_eig, fft } => {
                let mut w: Vec<Complex<f64>> = scaled_sqrt_eig
                    .iter()
                    .map(|&s| {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        Complex::new(s * re, s * im)
                    })
                    .collect();
                fft.process(&mut w);
                w.iter().take(len).map(|c| c.re).collect()
            }
            Generator::Cholesky(l) => {
                let z = DVector::from_fn(l.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
                (l * z).iter().copied().collect()
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Path1D {
        let spec = &self.spec;
        let n = spec.n_points;
        let step = spec.step();
        let grid: Vec<f64> = (0..=n).map(|k| k as f64 * step).collect();
        let values = match (spec.kind, &self.generator) {
            (PathKind::Fbm, Generator::Circulant { .. }) => {
                let scale = step.powf(spec.hurst);
                let incr = self.draw_sequence(n, rng);
                let mut values = Vec::with_capacity(n + 1);
                let mut acc = 0.0;
                values.push(0.0);
                for d in incr {
                    acc += scale * d;
                    values.push(acc);
                }
                values
            }
            (PathKind::Fbm, Generator::Cholesky(_)) => {
                let mut values = Vec::with_capacity(n + 1);
                values.push(0.0);
                values.extend(self.draw_sequence(n, rng));
                values
            }
            (PathKind::Fou, _) => self.draw_sequence(n + 1, rng),
        };
        Path1D { grid, values }
    }
}

/// Samples a fractional Brownian motion on `{k · extent / n_points}`.
pub fn simulate_fbm_path<R: Rng + ?Sized>(spec: &PathSpec, rng: &mut R) -> Result<Path1D> {
    if spec.kind != PathKind::Fbm {
        return Err(DiregError::invalid("simulate_fbm_path needs an fbm spec"));
    }
    Ok(PathSampler::new(*spec)?.sample(rng))
}

/// Samples a stationary fractional Ornstein-Uhlenbeck path.
pub fn simulate_fou_path<R: Rng + ?Sized>(spec: &PathSpec, rng: &mut R) -> Result<Path1D> {
    if spec.kind != PathKind::Fou {
        return Err(DiregError::invalid("simulate_fou_path needs an fou spec"));
    }
    Ok(PathSampler::new(*spec)?.sample(rng))
}

/// Extends a path that is zero at the origin to negative abscissae through
/// `B(-s) := -B(s)`, looking up `B(s)` at the nearest grid abscissa.
pub fn extend_stationary_increments(path: &Path1D, neg_abscissae: &[f64]) -> Result<Path1D> {
    let extent = path.grid.last().copied().unwrap_or(0.0);
    let mut neg: Vec<f64> = neg_abscissae.to_vec();
    for &s in &neg {
        if !(s <= 0.0) {
            return Err(DiregError::invalid(format!("abscissa {s} is not <= 0")));
        }
        if -s > extent {
            return Err(DiregError::invalid(format!("|{s}| exceeds path extent {extent}")));
        }
    }
    neg.sort_by(f64::total_cmp);
    let mut grid = Vec::with_capacity(neg.len() + path.grid.len());
    let mut values = Vec::with_capacity(grid.capacity());
    for s in neg {
        grid.push(s);
        values.push(0.0 - path.nearest_value(-s));
    }
    grid.extend_from_slice(&path.grid);
    values.extend_from_slice(&path.values);
    Ok(Path1D { grid, values })
}
