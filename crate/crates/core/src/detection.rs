//! Anisotropy detection by thresholding the gap between the regularities
//! along `u(α̂̂)` and its orthogonal.
//!
//! The threshold adds to a data-driven error floor `ε̂` the vanishing term
//! `exp(−(log M₀)^ξ)`. The floor averages `|Ȟ(β_j) − Ȟ(β_j + π/2)|` over random
//! pairs of directions kept at least π/4 away from `α̂̂`, where both members
//! of a pair should only see the minimal regularity.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::angle::{DeltaGrid, DEFAULT_DELTA_MAX, DEFAULT_K0};
use crate::error::{DiregError, Result};
use crate::grid::FunctionalDataset;
use crate::regularity::{DatasetVariograms, Direction, VariogramSource};
use crate::rng::{self, stage};

pub const DEFAULT_XI: f64 = 1.0 / 3.0;

fn default_xi() -> f64 {
    DEFAULT_XI
}

fn default_k0() -> usize {
    DEFAULT_K0
}

fn default_delta_max() -> f64 {
    DEFAULT_DELTA_MAX
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionConfig {
    /// Number of random direction pairs; `None` means `⌈(N·M₀)^{1/4}⌉`.
    #[serde(default)]
    pub j_count: Option<usize>,
    #[serde(default = "default_xi")]
    pub xi: f64,
    #[serde(default = "default_k0")]
    pub k0: usize,
    #[serde(default = "default_delta_max")]
    pub delta_max: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            j_count: None,
            xi: DEFAULT_XI,
            k0: DEFAULT_K0,
            delta_max: DEFAULT_DELTA_MAX,
            seed: 0,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.xi > 0.0 && self.xi < 1.0) {
            return Err(DiregError::invalid(format!("xi must lie in (0,1), got {}", self.xi)));
        }
        if self.j_count == Some(0) {
            return Err(DiregError::invalid("j_count must be positive"));
        }
        Ok(())
    }
}

/// `⌈(N·M₀)^{1/4}⌉`.
pub fn default_j_count(n_surfaces: usize, m0: usize) -> usize {
    ((n_surfaces as f64 * m0 as f64).powf(0.25).ceil() as usize).max(1)
}

/// `ε̂ + exp(−(log M₀)^ξ)`.
pub fn threshold(epsilon_floor: f64, m0: usize, xi: f64) -> f64 {
    epsilon_floor + (-(m0 as f64).ln().powf(xi)).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub alpha_hat_adj: f64,
    /// `Ȟ` along `u(α̂̂)`.
    pub h_max_hat: f64,
    /// `Ȟ` along `u(α̂̂ + π/2)`.
    pub h_min_hat: f64,
    pub epsilon_floor: f64,
    pub tau: f64,
    pub is_anisotropic: bool,
    /// Sampled `β_j`; the partners are `β_j + π/2`.
    pub betas: Vec<f64>,
}

/// `β_j ~ U[α̂̂ + π/4, α̂̂ + 3π/4]`, returned with `β_j + π/2`, both in `[0, 2π)`.
pub fn sample_detection_angles<R: Rng + ?Sized>(alpha_hat_adj: f64, j_count: usize, rng: &mut R) -> Vec<(f64, f64)> {
    (0..j_count)
        .map(|_| {
            let b = alpha_hat_adj + FRAC_PI_4 + rng.random::<f64>() * FRAC_PI_2;
            (Direction::new(b).beta(), Direction::new(b + FRAC_PI_2).beta())
        })
        .collect()
}

/// `Ȟ_u = (1/K₀) Σ_k Ĥ_u(Δ_k)`.
pub fn h_check<S: VariogramSource + ?Sized>(src: &S, direction: Direction, delta_grid: &DeltaGrid) -> Result<f64> {
    let mut sum = 0.0;
    for &d in delta_grid.values() {
        sum += src.h_directional(direction, d)?;
    }
    Ok(sum / delta_grid.len() as f64)
}

pub fn epsilon_floor<S: VariogramSource + ?Sized>(src: &S, pairs: &[(f64, f64)], delta_grid: &DeltaGrid) -> Result<f64> {
    if pairs.is_empty() {
        return Err(DiregError::invalid("epsilon floor needs at least one angle pair"));
    }
    let mut sum = 0.0;
    for &(b, bp) in pairs {
        sum += (h_check(src, Direction::new(b), delta_grid)? - h_check(src, Direction::new(bp), delta_grid)?).abs();
    }
    Ok(sum / pairs.len() as f64)
}

pub fn epsilon_floor_hat(dataset: &FunctionalDataset, pairs: &[(f64, f64)], delta_grid: &DeltaGrid, sigma_sq: f64) -> Result<f64> {
    epsilon_floor(&DatasetVariograms::with_sigma_sq(dataset, sigma_sq), pairs, delta_grid)
}

/// Verdict from any variation source given the sampled pairs.
pub fn detect_with_source<S: VariogramSource + ?Sized>(
    src: &S,
    alpha_hat_adj: f64,
    pairs: &[(f64, f64)],
    delta_grid: &DeltaGrid,
    m0: usize,
    xi: f64,
) -> Result<DetectionReport> {
    let u = Direction::new(alpha_hat_adj);
    let h_max = h_check(src, u, delta_grid)?;
    let h_min = h_check(src, u.orthogonal(), delta_grid)?;
    let eps = epsilon_floor(src, pairs, delta_grid)?;
    let tau = threshold(eps, m0, xi);
    Ok(DetectionReport {
        alpha_hat_adj,
        h_max_hat: h_max,
        h_min_hat: h_min,
        epsilon_floor: eps,
        tau,
        is_anisotropic: (h_max - h_min).abs() > tau,
        betas: pairs.iter().map(|p| p.0).collect(),
    })
}

pub fn detect_anisotropy(dataset: &FunctionalDataset, alpha_hat_adj: f64, config: &DetectionConfig) -> Result<DetectionReport> {
    let vg = DatasetVariograms::new(dataset)?;
    detect_with(&vg, alpha_hat_adj, config)
}

/// As [`detect_anisotropy`] with a precomputed noise variance.
pub fn detect_with(vg: &DatasetVariograms<'_>, alpha_hat_adj: f64, config: &DetectionConfig) -> Result<DetectionReport> {
    config.validate()?;
    let ds = vg.dataset;
    let m0 = ds.m0();
    let j = config.j_count.unwrap_or_else(|| default_j_count(ds.n_surfaces(), m0));
    let mut stream = rng::derived_stream(config.seed, &[stage::DETECTION]);
    let pairs = sample_detection_angles(alpha_hat_adj, j, &mut stream);
    let grid = DeltaGrid::for_design(m0, config.k0, config.delta_max)?;
    detect_with_source(vg, alpha_hat_adj, &pairs, &grid, m0, config.xi)
}
