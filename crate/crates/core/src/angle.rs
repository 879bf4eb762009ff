//! Estimation, identification and correction of the anisotropy angle.
//!
//! Along the canonical axes the variations satisfy
//! `(θ_{e₂}/θ_{e₁})^{1/(2H̲)} ≈ |cot α|`, which pins α down to the four
//! candidates `{γ, π/2−γ, π/2+γ, π−γ}` with `γ = arctan ĝ`. Writing the
//! estimating equation with `arccot ĝ = π/2 − arctan ĝ` instead of `arctan`
//! yields the same set, so the four forms below cover both inverses. The
//! candidate with the largest regularity summed over a grid of spacings wins,
//! and a single multiplicative correction `F` removes the bias of the
//! non-dominant variogram term.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use serde::{Deserialize, Serialize};

use crate::error::{DiregError, Result};
use crate::grid::{FunctionalDataset, Point2};
use crate::regularity::{default_delta, min_delta, DatasetVariograms, Direction, EvalGrid, VariogramSource};

pub const DEFAULT_K0: usize = 15;
pub const DEFAULT_DELTA_MAX: f64 = 0.4;
pub const F_MIN: f64 = 1e-3;
pub const F_MAX: f64 = 1e3;

/// Strictly increasing spacings `Δ₁ < … < Δ_{K₀}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaGrid {
    values: Vec<f64>,
}

impl DeltaGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(DiregError::invalid("delta grid is empty"));
        }
        if values.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(DiregError::invalid("delta grid values must be positive and finite"));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DiregError::invalid("delta grid must be strictly increasing"));
        }
        Ok(Self { values })
    }

    /// `k` evenly spaced points from `start` to `end` inclusive.
    pub fn evenly_spaced(start: f64, end: f64, k: usize) -> Result<Self> {
        match k {
            0 => Err(DiregError::invalid("delta grid needs at least one point")),
            1 => Self::new(vec![start]),
            _ => {
                let step = (end - start) / (k - 1) as f64;
                Self::new((0..k).map(|i| if i + 1 == k { end } else { start + step * i as f64 }).collect())
            }
        }
    }

    /// `k0` points from `M₀^{-1/4}` to `delta_max`.
    pub fn for_design(m0: usize, k0: usize, delta_max: f64) -> Result<Self> {
        let g = Self::evenly_spaced(default_delta(m0), delta_max, k0)?;
        let lo = min_delta(m0);
        if g.values[0] < lo {
            return Err(DiregError::invalid(format!("delta grid starts below the admissible {lo}")));
        }
        Ok(g)
    }

    pub fn default_for(m0: usize) -> Result<Self> {
        Self::for_design(m0, DEFAULT_K0, DEFAULT_DELTA_MAX)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InverseBranch {
    Tan,
    Cot,
}

/// How a candidate relates to `γ`; inverting it maps a corrected `g` back to
/// an angle on the same branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateForm {
    Gamma,
    HalfPiMinusGamma,
    HalfPiPlusGamma,
    PiMinusGamma,
}

impl CandidateForm {
    pub const ALL: [CandidateForm; 4] = [
        CandidateForm::Gamma,
        CandidateForm::HalfPiMinusGamma,
        CandidateForm::HalfPiPlusGamma,
        CandidateForm::PiMinusGamma,
    ];

    pub fn angle(self, gamma: f64) -> f64 {
        normalize_half_turn(match self {
            CandidateForm::Gamma => gamma,
            CandidateForm::HalfPiMinusGamma => FRAC_PI_2 - gamma,
            CandidateForm::HalfPiPlusGamma => FRAC_PI_2 + gamma,
            CandidateForm::PiMinusGamma => PI - gamma,
        })
    }

    pub fn branch(self) -> InverseBranch {
        match self {
            CandidateForm::Gamma | CandidateForm::PiMinusGamma => InverseBranch::Tan,
            _ => InverseBranch::Cot,
        }
    }

    /// The angle this form assigns to `g`, in `[0, π)`.
    pub fn invert(self, g: f64) -> f64 {
        self.angle(g.atan())
    }
}

/// Maps any angle into `[0, π)`.
pub fn normalize_half_turn(a: f64) -> f64 {
    let r = a.rem_euclid(PI);
    if r >= PI {
        0.0
    } else {
        r
    }
}

fn same_angle(a: f64, b: f64) -> bool {
    let d = (a - b).rem_euclid(PI);
    d < 1e-9 || PI - d < 1e-9
}

/// `ĝ` from the canonical-axis variations: nonpositive variations are
/// replaced by 1 before taking `(θ_{e₂}/θ_{e₁})^{1/(2H̲)}`.
pub fn g_from_thetas(theta_e1: f64, theta_e2: f64, h_min: f64) -> f64 {
    let num = if theta_e2 > 0.0 { theta_e2 } else { 1.0 };
    let den = if theta_e1 > 0.0 { theta_e1 } else { 1.0 };
    (num / den).powf(1.0 / (2.0 * h_min))
}

pub fn g_hat(dataset: &FunctionalDataset, delta: f64, tgrid: &EvalGrid, sigma_sq: f64) -> Result<f64> {
    use crate::regularity::{h_min_hat, theta_hat};
    let e1 = theta_hat(dataset, Direction::e1(), delta, tgrid, sigma_sq)?.theta_hat;
    let e2 = theta_hat(dataset, Direction::e2(), delta, tgrid, sigma_sq)?.theta_hat;
    Ok(g_from_thetas(e1, e2, h_min_hat(dataset, delta, tgrid, sigma_sq)?))
}

/// Folds any angle onto `[0, π/2]` by reflection.
fn reflect_gamma(gamma: f64) -> f64 {
    let g = gamma.rem_euclid(PI);
    if g > FRAC_PI_2 {
        PI - g
    } else {
        g
    }
}

/// The distinct candidates `{γ, π/2−γ, π/2+γ, π−γ}` in `[0, π)`, ascending,
/// each with the first form that produced it.
pub fn candidate_forms(gamma: f64) -> Vec<(f64, CandidateForm)> {
    let gamma = reflect_gamma(gamma);
    let mut out: Vec<(f64, CandidateForm)> = Vec::with_capacity(4);
    for form in CandidateForm::ALL {
        let a = form.angle(gamma);
        if let Some(slot) = out.iter_mut().find(|(b, _)| same_angle(a, *b)) {
            // coincident candidates keep the tangent branch
            if form.branch() == InverseBranch::Tan && slot.1.branch() == InverseBranch::Cot {
                slot.1 = form;
            }
        } else {
            out.push((a, form));
        }
    }
    out.sort_by(|x, y| x.0.total_cmp(&y.0));
    out
}

pub fn candidate_angles(gamma: f64) -> Vec<f64> {
    candidate_forms(gamma).into_iter().map(|(a, _)| a).collect()
}

/// Regularity of each candidate summed over the spacings.
pub fn candidate_scores<S: VariogramSource + ?Sized>(src: &S, candidates: &[f64], delta_grid: &DeltaGrid) -> Result<Vec<f64>> {
    candidates
        .iter()
        .map(|&beta| {
            let dir = Direction::new(beta);
            delta_grid.values().iter().try_fold(0.0, |acc, &d| Ok(acc + src.h_directional(dir, d)?))
        })
        .collect()
}

/// Index of the largest score; ties go to the earliest entry.
pub fn argmax_first(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Picks the candidate with the largest summed regularity.
pub fn identify_alpha<S: VariogramSource + ?Sized>(src: &S, delta_grid: &DeltaGrid, gamma: f64) -> Result<(f64, Vec<f64>)> {
    let cands = candidate_angles(gamma);
    let scores = candidate_scores(src, &cands, delta_grid)?;
    Ok((cands[argmax_first(&scores)], scores))
}

/// Result of [`correction_factor`]; `skipped` marks the nonpositive-θ guard.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub factor: f64,
    pub skipped: bool,
    pub clamped: bool,
}

/// Remainder correction `F = [(1+F_num)/(1+F_den)]^{1/(2H̲)}`.
///
/// `theta_max` is the variation along `u(α̂)` and `theta_min` along the
/// orthogonal direction; `r_hat` is the cross term, zero by default. The
/// cotangent branch corresponds to the maximal regularity sitting along
/// `u(α̂)`, the tangent branch swaps the roles of sine and cosine.
#[allow(clippy::too_many_arguments)]
pub fn correction_factor(
    alpha_hat: f64,
    h_min: f64,
    h_max: f64,
    theta_min: f64,
    theta_max: f64,
    branch: InverseBranch,
    r_hat: f64,
) -> Correction {
    if !(theta_min > 0.0 && theta_max > 0.0) {
        return Correction {
            factor: 1.0,
            skipped: true,
            clamped: false,
        };
    }
    if same_angle(alpha_hat, FRAC_PI_4) {
        // numerator and denominator coincide
        return Correction {
            factor: 1.0,
            skipped: false,
            clamped: false,
        };
    }
    let h_max = h_max.max(h_min);
    let (s, c) = (alpha_hat.sin().abs(), alpha_hat.cos().abs());
    let (a, b) = match branch {
        InverseBranch::Cot => (s, c),
        InverseBranch::Tan => (c, s),
    };
    let ratio = theta_max / theta_min;
    let r_term = r_hat / theta_min;
    let f_num = ratio * a.powf(2.0 * h_max) / b.powf(2.0 * h_min) + r_term;
    let f_den = ratio * b.powf(2.0 * h_max) / a.powf(2.0 * h_min) + r_term;
    let f = ((1.0 + f_num) / (1.0 + f_den)).powf(1.0 / (2.0 * h_min));
    if !f.is_finite() || f.is_nan() {
        return Correction {
            factor: if f == f64::INFINITY { F_MAX } else { 1.0 },
            skipped: f.is_nan(),
            clamped: f == f64::INFINITY,
        };
    }
    let clamped = f.clamp(F_MIN, F_MAX);
    Correction {
        factor: clamped,
        skipped: false,
        clamped: clamped != f,
    }
}

fn default_k0() -> usize {
    DEFAULT_K0
}

fn default_delta_max() -> f64 {
    DEFAULT_DELTA_MAX
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AngleConfig {
    /// Fixed spacing for `ĝ` and `F`; `None` means `M₀^{-1/4}`.
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default = "default_k0")]
    pub k0: usize,
    #[serde(default = "default_delta_max")]
    pub delta_max: f64,
    /// Estimate the cross term of the correction instead of setting it to 0.
    #[serde(default)]
    pub estimate_r: bool,
}

impl Default for AngleConfig {
    fn default() -> Self {
        Self {
            delta: None,
            k0: DEFAULT_K0,
            delta_max: DEFAULT_DELTA_MAX,
            estimate_r: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleEstimate {
    pub delta: f64,
    pub g_hat: f64,
    pub h_min_hat: f64,
    pub h_max_hat: f64,
    pub gamma_hat: f64,
    pub candidates: Vec<f64>,
    pub candidate_scores: Vec<f64>,
    pub alpha_hat: f64,
    pub form: CandidateForm,
    pub inverse_branch: InverseBranch,
    pub r_hat: f64,
    pub correction_f: f64,
    pub alpha_hat_adj: f64,
    pub correction_skipped: bool,
    pub correction_clamped: bool,
    pub fallback_used: bool,
}

/// Full pipeline from any variation source: `ĝ`, identification, one
/// correction pass and inversion on the identified branch.
pub fn estimate_alpha_from_source<S: VariogramSource + ?Sized>(
    src: &S,
    delta: f64,
    delta_grid: &DeltaGrid,
    r_hat: f64,
) -> Result<AngleEstimate> {
    let e1 = src.theta(Direction::e1(), delta)?;
    let e2 = src.theta(Direction::e2(), delta)?;
    let h_min = src.h_min(delta)?;
    let g = g_from_thetas(e1, e2, h_min);
    let gamma = g.atan();
    let forms = candidate_forms(gamma);
    let candidates: Vec<f64> = forms.iter().map(|(a, _)| *a).collect();
    let scores = candidate_scores(src, &candidates, delta_grid)?;
    let (alpha_hat, form) = forms[argmax_first(&scores)];

    let u_max = Direction::new(alpha_hat);
    let theta_max = src.theta(u_max, delta)?;
    let theta_min = src.theta(u_max.orthogonal(), delta)?;
    let h_max = src.h_directional(u_max, delta)?;
    let corr = correction_factor(alpha_hat, h_min, h_max, theta_min, theta_max, form.branch(), r_hat);
    let g_adj = g / corr.factor;
    let (alpha_hat_adj, fallback_used) = if g_adj.is_finite() && g_adj > 0.0 {
        (form.invert(g_adj), false)
    } else {
        (alpha_hat, true)
    };
    Ok(AngleEstimate {
        delta,
        g_hat: g,
        h_min_hat: h_min,
        h_max_hat: h_max,
        gamma_hat: gamma,
        candidates,
        candidate_scores: scores,
        alpha_hat,
        form,
        inverse_branch: form.branch(),
        r_hat,
        correction_f: corr.factor,
        alpha_hat_adj,
        correction_skipped: corr.skipped,
        correction_clamped: corr.clamped,
        fallback_used,
    })
}

/// Empirical cross term `E[(X(a)−X(b))(X(b)−X(c))]` of the correction, built
/// from the probe `Δe₁` split along `u(α̂)` and its orthogonal. The shared
/// point `b` contributes `−σ²`, which is added back.
pub fn estimate_cross_term(vg: &DatasetVariograms<'_>, alpha_hat: f64, delta: f64) -> Result<f64> {
    let ds = vg.dataset;
    let grid = &ds.grid;
    let tgrid = EvalGrid::with_max_probe(grid, 2.0 * delta, vg.tgrid_cap)?;
    let u1 = Direction::new(alpha_hat).unit();
    let u2 = Direction::new(alpha_hat + FRAC_PI_2).unit();
    let e1 = Point2::new(1.0, 0.0);
    let (a1, a2) = (e1.dot(u1) * delta / 2.0, e1.dot(u2) * delta / 2.0);
    let n = ds.n_surfaces() as f64;
    let mut total = 0.0;
    for &t in tgrid.points() {
        let pa = grid.nearest_index(t.scaled_add(-a1, u1).scaled_add(-a2, u2));
        let pb = grid.nearest_index(t.scaled_add(a1, u1).scaled_add(-a2, u2));
        let pc = grid.nearest_index(t.scaled_add(a1, u1).scaled_add(a2, u2));
        let mut acc = 0.0;
        for s in &ds.surfaces {
            acc += (s.values[pa] - s.values[pb]) * (s.values[pb] - s.values[pc]);
        }
        total += acc / n;
    }
    Ok(total / tgrid.len() as f64 + vg.sigma_sq)
}

/// Adjusted angle estimate from a dataset.
pub fn estimate_alpha_adjusted(dataset: &FunctionalDataset, config: &AngleConfig) -> Result<AngleEstimate> {
    let vg = DatasetVariograms::new(dataset)?;
    estimate_alpha_with(&vg, config)
}

/// As [`estimate_alpha_adjusted`] with a precomputed noise variance.
pub fn estimate_alpha_with(vg: &DatasetVariograms<'_>, config: &AngleConfig) -> Result<AngleEstimate> {
    let m0 = vg.dataset.m0();
    let delta = config.delta.unwrap_or_else(|| default_delta(m0));
    let grid = DeltaGrid::for_design(m0, config.k0, config.delta_max)?;
    let est = estimate_alpha_from_source(vg, delta, &grid, 0.0)?;
    if !config.estimate_r {
        return Ok(est);
    }
    let r_hat = estimate_cross_term(vg, est.alpha_hat, delta)?;
    estimate_alpha_from_source(vg, delta, &grid, r_hat)
}
