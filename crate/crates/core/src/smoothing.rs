//! Nadaraya-Watson smoothing in a rotated basis with anisotropic bandwidths.
//!
//! After rotating by `R_α` the maximal regularity lies along the first axis,
//! so each axis gets its own bandwidth. Bandwidths minimize the explicit risk
//! bound `2L₁h₁^{2H₁} + 2L₂h₂^{2H₂} + 27σ²/(4h₁h₂M₀)` with plug-in constants.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DiregError, Result};
use crate::grid::{FunctionalDataset, Point2, RegularGrid, Surface};
use crate::regularity::{default_delta, DatasetVariograms, Direction, VariogramSource};

/// Lower edge of the bandwidth box, in units of `M₀^{-1/2}`.
pub const BANDWIDTH_LOW: f64 = 2.0;
/// Upper edge of the bandwidth box.
pub const BANDWIDTH_HIGH: f64 = 0.5;
pub const L_MIN: f64 = 1e-3;
pub const L_MAX: f64 = 1e3;

const SEARCH_GRID: usize = 64;

/// The clockwise rotation `R_α` with rows `(cos α, sin α)` and `(−sin α, cos α)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationAngle {
    pub alpha: f64,
}

impl RotationAngle {
    pub fn new(alpha: f64) -> Self {
        Self { alpha }
    }

    pub fn matrix(self) -> [[f64; 2]; 2] {
        let (s, c) = self.alpha.sin_cos();
        [[c, s], [-s, c]]
    }

    pub fn apply(self, p: Point2) -> Point2 {
        let (s, c) = self.alpha.sin_cos();
        Point2::new(c * p.t1 + s * p.t2, -s * p.t1 + c * p.t2)
    }

    pub fn apply_inverse(self, p: Point2) -> Point2 {
        let (s, c) = self.alpha.sin_cos();
        Point2::new(c * p.t1 - s * p.t2, s * p.t1 + c * p.t2)
    }
}

pub fn rotate_points(alpha: RotationAngle, pts: &[Point2], inverse: bool) -> Vec<Point2> {
    pts.iter()
        .map(|&p| if inverse { alpha.apply_inverse(p) } else { alpha.apply(p) })
        .collect()
}

/// `ω` with `1/ω = 1/H₁ + 1/H₂`.
pub fn effective_smoothness(h1: f64, h2: f64) -> f64 {
    1.0 / (1.0 / h1 + 1.0 / h2)
}

/// Exponents `(a₁, a₂)` with `h_i* ≍ M₀^{−a_i}`.
pub fn bandwidth_rate_exponents(h1: f64, h2: f64) -> (f64, f64) {
    let d = 2.0 * h1 * h2 + h1 + h2;
    (h2 / d, h1 / d)
}

/// Regularities, constants and noise level entering the bandwidth objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthProblem {
    pub h1_reg: f64,
    pub h2_reg: f64,
    pub l1: f64,
    pub l2: f64,
    pub sigma_sq: f64,
    pub m0: usize,
}

impl BandwidthProblem {
    pub fn objective(&self, h1: f64, h2: f64) -> f64 {
        2.0 * self.l1 * h1.powf(2.0 * self.h1_reg)
            + 2.0 * self.l2 * h2.powf(2.0 * self.h2_reg)
            + 27.0 * self.sigma_sq / (4.0 * h1 * h2 * self.m0 as f64)
    }

    /// The admissible box `[2·M₀^{-1/2}, 0.5]`.
    pub fn range(&self) -> (f64, f64) {
        (BANDWIDTH_LOW / (self.m0 as f64).sqrt(), BANDWIDTH_HIGH)
    }

    fn validate(&self) -> Result<()> {
        for (name, h) in [("h1_reg", self.h1_reg), ("h2_reg", self.h2_reg)] {
            if !(h > 0.0 && h <= 1.0) {
                return Err(DiregError::invalid(format!("{name} must lie in (0,1], got {h}")));
            }
        }
        if !(self.l1 > 0.0 && self.l2 > 0.0) {
            return Err(DiregError::invalid("Hölder constants must be positive"));
        }
        if !(self.sigma_sq >= 0.0) {
            return Err(DiregError::invalid("noise variance must be nonnegative"));
        }
        let (lo, hi) = self.range();
        if lo >= hi {
            return Err(DiregError::invalid(format!("bandwidth range is empty for M0 = {}", self.m0)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthChoice {
    pub h1: f64,
    pub h2: f64,
    /// σ² = 0: the objective has no variance term and the lower corner is returned.
    pub degenerate: bool,
}

fn log_grid(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..k)
        .map(|i| if i + 1 == k { hi } else { (a + (b - a) * i as f64 / (k - 1) as f64).exp() })
        .collect()
}

/// Golden-section minimum of a unimodal `f` over `[a, b]` in log coordinates.
fn golden_log(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo.ln(), hi.ln());
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c.exp()), f(d.exp()));
    for _ in 0..100 {
        if (b - a).abs() < 1e-12 {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c.exp());
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d.exp());
        }
    }
    let x = ((a + b) / 2.0).exp().clamp(lo, hi);
    // an optimum on the boundary is returned exactly
    [lo, hi].into_iter().fold(x, |best, e| if f(e) < f(best) { e } else { best })
}

/// Minimizes the objective on a log-spaced grid, then refines by coordinate
/// descent. The objective is convex in `(log h₁, log h₂)`, so the refinement
/// converges to the minimum over the box.
pub fn optimal_bandwidths(problem: &BandwidthProblem) -> Result<BandwidthChoice> {
    problem.validate()?;
    let (lo, hi) = problem.range();
    if problem.sigma_sq == 0.0 {
        return Ok(BandwidthChoice {
            h1: lo,
            h2: lo,
            degenerate: true,
        });
    }
    let grid = log_grid(lo, hi, SEARCH_GRID);
    let (mut h1, mut h2, mut best) = (lo, lo, f64::INFINITY);
    for &a in &grid {
        for &b in &grid {
            let v = problem.objective(a, b);
            if v < best {
                (h1, h2, best) = (a, b, v);
            }
        }
    }
    for _ in 0..200 {
        let n1 = golden_log(|x| problem.objective(x, h2), lo, hi);
        let n2 = golden_log(|y| problem.objective(n1, y), lo, hi);
        let v = problem.objective(n1, n2);
        let moved = (n1 / h1).ln().abs().max((n2 / h2).ln().abs());
        if v <= best {
            (h1, h2, best) = (n1, n2, v);
        }
        if moved < 1e-10 {
            break;
        }
    }
    Ok(BandwidthChoice { h1, h2, degenerate: false })
}

/// How a plan turns regularities into bandwidths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    /// `h_i = M₀^{−a_i}` with the rate exponents of the optimal bandwidths.
    #[default]
    Rate,
    /// Minimizer of the explicit risk bound with plug-in constants.
    Objective,
}

/// `h_i = M₀^{−a_i}`, clipped to the admissible box.
pub fn rate_bandwidths(h1_reg: f64, h2_reg: f64, m0: usize) -> (f64, f64) {
    let (a1, a2) = bandwidth_rate_exponents(h1_reg, h2_reg);
    let m = m0 as f64;
    let lo = BANDWIDTH_LOW / m.sqrt();
    (m.powf(-a1).clamp(lo, BANDWIDTH_HIGH), m.powf(-a2).clamp(lo, BANDWIDTH_HIGH))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HPairSource {
    PlugInAniso,
    PlugInIso,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmootherPlan {
    pub alpha: RotationAngle,
    pub h1: f64,
    pub h2: f64,
    pub h1_reg: f64,
    pub h2_reg: f64,
    pub l1_hat: f64,
    pub l2_hat: f64,
    pub sigma_sq_hat: f64,
    pub h_pair_source: HPairSource,
    pub rule: Option<BandwidthRule>,
    pub degenerate: bool,
}

impl SmootherPlan {
    /// Plan with fixed bandwidths and no plug-in quantities.
    pub fn manual(alpha: f64, h1: f64, h2: f64) -> Result<Self> {
        if !(h1 > 0.0 && h2 > 0.0 && h1.is_finite() && h2.is_finite()) {
            return Err(DiregError::invalid(format!("bandwidths must be positive, got ({h1}, {h2})")));
        }
        Ok(Self {
            alpha: RotationAngle::new(alpha),
            h1,
            h2,
            h1_reg: f64::NAN,
            h2_reg: f64::NAN,
            l1_hat: f64::NAN,
            l2_hat: f64::NAN,
            sigma_sq_hat: f64::NAN,
            h_pair_source: HPairSource::Manual,
            rule: None,
            degenerate: false,
        })
    }
}

fn plug_in_constant(theta: f64, delta: f64, h: f64) -> f64 {
    let l = theta / delta.powf(2.0 * h);
    if l.is_nan() {
        L_MIN
    } else {
        l.clamp(L_MIN, L_MAX)
    }
}

/// Regularities outside `(0, 1]` are pulled back into it for the objective.
fn usable_regularity(h: f64) -> f64 {
    if h.is_finite() {
        h.clamp(1e-3, 1.0)
    } else {
        1.0
    }
}

/// Anisotropic plan learnt from `vg`: rotation by `alpha`, `H₁ = Ĥ_{u(α)}`,
/// `H₂ = Ĥ̲` from the canonical axes.
pub fn plan_anisotropic(vg: &DatasetVariograms<'_>, alpha: f64, delta: Option<f64>, rule: BandwidthRule) -> Result<SmootherPlan> {
    let m0 = vg.dataset.m0();
    let delta = delta.unwrap_or_else(|| default_delta(m0));
    let u = Direction::new(alpha);
    let h1_reg = usable_regularity(vg.h_directional(u, delta)?);
    let h2_reg = usable_regularity(vg.h_min(delta)?);
    let l1 = plug_in_constant(vg.theta(u, delta)?, delta, h1_reg);
    let l2 = plug_in_constant(vg.theta(u.orthogonal(), delta)?, delta, h2_reg);
    build_plan(alpha, [h1_reg, h2_reg], [l1, l2], vg.sigma_sq, m0, HPairSource::PlugInAniso, rule)
}

/// Isotropic baseline: no rotation and `H₁ = H₂ = Ĥ̲`.
pub fn plan_isotropic(vg: &DatasetVariograms<'_>, delta: Option<f64>, rule: BandwidthRule) -> Result<SmootherPlan> {
    let m0 = vg.dataset.m0();
    let delta = delta.unwrap_or_else(|| default_delta(m0));
    let h = usable_regularity(vg.h_min(delta)?);
    let l1 = plug_in_constant(vg.theta(Direction::e1(), delta)?, delta, h);
    let l2 = plug_in_constant(vg.theta(Direction::e2(), delta)?, delta, h);
    build_plan(0.0, [h, h], [l1, l2], vg.sigma_sq, m0, HPairSource::PlugInIso, rule)
}

fn build_plan(
    alpha: f64,
    regs: [f64; 2],
    ls: [f64; 2],
    sigma_sq: f64,
    m0: usize,
    source: HPairSource,
    rule: BandwidthRule,
) -> Result<SmootherPlan> {
    let problem = BandwidthProblem {
        h1_reg: regs[0],
        h2_reg: regs[1],
        l1: ls[0],
        l2: ls[1],
        sigma_sq: sigma_sq.max(0.0),
        m0,
    };
    let choice = match rule {
        BandwidthRule::Objective => optimal_bandwidths(&problem)?,
        BandwidthRule::Rate => {
            problem.validate()?;
            let (h1, h2) = rate_bandwidths(regs[0], regs[1], m0);
            BandwidthChoice { h1, h2, degenerate: false }
        }
    };
    Ok(SmootherPlan {
        alpha: RotationAngle::new(alpha),
        h1: choice.h1,
        h2: choice.h2,
        h1_reg: regs[0],
        h2_reg: regs[1],
        l1_hat: ls[0],
        l2_hat: ls[1],
        sigma_sq_hat: sigma_sq,
        h_pair_source: source,
        rule: Some(rule),
        degenerate: choice.degenerate,
    })
}

/// `¾(1 − x²)` on `[−1, 1]`, zero outside.
pub fn epanechnikov(x: f64) -> f64 {
    if x.abs() <= 1.0 {
        0.75 * (1.0 - x * x)
    } else {
        0.0
    }
}

fn kernel_weight(plan: &SmootherPlan, d: Point2) -> f64 {
    let s = plan.alpha.apply(d);
    epanechnikov(s.t1 / plan.h1) * epanechnikov(s.t2 / plan.h2)
}

/// Nadaraya-Watson weights at `t` over arbitrary observation points; all zero
/// when no observation falls in the support.
pub fn nw_weights(plan: &SmootherPlan, obs: &[Point2], t: Point2) -> Vec<f64> {
    let raw: Vec<f64> = obs
        .iter()
        .map(|&p| kernel_weight(plan, Point2::new(p.t1 - t.t1, p.t2 - t.t2)))
        .collect();
    let total: f64 = raw.iter().sum();
    if total == 0.0 {
        raw
    } else {
        raw.into_iter().map(|w| w / total).collect()
    }
}

/// Smoother over scattered observations, scanning every observation.
pub fn nw_smooth_scattered(plan: &SmootherPlan, obs: &[Point2], values: &[f64], eval_pts: &[Point2]) -> Result<Vec<f64>> {
    if obs.len() != values.len() {
        return Err(DiregError::invalid("observation points and values differ in length"));
    }
    Ok(eval_pts
        .par_iter()
        .map(|&t| {
            let (mut num, mut den) = (0.0, 0.0);
            for (p, &y) in obs.iter().zip(values) {
                let w = kernel_weight(plan, Point2::new(p.t1 - t.t1, p.t2 - t.t2));
                num += w * y;
                den += w;
            }
            if den == 0.0 {
                0.0
            } else {
                num / den
            }
        })
        .collect())
}

fn axis_range(grid: &RegularGrid, centre: f64, radius: f64) -> (usize, usize) {
    let n = grid.side_count();
    let nf = n as f64;
    let lo = ((centre - radius) * nf).ceil().max(1.0);
    let hi = ((centre + radius) * nf).floor().min(nf);
    (lo as usize, hi.max(0.0) as usize)
}

/// Smooths one surface on its grid, scanning only observations in the
/// axis-aligned box around the rotated kernel support.
pub fn nw_smooth(plan: &SmootherPlan, surface: &Surface, eval_pts: &[Point2]) -> Vec<f64> {
    let grid = &surface.grid;
    let (s, c) = plan.alpha.alpha.sin_cos();
    // small slack so boundary observations are not lost to rounding
    let slack = 1e-9;
    let rx = plan.h1 * c.abs() + plan.h2 * s.abs() + slack;
    let ry = plan.h1 * s.abs() + plan.h2 * c.abs() + slack;
    eval_pts
        .par_iter()
        .map(|&t| {
            let (p0, p1) = axis_range(grid, t.t1, rx);
            let (q0, q1) = axis_range(grid, t.t2, ry);
            let (mut num, mut den) = (0.0, 0.0);
            for p in p0..=p1 {
                for q in q0..=q1 {
                    let m = grid.index_of(p, q);
                    let x = grid.point(m);
                    let w = kernel_weight(plan, Point2::new(x.t1 - t.t1, x.t2 - t.t2));
                    if w > 0.0 {
                        num += w * surface.values[m];
                        den += w;
                    }
                }
            }
            if den == 0.0 {
                0.0
            } else {
                num / den
            }
        })
        .collect()
}

/// Mean squared difference.
pub fn empirical_risk(truth: &[f64], estimate: &[f64]) -> Result<f64> {
    if truth.len() != estimate.len() {
        return Err(DiregError::invalid(format!(
            "risk needs equal lengths, got {} and {}",
            truth.len(),
            estimate.len()
        )));
    }
    if truth.is_empty() {
        return Err(DiregError::invalid("risk of an empty evaluation set"));
    }
    Ok(truth.iter().zip(estimate).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / truth.len() as f64)
}

/// Nearest-neighbour transfer of a fine surface onto a coarser grid.
pub fn discretize_nearest(fine: &Surface, coarse: RegularGrid) -> Surface {
    Surface {
        grid: coarse,
        values: coarse.points().map(|p| fine.at(p)).collect(),
    }
}

/// Anisotropic and isotropic risks of one online surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingOutcome {
    pub risk_aniso: f64,
    pub risk_iso: f64,
}

impl SmoothingOutcome {
    pub fn relative_risk(&self) -> f64 {
        self.risk_aniso / self.risk_iso
    }
}

/// Smooths the noisy online surface with both plans and scores each against
/// the noiseless truth on the observation grid.
pub fn compare_plans(aniso: &SmootherPlan, iso: &SmootherPlan, noisy: &Surface, truth: &Surface) -> Result<SmoothingOutcome> {
    let eval: Vec<Point2> = noisy.grid.points().collect();
    let target: Vec<f64> = eval.iter().map(|&p| truth.at(p)).collect();
    Ok(SmoothingOutcome {
        risk_aniso: empirical_risk(&target, &nw_smooth(aniso, noisy, &eval))?,
        risk_iso: empirical_risk(&target, &nw_smooth(iso, noisy, &eval))?,
    })
}

/// Learns the anisotropic plan at `alpha` and the isotropic plan from one
/// learning set.
pub fn learn_plans(learning: &FunctionalDataset, alpha: f64, rule: BandwidthRule) -> Result<(SmootherPlan, SmootherPlan)> {
    let vg = DatasetVariograms::new(learning)?;
    Ok((plan_anisotropic(&vg, alpha, None, rule)?, plan_isotropic(&vg, None, rule)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn problem(h1: f64, h2: f64, m0: usize) -> BandwidthProblem {
        BandwidthProblem {
            h1_reg: h1,
            h2_reg: h2,
            l1: 1.0,
            l2: 1.0,
            sigma_sq: 0.05 * 0.05,
            m0,
        }
    }

    #[test]
    fn rotation_basics() {
        let p = [Point2::new(0.3, -0.7), Point2::new(1.0, 0.0)];
        assert_eq!(rotate_points(RotationAngle::new(0.0), &p, false), p.to_vec());
        let q = RotationAngle::new(FRAC_PI_2).apply(Point2::new(1.0, 0.0));
        assert_abs_diff_eq!(q.t1, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.t2, -1.0, epsilon = 1e-15);
        let m = RotationAngle::new(0.4).matrix();
        assert_abs_diff_eq!(m[0][0] * m[1][1] - m[0][1] * m[1][0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn omega_and_exponents() {
        assert_abs_diff_eq!(effective_smoothness(0.8, 0.5), 1.0 / 3.25, epsilon = 1e-15);
        assert_abs_diff_eq!(effective_smoothness(0.8, 0.5), 0.30769, epsilon = 1e-5);
        let (a1, a2) = bandwidth_rate_exponents(0.8, 0.5);
        assert_abs_diff_eq!(a1, 0.5 / 2.1, epsilon = 1e-15);
        assert_abs_diff_eq!(a2, 0.8 / 2.1, epsilon = 1e-15);
    }

    #[test]
    fn bandwidth_rates_match_exponents() {
        let ms = [51usize * 51, 101 * 101, 201 * 201];
        // unit noise keeps the optimum inside the box at all three sizes
        let hs: Vec<BandwidthChoice> = ms
            .iter()
            .map(|&m| optimal_bandwidths(&BandwidthProblem { sigma_sq: 1.0, ..problem(0.8, 0.5, m) }).unwrap())
            .collect();
        let (lo, _) = problem(0.8, 0.5, 201 * 201).range();
        assert!(hs.iter().all(|h| h.h1 < BANDWIDTH_HIGH && h.h2 > lo));
        let x: Vec<f64> = ms.iter().map(|&m| (m as f64).ln()).collect();
        let slope = |y: Vec<f64>| {
            let mx = x.iter().sum::<f64>() / 3.0;
            let my = y.iter().sum::<f64>() / 3.0;
            let num: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
            let den: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
            num / den
        };
        let s1 = slope(hs.iter().map(|h| h.h1.ln()).collect());
        let s2 = slope(hs.iter().map(|h| h.h2.ln()).collect());
        assert!((s1 + 0.5 / 2.1).abs() < 0.03, "slope h1 {s1}");
        assert!((s2 + 0.8 / 2.1).abs() < 0.03, "slope h2 {s2}");
    }

    #[test]
    fn symmetric_problem_gives_equal_bandwidths() {
        let c = optimal_bandwidths(&problem(0.6, 0.6, 2601)).unwrap();
        assert_abs_diff_eq!(c.h1, c.h2, epsilon = 1e-6);
    }

    #[test]
    fn zero_noise_is_degenerate() {
        let p = BandwidthProblem { sigma_sq: 0.0, ..problem(0.8, 0.5, 2601) };
        let c = optimal_bandwidths(&p).unwrap();
        assert!(c.degenerate);
        assert_eq!((c.h1, c.h2), (2.0 / 51.0, 2.0 / 51.0));
        assert!(optimal_bandwidths(&BandwidthProblem { l1: 0.0, ..problem(0.8, 0.5, 2601) }).is_err());
    }

    #[test]
    fn bandwidth_local_min_certificate() {
        for (h1, h2, m0) in [(0.8, 0.5, 10201), (0.5, 0.5, 2601), (0.9, 0.2, 40401)] {
            let p = problem(h1, h2, m0);
            let c = optimal_bandwidths(&p).unwrap();
            let (lo, hi) = p.range();
            let step = ((hi / lo).ln() / (SEARCH_GRID - 1) as f64).exp();
            let best = p.objective(c.h1, c.h2);
            for (f1, f2) in [(step, 1.0), (1.0 / step, 1.0), (1.0, step), (1.0, 1.0 / step), (step, step), (1.0 / step, 1.0 / step)] {
                let (a, b) = ((c.h1 * f1).clamp(lo, hi), (c.h2 * f2).clamp(lo, hi));
                assert!(best <= p.objective(a, b) + 1e-15);
            }
            assert!((m0 as f64).sqrt() * c.h1.min(c.h2) >= 1.0);
        }
    }

    #[test]
    fn rate_rule_follows_exponents() {
        let (h1, h2) = rate_bandwidths(0.8, 0.5, 10201);
        assert_abs_diff_eq!(h1, 10201f64.powf(-0.5 / 2.1), epsilon = 1e-15);
        assert_abs_diff_eq!(h2, 10201f64.powf(-0.8 / 2.1), epsilon = 1e-15);
        // a very rough pair is clipped to the box
        let (a, b) = rate_bandwidths(0.01, 0.01, 10201);
        assert!(a <= BANDWIDTH_HIGH && b <= BANDWIDTH_HIGH);
        let (a, b) = rate_bandwidths(1.0, 1.0, 10201);
        assert!(a >= 2.0 / 101.0 && b >= 2.0 / 101.0);
    }

    #[test]
    fn plans_from_data() {
        use crate::aniso::{simulate_anisotropic_dataset, AnisoSimConfig};
        let ds = simulate_anisotropic_dataset(&AnisoSimConfig::fbm_sum(1.0, 0.8, 0.5, 20, 31, 0.1, 3)).unwrap();
        let vg = DatasetVariograms::new(&ds).unwrap();
        for rule in [BandwidthRule::Rate, BandwidthRule::Objective] {
            let a = plan_anisotropic(&vg, 1.0, None, rule).unwrap();
            let i = plan_isotropic(&vg, None, rule).unwrap();
            assert_eq!(a.h_pair_source, HPairSource::PlugInAniso);
            assert_eq!(i.alpha.alpha, 0.0);
            assert_eq!(i.h1_reg, i.h2_reg);
            for p in [a, i] {
                assert!(p.h1 > 0.0 && p.h1 < 1.0 && p.h2 > 0.0 && p.h2 < 1.0);
                assert!((31.0 * p.h1.min(p.h2)) >= 1.0);
                assert!((L_MIN..=L_MAX).contains(&p.l1_hat) && (L_MIN..=L_MAX).contains(&p.l2_hat));
            }
        }
    }

    #[test]
    fn nw_single_observation_and_empty_support() {
        let plan = SmootherPlan::manual(0.3, 0.1, 0.1).unwrap();
        let obs = [Point2::new(0.5, 0.5)];
        let out = nw_smooth_scattered(&plan, &obs, &[3.5], &[Point2::new(0.52, 0.49), Point2::new(0.9, 0.9)]).unwrap();
        assert_eq!(out, vec![3.5, 0.0]);
        let w = nw_weights(&plan, &obs, Point2::new(0.9, 0.9));
        assert_eq!(w, vec![0.0]);
    }

    #[test]
    fn nw_constant_surface() {
        let grid = build_grid(31).unwrap();
        let s = Surface::from_fn(grid, |_| 2.25);
        for alpha in [0.0, 0.7, 2.0] {
            let plan = SmootherPlan::manual(alpha, 0.12, 0.05).unwrap();
            let eval: Vec<Point2> = grid.points().collect();
            for v in nw_smooth(&plan, &s, &eval) {
                assert_abs_diff_eq!(v, 2.25, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn grid_smoother_matches_full_scan() {
        let grid = build_grid(25).unwrap();
        let s = Surface::from_fn(grid, |p| (7.0 * p.t1).sin() + p.t2 * p.t2);
        let obs: Vec<Point2> = grid.points().collect();
        let eval = vec![Point2::new(0.5, 0.5), Point2::new(0.04, 0.96), Point2::new(0.33, 0.71), Point2::new(1.0, 1.0)];
        for alpha in [0.0, 0.5, 1.3, 2.9] {
            let plan = SmootherPlan::manual(alpha, 0.2, 0.07).unwrap();
            let a = nw_smooth(&plan, &s, &eval);
            let b = nw_smooth_scattered(&plan, &obs, &s.values, &eval).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn risk_values() {
        assert_eq!(empirical_risk(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(empirical_risk(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!(empirical_risk(&[0.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn discretize_picks_nearest() {
        let fine = Surface::from_fn(build_grid(201).unwrap(), |p| p.t1 * 1000.0 + p.t2);
        let coarse = build_grid(101).unwrap();
        let d = discretize_nearest(&fine, coarse);
        for (m, p) in coarse.points().enumerate() {
            assert_eq!(d.values[m], fine.at(p));
        }
    }

    fn arb_points() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
        prop::collection::vec((0.0..1.0f64, 0.0..1.0f64, -5.0..5.0f64), 1..40)
    }

    proptest! {
        #[test]
        fn rotation_round_trip(alpha in -7.0..7.0f64, x in -3.0..3.0f64, y in -3.0..3.0f64) {
            let r = RotationAngle::new(alpha);
            let p = Point2::new(x, y);
            let back = r.apply_inverse(r.apply(p));
            prop_assert!((back.t1 - x).abs() < 1e-12 && (back.t2 - y).abs() < 1e-12);
            let q = r.apply(p);
            prop_assert!((q.t1 * q.t1 + q.t2 * q.t2 - x * x - y * y).abs() < 1e-12);
        }

        #[test]
        fn weights_sum_to_one(pts in arb_points(), alpha in 0.0..PI, h1 in 0.05..0.6f64, h2 in 0.05..0.6f64, tx in 0.0..1.0f64, ty in 0.0..1.0f64) {
            let plan = SmootherPlan::manual(alpha, h1, h2).unwrap();
            let obs: Vec<Point2> = pts.iter().map(|p| Point2::new(p.0, p.1)).collect();
            let w = nw_weights(&plan, &obs, Point2::new(tx, ty));
            let total: f64 = w.iter().sum();
            prop_assert!(total == 0.0 || (total - 1.0).abs() < 1e-12);
            prop_assert!(w.iter().all(|x| *x >= 0.0));
        }

        #[test]
        fn permutation_invariance(pts in arb_points(), alpha in 0.0..PI, seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let plan = SmootherPlan::manual(alpha, 0.3, 0.15).unwrap();
            let obs: Vec<Point2> = pts.iter().map(|p| Point2::new(p.0, p.1)).collect();
            let vals: Vec<f64> = pts.iter().map(|p| p.2).collect();
            let mut order: Vec<usize> = (0..obs.len()).collect();
            order.shuffle(&mut crate::rng::stream(seed));
            let obs2: Vec<Point2> = order.iter().map(|&i| obs[i]).collect();
            let vals2: Vec<f64> = order.iter().map(|&i| vals[i]).collect();
            let eval = [Point2::new(0.5, 0.5), Point2::new(0.2, 0.8)];
            let a = nw_smooth_scattered(&plan, &obs, &vals, &eval).unwrap();
            let b = nw_smooth_scattered(&plan, &obs2, &vals2, &eval).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }

        #[test]
        fn rotation_equivariance(pts in arb_points(), alpha in 0.0..PI, tx in 0.2..0.8f64, ty in 0.2..0.8f64) {
            let rot = RotationAngle::new(alpha);
            let obs: Vec<Point2> = pts.iter().map(|p| Point2::new(p.0, p.1)).collect();
            let vals: Vec<f64> = pts.iter().map(|p| p.2).collect();
            let t = Point2::new(tx, ty);
            let direct = nw_smooth_scattered(&SmootherPlan::manual(alpha, 0.35, 0.2).unwrap(), &obs, &vals, &[t]).unwrap();
            let rotated = rotate_points(rot, &obs, false);
            let via = nw_smooth_scattered(&SmootherPlan::manual(0.0, 0.35, 0.2).unwrap(), &rotated, &vals, &[rot.apply(t)]).unwrap();
            prop_assert!((direct[0] - via[0]).abs() < 1e-10, "{} vs {}", direct[0], via[0]);
        }
    }
}
