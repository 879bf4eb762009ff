//! Anisotropic surfaces `X(v) = f(B₁(⟨v,u₁⟩), B₂(⟨v,u₂⟩))` on a rotated basis.
//!
//! `u₁ = (cos α, sin α)` carries the regularity `h1` and `u₂ = (-sin α, cos α)`
//! carries `h2`. For α in `[0, π]` the projections onto either axis stay within
//! `[-(|cos α| + sin α), |cos α| + sin α]`, so each 1-D path is simulated on
//! `[0, |cos α| + sin α]` and negative abscissae are filled by the
//! stationary-increment reflection `B(-s) = -B(s)`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DiregError, Result};
use crate::fbm::{Path1D, PathKind, PathSampler, PathSpec};
use crate::grid::{add_noise_in_place, build_grid, DatasetMeta, FunctionalDataset, Point2, RegularGrid, Surface};
use crate::rng::{self, stage};

/// Oversampling of each 1-D path relative to the grid side.
pub const PATH_OVERSAMPLING: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Composition {
    #[default]
    Sum,
    Product,
}

impl Composition {
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            Composition::Sum => a + b,
            Composition::Product => a * b,
        }
    }
}

fn default_kind() -> PathKind {
    PathKind::Fbm
}

fn default_fou_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnisoSimConfig {
    /// Angle of the direction carrying `h1`, in `[0, 2π)`.
    pub alpha: f64,
    pub h1: f64,
    pub h2: f64,
    #[serde(default)]
    pub composition: Composition,
    #[serde(default = "default_kind")]
    pub process_kind: PathKind,
    pub n_surfaces: usize,
    pub side_count: usize,
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default)]
    pub seed: u64,
    /// fOU scale `a`; ignored for fBm.
    #[serde(default = "default_fou_scale")]
    pub fou_scale: f64,
}

impl AnisoSimConfig {
    /// Sum of two fBms, the main simulation model.
    pub fn fbm_sum(alpha: f64, h1: f64, h2: f64, n_surfaces: usize, side_count: usize, noise_sd: f64, seed: u64) -> Self {
        Self {
            alpha,
            h1,
            h2,
            composition: Composition::Sum,
            process_kind: PathKind::Fbm,
            n_surfaces,
            side_count,
            noise_sd,
            seed,
            fou_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..2.0 * PI).contains(&self.alpha) {
            return Err(DiregError::invalid(format!("alpha must lie in [0, 2π), got {}", self.alpha)));
        }
        for (name, h) in [("h1", self.h1), ("h2", self.h2)] {
            if !(h > 0.0 && h < 1.0) {
                return Err(DiregError::invalid(format!("{name} must lie in (0,1), got {h}")));
            }
        }
        if self.n_surfaces == 0 {
            return Err(DiregError::invalid("n_surfaces must be positive"));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(DiregError::invalid(format!("noise_sd must be >= 0, got {}", self.noise_sd)));
        }
        build_grid(self.side_count)?;
        Ok(())
    }

    /// α folded into `[0, π]`.
    pub fn reduced_alpha(&self) -> f64 {
        if self.alpha > PI {
            self.alpha - PI
        } else {
            self.alpha
        }
    }
}

/// Signed nearest-abscissa lookup into a path simulated on `[0, extent]`.
struct AxisPath {
    values: Vec<f64>,
    step: f64,
    /// fBm paths are reflected; stationary paths are shifted by `offset`.
    reflect: bool,
    offset: f64,
}

impl AxisPath {
    fn index(&self, x: f64) -> usize {
        let k = (x / self.step - 0.5).ceil().max(0.0) as usize;
        k.min(self.values.len() - 1)
    }

    fn at(&self, s: f64) -> f64 {
        if self.reflect {
            if s >= 0.0 {
                self.values[self.index(s)]
            } else {
                -self.values[self.index(-s)]
            }
        } else {
            self.values[self.index(s + self.offset)]
        }
    }
}

struct Simulator {
    grid: RegularGrid,
    u1: Point2,
    u2: Point2,
    extent: f64,
    samplers: [PathSampler; 2],
    kind: PathKind,
}

impl Simulator {
    fn new(cfg: &AnisoSimConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = build_grid(cfg.side_count)?;
        let alpha = cfg.reduced_alpha();
        let (s, c) = alpha.sin_cos();
        let extent = c.abs() + s;
        let n_points = PATH_OVERSAMPLING * cfg.side_count;
        let spec = |h: f64| match cfg.process_kind {
            PathKind::Fbm => PathSpec::fbm(h, n_points, extent),
            // stationary: simulate on [0, 2·extent] and shift by `extent`
            PathKind::Fou => PathSpec::fou(2.0 * h, cfg.fou_scale, 2 * n_points, 2.0 * extent),
        };
        Ok(Self {
            grid,
            u1: Point2::new(c, s),
            u2: Point2::new(-s, c),
            extent,
            samplers: [PathSampler::new(spec(cfg.h1))?, PathSampler::new(spec(cfg.h2))?],
            kind: cfg.process_kind,
        })
    }

    fn axis(&self, path: Path1D, step: f64) -> AxisPath {
        match self.kind {
            PathKind::Fbm => AxisPath {
                values: path.values,
                step,
                reflect: true,
                offset: 0.0,
            },
            PathKind::Fou => AxisPath {
                values: path.values,
                step,
                reflect: false,
                offset: self.extent,
            },
        }
    }

    /// Noiseless `(B₁(⟨v,u₁⟩), B₂(⟨v,u₂⟩))` fields of surface `index`.
    fn components(&self, seed: u64, index: usize) -> (Vec<f64>, Vec<f64>) {
        let surface_seed = rng::derive_seed(seed, &[stage::SURFACE, index as u64]);
        let paths: Vec<AxisPath> = self
            .samplers
            .iter()
            .enumerate()
            .map(|(k, sampler)| {
                let mut stream = rng::derived_stream(surface_seed, &[stage::PATH, k as u64 + 1]);
                self.axis(sampler.sample(&mut stream), sampler.spec().step())
            })
            .collect();
        let mut c1 = Vec::with_capacity(self.grid.len());
        let mut c2 = Vec::with_capacity(self.grid.len());
        for v in self.grid.points() {
            c1.push(paths[0].at(v.dot(self.u1)));
            c2.push(paths[1].at(v.dot(self.u2)));
        }
        (c1, c2)
    }
}

fn generator_meta(cfg: &AnisoSimConfig) -> DatasetMeta {
    DatasetMeta {
        seed: Some(cfg.seed),
        generator: serde_json::to_value(cfg).unwrap_or(serde_json::Value::Null),
    }
}

/// Simulates `cfg.n_surfaces` noisy anisotropic surfaces. Deterministic in `cfg`.
pub fn simulate_anisotropic_dataset(cfg: &AnisoSimConfig) -> Result<FunctionalDataset> {
    let sim = Simulator::new(cfg)?;
    let surfaces: Vec<Surface> = (0..cfg.n_surfaces)
        .into_par_iter()
        .map(|i| {
            let (c1, c2) = sim.components(cfg.seed, i);
            let mut values: Vec<f64> = c1.iter().zip(&c2).map(|(&a, &b)| cfg.composition.apply(a, b)).collect();
            if cfg.noise_sd > 0.0 {
                let surface_seed = rng::derive_seed(cfg.seed, &[stage::SURFACE, i as u64]);
                let mut noise = rng::derived_stream(surface_seed, &[stage::NOISE]);
                add_noise_in_place(&mut values, cfg.noise_sd, &mut noise);
            }
            Surface {
                grid: sim.grid,
                values,
            }
        })
        .collect();
    FunctionalDataset::new(sim.grid, surfaces, cfg.noise_sd, generator_meta(cfg))
}

/// The two noiseless component fields of every surface, for paired checks
/// between compositions.
pub fn simulate_components(cfg: &AnisoSimConfig) -> Result<Vec<(Surface, Surface)>> {
    let sim = Simulator::new(cfg)?;
    Ok((0..cfg.n_surfaces)
        .into_par_iter()
        .map(|i| {
            let (c1, c2) = sim.components(cfg.seed, i);
            (
                Surface {
                    grid: sim.grid,
                    values: c1,
                },
                Surface {
                    grid: sim.grid,
                    values: c2,
                },
            )
        })
        .collect())
}
