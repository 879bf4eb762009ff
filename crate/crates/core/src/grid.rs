//! Regular-grid bivariate functional data.
//!
//! A grid of side `n` holds the `n²` points `(p/n, q/n)` for `1 <= p, q <= n`,
//! stored in lexicographic order of `(t1, t2)`: index `(p - 1) * n + (q - 1)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{DiregError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub t1: f64,
    pub t2: f64,
}

impl Point2 {
    pub const fn new(t1: f64, t2: f64) -> Self {
        Self { t1, t2 }
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.t1 * other.t1 + self.t2 * other.t2
    }

    pub fn scaled_add(self, scale: f64, dir: Point2) -> Point2 {
        Point2::new(self.t1 + scale * dir.t1, self.t2 + scale * dir.t2)
    }

    pub fn dist_sq(self, other: Point2) -> f64 {
        let (a, b) = (self.t1 - other.t1, self.t2 - other.t2);
        a * a + b * b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegularGrid {
    side_count: usize,
}

impl RegularGrid {
    pub fn new(side_count: usize) -> Result<Self> {
        build_grid(side_count)
    }

    pub fn side_count(&self) -> usize {
        self.side_count
    }

    /// Number of design points, `M₀ = side_count²`.
    pub fn len(&self) -> usize {
        self.side_count * self.side_count
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.side_count as f64
    }

    /// Index of the point `(p/n, q/n)`, with `p, q` one-based.
    pub fn index_of(&self, p: usize, q: usize) -> usize {
        debug_assert!((1..=self.side_count).contains(&p) && (1..=self.side_count).contains(&q));
        (p - 1) * self.side_count + (q - 1)
    }

    /// One-based `(p, q)` of a grid index.
    pub fn coords_of(&self, index: usize) -> (usize, usize) {
        (index / self.side_count + 1, index % self.side_count + 1)
    }

    pub fn point(&self, index: usize) -> Point2 {
        let (p, q) = self.coords_of(index);
        let n = self.side_count as f64;
        Point2::new(p as f64 / n, q as f64 / n)
    }

    pub fn points(&self) -> impl Iterator<Item = Point2> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }

    /// Nearest one-based coordinate along one axis. Exact ties go to the
    /// smaller coordinate, which is the lexicographic tie-break of the full
    /// grid since squared distance separates across axes.
    fn nearest_axis(&self, x: f64) -> usize {
        let n = self.side_count as f64;
        let k = (x * n - 0.5).ceil();
        k.clamp(1.0, n) as usize
    }

    /// Index of the grid point closest to `q` in Euclidean distance.
    pub fn nearest_index(&self, q: Point2) -> usize {
        self.index_of(self.nearest_axis(q.t1), self.nearest_axis(q.t2))
    }

    /// Closest grid point distinct from `index`, ties broken lexicographically.
    pub fn nearest_distinct(&self, index: usize) -> usize {
        let (p, q) = self.coords_of(index);
        let n = self.side_count;
        // The four axis neighbours are all at distance `spacing`; listed in
        // lexicographic order.
        if p > 1 {
            self.index_of(p - 1, q)
        } else if q > 1 {
            self.index_of(p, q - 1)
        } else if q < n {
            self.index_of(p, q + 1)
        } else {
            self.index_of(p + 1, q)
        }
    }
}

/// Builds the `side_count × side_count` design grid.
pub fn build_grid(side_count: usize) -> Result<RegularGrid> {
    if side_count < 2 {
        return Err(DiregError::invalid(format!(
            "grid side_count must be >= 2, got {side_count}"
        )));
    }
    Ok(RegularGrid { side_count })
}

/// One realization observed on the design grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    pub grid: RegularGrid,
    pub values: Vec<f64>,
}

impl Surface {
    pub fn new(grid: RegularGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(DiregError::invalid(format!(
                "surface has {} values, grid expects {}",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(DiregError::invalid(format!("non-finite surface value at index {i}")));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: RegularGrid, f: impl Fn(Point2) -> f64) -> Self {
        let values = grid.points().map(f).collect();
        Self { grid, values }
    }

    pub fn at(&self, q: Point2) -> f64 {
        self.values[self.grid.nearest_index(q)]
    }
}

/// Provenance of a dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: Option<u64>,
    #[serde(default)]
    pub generator: serde_json::Value,
}

/// `N` noisy surfaces sharing one design grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalDataset {
    pub grid: RegularGrid,
    pub surfaces: Vec<Surface>,
    pub noise_sd: f64,
    pub meta: DatasetMeta,
}

impl FunctionalDataset {
    pub fn new(grid: RegularGrid, surfaces: Vec<Surface>, noise_sd: f64, meta: DatasetMeta) -> Result<Self> {
        if surfaces.is_empty() {
            return Err(DiregError::invalid("dataset needs at least one surface"));
        }
        if surfaces.iter().any(|s| s.grid != grid) {
            return Err(DiregError::invalid("all surfaces must share the dataset grid"));
        }
        if !(noise_sd >= 0.0) {
            return Err(DiregError::invalid(format!("noise_sd must be >= 0, got {noise_sd}")));
        }
        Ok(Self {
            grid,
            surfaces,
            noise_sd,
            meta,
        })
    }

    pub fn n_surfaces(&self) -> usize {
        self.surfaces.len()
    }

    pub fn m0(&self) -> usize {
        self.grid.len()
    }
}

/// Adds i.i.d. `N(0, sd²)` noise to every observation.
pub fn add_noise<R: Rng + ?Sized>(dataset: &FunctionalDataset, sd: f64, rng: &mut R) -> Result<FunctionalDataset> {
    if !(sd >= 0.0) {
        return Err(DiregError::invalid(format!("noise sd must be >= 0, got {sd}")));
    }
    let mut out = dataset.clone();
    if sd > 0.0 {
        for surface in &mut out.surfaces {
            add_noise_in_place(&mut surface.values, sd, rng);
        }
    }
    out.noise_sd = sd;
    Ok(out)
}

pub(crate) fn add_noise_in_place<R: Rng + ?Sized>(values: &mut [f64], sd: f64, rng: &mut R) {
    for v in values {
        let e: f64 = rng.sample(StandardNormal);
        *v += sd * e;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn side_two_points() {
        let g = build_grid(2).unwrap();
        let pts: Vec<_> = g.points().map(|p| (p.t1, p.t2)).collect();
        assert_eq!(pts, vec![(0.5, 0.5), (0.5, 1.0), (1.0, 0.5), (1.0, 1.0)]);
    }

    #[test]
    fn study_grid_sizes() {
        assert_eq!(build_grid(51).unwrap().len(), 2601);
        let g = build_grid(101).unwrap();
        assert_eq!(g.len(), 10201);
        assert_eq!(g.spacing(), 1.0 / 101.0);
    }

    #[test]
    fn rejects_small_side() {
        assert!(matches!(build_grid(1), Err(DiregError::InvalidArgument(_))));
        assert!(build_grid(0).is_err());
    }

    #[test]
    fn nearest_exact_and_ties() {
        let g = build_grid(2).unwrap();
        for i in 0..g.len() {
            assert_eq!(g.nearest_index(g.point(i)), i);
        }
        assert_eq!(g.nearest_index(Point2::new(0.75, 0.75)), 0);
    }

    fn brute_nearest(g: &RegularGrid, q: Point2) -> usize {
        // Strict `<` keeps the first (lexicographically smallest) minimiser.
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in g.points().enumerate() {
            let d = p.dist_sq(q);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    #[test]
    fn nearest_outside_clamps() {
        let g = build_grid(2).unwrap();
        let q = Point2::new(-0.3, 0.5);
        let idx = g.nearest_index(q);
        assert_eq!(idx, brute_nearest(&g, q));
        assert_eq!(g.point(idx), Point2::new(0.5, 0.5));
    }

    #[test]
    fn nearest_distinct_order() {
        let g = build_grid(3).unwrap();
        assert_eq!(g.coords_of(g.nearest_distinct(g.index_of(1, 1))), (1, 2));
        assert_eq!(g.coords_of(g.nearest_distinct(g.index_of(1, 3))), (1, 2));
        assert_eq!(g.coords_of(g.nearest_distinct(g.index_of(2, 2))), (1, 2));
        assert_eq!(g.coords_of(g.nearest_distinct(g.index_of(3, 1))), (2, 1));
    }

    #[test]
    fn noise_zero_is_identity_and_seeded() {
        let g = build_grid(5).unwrap();
        let s = Surface::from_fn(g, |p| p.t1 * p.t2);
        let ds = FunctionalDataset::new(g, vec![s.clone(), s], 0.0, DatasetMeta::default()).unwrap();
        let same = add_noise(&ds, 0.0, &mut rng::stream(1)).unwrap();
        assert_eq!(same.surfaces, ds.surfaces);

        let a = add_noise(&ds, 0.1, &mut rng::stream(9)).unwrap();
        let b = add_noise(&ds, 0.1, &mut rng::stream(9)).unwrap();
        let c = add_noise(&ds, 0.1, &mut rng::stream(10)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.surfaces, c.surfaces);
        assert_eq!(a.noise_sd, 0.1);
        assert!(add_noise(&ds, -1.0, &mut rng::stream(1)).is_err());
    }

    #[test]
    fn noise_variance_matches() {
        let g = build_grid(20).unwrap();
        let zero = Surface::from_fn(g, |_| 0.0);
        let ds = FunctionalDataset::new(g, vec![zero; 100], 0.0, DatasetMeta::default()).unwrap();
        let noisy = add_noise(&ds, 0.5, &mut rng::stream(3)).unwrap();
        let all: Vec<f64> = noisy.surfaces.iter().flat_map(|s| s.values.iter().copied()).collect();
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (all.len() - 1) as f64;
        assert!((var - 0.25).abs() < 0.05 * 0.25, "var {var}");
    }

    #[test]
    fn dataset_validation() {
        let g = build_grid(3).unwrap();
        let h = build_grid(4).unwrap();
        assert!(FunctionalDataset::new(g, vec![], 0.0, DatasetMeta::default()).is_err());
        let mixed = vec![Surface::from_fn(g, |_| 0.0), Surface::from_fn(h, |_| 0.0)];
        assert!(FunctionalDataset::new(g, mixed, 0.0, DatasetMeta::default()).is_err());
        assert!(Surface::new(g, vec![0.0; 8]).is_err());
        assert!(Surface::new(g, vec![f64::NAN; 9]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn nearest_matches_brute_force(side in 2usize..9, x in -0.5f64..1.5, y in -0.5f64..1.5) {
                let g = build_grid(side).unwrap();
                let q = Point2::new(x, y);
                prop_assert_eq!(g.nearest_index(q), brute_nearest(&g, q));
            }

            #[test]
            fn interior_distance_bound(side in 2usize..60, x in 0.0f64..1.0, y in 0.0f64..1.0) {
                let g = build_grid(side).unwrap();
                let s = g.spacing();
                // restrict to the hull of the grid points
                let q = Point2::new(s + x * (1.0 - s), s + y * (1.0 - s));
                let d = g.point(g.nearest_index(q)).dist_sq(q).sqrt();
                prop_assert!(d <= std::f64::consts::SQRT_2 / 2.0 * s + 1e-12);
            }

            #[test]
            fn nearest_is_idempotent(side in 2usize..30, i in 0usize..900) {
                let g = build_grid(side).unwrap();
                let i = i % g.len();
                let j = g.nearest_index(g.point(i));
                prop_assert_eq!(j, i);
                prop_assert_eq!(g.nearest_index(g.point(j)), j);
            }
        }
    }
}
