//! Procedural lunar terrain: nine patch categories scaled by a difficulty
//! level, assembled into a 10 x 20 curriculum grid.

mod curriculum;
mod heightfield;
mod perlin;

pub use curriculum::{build_curriculum, uniform_proportions, CurriculumGrid, CURRICULUM_COLS, CURRICULUM_ROWS};
pub use heightfield::{Heightfield, HEADER_LEN, MAGIC};
pub use perlin::{Fbm, FbmParams, Perlin};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Edge length of one square sub-terrain patch, meters.
pub const PATCH_SIZE: f64 = 8.0;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum TerrainError {
    #[error("invalid resolution {width}x{height}: at least 2x2 nodes required")]
    InvalidResolution { width: usize, height: usize },
    #[error("cell size must be positive and finite, got {0}")]
    InvalidCellSize(f64),
    #[error("heights array has {actual} entries, expected {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("query ({x}, {y}) lies outside the heightfield")]
    OutOfBounds { x: f64, y: f64 },
    #[error("category proportions sum to {0}, expected 1")]
    ProportionSum(f64),
    #[error("invalid proportion for {0}")]
    InvalidProportion(TerrainCategory),
    #[error("unknown terrain category {0:?}")]
    UnknownCategory(String),
    #[error("heightfield decode failed: {0}")]
    Decode(&'static str),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerrainCategory {
    PureFlat,
    Flat,
    PerlinFlat,
    SmoothSlope,
    RoughSlope,
    PerlinSlope,
    DiscreteObstacles,
    Crater,
    PerlinCrater,
}

impl TerrainCategory {
    pub const ALL: [TerrainCategory; 9] = [
        TerrainCategory::PureFlat,
        TerrainCategory::Flat,
        TerrainCategory::PerlinFlat,
        TerrainCategory::SmoothSlope,
        TerrainCategory::RoughSlope,
        TerrainCategory::PerlinSlope,
        TerrainCategory::DiscreteObstacles,
        TerrainCategory::Crater,
        TerrainCategory::PerlinCrater,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TerrainCategory::PureFlat => "pure_flat",
            TerrainCategory::Flat => "flat",
            TerrainCategory::PerlinFlat => "perlin_flat",
            TerrainCategory::SmoothSlope => "smooth_slope",
            TerrainCategory::RoughSlope => "rough_slope",
            TerrainCategory::PerlinSlope => "perlin_slope",
            TerrainCategory::DiscreteObstacles => "discrete_obstacles",
            TerrainCategory::Crater => "crater",
            TerrainCategory::PerlinCrater => "perlin_crater",
        }
    }

    pub fn has_fbm(self) -> bool {
        matches!(
            self,
            TerrainCategory::PerlinFlat | TerrainCategory::PerlinSlope | TerrainCategory::PerlinCrater
        )
    }

    pub fn has_slope(self) -> bool {
        matches!(
            self,
            TerrainCategory::SmoothSlope | TerrainCategory::RoughSlope | TerrainCategory::PerlinSlope
        )
    }

    pub fn has_crater(self) -> bool {
        matches!(self, TerrainCategory::Crater | TerrainCategory::PerlinCrater)
    }

    fn has_uniform_noise(self) -> bool {
        matches!(self, TerrainCategory::Flat | TerrainCategory::RoughSlope)
    }
}

impl fmt::Display for TerrainCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TerrainCategory {
    type Err = TerrainError;

    /// Accepts `snake_case`, `kebab-case` and `CamelCase` spellings.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| *c != '_' && *c != '-' && *c != ' ')
            .flat_map(char::to_lowercase)
            .collect();
        TerrainCategory::ALL
            .into_iter()
            .find(|c| c.name().replace('_', "") == key)
            .ok_or_else(|| TerrainError::UnknownCategory(s.to_string()))
    }
}

/// Generation parameters of one patch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerrainSpec {
    pub category: TerrainCategory,
    difficulty: f64,
    pub seed: u64,
    /// Roughness amplitude at full difficulty, meters. The effective fBm
    /// amplitude is `difficulty * z_scale`.
    pub z_scale: f64,
}

impl TerrainSpec {
    pub const DEFAULT_Z_SCALE: f64 = 0.08;

    pub fn new(category: TerrainCategory, difficulty: f64, seed: u64) -> Self {
        Self {
            category,
            difficulty: clamp_difficulty(difficulty),
            seed,
            z_scale: Self::DEFAULT_Z_SCALE,
        }
    }

    pub fn with_z_scale(mut self, z_scale: f64) -> Self {
        self.z_scale = z_scale;
        self
    }

    pub fn difficulty(&self) -> f64 {
        self.difficulty
    }

    pub fn roughness_amplitude(&self) -> f64 {
        self.difficulty * self.z_scale
    }
}

fn clamp_difficulty(d: f64) -> f64 {
    if d.is_nan() {
        0.0
    } else {
        d.clamp(0.0, 1.0)
    }
}

/// Geometry laws that map difficulty onto terrain features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerrainParams {
    pub cell_size: f64,
    pub max_slope_deg: f64,
    /// Width of the rounded crest and valley of slope ridges, meters.
    pub slope_rounding: f64,
    pub crater_depth_max: f64,
    pub crater_radius_min: f64,
    pub crater_radius_max: f64,
    pub obstacle_height_max: f64,
    pub obstacle_count_max: u32,
    pub obstacle_size: (f64, f64),
    /// Amplitude at `d = 1` of the uniform lattice noise used by Flat and RoughSlope.
    pub uniform_noise_max: f64,
    pub uniform_noise_spacing: f64,
    pub fbm: FbmParams,
}

impl Default for TerrainParams {
    fn default() -> Self {
        Self {
            cell_size: 0.05,
            max_slope_deg: 20.0,
            slope_rounding: 1.0,
            crater_depth_max: 0.8,
            crater_radius_min: 1.5,
            crater_radius_max: 2.5,
            obstacle_height_max: 0.15,
            obstacle_count_max: 40,
            obstacle_size: (0.4, 1.0),
            uniform_noise_max: 0.03,
            uniform_noise_spacing: 0.1,
            fbm: FbmParams::default(),
        }
    }
}

impl TerrainParams {
    pub fn slope_angle(&self, d: f64) -> f64 {
        clamp_difficulty(d) * self.max_slope_deg.to_radians()
    }

    pub fn crater_depth(&self, d: f64) -> f64 {
        clamp_difficulty(d) * self.crater_depth_max
    }

    pub fn crater_radius(&self, d: f64) -> f64 {
        self.crater_radius_min + clamp_difficulty(d) * (self.crater_radius_max - self.crater_radius_min)
    }

    pub fn obstacle_height(&self, d: f64) -> f64 {
        clamp_difficulty(d) * self.obstacle_height_max
    }

    pub fn obstacle_count(&self, d: f64) -> usize {
        (clamp_difficulty(d) * self.obstacle_count_max as f64).round() as usize
    }
}

#[derive(Debug, Clone, Copy)]
struct Obstacle {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    height: f64,
}

/// Precomputed height function for one [`TerrainSpec`].
///
/// Patch features (slope ridges, craters, obstacles) repeat every
/// [`PATCH_SIZE`] meters along both axes; noise layers are evaluated in
/// world coordinates so tiled patches join continuously.
#[derive(Debug, Clone)]
pub struct TerrainGenerator {
    spec: TerrainSpec,
    params: TerrainParams,
    fbm: Fbm,
    lattice: Perlin,
    obstacles: Vec<Obstacle>,
}

impl TerrainGenerator {
    pub fn new(spec: TerrainSpec, params: TerrainParams) -> Self {
        let d = spec.difficulty;
        let obstacles = if spec.category == TerrainCategory::DiscreteObstacles {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x0b57_ac1e);
            // Draw the full budget so lower difficulties see a prefix of the
            // same obstacle list.
            let all: Vec<Obstacle> = (0..params.obstacle_count_max)
                .map(|_| {
                    let cx = rng.random_range(0.0..PATCH_SIZE);
                    let cy = rng.random_range(0.0..PATCH_SIZE);
                    let (lo, hi) = params.obstacle_size;
                    let sx = rng.random_range(lo..=hi);
                    let sy = rng.random_range(lo..=hi);
                    let unit_h: f64 = rng.random_range(0.0..=1.0);
                    Obstacle {
                        x0: cx - sx / 2.0,
                        y0: cy - sy / 2.0,
                        x1: cx + sx / 2.0,
                        y1: cy + sy / 2.0,
                        height: unit_h * params.obstacle_height(d),
                    }
                })
                .collect();
            all.into_iter().take(params.obstacle_count(d)).collect()
        } else {
            Vec::new()
        };
        Self {
            spec,
            params,
            fbm: Fbm::new(spec.seed, params.fbm),
            lattice: Perlin::new(spec.seed.rotate_left(17) ^ 0x5eed),
            obstacles,
        }
    }

    pub fn spec(&self) -> &TerrainSpec {
        &self.spec
    }

    pub fn params(&self) -> &TerrainParams {
        &self.params
    }

    pub fn fbm(&self, x: f64, y: f64) -> f64 {
        self.fbm.sample(x, y, self.spec.roughness_amplitude())
    }

    /// Radially symmetric Gaussian-exponential depression about the patch center.
    pub fn crater(&self, x: f64, y: f64) -> f64 {
        let d = self.spec.difficulty;
        let depth = self.params.crater_depth(d);
        if depth == 0.0 {
            return 0.0;
        }
        let (u, v) = patch_local(x, y);
        let c = PATCH_SIZE / 2.0;
        let r2 = (u - c).powi(2) + (v - c).powi(2);
        let radius = self.params.crater_radius(d);
        -depth * (-r2 / (radius * radius)).exp()
    }

    /// Periodic ridge along x: rises at `slope_angle(d)` to the patch center
    /// and falls back, with parabolic rounding at crest and valley.
    pub fn slope(&self, x: f64) -> f64 {
        let tan = self.params.slope_angle(self.spec.difficulty).tan();
        if tan == 0.0 {
            return 0.0;
        }
        let half = PATCH_SIZE / 2.0;
        let w = self.params.slope_rounding.clamp(0.0, half);
        let (u, _) = patch_local(x, 0.0);
        let dist_from_crest = (u - half).abs();
        let rise = if w == 0.0 {
            half - dist_from_crest
        } else if dist_from_crest < w / 2.0 {
            half - w / 4.0 - dist_from_crest * dist_from_crest / w
        } else if dist_from_crest > half - w / 2.0 {
            let v = half - dist_from_crest;
            w / 4.0 + v * v / w
        } else {
            half - dist_from_crest
        };
        let base = if w == 0.0 { 0.0 } else { w / 4.0 };
        tan * (rise - base)
    }

    fn uniform_noise(&self, x: f64, y: f64) -> f64 {
        let amp = self.spec.difficulty * self.params.uniform_noise_max;
        if amp == 0.0 {
            return 0.0;
        }
        let s = self.params.uniform_noise_spacing;
        let (gx, gy) = (x / s, y / s);
        let (ix, iy) = (gx.floor(), gy.floor());
        let (fx, fy) = (gx - ix, gy - iy);
        let value = |i: f64, j: f64| lattice_value(&self.lattice, i as i64, j as i64);
        let a = value(ix, iy) + (value(ix + 1.0, iy) - value(ix, iy)) * fx;
        let b = value(ix, iy + 1.0) + (value(ix + 1.0, iy + 1.0) - value(ix, iy + 1.0)) * fx;
        amp * (a + (b - a) * fy)
    }

    fn obstacle(&self, x: f64, y: f64) -> f64 {
        let (u, v) = patch_local(x, y);
        self.obstacles
            .iter()
            .filter(|o| u >= o.x0 && u <= o.x1 && v >= o.y0 && v <= o.y1)
            .map(|o| o.height)
            .fold(0.0, f64::max)
    }

    pub fn height(&self, x: f64, y: f64) -> f64 {
        let c = self.spec.category;
        let mut h = 0.0;
        if c.has_slope() {
            h += self.slope(x);
        }
        if c.has_crater() {
            h += self.crater(x, y);
        }
        if c == TerrainCategory::DiscreteObstacles {
            h += self.obstacle(x, y);
        }
        if c.has_uniform_noise() {
            h += self.uniform_noise(x, y);
        }
        if c.has_fbm() {
            h += self.fbm(x, y);
        }
        h
    }

    /// Samples `patches_x * patches_y` tiled patches starting at the origin.
    pub fn sample_grid(&self, patches_x: usize, patches_y: usize) -> Result<Heightfield, TerrainError> {
        let cell = self.params.cell_size;
        if !(cell.is_finite() && cell > 0.0) {
            return Err(TerrainError::InvalidCellSize(cell));
        }
        let per_patch = (PATCH_SIZE / cell).round();
        if per_patch < 1.0 || !per_patch.is_finite() || per_patch > 1.0e5 {
            return Err(TerrainError::InvalidResolution {
                width: per_patch.max(0.0) as usize,
                height: per_patch.max(0.0) as usize,
            });
        }
        let per_patch = per_patch as usize;
        let w = per_patch * patches_x + 1;
        let h = per_patch * patches_y + 1;
        if patches_x == 0 || patches_y == 0 {
            return Err(TerrainError::InvalidResolution { width: w, height: h });
        }
        let mut heights = Vec::with_capacity(w * h);
        for j in 0..h {
            let y = j as f64 * cell;
            for i in 0..w {
                let x = i as f64 * cell;
                heights.push(self.height(x, y) as f32);
            }
        }
        let mut field = Heightfield::new(w, h, cell, (0.0, 0.0), heights)?;
        field.spec = Some(self.spec);
        Ok(field)
    }
}

fn patch_local(x: f64, y: f64) -> (f64, f64) {
    (x.rem_euclid(PATCH_SIZE), y.rem_euclid(PATCH_SIZE))
}

/// Uniform value in `[-1, 1]` attached to an integer lattice node.
fn lattice_value(p: &Perlin, i: i64, j: i64) -> f64 {
    // Sample the gradient noise off-lattice at a fixed fractional offset;
    // the result is a deterministic pseudo-random value per node.
    p.get(i as f64 + 0.37, j as f64 + 0.61)
}

/// fBm roughness of `spec` at world coordinates `(x, y)`.
pub fn fbm_height(x: f64, y: f64, spec: &TerrainSpec) -> f64 {
    Fbm::new(spec.seed, FbmParams::default()).sample(x, y, spec.roughness_amplitude())
}

/// Crater profile of `spec`, including the fBm layer for PerlinCrater.
pub fn crater_height(x: f64, y: f64, spec: &TerrainSpec) -> f64 {
    let g = TerrainGenerator::new(*spec, TerrainParams::default());
    let mut h = g.crater(x, y);
    if spec.category.has_fbm() {
        h += g.fbm(x, y);
    }
    h
}

/// One 8 m x 8 m patch at the configured resolution.
pub fn generate_patch(spec: &TerrainSpec, params: &TerrainParams) -> Result<Heightfield, TerrainError> {
    TerrainGenerator::new(*spec, *params).sample_grid(1, 1)
}

/// `patches` patches tiled along x, used as an episode corridor.
pub fn generate_strip(
    spec: &TerrainSpec,
    params: &TerrainParams,
    patches: usize,
) -> Result<Heightfield, TerrainError> {
    TerrainGenerator::new(*spec, *params).sample_grid(patches, 1)
}

/// Largest absolute finite-difference slope between neighboring nodes along x.
pub fn max_gradient_x(field: &Heightfield) -> f64 {
    let mut best: f64 = 0.0;
    for j in 0..field.height() {
        for i in 0..field.width() - 1 {
            let g = (field.node(i + 1, j) - field.node(i, j)).abs() / field.cell_size();
            best = best.max(g);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(c: TerrainCategory, d: f64) -> TerrainSpec {
        TerrainSpec::new(c, d, 42)
    }

    #[test]
    fn category_names_parse() {
        for c in TerrainCategory::ALL {
            assert_eq!(c.name().parse::<TerrainCategory>().unwrap(), c);
            assert_eq!(format!("{c:?}").parse::<TerrainCategory>().unwrap(), c);
        }
        assert!("moon_dust".parse::<TerrainCategory>().is_err());
    }

    #[test]
    fn difficulty_is_clamped() {
        assert_eq!(spec(TerrainCategory::Flat, 1.7).difficulty(), 1.0);
        assert_eq!(spec(TerrainCategory::Flat, -0.2).difficulty(), 0.0);
        assert_eq!(spec(TerrainCategory::Flat, f64::NAN).difficulty(), 0.0);
    }

    #[test]
    fn pure_flat_is_zero() {
        for d in [0.0, 0.5, 1.0] {
            let f = generate_patch(&spec(TerrainCategory::PureFlat, d), &TerrainParams::default()).unwrap();
            assert!(f.heights().iter().all(|h| *h == 0.0));
            assert_eq!((f.width(), f.height()), (161, 161));
        }
    }

    #[test]
    fn zero_z_scale_gives_zero_fbm() {
        let s = spec(TerrainCategory::PerlinFlat, 1.0).with_z_scale(0.0);
        for i in 0..50 {
            assert_eq!(fbm_height(i as f64 * 0.31, 2.0, &s), 0.0);
        }
    }

    #[test]
    fn fbm_deterministic() {
        let s = spec(TerrainCategory::PerlinFlat, 0.6);
        let a = fbm_height(1.234, 5.678, &s);
        let b = fbm_height(1.234, 5.678, &s);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn crater_center_and_far_field() {
        let s = spec(TerrainCategory::Crater, 0.5);
        let center = crater_height(4.0, 4.0, &s);
        assert!((center + 0.40).abs() < 1e-12, "{center}");
        let depth = 0.40;
        assert!(crater_height(0.0, 0.0, &s).abs() <= 1e-3 * depth);
        assert!(crater_height(8.0, 8.0, &s).abs() <= 1e-3 * depth);
    }

    #[test]
    fn crater_depth_monotone_in_difficulty() {
        let mut prev = f64::INFINITY;
        for k in 0..=20 {
            let d = k as f64 / 20.0;
            let h = crater_height(4.0, 4.0, &spec(TerrainCategory::Crater, d));
            assert!(h <= prev);
            prev = h;
        }
    }

    #[test]
    fn invalid_resolution_reported() {
        let params = TerrainParams {
            cell_size: 0.0,
            ..Default::default()
        };
        assert!(generate_patch(&spec(TerrainCategory::Flat, 0.3), &params).is_err());
        let params = TerrainParams {
            cell_size: 100.0,
            ..Default::default()
        };
        assert!(matches!(
            generate_patch(&spec(TerrainCategory::Flat, 0.3), &params),
            Err(TerrainError::InvalidResolution { .. })
        ));
    }

    #[test]
    fn slope_profile_is_continuous_and_bounded() {
        let g = TerrainGenerator::new(spec(TerrainCategory::SmoothSlope, 0.5), TerrainParams::default());
        let tan = 10f64.to_radians().tan();
        let mut prev = g.slope(0.0);
        assert!(prev.abs() < 1e-12);
        for i in 1..=1600 {
            let x = i as f64 * 0.01;
            let h = g.slope(x);
            assert!((h - prev).abs() <= tan * 0.01 + 1e-12);
            prev = h;
        }
    }

    #[test]
    fn obstacles_scale_with_difficulty() {
        let p = TerrainParams::default();
        assert_eq!(p.obstacle_count(0.0), 0);
        assert_eq!(p.obstacle_count(1.0), 40);
        let low = generate_patch(&spec(TerrainCategory::DiscreteObstacles, 0.3), &p).unwrap();
        let high = generate_patch(&spec(TerrainCategory::DiscreteObstacles, 0.9), &p).unwrap();
        let max = |f: &Heightfield| f.heights().iter().cloned().fold(0.0f32, f32::max);
        assert!(max(&low) <= 0.15 * 0.3 + 1e-6);
        assert!(max(&high) > max(&low));
        let covered = |f: &Heightfield| f.heights().iter().filter(|h| **h > 0.0).count();
        assert!(covered(&high) >= covered(&low));
    }

    #[test]
    fn every_category_is_finite() {
        let p = TerrainParams::default();
        for c in TerrainCategory::ALL {
            for d in [0.0, 0.5, 1.0] {
                let f = generate_patch(&spec(c, d), &p).unwrap();
                assert!(f.heights().iter().all(|h| h.is_finite()), "{c} d={d}");
            }
        }
    }

    #[test]
    fn strip_tiles_continuously() {
        let s = spec(TerrainCategory::PerlinCrater, 0.5);
        let f = generate_strip(&s, &TerrainParams::default(), 3).unwrap();
        assert_eq!(f.width(), 481);
        let seam = 160;
        for j in 0..f.height() {
            let jump = (f.node(seam + 1, j) - f.node(seam, j)).abs();
            assert!(jump < 0.05, "seam jump {jump} at row {j}");
        }
    }
}
