//! Seeded 2-D gradient noise and its fractal (fBm) sum.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Twelve unit gradients spread evenly around the circle.
const GRADIENTS: [(f64, f64); 12] = {
    // cos/sin of k * 30 degrees, written out so the table is const.
    const S: f64 = 0.5;
    const C: f64 = 0.866_025_403_784_438_6;
    [
        (1.0, 0.0),
        (C, S),
        (S, C),
        (0.0, 1.0),
        (-S, C),
        (-C, S),
        (-1.0, 0.0),
        (-C, -S),
        (-S, -C),
        (0.0, -1.0),
        (S, -C),
        (C, -S),
    ]
};

/// With unit gradients the raw 2-D noise magnitude is bounded by sqrt(2)/2.
const NORMALIZE: f64 = std::f64::consts::SQRT_2;

/// Classic gradient noise over a 256-entry permutation lattice.
///
/// Output lies in `[-1, 1]` and is exactly zero at integer lattice points.
#[derive(Clone)]
pub struct Perlin {
    perm: [u8; 512],
}

impl std::fmt::Debug for Perlin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Perlin").finish_non_exhaustive()
    }
}

impl Perlin {
    pub fn new(seed: u64) -> Self {
        let mut table: Vec<u8> = (0..=255u8).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        table.shuffle(&mut rng);
        let mut perm = [0u8; 512];
        for (i, slot) in perm.iter_mut().enumerate() {
            *slot = table[i & 255];
        }
        Self { perm }
    }

    fn gradient(&self, ix: i64, iy: i64) -> (f64, f64) {
        let x = (ix & 255) as usize;
        let y = (iy & 255) as usize;
        let h = self.perm[self.perm[x] as usize + y] as usize;
        GRADIENTS[h % GRADIENTS.len()]
    }

    pub fn get(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let ix = x0 as i64;
        let iy = y0 as i64;

        let dot = |gx: i64, gy: i64, dx: f64, dy: f64| {
            let (g0, g1) = self.gradient(gx, gy);
            g0 * dx + g1 * dy
        };
        let n00 = dot(ix, iy, fx, fy);
        let n10 = dot(ix + 1, iy, fx - 1.0, fy);
        let n01 = dot(ix, iy + 1, fx, fy - 1.0);
        let n11 = dot(ix + 1, iy + 1, fx - 1.0, fy - 1.0);

        let u = fade(fx);
        let v = fade(fy);
        let nx0 = lerp(n00, n10, u);
        let nx1 = lerp(n01, n11, u);
        (lerp(nx0, nx1, v) * NORMALIZE).clamp(-1.0, 1.0)
    }
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Octave parameters for fractal Brownian motion.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FbmParams {
    /// Frequency of octave 0, in cycles per `coordinate_scale` unit.
    pub base_frequency: f64,
    pub lacunarity: f64,
    pub gain: f64,
    pub octaves: u32,
    /// Multiplies world coordinates before the frequency is applied.
    /// The default maps one 8 m patch edge onto one noise unit.
    pub coordinate_scale: f64,
}

impl Default for FbmParams {
    fn default() -> Self {
        Self {
            base_frequency: 10.0,
            lacunarity: 2.0,
            gain: 0.25,
            octaves: 2,
            coordinate_scale: 1.0 / super::PATCH_SIZE,
        }
    }
}

impl FbmParams {
    /// Sum of octave amplitude factors, `1 + G + G^2 + ...`.
    pub fn amplitude_sum(&self) -> f64 {
        (0..self.octaves).map(|k| self.gain.powi(k as i32)).sum()
    }
}

/// Multi-octave Perlin sum with amplitudes `z_scale * G^k` and frequencies
/// `f0 * lambda^k`.
#[derive(Debug, Clone)]
pub struct Fbm {
    noise: Perlin,
    params: FbmParams,
}

impl Fbm {
    pub fn new(seed: u64, params: FbmParams) -> Self {
        Self {
            noise: Perlin::new(seed),
            params,
        }
    }

    pub fn params(&self) -> &FbmParams {
        &self.params
    }

    pub fn sample(&self, x: f64, y: f64, z_scale: f64) -> f64 {
        if z_scale == 0.0 {
            return 0.0;
        }
        let p = &self.params;
        let (sx, sy) = (x * p.coordinate_scale, y * p.coordinate_scale);
        let mut freq = p.base_frequency;
        let mut amp = z_scale;
        let mut sum = 0.0;
        for _ in 0..p.octaves {
            sum += amp * self.noise.get(freq * sx, freq * sy);
            freq *= p.lacunarity;
            amp *= p.gain;
        }
        sum
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_at_lattice_points() {
        let p = Perlin::new(7);
        for i in -3..3 {
            for j in -3..3 {
                assert_eq!(p.get(i as f64, j as f64), 0.0);
            }
        }
    }

    #[test]
    fn bounded_and_seed_dependent() {
        let a = Perlin::new(1);
        let b = Perlin::new(2);
        let mut differs = false;
        let mut max_abs: f64 = 0.0;
        for i in 0..4000 {
            let x = i as f64 * 0.037 + 0.11;
            let y = i as f64 * 0.053 - 7.3;
            let va = a.get(x, y);
            max_abs = max_abs.max(va.abs());
            assert!((-1.0..=1.0).contains(&va));
            differs |= va != b.get(x, y);
        }
        assert!(differs);
        // The normalization should make use of most of the range.
        assert!(max_abs > 0.5, "max |noise| = {max_abs}");
    }

    #[test]
    fn octave_amplitudes() {
        let p = FbmParams::default();
        assert_eq!(p.amplitude_sum(), 1.25);
    }

    #[test]
    fn fbm_is_continuous() {
        let f = Fbm::new(3, FbmParams::default());
        let mut prev = f.sample(0.0, 1.3, 1.0);
        for i in 1..2000 {
            let v = f.sample(i as f64 * 1e-4, 1.3, 1.0);
            assert!((v - prev).abs() < 0.01);
            prev = v;
        }
    }
}
