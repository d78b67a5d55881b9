//! Regular-grid heightfields and the `LHF1` binary container.
//!
//! Layout (little-endian):
//!
//! | offset | type      | field                      |
//! |--------|-----------|----------------------------|
//! | 0      | `[u8; 4]` | magic `b"LHF1"`            |
//! | 4      | `u32`     | width (nodes along x)      |
//! | 8      | `u32`     | height (nodes along y)     |
//! | 12     | `f64`     | cell size, meters          |
//! | 20     | `f64`     | origin x, meters           |
//! | 28     | `f64`     | origin y, meters           |
//! | 36     | `f32 * w*h` | heights, row-major (y outer) |

use std::io::Write;

use super::{TerrainError, TerrainSpec};

pub const MAGIC: &[u8; 4] = b"LHF1";
pub const HEADER_LEN: usize = 36;

/// Heights sampled on a regular grid of nodes.
///
/// Node `(i, j)` sits at `origin + (i, j) * cell_size`; `heights[j * width + i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heightfield {
    width: usize,
    height: usize,
    cell_size: f64,
    origin: (f64, f64),
    heights: Vec<f32>,
    /// Generation parameters, when the field came from the generator.
    pub spec: Option<TerrainSpec>,
}

impl Heightfield {
    pub fn new(
        width: usize,
        height: usize,
        cell_size: f64,
        origin: (f64, f64),
        heights: Vec<f32>,
    ) -> Result<Self, TerrainError> {
        if width < 2 || height < 2 {
            return Err(TerrainError::InvalidResolution { width, height });
        }
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(TerrainError::InvalidCellSize(cell_size));
        }
        if !(origin.0.is_finite() && origin.1.is_finite()) {
            return Err(TerrainError::NonFinite("origin"));
        }
        let expected = width
            .checked_mul(height)
            .ok_or(TerrainError::InvalidResolution { width, height })?;
        if heights.len() != expected {
            return Err(TerrainError::LengthMismatch {
                expected,
                actual: heights.len(),
            });
        }
        if heights.iter().any(|h| !h.is_finite()) {
            return Err(TerrainError::NonFinite("heights"));
        }
        Ok(Self {
            width,
            height,
            cell_size,
            origin,
            heights,
            spec: None,
        })
    }

    /// A flat field covering `[origin, origin + extent]`.
    pub fn flat(extent_x: f64, extent_y: f64, cell_size: f64) -> Result<Self, TerrainError> {
        let w = (extent_x / cell_size).round() as usize + 1;
        let h = (extent_y / cell_size).round() as usize + 1;
        Self::new(w, h, cell_size, (0.0, 0.0), vec![0.0; w * h])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn heights(&self) -> &[f32] {
        &self.heights
    }

    pub fn extent(&self) -> (f64, f64) {
        (
            (self.width - 1) as f64 * self.cell_size,
            (self.height - 1) as f64 * self.cell_size,
        )
    }

    pub fn node(&self, i: usize, j: usize) -> f64 {
        self.heights[j * self.width + i] as f64
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (ex, ey) = self.extent();
        let (u, v) = (x - self.origin.0, y - self.origin.1);
        (0.0..=ex).contains(&u) && (0.0..=ey).contains(&v)
    }

    /// Bilinear interpolation of the four surrounding nodes.
    pub fn sample(&self, x: f64, y: f64) -> Result<f64, TerrainError> {
        if !self.contains(x, y) {
            return Err(TerrainError::OutOfBounds { x, y });
        }
        let u = (x - self.origin.0) / self.cell_size;
        let v = (y - self.origin.1) / self.cell_size;
        let i = (u.floor() as usize).min(self.width - 2);
        let j = (v.floor() as usize).min(self.height - 2);
        let fu = u - i as f64;
        let fv = v - j as f64;
        let h00 = self.node(i, j);
        let h10 = self.node(i + 1, j);
        let h01 = self.node(i, j + 1);
        let h11 = self.node(i + 1, j + 1);
        let a = h00 + (h10 - h00) * fu;
        let b = h01 + (h11 - h01) * fu;
        Ok(a + (b - a) * fv)
    }

    /// Like [`sample`](Self::sample) but clamps the query into the field.
    pub fn sample_clamped(&self, x: f64, y: f64) -> f64 {
        let (ex, ey) = self.extent();
        let cx = x.clamp(self.origin.0, self.origin.0 + ex);
        let cy = y.clamp(self.origin.1, self.origin.1 + ey);
        self.sample(cx, cy).unwrap_or(0.0)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.heights.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&self.cell_size.to_le_bytes());
        out.extend_from_slice(&self.origin.0.to_le_bytes());
        out.extend_from_slice(&self.origin.1.to_le_bytes());
        for h in &self.heights {
            out.extend_from_slice(&h.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TerrainError> {
        if bytes.len() < HEADER_LEN {
            return Err(TerrainError::Decode("truncated header"));
        }
        if &bytes[0..4] != MAGIC {
            return Err(TerrainError::Decode("bad magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let width = u32_at(4);
        let height = u32_at(8);
        let cell = f64_at(12);
        let origin = (f64_at(20), f64_at(28));
        let count = width
            .checked_mul(height)
            .ok_or(TerrainError::Decode("dimension overflow"))?;
        let body = &bytes[HEADER_LEN..];
        if count.checked_mul(4) != Some(body.len()) {
            return Err(TerrainError::Decode("payload length does not match header"));
        }
        let heights = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(width, height, cell, origin, heights)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,y,height")?;
        for j in 0..self.height {
            for i in 0..self.width {
                let x = self.origin.0 + i as f64 * self.cell_size;
                let y = self.origin.1 + j as f64 * self.cell_size;
                writeln!(w, "{x},{y},{}", self.heights[j * self.width + i])?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &std::path::Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_bytes())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, TerrainError> {
        let bytes = std::fs::read(path).map_err(|e| TerrainError::Io(e.to_string()))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Heightfield {
        // Three nodes along x with heights 0.0, 0.2, 0.4; constant along y.
        let heights = vec![0.0, 0.2, 0.4, 0.0, 0.2, 0.4];
        Heightfield::new(3, 2, 0.5, (0.0, 0.0), heights).unwrap()
    }

    #[test]
    fn exact_at_nodes() {
        let f = ramp();
        for j in 0..2 {
            for i in 0..3 {
                let h = f.sample(i as f64 * 0.5, j as f64 * 0.5).unwrap();
                assert_eq!(h, f.node(i, j));
            }
        }
    }

    #[test]
    fn midpoint_is_linear() {
        let f = ramp();
        let h = f.sample(0.25, 0.3).unwrap();
        assert!((h - 0.1).abs() < 1e-7, "{h}");
    }

    #[test]
    fn out_of_bounds_reported() {
        let f = ramp();
        assert!(matches!(
            f.sample(1.01, 0.0),
            Err(TerrainError::OutOfBounds { .. })
        ));
        assert!(matches!(
            f.sample(0.0, -0.01),
            Err(TerrainError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(Heightfield::new(1, 5, 0.1, (0.0, 0.0), vec![0.0; 5]).is_err());
        assert!(Heightfield::new(2, 2, 0.0, (0.0, 0.0), vec![0.0; 4]).is_err());
        assert!(Heightfield::new(2, 2, 0.1, (0.0, 0.0), vec![0.0; 3]).is_err());
        assert!(Heightfield::new(2, 2, 0.1, (0.0, 0.0), vec![f32::NAN; 4]).is_err());
    }

    #[test]
    fn bytes_round_trip() {
        let f = ramp();
        let bytes = f.to_bytes();
        assert_eq!(&bytes[..4], b"LHF1");
        assert_eq!(bytes.len(), HEADER_LEN + 6 * 4);
        assert_eq!(Heightfield::from_bytes(&bytes).unwrap(), f);
    }

    #[test]
    fn decode_rejects_truncation() {
        let bytes = ramp().to_bytes();
        for cut in [0, 3, 35, bytes.len() - 1] {
            assert!(Heightfield::from_bytes(&bytes[..cut]).is_err());
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Heightfield::from_bytes(&bad).is_err());
    }

    #[test]
    fn csv_export_has_all_nodes() {
        let mut buf = Vec::new();
        ramp().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(text.starts_with("x,y,height\n0,0,0\n"));
    }
}
