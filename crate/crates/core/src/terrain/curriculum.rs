use serde::{Deserialize, Serialize};

use super::{TerrainCategory, TerrainError, TerrainSpec};

pub const CURRICULUM_ROWS: usize = 10;
pub const CURRICULUM_COLS: usize = 20;

/// Rows are difficulty levels `d = r / 9`; columns are category bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumGrid {
    pub patch_size: f64,
    pub column_categories: Vec<TerrainCategory>,
    pub patch_specs: Vec<Vec<TerrainSpec>>,
}

impl CurriculumGrid {
    pub fn rows(&self) -> usize {
        self.patch_specs.len()
    }

    pub fn cols(&self) -> usize {
        self.column_categories.len()
    }

    pub fn cell(&self, row: usize, col: usize) -> Option<&TerrainSpec> {
        self.patch_specs.get(row)?.get(col)
    }
}

pub fn uniform_proportions() -> Vec<(TerrainCategory, f64)> {
    TerrainCategory::ALL.iter().map(|c| (*c, 1.0 / 9.0)).collect()
}

/// Largest-remainder apportionment of `total` seats. Ties on the remainder
/// go to the earlier entry.
fn apportion(shares: &[f64], total: usize) -> Vec<usize> {
    let quotas: Vec<f64> = shares.iter().map(|s| s * total as f64).collect();
    let mut seats: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = seats.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        seats[i] += 1;
    }
    seats
}

/// SplitMix64 finalizer; derives independent per-cell seeds.
fn mix_seed(seed: u64, row: usize, col: usize) -> u64 {
    let mut z = seed ^ ((row as u64) << 32 | col as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Builds the 10 x 20 curriculum. Categories occupy contiguous column bands
/// in the order given by `proportions`.
pub fn build_curriculum(
    seed: u64,
    proportions: &[(TerrainCategory, f64)],
) -> Result<CurriculumGrid, TerrainError> {
    for (c, p) in proportions {
        if !p.is_finite() || *p < 0.0 {
            return Err(TerrainError::InvalidProportion(*c));
        }
    }
    let sum: f64 = proportions.iter().map(|(_, p)| p).sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(TerrainError::ProportionSum(sum));
    }
    let shares: Vec<f64> = proportions.iter().map(|(_, p)| *p).collect();
    let seats = apportion(&shares, CURRICULUM_COLS);
    let column_categories: Vec<TerrainCategory> = proportions
        .iter()
        .zip(&seats)
        .flat_map(|((c, _), n)| std::iter::repeat_n(*c, *n))
        .collect();
    debug_assert_eq!(column_categories.len(), CURRICULUM_COLS);

    let patch_specs = (0..CURRICULUM_ROWS)
        .map(|r| {
            let d = r as f64 / (CURRICULUM_ROWS - 1) as f64;
            column_categories
                .iter()
                .enumerate()
                .map(|(c, cat)| TerrainSpec::new(*cat, d, mix_seed(seed, r, c)))
                .collect()
        })
        .collect();
    Ok(CurriculumGrid {
        patch_size: super::PATCH_SIZE,
        column_categories,
        patch_specs,
    })
}
