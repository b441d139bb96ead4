//! Factorized voxel maps.
//!
//! A voxel map is stored as 12 rank-1 factors. Each factor is a triplet of
//! 32-long profiles `(x, y, z)` whose triple outer product gives a 32³ volume;
//! the object volume is the plain sum of the factor volumes. Occupancy
//! (clamp to `[0, 1]`, then threshold) is applied only by [`binarize`].

use thiserror::Error;

/// Side length of a decoded volume and length of each factor profile.
pub const GRID: usize = 32;
/// Number of rank-1 factors per object.
pub const NUM_FACTORS: usize = 12;
/// Width of a factor token, `[x ; y ; z]`.
pub const TOKEN_WIDTH: usize = 3 * GRID;

const CELLS: usize = GRID * GRID * GRID;

#[derive(Debug, Error, PartialEq)]
pub enum VoxelError {
    #[error("non-finite value in factor {factor} ({axis} axis, index {index})")]
    NonFinite {
        factor: usize,
        axis: char,
        index: usize,
    },
    #[error("expected {NUM_FACTORS} factors, got {0}")]
    FactorCount(usize),
    #[error("profile length {0}, expected {GRID}")]
    ProfileLength(usize),
    #[error("token width {0}, expected {TOKEN_WIDTH}")]
    TokenWidth(usize),
    #[error("threshold {0} outside (0, 1)")]
    Threshold(f64),
}

/// One rank-1 factor of a voxel map.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorTriplet {
    pub x: [f32; GRID],
    pub y: [f32; GRID],
    pub z: [f32; GRID],
}

impl FactorTriplet {
    pub fn zeros() -> Self {
        FactorTriplet {
            x: [0.0; GRID],
            y: [0.0; GRID],
            z: [0.0; GRID],
        }
    }

    pub fn from_slices(x: &[f32], y: &[f32], z: &[f32]) -> Result<Self, VoxelError> {
        let profile = |s: &[f32]| -> Result<[f32; GRID], VoxelError> {
            s.try_into().map_err(|_| VoxelError::ProfileLength(s.len()))
        };
        Ok(FactorTriplet {
            x: profile(x)?,
            y: profile(y)?,
            z: profile(z)?,
        })
    }

    fn validate(&self, factor: usize) -> Result<(), VoxelError> {
        for (axis, profile) in [('x', &self.x), ('y', &self.y), ('z', &self.z)] {
            if let Some(index) = profile.iter().position(|v| !v.is_finite()) {
                return Err(VoxelError::NonFinite {
                    factor,
                    axis,
                    index,
                });
            }
        }
        Ok(())
    }

    /// True when any profile entry is non-zero.
    pub fn is_active(&self) -> bool {
        self.x
            .iter()
            .chain(&self.y)
            .chain(&self.z)
            .any(|&v| v != 0.0)
    }
}

/// The 12 ordered factors of one object. Order is positional only.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSet {
    factors: Vec<FactorTriplet>,
}

impl FactorSet {
    pub fn new(factors: Vec<FactorTriplet>) -> Result<Self, VoxelError> {
        if factors.len() != NUM_FACTORS {
            return Err(VoxelError::FactorCount(factors.len()));
        }
        for (k, f) in factors.iter().enumerate() {
            f.validate(k)?;
        }
        Ok(FactorSet { factors })
    }

    pub fn zeros() -> Self {
        FactorSet {
            factors: vec![FactorTriplet::zeros(); NUM_FACTORS],
        }
    }

    pub fn factors(&self) -> &[FactorTriplet] {
        &self.factors
    }

    pub fn factors_mut(&mut self) -> &mut [FactorTriplet] {
        &mut self.factors
    }

    pub fn into_factors(self) -> Vec<FactorTriplet> {
        self.factors
    }
}

/// Dense 32³ grid of occupancy mass, indexed `[i][j][k]` along x, y, z.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    values: Vec<f64>,
}

impl VoxelGrid {
    pub fn zeros() -> Self {
        VoxelGrid {
            values: vec![0.0; CELLS],
        }
    }

    #[inline]
    fn offset(i: usize, j: usize, k: usize) -> usize {
        (i * GRID + j) * GRID + k
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[Self::offset(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f64) {
        self.values[Self::offset(i, j, k)] = value;
    }

    /// Row-major values, `k` fastest.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_abs_diff(&self, other: &VoxelGrid) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Boolean 32³ occupancy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupancyGrid {
    bits: Vec<bool>,
}

impl OccupancyGrid {
    pub fn empty() -> Self {
        OccupancyGrid {
            bits: vec![false; CELLS],
        }
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.bits[VoxelGrid::offset(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, value: bool) {
        self.bits[VoxelGrid::offset(i, j, k)] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }
}

/// Triple outer product `V[i,j,k] = x[i]·y[j]·z[k]`.
pub fn factor_volume(f: &FactorTriplet) -> Result<VoxelGrid, VoxelError> {
    f.validate(0)?;
    let mut grid = VoxelGrid::zeros();
    accumulate(&mut grid, f);
    Ok(grid)
}

fn accumulate(grid: &mut VoxelGrid, f: &FactorTriplet) {
    for (i, &xi) in f.x.iter().enumerate() {
        let xi = f64::from(xi);
        for (j, &yj) in f.y.iter().enumerate() {
            let xy = xi * f64::from(yj);
            let row = &mut grid.values[VoxelGrid::offset(i, j, 0)..][..GRID];
            for (cell, &zk) in row.iter_mut().zip(&f.z) {
                *cell += xy * f64::from(zk);
            }
        }
    }
}

/// Raw sum of the 12 factor volumes (no clamping).
pub fn assemble_volume(fs: &FactorSet) -> Result<VoxelGrid, VoxelError> {
    if fs.factors.len() != NUM_FACTORS {
        return Err(VoxelError::FactorCount(fs.factors.len()));
    }
    let mut grid = VoxelGrid::zeros();
    for (k, f) in fs.factors.iter().enumerate() {
        f.validate(k)?;
        accumulate(&mut grid, f);
    }
    Ok(grid)
}

/// Default occupancy threshold.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// `bit = min(1, value) >= threshold`, threshold in the open interval (0, 1).
pub fn binarize(g: &VoxelGrid, threshold: f64) -> Result<OccupancyGrid, VoxelError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(VoxelError::Threshold(threshold));
    }
    Ok(OccupancyGrid {
        bits: g.values.iter().map(|&v| v.min(1.0) >= threshold).collect(),
    })
}

/// Intersection over union. Two empty grids score 1.0.
pub fn voxel_iou(a: &OccupancyGrid, b: &OccupancyGrid) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &q) in a.bits.iter().zip(&b.bits) {
        inter += usize::from(p && q);
        union += usize::from(p || q);
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Factor tokens `[x_k ; y_k ; z_k]`, one per factor, in factor order.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorTokenSequence {
    tokens: Vec<[f32; TOKEN_WIDTH]>,
}

impl FactorTokenSequence {
    pub fn tokens(&self) -> &[[f32; TOKEN_WIDTH]] {
        &self.tokens
    }

    pub fn from_tokens(tokens: Vec<Vec<f32>>) -> Result<Self, VoxelError> {
        if tokens.len() != NUM_FACTORS {
            return Err(VoxelError::FactorCount(tokens.len()));
        }
        let tokens = tokens
            .into_iter()
            .map(|t| {
                let n = t.len();
                <[f32; TOKEN_WIDTH]>::try_from(t).map_err(|_| VoxelError::TokenWidth(n))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(FactorTokenSequence { tokens })
    }

    /// Splits every token at offsets 32 and 64.
    pub fn to_factor_set(&self) -> Result<FactorSet, VoxelError> {
        let factors = self
            .tokens
            .iter()
            .map(|t| FactorTriplet::from_slices(&t[..GRID], &t[GRID..2 * GRID], &t[2 * GRID..]))
            .collect::<Result<Vec<_>, _>>()?;
        FactorSet::new(factors)
    }
}

pub fn factor_tokens(fs: &FactorSet) -> FactorTokenSequence {
    let tokens = fs
        .factors
        .iter()
        .map(|f| {
            let mut t = [0.0f32; TOKEN_WIDTH];
            t[..GRID].copy_from_slice(&f.x);
            t[GRID..2 * GRID].copy_from_slice(&f.y);
            t[2 * GRID..].copy_from_slice(&f.z);
            t
        })
        .collect();
    FactorTokenSequence { tokens }
}
