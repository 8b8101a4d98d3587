//! Landmarks to a `C x C x C` binary occupancy grid.
//!
//! Each frame is min-max normalized per axis over its own landmarks, scaled by
//! `C - 1`, rounded half-up to integer cell indices, and marked in a zeroed
//! grid. Per-frame normalization makes the encoding invariant to translation
//! and positive uniform scaling of the input.

use thiserror::Error;

use crate::landmark_io::Point3;

/// Grid side used by the reference experiments (landmarks mapped to `[0, 23]`).
pub const DEFAULT_C: usize = 24;

const VOXEL_MAGIC: &[u8; 4] = b"AUVX";
const VOXEL_VERSION: u8 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VoxelError {
    #[error("need at least 2 landmarks, got {0}")]
    TooFewPoints(usize),
    #[error("landmark {index} has a non-finite coordinate")]
    NonFinite { index: usize },
    #[error("axis {axis} is degenerate (max == min)")]
    DegenerateAxis { axis: usize },
    #[error("grid side must be at least 2, got {0}")]
    InvalidC(usize),
    #[error("normalized coordinate {value} outside [0, 1]")]
    OutOfRange { value: f64 },
    #[error("voxel file: {0}")]
    Format(String),
}

/// What to do with an axis whose landmarks all share one value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DegeneratePolicy {
    #[default]
    Error,
    /// Map the axis to 0 and flag the frame.
    MapToZero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedLandmarks {
    pub points: Vec<Point3>,
    /// Axes that were flattened under [`DegeneratePolicy::MapToZero`].
    pub degenerate_axes: [bool; 3],
}

impl NormalizedLandmarks {
    pub fn is_flagged(&self) -> bool {
        self.degenerate_axes.iter().any(|&d| d)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScaledLandmarks {
    pub points: Vec<[u32; 3]>,
    pub c: usize,
}

pub fn normalize(points: &[Point3]) -> Result<NormalizedLandmarks, VoxelError> {
    normalize_with(points, DegeneratePolicy::Error)
}

pub fn normalize_with(
    points: &[Point3],
    policy: DegeneratePolicy,
) -> Result<NormalizedLandmarks, VoxelError> {
    if points.len() < 2 {
        return Err(VoxelError::TooFewPoints(points.len()));
    }
    if let Some(index) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
        return Err(VoxelError::NonFinite { index });
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let mut degenerate_axes = [false; 3];
    for axis in 0..3 {
        if hi[axis] == lo[axis] {
            match policy {
                DegeneratePolicy::Error => return Err(VoxelError::DegenerateAxis { axis }),
                DegeneratePolicy::MapToZero => degenerate_axes[axis] = true,
            }
        }
    }
    let out = points
        .iter()
        .map(|p| {
            let mut q = [0.0; 3];
            for k in 0..3 {
                if !degenerate_axes[k] {
                    q[k] = (p[k] - lo[k]) / (hi[k] - lo[k]);
                }
            }
            q
        })
        .collect();
    Ok(NormalizedLandmarks { points: out, degenerate_axes })
}

/// Map one normalized coordinate to a cell index: `clamp(round_half_up(v * (c - 1)), 0, c - 1)`.
pub fn scale_coordinate(v: f64, c: usize) -> u32 {
    let top = (c - 1) as f64;
    (v * top + 0.5).floor().clamp(0.0, top) as u32
}

pub fn scale(norm: &NormalizedLandmarks, c: usize) -> Result<ScaledLandmarks, VoxelError> {
    if c < 2 {
        return Err(VoxelError::InvalidC(c));
    }
    let mut points = Vec::with_capacity(norm.points.len());
    for p in &norm.points {
        let mut s = [0u32; 3];
        for k in 0..3 {
            if !(0.0..=1.0).contains(&p[k]) {
                return Err(VoxelError::OutOfRange { value: p[k] });
            }
            s[k] = scale_coordinate(p[k], c);
        }
        points.push(s);
    }
    Ok(ScaledLandmarks { points, c })
}

/// Binary occupancy array, indexed `[x][y][z]` with z fastest.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct VoxelGrid {
    c: usize,
    occupancy: Vec<u8>,
}

impl VoxelGrid {
    pub fn empty(c: usize) -> Self {
        VoxelGrid { c, occupancy: vec![0; c * c * c] }
    }

    pub fn side(&self) -> usize {
        self.c
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.c + y) * self.c + z
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.occupancy[self.index(x, y, z)] != 0
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize) {
        let i = self.index(x, y, z);
        self.occupancy[i] = 1;
    }

    pub fn count(&self) -> usize {
        self.occupancy.iter().filter(|&&v| v != 0).count()
    }

    pub fn occupancy(&self) -> &[u8] {
        &self.occupancy
    }

    /// Set cells as `(x, y, z)`, in index order.
    pub fn active(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let c = self.c;
        self.occupancy
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(move |(i, _)| (i / (c * c), (i / c) % c, i % c))
    }

    /// Little-endian export: `AUVX`, u8 version, u32 side, then the occupancy
    /// bit-packed in x-major/y/z order, least significant bit first.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.occupancy.len();
        let mut out = Vec::with_capacity(9 + n.div_ceil(8));
        out.extend_from_slice(VOXEL_MAGIC);
        out.push(VOXEL_VERSION);
        out.extend_from_slice(&(self.c as u32).to_le_bytes());
        let mut packed = vec![0u8; n.div_ceil(8)];
        for (i, &v) in self.occupancy.iter().enumerate() {
            if v != 0 {
                packed[i / 8] |= 1 << (i % 8);
            }
        }
        out.extend_from_slice(&packed);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, VoxelError> {
        if bytes.len() < 9 || &bytes[..4] != VOXEL_MAGIC {
            return Err(VoxelError::Format("bad magic".into()));
        }
        if bytes[4] != VOXEL_VERSION {
            return Err(VoxelError::Format(format!("unsupported version {}", bytes[4])));
        }
        let c = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        if c < 2 {
            return Err(VoxelError::InvalidC(c));
        }
        let n = c
            .checked_mul(c)
            .and_then(|v| v.checked_mul(c))
            .ok_or_else(|| VoxelError::Format("side too large".into()))?;
        let body = &bytes[9..];
        if body.len() != n.div_ceil(8) {
            return Err(VoxelError::Format(format!(
                "expected {} payload bytes, found {}",
                n.div_ceil(8),
                body.len()
            )));
        }
        let occupancy = (0..n).map(|i| (body[i / 8] >> (i % 8)) & 1).collect();
        Ok(VoxelGrid { c, occupancy })
    }
}

pub fn voxelize(scaled: &ScaledLandmarks) -> VoxelGrid {
    let mut grid = VoxelGrid::empty(scaled.c);
    for p in &scaled.points {
        grid.set(p[0] as usize, p[1] as usize, p[2] as usize);
    }
    grid
}

/// normalize, scale and voxelize in one go.
pub fn encode_frame(points: &[Point3], c: usize) -> Result<VoxelGrid, VoxelError> {
    encode_frame_with(points, c, DegeneratePolicy::Error)
}

pub fn encode_frame_with(
    points: &[Point3],
    c: usize,
    policy: DegeneratePolicy,
) -> Result<VoxelGrid, VoxelError> {
    if c < 2 {
        return Err(VoxelError::InvalidC(c));
    }
    let norm = normalize_with(points, policy)?;
    Ok(voxelize(&scale(&norm, c)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_simple_frame() {
        let n = normalize(&[[0.0, 0.0, 0.0], [1.0, 2.0, 4.0], [2.0, 4.0, 8.0]]).unwrap();
        assert_eq!(n.points, vec![[0.0; 3], [0.5; 3], [1.0; 3]]);
        assert!(!n.is_flagged());
    }

    #[test]
    fn degenerate_axis() {
        let pts = [[5.0, 5.0, 5.0], [5.0, 5.0, 5.0]];
        assert_eq!(normalize(&pts), Err(VoxelError::DegenerateAxis { axis: 0 }));
        let relaxed = normalize_with(&[[0.0, 1.0, 3.0], [1.0, 1.0, 4.0]], DegeneratePolicy::MapToZero)
            .unwrap();
        assert_eq!(relaxed.degenerate_axes, [false, true, false]);
        assert_eq!(relaxed.points, vec![[0.0, 0.0, 0.0], [1.0, 0.0, 1.0]]);
    }

    #[test]
    fn too_few_or_non_finite() {
        assert_eq!(normalize(&[[0.0; 3]]), Err(VoxelError::TooFewPoints(1)));
        assert_eq!(
            normalize(&[[0.0; 3], [f64::NAN, 0.0, 0.0]]),
            Err(VoxelError::NonFinite { index: 1 })
        );
    }

    #[test]
    fn scaling_rounds_half_up() {
        assert_eq!(scale_coordinate(0.5, 24), 12);
        assert_eq!(scale_coordinate(0.0, 24), 0);
        assert_eq!(scale_coordinate(1.0, 24), 23);
        assert_eq!(scale_coordinate(0.49, 2), 0);
        assert_eq!(scale_coordinate(0.51, 2), 1);
        assert_eq!(scale_coordinate(0.5, 2), 1);
    }

    #[test]
    fn scale_rejects_small_c() {
        let n = normalize(&[[0.0; 3], [1.0; 3]]).unwrap();
        assert_eq!(scale(&n, 1), Err(VoxelError::InvalidC(1)));
        assert_eq!(encode_frame(&[[0.0; 3], [1.0; 3]], 0), Err(VoxelError::InvalidC(0)));
    }

    #[test]
    fn single_voxel_and_collisions() {
        let g = voxelize(&ScaledLandmarks { points: vec![[0, 0, 0]], c: 24 });
        assert_eq!(g.count(), 1);
        assert!(g.get(0, 0, 0));
        let g = voxelize(&ScaledLandmarks { points: vec![[3, 4, 5], [3, 4, 5], [1, 1, 1]], c: 24 });
        assert_eq!(g.count(), 2);
        assert_eq!(g.active().collect::<Vec<_>>(), vec![(1, 1, 1), (3, 4, 5)]);
    }

    #[test]
    fn distinct_points_give_distinct_voxels() {
        let points: Vec<[u32; 3]> = (0..83u32).map(|i| [i % 24, (i / 24) % 24, (i * 7) % 24]).collect();
        let g = voxelize(&ScaledLandmarks { points, c: 24 });
        assert_eq!(g.count(), 83);
    }

    #[test]
    fn voxel_file_round_trip_and_errors() {
        let g = encode_frame(&[[0.0, 0.0, 0.0], [1.0, 2.0, 4.0], [2.0, 4.0, 8.0]], 5).unwrap();
        let bytes = g.to_bytes();
        assert_eq!(&bytes[..4], b"AUVX");
        assert_eq!(bytes[4], 1);
        assert_eq!(u32::from_le_bytes(bytes[5..9].try_into().unwrap()), 5);
        assert_eq!(bytes.len(), 9 + 125usize.div_ceil(8));
        // (0,0,0) is bit 0 of the first payload byte
        assert_eq!(bytes[9] & 1, 1);
        assert_eq!(VoxelGrid::from_bytes(&bytes).unwrap(), g);
        assert!(VoxelGrid::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(VoxelGrid::from_bytes(b"XXXX").is_err());
    }
}
