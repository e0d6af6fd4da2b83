//! Voxelization, densification and bird's-eye-view height pooling.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point, PointCloud};

/// Channel width of the initial voxel features: mean offset (3) + normalized count (1).
pub const INPUT_CHANNELS: usize = 4;
/// Point count at which the count feature saturates.
pub const COUNT_SATURATION: usize = 16;
/// Default element cap for [`densify`].
pub const DEFAULT_DENSE_CAP: usize = 1 << 28;

pub type Coord = [i32; 3];

/// Per-point voxel assignment; `None` marks a dropped (out-of-range) point.
pub type PointToVoxel = Vec<Option<usize>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoxelGridConfig {
    pub range_min: [f64; 3],
    pub range_max: [f64; 3],
    pub voxel_size: [f64; 3],
}

impl Default for VoxelGridConfig {
    fn default() -> Self {
        Self::synthetic()
    }
}

impl VoxelGridConfig {
    pub fn synthetic() -> Self {
        Self {
            range_min: [-8.0, -8.0, -2.0],
            range_max: [8.0, 8.0, 2.0],
            voxel_size: [0.25, 0.25, 0.25],
        }
    }

    /// Front field of view of a KITTI-style scan, coarsened for CPU work.
    pub fn kitti_ffov() -> Self {
        Self {
            range_min: [0.0, -40.0, -3.0],
            range_max: [70.4, 40.0, 1.0],
            voxel_size: [0.8, 0.8, 0.4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            let (lo, hi, vs) = (self.range_min[a], self.range_max[a], self.voxel_size[a]);
            if !(lo.is_finite() && hi.is_finite() && vs.is_finite()) {
                return Err(Error::config("grid", "non-finite value"));
            }
            if hi <= lo {
                return Err(Error::config("grid.range_max", "must exceed range_min on every axis"));
            }
            if vs <= 0.0 {
                return Err(Error::config("grid.voxel_size", "must be positive"));
            }
        }
        Ok(())
    }

    /// (D_x, D_y, D_z).
    pub fn dims(&self) -> [usize; 3] {
        let mut d = [0; 3];
        for a in 0..3 {
            d[a] = ((self.range_max[a] - self.range_min[a]) / self.voxel_size[a]).ceil() as usize;
        }
        d
    }

    pub fn bev_height(&self) -> usize {
        self.dims()[1]
    }

    pub fn bev_width(&self) -> usize {
        self.dims()[0]
    }

    pub fn locate(&self, p: Point) -> Option<Coord> {
        let dims = self.dims();
        let mut c = [0i32; 3];
        for a in 0..3 {
            let idx = ((p[a] - self.range_min[a]) / self.voxel_size[a]).floor();
            if !(idx >= 0.0 && idx < dims[a] as f64) {
                return None;
            }
            c[a] = idx as i32;
        }
        Some(c)
    }

    pub fn center(&self, c: Coord) -> Point {
        let mut p = [0.0; 3];
        for a in 0..3 {
            p[a] = self.range_min[a] + (c[a] as f64 + 0.5) * self.voxel_size[a];
        }
        p
    }

    pub fn contains(&self, c: Coord) -> bool {
        let dims = self.dims();
        (0..3).all(|a| c[a] >= 0 && (c[a] as usize) < dims[a])
    }

    /// Row-major BEV cell index `iy * W + ix`.
    pub fn bev_cell(&self, c: Coord) -> usize {
        c[1] as usize * self.bev_width() + c[0] as usize
    }
}

/// Occupied voxel coordinates with one feature row each.
///
/// Coordinates are unique and sorted lexicographically by `(ix, iy, iz)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVoxelTensor {
    coords: Vec<Coord>,
    features: Vec<f64>,
    channels: usize,
    grid: VoxelGridConfig,
}

impl SparseVoxelTensor {
    /// Builds a tensor, sorting rows into canonical order.
    pub fn new(grid: VoxelGridConfig, channels: usize, coords: Vec<Coord>, features: Vec<f64>) -> Result<Self> {
        if features.len() != coords.len() * channels {
            return Err(Error::LengthMismatch {
                what: "features vs coords x channels",
                expected: coords.len() * channels,
                actual: features.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("features", "non-finite value"));
        }
        if let Some(c) = coords.iter().find(|c| !grid.contains(**c)) {
            return Err(Error::config("coords", format!("{c:?} outside grid")));
        }
        let mut order: Vec<usize> = (0..coords.len()).collect();
        order.sort_by_key(|&i| coords[i]);
        if order.windows(2).any(|w| coords[w[0]] == coords[w[1]]) {
            return Err(Error::config("coords", "duplicate coordinate"));
        }
        let sorted_coords = order.iter().map(|&i| coords[i]).collect();
        let mut sorted_features = Vec::with_capacity(features.len());
        for &i in &order {
            sorted_features.extend_from_slice(&features[i * channels..(i + 1) * channels]);
        }
        Ok(Self {
            coords: sorted_coords,
            features: sorted_features,
            channels,
            grid,
        })
    }

    /// Caller guarantees canonical order and consistent lengths.
    pub(crate) fn from_sorted(grid: VoxelGridConfig, channels: usize, coords: Vec<Coord>, features: Vec<f64>) -> Self {
        debug_assert_eq!(features.len(), coords.len() * channels);
        debug_assert!(coords.windows(2).all(|w| w[0] < w[1]));
        Self {
            coords,
            features,
            channels,
            grid,
        }
    }

    pub fn empty(grid: VoxelGridConfig, channels: usize) -> Self {
        Self::from_sorted(grid, channels, Vec::new(), Vec::new())
    }

    pub fn coords(&self) -> &[Coord] {
        &self.coords
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.channels..(i + 1) * self.channels]
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn grid(&self) -> &VoxelGridConfig {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Same features at coords shifted by `s`. Fails if any coord leaves the grid.
    pub fn shifted(&self, s: [i32; 3]) -> Result<Self> {
        let coords: Vec<Coord> = self
            .coords
            .iter()
            .map(|c| [c[0] + s[0], c[1] + s[1], c[2] + s[2]])
            .collect();
        if let Some(c) = coords.iter().find(|c| !self.grid.contains(**c)) {
            return Err(Error::config("shift", format!("{c:?} leaves the grid")));
        }
        Ok(Self::from_sorted(self.grid, self.channels, coords, self.features.clone()))
    }

    /// Same coords, replaced feature rows.
    pub(crate) fn with_features(&self, channels: usize, features: Vec<f64>) -> Self {
        Self::from_sorted(self.grid, channels, self.coords.clone(), features)
    }
}

/// Assigns points to voxels and computes the initial 4-channel features.
pub fn voxelize(cloud: &PointCloud, grid: &VoxelGridConfig) -> (SparseVoxelTensor, PointToVoxel) {
    let mut members: BTreeMap<Coord, Vec<usize>> = BTreeMap::new();
    let located: Vec<Option<Coord>> = cloud.points().iter().map(|&p| grid.locate(p)).collect();
    for (i, c) in located.iter().enumerate() {
        if let Some(c) = c {
            members.entry(*c).or_default().push(i);
        }
    }
    let mut coords = Vec::with_capacity(members.len());
    let mut features = Vec::with_capacity(members.len() * INPUT_CHANNELS);
    let mut map = vec![None; cloud.len()];
    for (v, (coord, idx)) in members.into_iter().enumerate() {
        let center = grid.center(coord);
        let mut sum = [0.0; 3];
        for &i in &idx {
            let p = cloud.points()[i];
            for a in 0..3 {
                sum[a] += p[a] - center[a];
            }
            map[i] = Some(v);
        }
        let n = idx.len() as f64;
        features.extend_from_slice(&[
            sum[0] / n,
            sum[1] / n,
            sum[2] / n,
            idx.len().min(COUNT_SATURATION) as f64 / COUNT_SATURATION as f64,
        ]);
        coords.push(coord);
    }
    (
        SparseVoxelTensor::from_sorted(*grid, INPUT_CHANNELS, coords, features),
        map,
    )
}

/// Dense `D_z x H x W x C` volume (H = D_y, W = D_x).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVolume {
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl DenseVolume {
    pub fn at(&self, iz: usize, iy: usize, ix: usize) -> &[f64] {
        let o = ((iz * self.height + iy) * self.width + ix) * self.channels;
        &self.data[o..o + self.channels]
    }
}

pub fn densify(t: &SparseVoxelTensor, cap: usize) -> Result<DenseVolume> {
    let [dx, dy, dz] = t.grid.dims();
    let elements = dx
        .checked_mul(dy)
        .and_then(|v| v.checked_mul(dz))
        .and_then(|v| v.checked_mul(t.channels))
        .unwrap_or(usize::MAX);
    if elements > cap {
        return Err(Error::DenseTooLarge { elements, cap });
    }
    let mut data = vec![0.0; elements];
    for (i, c) in t.coords.iter().enumerate() {
        let o = ((c[2] as usize * dy + c[1] as usize) * dx + c[0] as usize) * t.channels;
        data[o..o + t.channels].copy_from_slice(t.feature(i));
    }
    Ok(DenseVolume {
        depth: dz,
        height: dy,
        width: dx,
        channels: t.channels,
        data,
    })
}

/// Inverse of [`densify`]: every cell with a nonzero channel becomes a voxel.
pub fn sparsify(v: &DenseVolume, grid: &VoxelGridConfig) -> SparseVoxelTensor {
    let mut rows = Vec::new();
    for iz in 0..v.depth {
        for iy in 0..v.height {
            for ix in 0..v.width {
                let f = v.at(iz, iy, ix);
                if f.iter().any(|&x| x != 0.0) {
                    rows.push(([ix as i32, iy as i32, iz as i32], f.to_vec()));
                }
            }
        }
    }
    rows.sort_by_key(|r| r.0);
    let coords = rows.iter().map(|r| r.0).collect();
    let features = rows.into_iter().flat_map(|r| r.1).collect();
    SparseVoxelTensor::from_sorted(*grid, v.channels, coords, features)
}

/// Dense `H x W x C` bird's-eye-view map, cells in row-major `(iy, ix)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct BevMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl BevMap {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn cell(&self, idx: usize) -> &[f64] {
        &self.data[idx * self.channels..(idx + 1) * self.channels]
    }

    pub fn at(&self, iy: usize, ix: usize) -> &[f64] {
        self.cell(iy * self.width + ix)
    }
}

/// Height max-pooling: index of the winning voxel per (cell, channel), or `None`
/// for unoccupied columns.
pub(crate) fn bev_argmax(t: &SparseVoxelTensor) -> Vec<Option<usize>> {
    let cells = t.grid.bev_height() * t.grid.bev_width();
    let c = t.channels;
    let mut arg: Vec<Option<usize>> = vec![None; cells * c];
    for (i, coord) in t.coords.iter().enumerate() {
        let cell = t.grid.bev_cell(*coord);
        let f = t.feature(i);
        for ch in 0..c {
            let slot = &mut arg[cell * c + ch];
            match *slot {
                Some(j) if t.features[j * c + ch] >= f[ch] => {}
                _ => *slot = Some(i),
            }
        }
    }
    arg
}

/// Max over occupied voxels in each vertical column; empty columns are 0.
pub fn bev_maxpool(t: &SparseVoxelTensor) -> BevMap {
    let (h, w, c) = (t.grid.bev_height(), t.grid.bev_width(), t.channels);
    let arg = bev_argmax(t);
    let data = arg
        .iter()
        .enumerate()
        .map(|(k, a)| a.map_or(0.0, |i| t.features[i * c + k % c]))
        .collect();
    BevMap {
        height: h,
        width: w,
        channels: c,
        data,
    }
}
