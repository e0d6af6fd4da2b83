//! Scene flow: point warping and sparse feature warping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::voxel::{voxelize, Coord, SparseVoxelTensor};

/// Per-point displacement, index-aligned with a source cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFlow {
    displacements: Vec<[f64; 3]>,
}

impl SceneFlow {
    pub fn new(displacements: Vec<[f64; 3]>) -> Result<Self> {
        if displacements.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::config("flow", "non-finite displacement"));
        }
        Ok(Self { displacements })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            displacements: vec![[0.0; 3]; n],
        }
    }

    pub fn displacements(&self) -> &[[f64; 3]] {
        &self.displacements
    }

    pub fn len(&self) -> usize {
        self.displacements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.displacements.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            displacements: indices.iter().map(|&i| self.displacements[i]).collect(),
        }
    }
}

fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::LengthMismatch { what, expected, actual });
    }
    Ok(())
}

/// `p_t = p_{t-1} + d` for every point.
pub fn warp_points(cloud: &PointCloud, flow: &SceneFlow) -> Result<PointCloud> {
    check_len("flow vs cloud", cloud.len(), flow.len())?;
    let pts = cloud
        .points()
        .iter()
        .zip(&flow.displacements)
        .map(|(p, d)| [p[0] + d[0], p[1] + d[1], p[2] + d[2]])
        .collect();
    Ok(cloud.with_points(pts))
}

/// Moves voxel features along the flow.
///
/// Warped points are re-voxelized on the source grid. Every point that
/// survives at both ends carries its source voxel's feature to its target
/// voxel; each target voxel takes the mean over contributing points.
pub fn warp_features(
    h_prev: &SparseVoxelTensor,
    cloud_prev: &PointCloud,
    flow: &SceneFlow,
    point_to_voxel_prev: &[Option<usize>],
) -> Result<SparseVoxelTensor> {
    check_len("index map vs cloud", cloud_prev.len(), point_to_voxel_prev.len())?;
    let warped = warp_points(cloud_prev, flow)?;
    let grid = *h_prev.grid();
    let c = h_prev.channels();
    let (target, target_map) = voxelize(&warped, &grid);

    let mut sums = vec![0.0; target.len() * c];
    let mut counts = vec![0usize; target.len()];
    for (src, dst) in point_to_voxel_prev.iter().zip(&target_map) {
        if let (Some(s), Some(d)) = (*src, *dst) {
            if s >= h_prev.len() {
                return Err(Error::LengthMismatch {
                    what: "index map entry vs source voxels",
                    expected: h_prev.len(),
                    actual: s,
                });
            }
            counts[d] += 1;
            for (acc, v) in sums[d * c..(d + 1) * c].iter_mut().zip(h_prev.feature(s)) {
                *acc += v;
            }
        }
    }

    let mut coords: Vec<Coord> = Vec::new();
    let mut features = Vec::new();
    for (d, coord) in target.coords().iter().enumerate() {
        if counts[d] == 0 {
            continue;
        }
        let n = counts[d] as f64;
        coords.push(*coord);
        features.extend(sums[d * c..(d + 1) * c].iter().map(|s| s / n));
    }
    Ok(SparseVoxelTensor::from_sorted(grid, c, coords, features))
}
