//! Warps previous-frame features along scene flow and compares the result
//! with features computed directly on the current frame.

use essl::data::{gen_pair, SynthConfig};
use essl::flow::{warp_features, warp_points};
use essl::loss::flow_l2;
use essl::net::model::{encoder_forward, init_online, project_forward};
use essl::rng::SeedStream;
use essl::voxel::{bev_maxpool, voxelize, VoxelGridConfig};

fn main() -> essl::Result<()> {
    let pair = gen_pair(&SynthConfig::default(), &mut SeedStream::new(11))?;
    let grid = VoxelGridConfig::synthetic();
    let params = init_online(10, &mut SeedStream::new(0));

    let moved = warp_points(&pair.prev, &pair.flow)?;
    let err = moved
        .points()
        .iter()
        .zip(pair.curr.points())
        .map(|(a, b)| (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    println!("max distance between warped prev and curr points: {err:.2e} m");

    let (vox_prev, map_prev) = voxelize(&pair.prev, &grid);
    let h_prev = encoder_forward(&params, &vox_prev)?;
    let warped = warp_features(&h_prev, &pair.prev, &pair.flow, &map_prev)?;
    let (vox_curr, _) = voxelize(&pair.curr, &grid);
    let h_curr = encoder_forward(&params, &vox_curr)?;
    println!("prev {} voxels, warped {} voxels, curr {} voxels", h_prev.len(), warped.len(), h_curr.len());

    let z_warped = project_forward(&params, &bev_maxpool(&warped))?;
    let z_curr = project_forward(&params, &bev_maxpool(&h_curr))?;
    let z_prev = project_forward(&params, &bev_maxpool(&h_prev))?;
    println!("flow_l2(warped prev, curr)   = {:.4}", flow_l2(&z_warped, &z_curr)?);
    println!("flow_l2(unwarped prev, curr) = {:.4}", flow_l2(&z_prev, &z_curr)?);
    Ok(())
}
