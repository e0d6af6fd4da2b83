//! Voxelizes a synthetic frame, encodes it and max-pools the result to a BEV map.

use essl::data::{gen_pair, SynthConfig};
use essl::net::model::{encoder_forward, init_online};
use essl::rng::SeedStream;
use essl::voxel::{bev_maxpool, voxelize, VoxelGridConfig};

fn main() -> essl::Result<()> {
    let pair = gen_pair(&SynthConfig::default(), &mut SeedStream::new(3))?;
    let grid = VoxelGridConfig::synthetic();
    let (vox, map) = voxelize(&pair.curr, &grid);
    let dropped = map.iter().filter(|m| m.is_none()).count();
    println!("{} points -> {} voxels ({} dropped), grid {:?}", pair.curr.len(), vox.len(), dropped, grid.dims());
    println!("first voxel {:?}: {:?}", vox.coords()[0], vox.feature(0));

    let params = init_online(10, &mut SeedStream::new(0));
    let h = encoder_forward(&params, &vox)?;
    let bev = bev_maxpool(&h);
    let occupied = (0..bev.cells()).filter(|&c| bev.cell(c).iter().any(|&v| v != 0.0)).count();
    println!("encoded to {} channels; BEV {}x{} with {} non-zero cells", h.channels(), bev.height, bev.width, occupied);
    Ok(())
}
