//! The three training losses on small hand-made inputs.

use essl::loss::{combine, flow_l2, point_info_nce, rotation_ce, LossWeights, MatchSet};
use essl::voxel::BevMap;

fn main() -> essl::Result<()> {
    // four orthonormal features matched to themselves, one off-diagonal swap
    let eye: Vec<f64> = (0..16).map(|k| if k / 4 == k % 4 { 1.0 } else { 0.0 }).collect();
    let zeros = vec![0.0; 16];
    let diag = MatchSet::diagonal(4)?;
    println!("PointInfoNCE, identical features:  {:.6}", point_info_nce(&eye, &eye, 4, &diag, 1.0)?);
    println!("PointInfoNCE, all-zero features:   {:.6} (log 4 = {:.6})", point_info_nce(&zeros, &zeros, 4, &diag, 1.0)?, 4f64.ln());
    let swapped = MatchSet::new(vec![(0, 1), (1, 0), (2, 2), (3, 3)])?;
    println!("PointInfoNCE, two pairs swapped:   {:.6}", point_info_nce(&eye, &eye, 4, &swapped, 1.0)?);

    println!("rotation CE, uniform logits n=10:  {:.6}", rotation_ce(&[0.0; 10], 3)?);
    println!("rotation CE, [1, 0] label 0:       {:.6}", rotation_ce(&[1.0, 0.0], 0)?);

    let mut z = BevMap::zeros(1, 2, 2);
    z.data = vec![1.0, 0.0, 0.0, 1.0];
    let mut y = BevMap::zeros(1, 2, 2);
    y.data = vec![0.0, 1.0, 1.0, 0.0];
    println!("flow_l2, orthogonal cells:         {:.6}", flow_l2(&z, &y)?);
    println!("flow_l2, identical maps:           {:.6}", flow_l2(&z, &z)?);

    let r = combine(2.0, 1.5, 0.01, &LossWeights::default());
    println!("weighted total with default weights: {r:?}");
    Ok(())
}
