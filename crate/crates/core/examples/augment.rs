//! Samples rigid augmentations, composes them and checks the group laws on a point.

use essl::geom::{apply_transform, compose, inverse, sample_transform, AugmentConfig, PointCloud, RigidTransform};
use essl::rng::SeedStream;

fn main() {
    let cfg = AugmentConfig::default();
    let mut rng = SeedStream::new(42);
    let (a, class_a) = sample_transform(&cfg, &mut rng);
    let (b, class_b) = sample_transform(&cfg, &mut rng);
    println!("a: class {class_a} yaw {:+.4} flip {} scale {:.4}", a.yaw, a.flip, a.scale);
    println!("b: class {class_b} yaw {:+.4} flip {} scale {:.4}", b.yaw, b.flip, b.scale);

    let p = [3.0, -1.5, 0.25];
    let sequential = b.apply_point(a.apply_point(p));
    let composed = compose(&a, &b).apply_point(p);
    let back = inverse(&a).apply_point(a.apply_point(p));
    println!("b(a(p))      = {sequential:?}");
    println!("(a then b)(p) = {composed:?}");
    println!("a^-1(a(p))   = {back:?}");

    for k in 0..cfg.n_rotation_classes {
        print!("{:+.3} ", cfg.bin_center(k));
    }
    println!("<- yaw bin centers");

    let cloud = PointCloud::from_points(vec![[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]]).unwrap();
    let turned = apply_transform(&cloud, &RigidTransform::yaw(std::f64::consts::FRAC_PI_2));
    println!("quarter turn: {:?}", turned.points());
}
