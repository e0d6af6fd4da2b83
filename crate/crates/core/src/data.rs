//! Synthetic scene pairs with exact flow, plus on-disk datasets in the
//! KITTI binary layout.
//!
//! On disk a dataset is a directory holding `manifest.json`, point files
//! (`*.bin`: little-endian f32 records `x, y, z, intensity`) and flow files
//! (`*.flow.bin`: little-endian f32 records `dx, dy, dz`, aligned to the
//! previous frame).

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::SceneFlow;
use crate::geom::{Interval, Point, PointCloud};
use crate::rng::SeedStream;

pub const POINT_RECORD_BYTES: usize = 16;
pub const FLOW_RECORD_BYTES: usize = 12;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Synthetic,
    File,
}

/// Consecutive frames and the flow from the earlier to the later one.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePair {
    pub prev: PointCloud,
    pub curr: PointCloud,
    pub flow: SceneFlow,
    pub provenance: Provenance,
}

impl ScenePair {
    pub fn new(prev: PointCloud, curr: PointCloud, flow: SceneFlow, provenance: Provenance) -> Result<Self> {
        if flow.len() != prev.len() {
            return Err(Error::LengthMismatch {
                what: "flow vs previous frame",
                expected: prev.len(),
                actual: flow.len(),
            });
        }
        Ok(Self {
            prev,
            curr,
            flow,
            provenance,
        })
    }
}

/// A street scene: ground strip, two facades along the x axis, and boxes
/// driving along +x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_objects: usize,
    pub object_length: Interval,
    pub object_width: Interval,
    pub object_height: Interval,
    /// Heading jitter around +x (radians).
    pub object_yaw_jitter: f64,
    /// Object speed along its heading (m/frame).
    pub object_speed: Interval,
    /// Sensor speed along +x (m/frame).
    pub ego_speed: Interval,
    /// Half length of the ground strip and facades along x (m).
    pub ground_extent: f64,
    /// Half width of the ground strip along y (m).
    pub road_half_width: f64,
    pub ground_z: f64,
    pub walls: bool,
    pub wall_offset: f64,
    pub wall_height: f64,
    pub points_per_object: usize,
    pub points_per_ground: usize,
    pub points_per_wall: usize,
    /// Horizontal range inside which surfaces keep their full sample density.
    pub density_radius: f64,
    /// Frames between `prev` and `curr`.
    pub frame_stride: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_objects: 4,
            object_length: Interval::new(1.5, 4.0),
            object_width: Interval::new(1.2, 2.0),
            object_height: Interval::new(1.0, 1.8),
            object_yaw_jitter: 0.15,
            object_speed: Interval::new(0.0, 0.6),
            ego_speed: Interval::new(0.0, 0.5),
            ground_extent: 7.5,
            road_half_width: 4.0,
            ground_z: -1.5,
            walls: true,
            wall_offset: 5.0,
            wall_height: 2.5,
            points_per_object: 300,
            points_per_ground: 3000,
            points_per_wall: 1000,
            density_radius: 4.0,
            frame_stride: 1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, iv) in [
            ("synth.object_length", self.object_length),
            ("synth.object_width", self.object_width),
            ("synth.object_height", self.object_height),
            ("synth.object_speed", self.object_speed),
            ("synth.ego_speed", self.ego_speed),
        ] {
            iv.validate(name)?;
            if iv.lo < 0.0 {
                return Err(Error::config(name, "must be nonnegative"));
            }
        }
        for (name, v) in [
            ("synth.object_yaw_jitter", self.object_yaw_jitter),
            ("synth.ground_extent", self.ground_extent),
            ("synth.road_half_width", self.road_half_width),
            ("synth.wall_offset", self.wall_offset),
            ("synth.wall_height", self.wall_height),
            ("synth.density_radius", self.density_radius),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(name, "must be finite and nonnegative"));
            }
        }
        if !self.ground_z.is_finite() {
            return Err(Error::config("synth.ground_z", "must be finite"));
        }
        if self.frame_stride == 0 {
            return Err(Error::config("synth.frame_stride", "must be >= 1"));
        }
        Ok(())
    }
}

/// Keeps a surface sample with probability `min(1, (r0 / r)^2)`.
fn keep_at_range(p: Point, r0: f64, rng: &mut SeedStream) -> bool {
    let r2 = p[0] * p[0] + p[1] * p[1];
    let accept = if r2 <= r0 * r0 { 1.0 } else { r0 * r0 / r2 };
    rng.gen::<f64>() < accept
}

struct Surface {
    points: Vec<Point>,
    intensity: Vec<f64>,
    displacement: [f64; 3],
}

fn sample_rect(
    n: usize,
    origin: Point,
    u: [f64; 3],
    v: [f64; 3],
    base_intensity: f64,
    cfg: &SynthConfig,
    rng: &mut SeedStream,
    out: &mut Surface,
) {
    for _ in 0..n {
        let (a, b): (f64, f64) = (rng.gen(), rng.gen());
        let p = [
            origin[0] + a * u[0] + b * v[0],
            origin[1] + a * u[1] + b * v[1],
            origin[2] + a * u[2] + b * v[2],
        ];
        let noise: f64 = rng.gen_range(-0.05..0.05);
        if keep_at_range(p, cfg.density_radius, rng) {
            out.points.push(p);
            out.intensity.push(base_intensity + noise);
        }
    }
}

/// Generates one pair: frame `t` is frame `t - 1` advanced by the object
/// velocities minus the ego motion, with every point persisting.
pub fn gen_pair(cfg: &SynthConfig, rng: &mut SeedStream) -> Result<ScenePair> {
    cfg.validate()?;
    let stride = cfg.frame_stride as f64;
    let ego = cfg.ego_speed.sample(rng) * stride;
    let static_motion = [-ego, 0.0, 0.0];
    let mut surfaces = Vec::new();

    let mut ground = Surface {
        points: Vec::new(),
        intensity: Vec::new(),
        displacement: static_motion,
    };
    let (gx, gy) = (cfg.ground_extent, cfg.road_half_width);
    sample_rect(cfg.points_per_ground, [-gx, -gy, cfg.ground_z], [2.0 * gx, 0.0, 0.0], [0.0, 2.0 * gy, 0.0], 0.2, cfg, rng, &mut ground);
    if cfg.walls {
        for side in [-1.0, 1.0] {
            sample_rect(
                cfg.points_per_wall,
                [-gx, side * cfg.wall_offset, cfg.ground_z],
                [2.0 * gx, 0.0, 0.0],
                [0.0, 0.0, cfg.wall_height],
                0.5,
                cfg,
                rng,
                &mut ground,
            );
        }
    }
    surfaces.push(ground);

    for _ in 0..cfg.n_objects {
        let len = cfg.object_length.sample(rng);
        let wid = cfg.object_width.sample(rng);
        let hgt = cfg.object_height.sample(rng);
        let yaw = if cfg.object_yaw_jitter > 0.0 {
            rng.gen_range(-cfg.object_yaw_jitter..=cfg.object_yaw_jitter)
        } else {
            0.0
        };
        let x_room = (gx - len / 2.0).max(0.0);
        let y_room = (gy - wid / 2.0).max(0.0);
        let cx = rng.gen_range(-x_room..=x_room);
        let cy = rng.gen_range(-y_room..=y_room);
        let speed = cfg.object_speed.sample(rng) * stride;
        let (s, c) = yaw.sin_cos();
        let fwd = [c, s, 0.0];
        let side = [-s, c, 0.0];
        let up = [0.0, 0.0, hgt];
        let scaled = |v: [f64; 3], k: f64| [v[0] * k, v[1] * k, v[2] * k];
        let corner = |a: f64, b: f64| {
            [
                cx + a * len / 2.0 * fwd[0] + b * wid / 2.0 * side[0],
                cy + a * len / 2.0 * fwd[1] + b * wid / 2.0 * side[1],
                cfg.ground_z,
            ]
        };
        // four sides and the roof, sampled proportionally to area
        let faces = [
            (corner(-1.0, -1.0), scaled(fwd, len), up, len * hgt),
            (corner(-1.0, 1.0), scaled(fwd, len), up, len * hgt),
            (corner(-1.0, -1.0), scaled(side, wid), up, wid * hgt),
            (corner(1.0, -1.0), scaled(side, wid), up, wid * hgt),
            (
                {
                    let mut o = corner(-1.0, -1.0);
                    o[2] += hgt;
                    o
                },
                scaled(fwd, len),
                scaled(side, wid),
                len * wid,
            ),
        ];
        let area: f64 = faces.iter().map(|f| f.3).sum();
        let mut obj = Surface {
            points: Vec::new(),
            intensity: Vec::new(),
            displacement: [speed * fwd[0] - ego, speed * fwd[1], 0.0],
        };
        for (origin, u, v, a) in faces {
            let n = (cfg.points_per_object as f64 * a / area).round() as usize;
            sample_rect(n, origin, u, v, 0.8, cfg, rng, &mut obj);
        }
        surfaces.push(obj);
    }

    let mut prev = Vec::new();
    let mut curr = Vec::new();
    let mut intensity = Vec::new();
    let mut flow = Vec::new();
    for s in surfaces {
        for (p, i) in s.points.into_iter().zip(s.intensity) {
            let d = s.displacement;
            prev.push(p);
            curr.push([p[0] + d[0], p[1] + d[1], p[2] + d[2]]);
            intensity.push(i.clamp(0.0, 1.0));
            flow.push(d);
        }
    }
    if prev.is_empty() {
        return Err(Error::Degenerate("synthetic scene produced no points".into()));
    }
    ScenePair::new(
        PointCloud::new(prev, Some(intensity.clone()))?,
        PointCloud::new(curr, Some(intensity))?,
        SceneFlow::new(flow)?,
        Provenance::Synthetic,
    )
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn f32s(bytes: &[u8]) -> impl Iterator<Item = f64> + '_ {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
}

pub fn load_point_bin(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = read(path)?;
    if bytes.len() % POINT_RECORD_BYTES != 0 {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            reason: format!("{} bytes is not a multiple of {POINT_RECORD_BYTES}", bytes.len()),
        });
    }
    let vals: Vec<f64> = f32s(&bytes).collect();
    let points = vals.chunks_exact(4).map(|r| [r[0], r[1], r[2]]).collect();
    let intensity = vals.chunks_exact(4).map(|r| r[3]).collect();
    PointCloud::new(points, Some(intensity)).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn write_point_bin(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(cloud.len() * POINT_RECORD_BYTES);
    for (i, p) in cloud.points().iter().enumerate() {
        let inten = cloud.intensity().map_or(0.0, |v| v[i]);
        for v in [p[0], p[1], p[2], inten] {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_flow_bin(path: impl AsRef<Path>, expected_count: usize) -> Result<SceneFlow> {
    let path = path.as_ref();
    let bytes = read(path)?;
    if bytes.len() != expected_count * FLOW_RECORD_BYTES {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            reason: format!("{} bytes, expected {} for {expected_count} points", bytes.len(), expected_count * FLOW_RECORD_BYTES),
        });
    }
    let vals: Vec<f64> = f32s(&bytes).collect();
    SceneFlow::new(vals.chunks_exact(3).map(|r| [r[0], r[1], r[2]]).collect()).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn write_flow_bin(path: impl AsRef<Path>, flow: &SceneFlow) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(flow.len() * FLOW_RECORD_BYTES);
    for d in flow.displacements() {
        for v in d {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Axis-aligned crop region, half-open `[min, max)` per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for CropBox {
    fn default() -> Self {
        Self {
            min: [0.0, -40.0, -3.0],
            max: [70.4, 40.0, 1.0],
        }
    }
}

impl CropBox {
    pub fn validate(&self) -> Result<()> {
        if (0..3).any(|a| !(self.min[a] < self.max[a])) {
            return Err(Error::config("ffov", "min must be below max on every axis"));
        }
        Ok(())
    }

    pub fn contains(&self, p: Point) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] < self.max[a])
    }
}

/// Front field-of-view crop; also returns the original indices of survivors.
pub fn ffov_crop(cloud: &PointCloud, region: &CropBox) -> (PointCloud, Vec<usize>) {
    let kept: Vec<usize> = (0..cloud.len()).filter(|&i| region.contains(cloud.points()[i])).collect();
    (cloud.select(&kept), kept)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairEntry {
    pub prev: String,
    pub curr: String,
    pub flow: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceEntry {
    pub name: String,
    pub pairs: Vec<PairEntry>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub sequences: Vec<SequenceEntry>,
}

impl Manifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = read(path)?;
        serde_json::from_slice(&bytes).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn pair_count(&self) -> usize {
        self.sequences.iter().map(|s| s.pairs.len()).sum()
    }
}

/// A manifest plus its root directory; pairs are iterated in manifest order.
#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    pairs: Vec<PairEntry>,
    crop: Option<CropBox>,
}

impl Dataset {
    pub fn open(root: impl AsRef<Path>, crop: Option<CropBox>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let manifest = Manifest::read(root.join(MANIFEST_FILE))?;
        if let Some(c) = &crop {
            c.validate()?;
        }
        Ok(Self {
            root,
            pairs: manifest.sequences.into_iter().flat_map(|s| s.pairs).collect(),
            crop,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn load(&self, index: usize) -> Result<ScenePair> {
        let e = &self.pairs[index];
        let prev = load_point_bin(self.root.join(&e.prev))?;
        let curr = load_point_bin(self.root.join(&e.curr))?;
        let flow = load_flow_bin(self.root.join(&e.flow), prev.len())?;
        let (prev, curr, flow) = match &self.crop {
            Some(region) => {
                let (p, kept) = ffov_crop(&prev, region);
                let (c, _) = ffov_crop(&curr, region);
                (p, c, flow.select(&kept))
            }
            None => (prev, curr, flow),
        };
        ScenePair::new(prev, curr, flow, Provenance::File)
    }

    pub fn load_all(&self) -> Result<Vec<ScenePair>> {
        (0..self.len()).map(|i| self.load(i)).collect()
    }
}

/// File names used for pair `i` of a generated dataset.
pub fn pair_file_names(i: usize) -> PairEntry {
    PairEntry {
        prev: format!("pair_{i:06}_prev.bin"),
        curr: format!("pair_{i:06}_curr.bin"),
        flow: format!("pair_{i:06}.flow.bin"),
    }
}

/// Writes `n` synthetic pairs and a manifest; pair `i` uses its own stream
/// forked from `seed`.
pub fn write_synthetic_dataset(dir: impl AsRef<Path>, cfg: &SynthConfig, seed: u64, n: usize) -> Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let root = SeedStream::new(seed);
    let mut pairs = Vec::with_capacity(n);
    for i in 0..n {
        let pair = gen_pair(cfg, &mut root.fork(i as u64))?;
        let names = pair_file_names(i);
        write_point_bin(dir.join(&names.prev), &pair.prev)?;
        write_point_bin(dir.join(&names.curr), &pair.curr)?;
        write_flow_bin(dir.join(&names.flow), &pair.flow)?;
        pairs.push(names);
    }
    let manifest = Manifest {
        sequences: if n == 0 {
            Vec::new()
        } else {
            vec![SequenceEntry {
                name: "synthetic".into(),
                pairs,
            }]
        },
    };
    manifest.write(dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::warp_points;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn static_scene_has_zero_flow() {
        let cfg = SynthConfig {
            n_objects: 0,
            ego_speed: Interval::new(0.0, 0.0),
            ..Default::default()
        };
        let pair = gen_pair(&cfg, &mut SeedStream::new(1)).unwrap();
        assert!(!pair.prev.is_empty());
        assert!(pair.flow.displacements().iter().all(|d| *d == [0.0; 3]));
        assert_eq!(pair.prev, pair.curr);
    }

    #[test]
    fn moving_object_flow() {
        let cfg = SynthConfig {
            n_objects: 1,
            object_speed: Interval::new(1.0, 1.0),
            object_yaw_jitter: 0.0,
            ego_speed: Interval::new(0.0, 0.0),
            ..Default::default()
        };
        let pair = gen_pair(&cfg, &mut SeedStream::new(2)).unwrap();
        let moving = pair.flow.displacements().iter().filter(|d| **d == [1.0, 0.0, 0.0]).count();
        let still = pair.flow.displacements().iter().filter(|d| **d == [0.0; 3]).count();
        assert!(moving > 0);
        assert_eq!(moving + still, pair.flow.len());
        // intensities of object points are the brightest
        let inten = pair.prev.intensity().unwrap();
        for (d, i) in pair.flow.displacements().iter().zip(inten) {
            if *d == [1.0, 0.0, 0.0] {
                assert!(*i > 0.7);
            }
        }
    }

    #[test]
    fn stride_scales_motion() {
        let base = SynthConfig {
            n_objects: 0,
            ego_speed: Interval::new(0.3, 0.3),
            ..Default::default()
        };
        let strided = SynthConfig { frame_stride: 3, ..base.clone() };
        let a = gen_pair(&base, &mut SeedStream::new(5)).unwrap();
        let b = gen_pair(&strided, &mut SeedStream::new(5)).unwrap();
        assert_eq!(a.flow.displacements()[0][0], -0.3);
        assert!((b.flow.displacements()[0][0] + 0.9).abs() < 1e-12);
    }

    #[test]
    fn generation_is_deterministic_and_exact() {
        let cfg = SynthConfig::default();
        let a = gen_pair(&cfg, &mut SeedStream::new(9)).unwrap();
        let b = gen_pair(&cfg, &mut SeedStream::new(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(warp_points(&a.prev, &a.flow).unwrap(), a.curr);
    }

    #[test]
    fn empty_scene_is_an_error() {
        let cfg = SynthConfig {
            n_objects: 0,
            points_per_ground: 0,
            walls: false,
            ..Default::default()
        };
        assert!(matches!(gen_pair(&cfg, &mut SeedStream::new(1)), Err(Error::Degenerate(_))));
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = SynthConfig {
            object_speed: Interval::new(1.0, 0.0),
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config { .. })));
    }

    #[test]
    fn point_bin_sizes() {
        let d = tmp();
        let one = d.path().join("one.bin");
        fs::write(&one, [0u8; 16]).unwrap();
        assert_eq!(load_point_bin(&one).unwrap().len(), 1);
        let empty = d.path().join("empty.bin");
        fs::write(&empty, []).unwrap();
        assert!(load_point_bin(&empty).unwrap().is_empty());
        let bad = d.path().join("bad.bin");
        fs::write(&bad, [0u8; 17]).unwrap();
        assert!(matches!(load_point_bin(&bad), Err(Error::Malformed { .. })));
        assert!(matches!(load_point_bin(d.path().join("missing.bin")), Err(Error::Io { .. })));
    }

    #[test]
    fn point_bin_round_trip() {
        let d = tmp();
        let cloud = PointCloud::new(vec![[1.5, -2.25, 0.125], [3.0, 4.0, -1.0]], Some(vec![0.5, 0.75])).unwrap();
        let path = d.path().join("c.bin");
        write_point_bin(&path, &cloud).unwrap();
        assert_eq!(load_point_bin(&path).unwrap(), cloud);
    }

    #[test]
    fn flow_bin_sizes_and_round_trip() {
        let d = tmp();
        let path = d.path().join("f.flow.bin");
        let flow = SceneFlow::new(vec![[0.5, -0.25, 1.0]]).unwrap();
        write_flow_bin(&path, &flow).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 12);
        assert_eq!(load_flow_bin(&path, 1).unwrap(), flow);
        let two = d.path().join("two.flow.bin");
        fs::write(&two, [0u8; 24]).unwrap();
        assert!(matches!(load_flow_bin(&two, 1), Err(Error::Malformed { .. })));
    }

    #[test]
    fn ffov_crop_cases() {
        let region = CropBox::default();
        let c = PointCloud::from_points(vec![[-1.0, 0.0, 0.0], [10.0, 0.0, 0.0]]).unwrap();
        let (out, kept) = ffov_crop(&c, &region);
        assert_eq!(kept, vec![1]);
        assert_eq!(out.points(), &[[10.0, 0.0, 0.0]]);

        let inside = PointCloud::from_points(vec![[1.0, 1.0, 0.0], [2.0, -3.0, -1.0]]).unwrap();
        let (out, kept) = ffov_crop(&inside, &region);
        assert_eq!(out, inside);
        assert_eq!(kept, vec![0, 1]);
    }

    #[test]
    fn crop_keeps_flow_pairing() {
        let cfg = SynthConfig::default();
        let pair = gen_pair(&cfg, &mut SeedStream::new(4)).unwrap();
        let region = CropBox {
            min: [0.0, -8.0, -3.0],
            max: [8.0, 8.0, 3.0],
        };
        let (cropped, kept) = ffov_crop(&pair.prev, &region);
        let flow = pair.flow.select(&kept);
        let warped = warp_points(&cropped, &flow).unwrap();
        for (r, &i) in kept.iter().enumerate() {
            assert_eq!(warped.points()[r], pair.curr.points()[i]);
        }
    }

    #[test]
    fn dataset_round_trip() {
        let d = tmp();
        let cfg = SynthConfig::default();
        let m = write_synthetic_dataset(d.path(), &cfg, 3, 2).unwrap();
        assert_eq!(m.pair_count(), 2);
        let ds = Dataset::open(d.path(), None).unwrap();
        assert_eq!(ds.len(), 2);
        let p = ds.load(1).unwrap();
        assert_eq!(p.provenance, Provenance::File);
        assert_eq!(p.flow.len(), p.prev.len());

        let empty = tmp();
        write_synthetic_dataset(empty.path(), &cfg, 3, 0).unwrap();
        assert!(Dataset::open(empty.path(), None).unwrap().is_empty());
    }

    #[test]
    fn manifest_rejects_unknown_keys() {
        let d = tmp();
        fs::write(d.path().join(MANIFEST_FILE), r#"{"sequences": [], "extra": 1}"#).unwrap();
        assert!(matches!(Dataset::open(d.path(), None), Err(Error::Json { .. })));
    }
}
