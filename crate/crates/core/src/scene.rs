//! Procedural scenes with exact ground truth.
//!
//! A scene is a ground slab, thin walls and solid object boxes laid out on the
//! scale-4 lattice. The annotation, the simulated LiDAR sweep and the camera
//! feature renders all come from the same voxel volume, so they agree by
//! construction.
//!
//! Class ids: 0 free, 1..=10 foreground objects, 11 ground, 15 wall.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraModel, FeatureMap2D, Intrinsics, RigidTransform};
use crate::error::{Error, Result};
use crate::lidar::{LidarPoint, PointCloud};
use crate::occlusion::{traverse, SemanticVolume, EMPTY_CLASS};
use crate::rng::{rng, split_seed, uniform_vec};
use crate::scalar::Real;
use crate::voxel::{voxel_center, GridGeometry, VoxelIndex};

pub const GROUND_CLASS: u16 = 11;
pub const WALL_CLASS: u16 = 15;
pub const FOREGROUND_CLASSES: std::ops::RangeInclusive<u16> = 1..=10;
const LATTICE: u32 = 4;

pub fn is_foreground(class: u16) -> bool {
    FOREGROUND_CLASSES.contains(&class)
}

/// Axis-aligned block of scale-1 voxels, `min` inclusive, `max` exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SceneBox {
    pub min: [u32; 3],
    pub max: [u32; 3],
    pub class: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneParams {
    pub origin: [f64; 3],
    pub voxel_size: f64,
    pub dims: [u32; 3],
    /// Content is confined to `[0, region)` voxels; the rest of the grid is
    /// left empty. Defaults to the whole grid.
    pub region: Option<[u32; 3]>,
    pub ground: bool,
    pub walls: usize,
    pub objects: usize,
    /// Sensor height above the grid floor, meters.
    pub sensor_height: f64,
    pub cameras: usize,
    pub image_size: [u32; 2],
    pub image_channels: usize,
    pub lidar_azimuths: usize,
    pub lidar_elevations: usize,
    pub seed: u64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            origin: [-12.8, -12.8, -1.8],
            voxel_size: 0.2,
            dims: [128, 128, 16],
            region: None,
            ground: true,
            walls: 3,
            objects: 6,
            sensor_height: 1.8,
            cameras: 6,
            image_size: [96, 64],
            image_channels: 16,
            lidar_azimuths: 720,
            lidar_elevations: 24,
            seed: 0,
        }
    }
}

impl SceneParams {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    /// Nothing in the grid at all.
    pub fn empty(seed: u64) -> Self {
        Self {
            ground: false,
            walls: 0,
            objects: 0,
            seed,
            ..Self::default()
        }
    }

    pub fn geometry<T: Real>(&self) -> Result<GridGeometry<T>> {
        GridGeometry::new(self.origin.map(T::lit), T::lit(self.voxel_size), self.dims, 1)
    }

    fn region(&self) -> [u32; 3] {
        let r = self.region.unwrap_or(self.dims);
        [0, 1, 2].map(|a| r[a].min(self.dims[a]))
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene<T> {
    pub params: SceneParams,
    pub boxes: Vec<SceneBox>,
    pub gt: SemanticVolume<T>,
    pub cloud: PointCloud<T>,
    pub rig: Vec<CameraModel<T>>,
    pub features: FeatureMap2D<T>,
}

/// Lattice-cell rectangle in the xy plane, inclusive bounds.
#[derive(Clone, Copy)]
struct Footprint {
    lo: [u32; 2],
    hi: [u32; 2],
}

impl Footprint {
    /// True when the rectangles are closer than one free lattice cell.
    fn near(&self, o: &Footprint) -> bool {
        (0..2).all(|a| self.lo[a] <= o.hi[a] + 1 && o.lo[a] <= self.hi[a] + 1)
    }
}

fn layout(p: &SceneParams) -> Vec<SceneBox> {
    let region = p.region();
    let cells = [region[0] / LATTICE, region[1] / LATTICE];
    let dz = region[2];
    let mut boxes = Vec::new();
    if p.ground && dz > 0 {
        boxes.push(SceneBox {
            min: [0, 0, 0],
            max: [region[0], region[1], 1],
            class: GROUND_CLASS,
        });
    }
    if cells[0] < 3 || cells[1] < 3 || dz < 2 {
        return boxes;
    }
    let sensor = [cells[0] / 2, cells[1] / 2];
    // Keep a clear patch around the sensor.
    let mut taken = vec![Footprint {
        lo: [sensor[0].saturating_sub(1), sensor[1].saturating_sub(1)],
        hi: [sensor[0] + 1, sensor[1] + 1],
    }];
    let mut r = rng(split_seed(p.seed, "scene-layout"));
    let mut place = |len: [u32; 2], r: &mut rand_chacha::ChaCha8Rng| -> Option<Footprint> {
        if len[0] > cells[0] || len[1] > cells[1] {
            return None;
        }
        for _ in 0..200 {
            let lo = [r.gen_range(0..=cells[0] - len[0]), r.gen_range(0..=cells[1] - len[1])];
            let f = Footprint {
                lo,
                hi: [lo[0] + len[0] - 1, lo[1] + len[1] - 1],
            };
            if taken.iter().all(|t| !t.near(&f)) {
                taken.push(f);
                return Some(f);
            }
        }
        None
    };

    for _ in 0..p.walls {
        let along_x = r.gen_bool(0.5);
        let n = r.gen_range(3..=6u32);
        let len = if along_x { [n, 1] } else { [1, n] };
        let Some(f) = place(len, &mut r) else { continue };
        let h = r.gen_range(2..=3u32) * LATTICE;
        // Two voxels thick across the wall, flush with the lattice cell's low side.
        let (mut min, mut max) = (
            [f.lo[0] * LATTICE, f.lo[1] * LATTICE, 1],
            [(f.hi[0] + 1) * LATTICE, (f.hi[1] + 1) * LATTICE, h.min(dz)],
        );
        let thin = if along_x { 1 } else { 0 };
        max[thin] = min[thin] + 2;
        min[2] = 1;
        boxes.push(SceneBox {
            min,
            max,
            class: WALL_CLASS,
        });
    }
    for _ in 0..p.objects {
        let len = [r.gen_range(1..=2u32), r.gen_range(1..=2u32)];
        let Some(f) = place(len, &mut r) else { continue };
        let h = r.gen_range(1..=2u32) * LATTICE;
        boxes.push(SceneBox {
            min: [f.lo[0] * LATTICE, f.lo[1] * LATTICE, 1],
            max: [(f.hi[0] + 1) * LATTICE, (f.hi[1] + 1) * LATTICE, h.min(dz)],
            class: r.gen_range(FOREGROUND_CLASSES),
        });
    }
    boxes
}

fn rasterize<T: Real>(geom: GridGeometry<T>, boxes: &[SceneBox]) -> SemanticVolume<T> {
    let mut gt = SemanticVolume::empty(geom);
    for b in boxes {
        for x in b.min[0]..b.max[0] {
            for y in b.min[1]..b.max[1] {
                for z in b.min[2]..b.max[2] {
                    gt.set(&VoxelIndex::new(x, y, z, 1), b.class);
                }
            }
        }
    }
    gt
}

/// Farthest distance from `p` to a grid corner.
fn reach<T: Real>(p: [T; 3], geom: &GridGeometry<T>) -> T {
    let lo = geom.origin;
    let hi = geom.max_corner();
    let mut best = T::zero();
    for corner in 0..8 {
        let mut d2 = T::zero();
        for a in 0..3 {
            let c = if corner >> a & 1 == 1 { hi[a] } else { lo[a] };
            d2 += (c - p[a]) * (c - p[a]);
        }
        best = best.max(d2.sqrt());
    }
    best
}

/// First annotated voxel along a unit ray, with the entry distance.
pub fn first_hit<T: Real>(origin: [T; 3], dir: [T; 3], gt: &SemanticVolume<T>) -> Option<(VoxelIndex, T)> {
    let geom = &gt.geometry;
    let len = reach(origin, geom);
    let target = [0, 1, 2].map(|a| origin[a] + dir[a] * len);
    let hit = traverse(origin, target, geom, T::zero()).into_iter().find(|v| gt.is_occupied(v))?;
    // Entry distance from the slab test against the hit voxel.
    let size = geom.cell_size();
    let mut t_in = T::zero();
    for a in 0..3 {
        if dir[a] == T::zero() {
            continue;
        }
        let lo = geom.origin[a] + size * T::lit(f64::from(hit.xyz()[a]));
        let t0 = (lo - origin[a]) / dir[a];
        let t1 = (lo + size - origin[a]) / dir[a];
        t_in = t_in.max(t0.min(t1));
    }
    Some((hit, t_in))
}

fn simulate_lidar<T: Real>(p: &SceneParams, gt: &SemanticVolume<T>, sensor: [T; 3]) -> Result<PointCloud<T>> {
    let geom = gt.geometry;
    let nudge = geom.cell_size() * T::lit(0.05);
    let (na, ne) = (p.lidar_azimuths, p.lidar_elevations);
    let points: Vec<LidarPoint<T>> = (0..na * ne)
        .into_par_iter()
        .filter_map(|k| {
            let az = 2.0 * std::f64::consts::PI * (k % na) as f64 / na as f64;
            let el = if ne > 1 {
                (-30.0 + 40.0 * (k / na) as f64 / (ne - 1) as f64).to_radians()
            } else {
                0.0
            };
            let dir = [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()].map(T::lit);
            let (hit, t) = first_hit(sensor, dir, gt)?;
            let mut pos = [0, 1, 2].map(|a| sensor[a] + dir[a] * (t + nudge));
            if geom.voxel_of(pos) != Some(hit) {
                pos = voxel_center(&hit, &geom).ok()?;
            }
            let class = gt.label(&hit);
            Some(LidarPoint {
                position: pos,
                intensity: T::lit(0.05 * f64::from(class)),
            })
        })
        .collect();
    PointCloud::new(points, sensor)
}

/// Horizontal ring of cameras at `eye`, evenly spaced in yaw, 70 degree
/// horizontal field of view each.
pub fn ring_rig<T: Real>(eye: [T; 3], cameras: usize, width: u32, height: u32) -> Result<Vec<CameraModel<T>>> {
    let f = f64::from(width) / 2.0 / 35f64.to_radians().tan();
    (0..cameras)
        .map(|i| {
            let yaw = 2.0 * std::f64::consts::PI * i as f64 / cameras as f64;
            let target = [eye[0] + T::lit(yaw.cos()), eye[1] + T::lit(yaw.sin()), eye[2]];
            let ext = RigidTransform::look_at(eye, target, [T::zero(), T::zero(), T::one()])?;
            let k = Intrinsics {
                fx: T::lit(f),
                fy: T::lit(f),
                cx: T::lit((f64::from(width) - 1.0) / 2.0),
                cy: T::lit((f64::from(height) - 1.0) / 2.0),
            };
            CameraModel::new(k, ext, width, height)
        })
        .collect()
}

/// Fixed pseudo-random feature vector per class; free space is zero.
pub fn class_embedding<T: Real>(class: u16, channels: usize, seed: u64) -> Vec<T> {
    if class == EMPTY_CLASS {
        return vec![T::zero(); channels];
    }
    uniform_vec(split_seed(seed, &format!("class-{class}")), channels, 1.0)
}

fn render<T: Real>(p: &SceneParams, gt: &SemanticVolume<T>, rig: &[CameraModel<T>]) -> Result<FeatureMap2D<T>> {
    let [w, h] = p.image_size;
    let ch = p.image_channels;
    let seed = split_seed(p.seed, "class-embedding");
    let table: Vec<Vec<T>> = (0..=255u16).map(|c| class_embedding(c, ch, seed)).collect();
    let maps = rig
        .par_iter()
        .map(|cam| {
            let eye = cam.center();
            let mut m = vec![T::zero(); w as usize * h as usize * ch];
            for v in 0..h {
                for u in 0..w {
                    let dir = cam.pixel_ray(T::lit(f64::from(u)), T::lit(f64::from(v)));
                    if let Some((hit, _)) = first_hit(eye, dir, gt) {
                        let o = (v as usize * w as usize + u as usize) * ch;
                        m[o..o + ch].copy_from_slice(&table[usize::from(gt.label(&hit)).min(255)]);
                    }
                }
            }
            m
        })
        .collect();
    FeatureMap2D::new(w, h, ch, maps)
}

impl<T: Real> SyntheticScene<T> {
    pub fn generate(params: &SceneParams) -> Result<Self> {
        if params.cameras == 0 || params.image_channels == 0 {
            return Err(Error::Config("scene needs at least one camera and one image channel".into()));
        }
        let geom = params.geometry::<T>()?;
        let boxes = layout(params);
        let gt = rasterize(geom, &boxes);
        let region = params.region();
        let sensor = [
            geom.origin[0] + geom.voxel_size * T::lit(f64::from(region[0]) / 2.0),
            geom.origin[1] + geom.voxel_size * T::lit(f64::from(region[1]) / 2.0),
            geom.origin[2] + T::lit(params.sensor_height),
        ];
        let cloud = simulate_lidar(params, &gt, sensor)?;
        let rig = ring_rig(sensor, params.cameras, params.image_size[0], params.image_size[1])?;
        let features = render(params, &gt, &rig)?;
        Ok(Self {
            params: params.clone(),
            boxes,
            gt,
            cloud,
            rig,
            features,
        })
    }
}

/// Majority class among the annotated scale-1 cells of `parent` (lowest id on
/// ties), or free space when none are annotated.
pub fn parent_class<T: Real>(gt: &SemanticVolume<T>, parent: &VoxelIndex) -> u16 {
    let dims = gt.geometry.dims();
    let s = parent.scale;
    let mut counts = std::collections::BTreeMap::<u16, usize>::new();
    for dx in 0..s {
        for dy in 0..s {
            for dz in 0..s {
                let c = [parent.x * s + dx, parent.y * s + dy, parent.z * s + dz];
                if (0..3).any(|a| c[a] >= dims[a]) {
                    continue;
                }
                let idx = VoxelIndex::new(c[0], c[1], c[2], 1);
                if gt.is_occupied(&idx) {
                    *counts.entry(gt.label(&idx)).or_default() += 1;
                }
            }
        }
    }
    let mut best = (EMPTY_CLASS, 0);
    for (c, n) in counts {
        if n > best.1 {
            best = (c, n);
        }
    }
    best.0
}

/// Share of `set` whose majority class is a foreground class, `None` for an
/// empty set.
pub fn foreground_fraction<T: Real>(gt: &SemanticVolume<T>, set: &[VoxelIndex]) -> Option<f64> {
    if set.is_empty() {
        return None;
    }
    let fg = set.iter().filter(|p| is_foreground(parent_class(gt, p))).count();
    Some(fg as f64 / set.len() as f64)
}
