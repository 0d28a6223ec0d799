//! Selective refinement of scale-4 features.
//!
//! An importance score in `[0, 1]` per fused voxel picks a semi-fine set `S`
//! (refined at scale 2) and a fine set `F` (refined at scale 1). Children
//! gather LiDAR and image features, and two strided sparse convolutions bring
//! the refined features back to scale 4 as a residual on the fused grid.

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::camera::{CameraModel, FeatureMap2D};
use crate::error::{Error, Result};
use crate::lidar::{output_set, sparse_conv, sparse_conv_on, ConvMode, SparseConvSpec};
use crate::linear::Linear;
use crate::occlusion::SemanticVolume;
use crate::scalar::{sigmoid, Real};
use crate::voxel::{subdivide, voxel_center, SparseVoxelGrid, VoxelIndex};

pub const DEFAULT_TAU1: f64 = 0.4;
pub const DEFAULT_TAU2: f64 = 0.7;

/// Per-voxel importance, aligned with the scored grid's rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceMap<T> {
    pub coords: Vec<VoxelIndex>,
    pub scores: Vec<T>,
}

impl<T: Real> ImportanceMap<T> {
    pub fn new(coords: Vec<VoxelIndex>, scores: Vec<T>) -> Result<Self> {
        if coords.len() != scores.len() {
            return Err(Error::Shape(format!("{} coords but {} scores", coords.len(), scores.len())));
        }
        if let Some(s) = scores.iter().find(|s| !(**s >= T::zero() && **s <= T::one())) {
            return Err(Error::Shape(format!("importance score {s} outside [0, 1]")));
        }
        Ok(Self { coords, scores })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Anything that can score the voxels of a fused grid.
pub trait Scorer<T: Real> {
    fn score(&self, fm: &SparseVoxelGrid<T>) -> Result<ImportanceMap<T>>;
}

/// Sigmoid of a single-channel submanifold convolution.
pub fn estimate_importance<T: Real>(fm: &SparseVoxelGrid<T>, rie: &SparseConvSpec<T>) -> Result<ImportanceMap<T>> {
    if rie.out_channels != 1 || rie.mode != ConvMode::Submanifold {
        return Err(Error::Shape(format!(
            "importance conv must be submanifold with 1 output channel, got {:?} with {}",
            rie.mode, rie.out_channels
        )));
    }
    let logits = sparse_conv(fm, rie)?;
    let coords = fm.coords().to_vec();
    let scores = coords
        .iter()
        .map(|c| sigmoid(logits.lookup(c).expect("submanifold output covers input")[0]))
        .collect();
    ImportanceMap::new(coords, scores)
}

impl<T: Real> Scorer<T> for SparseConvSpec<T> {
    fn score(&self, fm: &SparseVoxelGrid<T>) -> Result<ImportanceMap<T>> {
        estimate_importance(fm, self)
    }
}

/// Oracle scorer: fraction of a voxel's scale-1 children that are annotated.
pub struct OccupancyFractionScorer<'a, T> {
    pub gt: &'a SemanticVolume<T>,
}

impl<T: Real> Scorer<T> for OccupancyFractionScorer<'_, T> {
    fn score(&self, fm: &SparseVoxelGrid<T>) -> Result<ImportanceMap<T>> {
        if self.gt.geometry.scale != 1 {
            return Err(Error::InvalidScale("oracle scorer needs a scale-1 annotation".into()));
        }
        let coords = fm.coords().to_vec();
        let scores = coords
            .iter()
            .map(|c| Ok(T::lit(occupied_fraction(self.gt, c)?)))
            .collect::<Result<_>>()?;
        ImportanceMap::new(coords, scores)
    }
}

/// Fraction of the scale-1 cells under `parent` that are annotated.
pub fn occupied_fraction<T: Real>(gt: &SemanticVolume<T>, parent: &VoxelIndex) -> Result<f64> {
    let dims = gt.geometry.dims();
    let s = parent.scale;
    let mut hit = 0usize;
    let mut total = 0usize;
    for dx in 0..s {
        for dy in 0..s {
            for dz in 0..s {
                let c = [parent.x * s + dx, parent.y * s + dy, parent.z * s + dz];
                total += 1;
                if (0..3).all(|a| c[a] < dims[a]) && gt.is_occupied(&VoxelIndex::new(c[0], c[1], c[2], 1)) {
                    hit += 1;
                }
            }
        }
    }
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}

/// The two refinement sets, each sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementSets<T> {
    pub semi_fine: Vec<VoxelIndex>,
    pub fine: Vec<VoxelIndex>,
    pub tau1: T,
    pub tau2: T,
}

/// `S = {R >= tau1}`, `F = {R >= tau2}`. Thresholds above one select
/// nothing, which disables refinement.
pub fn select_sets<T: Real>(r: &ImportanceMap<T>, tau1: T, tau2: T) -> Result<RefinementSets<T>> {
    for t in [tau1, tau2] {
        if !(t >= T::zero()) || !t.is_finite() {
            return Err(Error::Config(format!("threshold {t} must be finite and non-negative")));
        }
    }
    let pick = |tau: T| {
        let mut v: Vec<VoxelIndex> = r
            .coords
            .iter()
            .zip(&r.scores)
            .filter(|(_, &s)| s >= tau)
            .map(|(c, _)| *c)
            .collect();
        v.sort();
        v
    };
    Ok(RefinementSets {
        semi_fine: pick(tau1),
        fine: pick(tau2),
        tau1,
        tau2,
    })
}

/// Mean bilinear sample over the cameras that see `p`; zeros if none do.
fn image_feature<T: Real>(p: [T; 3], rig: &[CameraModel<T>], maps: &FeatureMap2D<T>, out: &mut [T]) {
    let mut hits = 0usize;
    for (i, cam) in rig.iter().enumerate() {
        let Some(hit) = cam.project(p) else { continue };
        let (u, v) = maps.image_to_map(cam, hit.u, hit.v);
        maps.accumulate_bilinear(i, u, v, T::one(), out);
        hits += 1;
    }
    if hits > 1 {
        let n = T::lit(hits as f64);
        out.iter_mut().for_each(|x| *x /= n);
    }
}

/// Subdivides each parent by `factor` and gives every child
/// `proj([lidar(child) ; image(child)])`. Children absent from `lidar` read
/// zeros, as do children no camera sees.
pub fn gather_children<T: Real>(
    parents: &[VoxelIndex],
    factor: u32,
    lidar: &SparseVoxelGrid<T>,
    rig: &[CameraModel<T>],
    maps: &FeatureMap2D<T>,
    proj: &Linear<T>,
) -> Result<SparseVoxelGrid<T>> {
    let child_scale = parents.first().map_or(lidar.scale(), |p| p.scale / factor);
    if child_scale != lidar.scale() {
        return Err(Error::InvalidScale(format!(
            "children at scale {child_scale} but LiDAR grid at scale {}",
            lidar.scale()
        )));
    }
    if maps.cameras() != rig.len() {
        return Err(Error::Shape(format!("{} cameras but {} feature maps", rig.len(), maps.cameras())));
    }
    let cl = lidar.channels();
    proj.check_input(cl + maps.channels, "gather projection")?;
    let geom = *lidar.geometry();

    let per_parent: Vec<Result<Vec<(VoxelIndex, Vec<T>)>>> = parents
        .par_iter()
        .map(|p| {
            subdivide(*p, factor)?
                .into_iter()
                .map(|c| {
                    let mut x = vec![T::zero(); cl + maps.channels];
                    if let Some(f) = lidar.lookup(&c) {
                        x[..cl].copy_from_slice(f);
                    }
                    image_feature(voxel_center(&c, &geom)?, rig, maps, &mut x[cl..]);
                    Ok((c, proj.apply(&x)))
                })
                .collect()
        })
        .collect();

    let mut out = SparseVoxelGrid::with_capacity(geom, proj.out_dim, parents.len() * factor.pow(3) as usize);
    for rows in per_parent {
        for (c, f) in rows? {
            out.insert(c, &f)?;
        }
    }
    Ok(out)
}

/// Eight scale-2 children per semi-fine voxel.
pub fn gather_semi_fine<T: Real>(
    sets: &RefinementSets<T>,
    lidar2: &SparseVoxelGrid<T>,
    rig: &[CameraModel<T>],
    maps: &FeatureMap2D<T>,
    proj: &Linear<T>,
) -> Result<SparseVoxelGrid<T>> {
    gather_children(&sets.semi_fine, 2, lidar2, rig, maps, proj)
}

/// Sixty-four scale-1 children per fine voxel.
pub fn gather_fine<T: Real>(
    sets: &RefinementSets<T>,
    lidar1: &SparseVoxelGrid<T>,
    rig: &[CameraModel<T>],
    maps: &FeatureMap2D<T>,
    proj: &Linear<T>,
) -> Result<SparseVoxelGrid<T>> {
    gather_children(&sets.fine, 4, lidar1, rig, maps, proj)
}

/// Coordinate-aligned sum; voxels missing from one side count as zero.
pub fn union_add<T: Real>(a: &SparseVoxelGrid<T>, b: &SparseVoxelGrid<T>) -> Result<SparseVoxelGrid<T>> {
    if a.scale() != b.scale() || a.channels() != b.channels() {
        return Err(Error::Shape(format!(
            "cannot add {} channels at scale {} to {} channels at scale {}",
            b.channels(),
            b.scale(),
            a.channels(),
            a.scale()
        )));
    }
    let keys: BTreeSet<VoxelIndex> = a.coords().iter().chain(b.coords()).copied().collect();
    let mut out = SparseVoxelGrid::with_capacity(*a.geometry(), a.channels(), keys.len());
    let zero = vec![T::zero(); a.channels()];
    for k in keys {
        let x = a.lookup(&k).unwrap_or(&zero);
        let y = b.lookup(&k).unwrap_or(&zero);
        let s: Vec<T> = x.iter().zip(y).map(|(&p, &q)| p + q).collect();
        out.insert(k, &s)?;
    }
    Ok(out)
}

/// `F_E = SConv2(SConv1(fine) + semi_fine) + fm` over the voxels of `fm`.
///
/// Both convolutions are stride-2 expanding kernels. Voxels of `fm` the
/// refined path does not reach are copied unchanged.
pub fn fuse_refined<T: Real>(
    fine: &SparseVoxelGrid<T>,
    semi_fine: &SparseVoxelGrid<T>,
    fm: &SparseVoxelGrid<T>,
    sconv1: &SparseConvSpec<T>,
    sconv2: &SparseConvSpec<T>,
) -> Result<SparseVoxelGrid<T>> {
    if fine.scale() != 1 || semi_fine.scale() != 2 || fm.scale() != 4 {
        return Err(Error::Shape(format!(
            "refinement scales must be 1, 2, 4; got {}, {}, {}",
            fine.scale(),
            semi_fine.scale(),
            fm.scale()
        )));
    }
    for (s, name) in [(sconv1, "first"), (sconv2, "second")] {
        if s.stride != 2 || s.mode != ConvMode::Expanding {
            return Err(Error::Shape(format!("{name} refinement conv must be stride-2 expanding")));
        }
    }
    if sconv2.out_channels != fm.channels() {
        return Err(Error::Shape(format!(
            "refinement produces {} channels, fused grid has {}",
            sconv2.out_channels,
            fm.channels()
        )));
    }
    let up = if fine.is_empty() {
        SparseVoxelGrid::new(*semi_fine.geometry(), sconv1.out_channels)
    } else {
        sparse_conv(fine, sconv1)?
    };
    let mid = union_add(&up, semi_fine)?;

    let reach: BTreeSet<VoxelIndex> = output_set(&mid, sconv2)?.into_iter().collect();
    let targets: Vec<VoxelIndex> = fm.coords().iter().filter(|c| reach.contains(c)).copied().collect();
    let refined = sparse_conv_on(&mid, sconv2, &targets)?;

    let mut out = fm.clone();
    for (c, f) in refined.iter() {
        let r = out.row_index(&c).expect("target drawn from fm");
        for (o, &x) in out.row_mut(r).iter_mut().zip(f) {
            *o += x;
        }
    }
    Ok(out)
}
