//! Point clouds, voxelization into the base-scale grid and multi-scale
//! downsampling.

mod conv;
mod kitti;

use std::collections::BTreeMap;

pub use conv::{output_set, sparse_conv, sparse_conv_on, ConvMode, SparseConvSpec};
pub use kitti::{parse_velodyne, read_velodyne_bin, write_velodyne_bin};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::voxel::{align_scale, voxel_center, GridGeometry, SparseVoxelGrid, VoxelIndex};

/// Number of hand-crafted channels `voxelize` fills before zero padding.
pub const ENCODED_CHANNELS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarPoint<T> {
    pub position: [T; 3],
    pub intensity: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T> {
    pub points: Vec<LidarPoint<T>>,
    /// Sensor position in world coordinates, the origin of every return's ray.
    pub sensor_origin: [T; 3],
}

impl<T: Real> PointCloud<T> {
    pub fn new(points: Vec<LidarPoint<T>>, sensor_origin: [T; 3]) -> Result<Self> {
        if let Some(i) = points
            .iter()
            .position(|p| p.position.iter().any(|v| !v.is_finite()) || !p.intensity.is_finite())
        {
            return Err(Error::Shape(format!("point {i} has non-finite values")));
        }
        Ok(Self {
            points,
            sensor_origin,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Appends another sweep already expressed in this cloud's frame.
    pub fn extend(&mut self, other: &PointCloud<T>) {
        self.points.extend_from_slice(&other.points);
    }

    pub fn cast<U: Real>(&self) -> PointCloud<U> {
        let c = |v: T| U::lit(v.as_f64());
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| LidarPoint {
                    position: p.position.map(c),
                    intensity: c(p.intensity),
                })
                .collect(),
            sensor_origin: self.sensor_origin.map(c),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Voxelized<T> {
    pub grid: SparseVoxelGrid<T>,
    /// Points that fell outside the grid.
    pub discarded: usize,
}

/// Bins points into scale-1 voxels.
///
/// Per voxel the features are `[count / max_count, mean intensity, mean offset
/// from the voxel center in voxel units (x, y, z)]`, zero padded to
/// `channels`. Points are summed in a canonical order inside each voxel so the
/// result does not depend on input order.
pub fn voxelize<T: Real>(pc: &PointCloud<T>, geom: &GridGeometry<T>, channels: usize) -> Result<Voxelized<T>> {
    if pc.is_empty() {
        return Err(Error::EmptyInput("point cloud has no points"));
    }
    if geom.scale != 1 {
        return Err(Error::InvalidScale(format!("voxelize needs a scale-1 grid, got {}", geom.scale)));
    }
    if channels < ENCODED_CHANNELS {
        return Err(Error::Shape(format!(
            "voxel encoding needs at least {ENCODED_CHANNELS} channels, got {channels}"
        )));
    }

    let mut cells: BTreeMap<VoxelIndex, Vec<&LidarPoint<T>>> = BTreeMap::new();
    let mut discarded = 0;
    for p in &pc.points {
        match geom.voxel_of(p.position) {
            Some(v) => cells.entry(v).or_default().push(p),
            None => discarded += 1,
        }
    }

    let max_count = cells.values().map(Vec::len).max().unwrap_or(1);
    let size = geom.cell_size();
    let mut grid = SparseVoxelGrid::with_capacity(*geom, channels, cells.len());
    for (v, mut pts) in cells {
        pts.sort_by(|a, b| {
            let ka = [a.position[0], a.position[1], a.position[2], a.intensity];
            let kb = [b.position[0], b.position[1], b.position[2], b.intensity];
            ka.iter()
                .zip(&kb)
                .map(|(x, y)| x.partial_cmp(y).expect("finite"))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let n = T::lit(pts.len() as f64);
        let center = voxel_center(&v, geom)?;
        let mut f = vec![T::zero(); channels];
        f[0] = n / T::lit(max_count as f64);
        for p in &pts {
            f[1] += p.intensity;
            for a in 0..3 {
                f[2 + a] += (p.position[a] - center[a]) / size;
            }
        }
        for x in &mut f[1..ENCODED_CHANNELS] {
            *x /= n;
        }
        grid.insert(v, &f)?;
    }
    Ok(Voxelized { grid, discarded })
}

/// How `downsample` turns a block of fine voxels into one coarse voxel.
#[derive(Debug, Clone, Copy)]
pub enum Downsample<'a, T> {
    /// Unweighted mean of the present children.
    MeanPool,
    /// Stride-2 sparse convolution evaluated at the occupied parents.
    Conv(&'a SparseConvSpec<T>),
}

/// Halves the resolution. The output voxels are exactly the parents of the
/// input voxels under integer division.
pub fn downsample<T: Real>(grid: &SparseVoxelGrid<T>, mode: Downsample<'_, T>) -> Result<SparseVoxelGrid<T>> {
    let coarse_scale = grid.scale() * 2;
    let coarse_geom = grid.geometry().at_scale(coarse_scale)?;

    let mut children: BTreeMap<VoxelIndex, Vec<usize>> = BTreeMap::new();
    for (r, c) in grid.coords().iter().enumerate() {
        children.entry(align_scale(*c, coarse_scale)?).or_default().push(r);
    }

    match mode {
        Downsample::MeanPool => {
            let ch = grid.channels();
            let mut out = SparseVoxelGrid::with_capacity(coarse_geom, ch, children.len());
            for (parent, mut rows) in children {
                rows.sort_by_key(|&r| grid.coords()[r]);
                let mut acc = vec![T::zero(); ch];
                for &r in &rows {
                    for (a, &x) in acc.iter_mut().zip(grid.row(r)) {
                        *a += x;
                    }
                }
                let n = T::lit(rows.len() as f64);
                acc.iter_mut().for_each(|a| *a /= n);
                out.insert(parent, &acc)?;
            }
            Ok(out)
        }
        Downsample::Conv(spec) => {
            if spec.stride != 2 {
                return Err(Error::Shape(format!("downsampling kernel needs stride 2, has {}", spec.stride)));
            }
            let parents: Vec<VoxelIndex> = children.into_keys().collect();
            sparse_conv_on(grid, spec, &parents)
        }
    }
}
