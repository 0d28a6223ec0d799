//! Multi-scale voxel index algebra and coordinate-keyed sparse feature storage.
//!
//! A grid is described once at scale 1 ([`GridGeometry::dims_scale1`]); a voxel
//! at scale `s` spans `s` base cells per axis. Scale-`s` dims are the
//! component-wise ceiling of the base dims divided by `s`.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Scales a grid may be expressed at.
pub const SCALES: [u32; 5] = [1, 2, 4, 8, 16];

const KEY_BITS: u32 = 21;
const KEY_MASK: u64 = (1 << KEY_BITS) - 1;

pub fn is_valid_scale(scale: u32) -> bool {
    SCALES.contains(&scale)
}

/// Integer voxel coordinate tagged with the scale it lives at.
///
/// Ordering is lexicographic on `(x, y, z)` with `z` varying fastest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VoxelIndex {
    pub x: u32,
    pub y: u32,
    pub z: u32,
    pub scale: u32,
}

impl VoxelIndex {
    pub const fn new(x: u32, y: u32, z: u32, scale: u32) -> Self {
        Self { x, y, z, scale }
    }

    pub fn xyz(&self) -> [u32; 3] {
        [self.x, self.y, self.z]
    }

    /// Packs `(x, y, z)` into one key, 21 bits per axis.
    #[inline]
    pub fn key(&self) -> u64 {
        debug_assert!(u64::from(self.x.max(self.y).max(self.z)) <= KEY_MASK);
        (u64::from(self.x) << (2 * KEY_BITS)) | (u64::from(self.y) << KEY_BITS) | u64::from(self.z)
    }

    pub fn from_key(key: u64, scale: u32) -> Self {
        Self {
            x: ((key >> (2 * KEY_BITS)) & KEY_MASK) as u32,
            y: ((key >> KEY_BITS) & KEY_MASK) as u32,
            z: (key & KEY_MASK) as u32,
            scale,
        }
    }
}

impl fmt::Display for VoxelIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})@{}", self.x, self.y, self.z, self.scale)
    }
}

/// Placement and extent of a voxel grid in world space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry<T> {
    /// World position of the grid's minimum corner, meters.
    pub origin: [T; 3],
    /// Edge length of a scale-1 voxel, meters.
    pub voxel_size: T,
    pub dims_scale1: [u32; 3],
    pub scale: u32,
}

impl<T: Real> GridGeometry<T> {
    pub fn new(origin: [T; 3], voxel_size: T, dims_scale1: [u32; 3], scale: u32) -> Result<Self> {
        if !is_valid_scale(scale) {
            return Err(Error::InvalidScale(format!("{scale} not in {SCALES:?}")));
        }
        if dims_scale1.iter().any(|&d| d == 0 || u64::from(d) > KEY_MASK) {
            return Err(Error::Config(format!("grid dims {dims_scale1:?} out of range")));
        }
        if !(voxel_size > T::zero()) || !voxel_size.is_finite() {
            return Err(Error::Config(format!("voxel size {voxel_size} must be positive")));
        }
        Ok(Self {
            origin,
            voxel_size,
            dims_scale1,
            scale,
        })
    }

    /// nuScenes-Occupancy: 512 x 512 x 40 voxels of 0.2 m over
    /// [-51.2, 51.2] x [-51.2, 51.2] x [-5, 3].
    pub fn nuscenes_occupancy() -> Self {
        Self {
            origin: [T::lit(-51.2), T::lit(-51.2), T::lit(-5.0)],
            voxel_size: T::lit(0.2),
            dims_scale1: [512, 512, 40],
            scale: 1,
        }
    }

    /// SemanticKITTI: 256 x 256 x 32 voxels of 0.2 m over
    /// [0, 51.2] x [-25.6, 25.6] x [-2, 4.4].
    pub fn semantic_kitti() -> Self {
        Self {
            origin: [T::zero(), T::lit(-25.6), T::lit(-2.0)],
            voxel_size: T::lit(0.2),
            dims_scale1: [256, 256, 32],
            scale: 1,
        }
    }

    /// The same grid expressed at another scale.
    pub fn at_scale(&self, scale: u32) -> Result<Self> {
        if !is_valid_scale(scale) {
            return Err(Error::InvalidScale(format!("{scale} not in {SCALES:?}")));
        }
        Ok(Self { scale, ..*self })
    }

    pub fn dims_at(&self, scale: u32) -> [u32; 3] {
        self.dims_scale1.map(|d| d.div_ceil(scale))
    }

    pub fn dims(&self) -> [u32; 3] {
        self.dims_at(self.scale)
    }

    pub fn voxel_size_at(&self, scale: u32) -> T {
        self.voxel_size * T::lit(f64::from(scale))
    }

    /// Edge length of one voxel at this geometry's scale.
    pub fn cell_size(&self) -> T {
        self.voxel_size_at(self.scale)
    }

    pub fn num_voxels(&self) -> usize {
        self.dims().iter().map(|&d| d as usize).product()
    }

    /// World extent covered by the scale-1 grid.
    pub fn extent(&self) -> [T; 3] {
        let mut e = [T::zero(); 3];
        for a in 0..3 {
            e[a] = self.voxel_size * T::lit(f64::from(self.dims_scale1[a]));
        }
        e
    }

    pub fn max_corner(&self) -> [T; 3] {
        let e = self.extent();
        [self.origin[0] + e[0], self.origin[1] + e[1], self.origin[2] + e[2]]
    }

    pub fn diagonal(&self) -> T {
        let e = self.extent();
        (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt()
    }

    pub fn contains(&self, idx: &VoxelIndex) -> bool {
        let d = self.dims_at(idx.scale);
        idx.x < d[0] && idx.y < d[1] && idx.z < d[2]
    }

    /// Voxel at this geometry's scale containing `p`, by flooring.
    pub fn voxel_of(&self, p: [T; 3]) -> Option<VoxelIndex> {
        let size = self.cell_size();
        let dims = self.dims();
        let mut c = [0u32; 3];
        for a in 0..3 {
            let f = ((p[a] - self.origin[a]) / size).floor();
            if !f.is_finite() || f < T::zero() || f >= T::lit(f64::from(dims[a])) {
                return None;
            }
            c[a] = f.to_u32()?;
        }
        Some(VoxelIndex::new(c[0], c[1], c[2], self.scale))
    }

    /// Row-major linear offset with x slowest and z fastest.
    pub fn linear_index(&self, idx: &VoxelIndex) -> usize {
        let d = self.dims_at(idx.scale);
        (idx.x as usize * d[1] as usize + idx.y as usize) * d[2] as usize + idx.z as usize
    }

    pub fn index_from_linear(&self, linear: usize) -> VoxelIndex {
        let d = self.dims();
        let z = linear % d[2] as usize;
        let y = (linear / d[2] as usize) % d[1] as usize;
        let x = linear / (d[1] as usize * d[2] as usize);
        VoxelIndex::new(x as u32, y as u32, z as u32, self.scale)
    }

    pub fn same_frame(&self, other: &Self) -> bool {
        self.origin == other.origin
            && self.voxel_size == other.voxel_size
            && self.dims_scale1 == other.dims_scale1
    }
}

/// Re-expresses `idx` at `target_scale`.
///
/// Coarse to fine multiplies by the scale ratio and lands on the child at the
/// parent's minimum corner. Fine to coarse integer-divides, which drops the
/// sub-voxel phase.
pub fn align_scale(idx: VoxelIndex, target_scale: u32) -> Result<VoxelIndex> {
    if idx.scale == 0 || target_scale == 0 {
        return Err(Error::InvalidScale("zero scale".into()));
    }
    if idx.scale >= target_scale {
        if !idx.scale.is_multiple_of(target_scale) {
            return Err(Error::InvalidScale(format!(
                "{} and {} are not related by an integer factor",
                idx.scale, target_scale
            )));
        }
        let f = idx.scale / target_scale;
        Ok(VoxelIndex::new(idx.x * f, idx.y * f, idx.z * f, target_scale))
    } else {
        if !target_scale.is_multiple_of(idx.scale) {
            return Err(Error::InvalidScale(format!(
                "{} and {} are not related by an integer factor",
                idx.scale, target_scale
            )));
        }
        let f = target_scale / idx.scale;
        Ok(VoxelIndex::new(idx.x / f, idx.y / f, idx.z / f, target_scale))
    }
}

/// The `factor^3` children of `idx` one level finer, sorted with z fastest.
pub fn subdivide(idx: VoxelIndex, factor: u32) -> Result<Vec<VoxelIndex>> {
    if factor != 2 && factor != 4 {
        return Err(Error::InvalidFactor(factor));
    }
    if !idx.scale.is_multiple_of(factor) {
        return Err(Error::InvalidScale(format!(
            "cannot subdivide scale {} by {factor}",
            idx.scale
        )));
    }
    let s = idx.scale / factor;
    let base = [idx.x * factor, idx.y * factor, idx.z * factor];
    let mut out = Vec::with_capacity((factor * factor * factor) as usize);
    for dx in 0..factor {
        for dy in 0..factor {
            for dz in 0..factor {
                out.push(VoxelIndex::new(base[0] + dx, base[1] + dy, base[2] + dz, s));
            }
        }
    }
    Ok(out)
}

/// World-space center of `idx`, using the voxel size at `idx.scale`.
pub fn voxel_center<T: Real>(idx: &VoxelIndex, geom: &GridGeometry<T>) -> Result<[T; 3]> {
    if !geom.contains(idx) {
        return Err(Error::OutOfBounds(idx.to_string()));
    }
    let size = geom.voxel_size_at(idx.scale);
    let half = T::lit(0.5);
    let c = idx.xyz();
    Ok([0, 1, 2].map(|a| geom.origin[a] + (T::lit(f64::from(c[a])) + half) * size))
}

/// Coordinate-indexed feature rows, all at one scale and one channel width.
#[derive(Debug, Clone)]
pub struct SparseVoxelGrid<T> {
    geometry: GridGeometry<T>,
    channels: usize,
    coords: Vec<VoxelIndex>,
    features: Vec<T>,
    index: HashMap<u64, usize>,
}

impl<T: Real> SparseVoxelGrid<T> {
    pub fn new(geometry: GridGeometry<T>, channels: usize) -> Self {
        Self {
            geometry,
            channels,
            coords: Vec::new(),
            features: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn with_capacity(geometry: GridGeometry<T>, channels: usize, n: usize) -> Self {
        Self {
            geometry,
            channels,
            coords: Vec::with_capacity(n),
            features: Vec::with_capacity(n * channels),
            index: HashMap::with_capacity(n),
        }
    }

    /// Builds a grid from `(coord, feature)` pairs. Rows end up sorted by
    /// coordinate, so the input order does not matter.
    pub fn from_entries<I>(geometry: GridGeometry<T>, channels: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (VoxelIndex, Vec<T>)>,
    {
        let mut entries: Vec<_> = entries.into_iter().collect();
        entries.sort_by_key(|(c, _)| *c);
        let mut grid = Self::with_capacity(geometry, channels, entries.len());
        for (c, f) in entries {
            grid.insert(c, &f)?;
        }
        Ok(grid)
    }

    /// Appends a row. Duplicates are rejected rather than overwritten.
    pub fn insert(&mut self, idx: VoxelIndex, feature: &[T]) -> Result<usize> {
        if idx.scale != self.geometry.scale {
            return Err(Error::InvalidScale(format!(
                "voxel {idx} inserted into a scale-{} grid",
                self.geometry.scale
            )));
        }
        if !self.geometry.contains(&idx) {
            return Err(Error::OutOfBounds(idx.to_string()));
        }
        if feature.len() != self.channels {
            return Err(Error::Shape(format!(
                "feature width {} != grid channels {}",
                feature.len(),
                self.channels
            )));
        }
        let row = self.coords.len();
        match self.index.entry(idx.key()) {
            std::collections::hash_map::Entry::Occupied(_) => {
                return Err(Error::DuplicateVoxel(idx.to_string()))
            }
            std::collections::hash_map::Entry::Vacant(e) => {
                e.insert(row);
            }
        }
        self.coords.push(idx);
        self.features.extend_from_slice(feature);
        Ok(row)
    }

    pub fn row_index(&self, idx: &VoxelIndex) -> Option<usize> {
        if idx.scale != self.geometry.scale || !self.geometry.contains(idx) {
            return None;
        }
        self.index.get(&idx.key()).copied()
    }

    pub fn lookup(&self, idx: &VoxelIndex) -> Option<&[T]> {
        self.row_index(idx).map(|r| self.row(r))
    }

    pub fn contains(&self, idx: &VoxelIndex) -> bool {
        self.row_index(idx).is_some()
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.features[r * self.channels..(r + 1) * self.channels]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.features[r * self.channels..(r + 1) * self.channels]
    }

    pub fn coords(&self) -> &[VoxelIndex] {
        &self.coords
    }

    pub fn features(&self) -> &[T] {
        &self.features
    }

    pub fn iter(&self) -> impl Iterator<Item = (VoxelIndex, &[T])> + '_ {
        self.coords
            .iter()
            .enumerate()
            .map(move |(r, c)| (*c, self.row(r)))
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn geometry(&self) -> &GridGeometry<T> {
        &self.geometry
    }

    pub fn scale(&self) -> u32 {
        self.geometry.scale
    }

    /// Reorders rows by coordinate.
    pub fn sort(&mut self) {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by_key(|&r| self.coords[r]);
        let coords: Vec<_> = order.iter().map(|&r| self.coords[r]).collect();
        let mut features = Vec::with_capacity(self.features.len());
        for &r in &order {
            features.extend_from_slice(self.row(r));
        }
        self.index = coords.iter().enumerate().map(|(r, c)| (c.key(), r)).collect();
        self.coords = coords;
        self.features = features;
    }

    pub fn is_sorted(&self) -> bool {
        self.coords.windows(2).all(|w| w[0] < w[1])
    }

    /// Same coordinates, features transformed in place of width.
    pub fn map_features(&self, out_channels: usize, f: impl Fn(&[T]) -> Vec<T>) -> Result<Self> {
        let mut out = Self::with_capacity(self.geometry, out_channels, self.len());
        for (c, row) in self.iter() {
            out.insert(c, &f(row))?;
        }
        Ok(out)
    }
}

/// Grids are equal when they hold the same coordinate set with identical rows,
/// regardless of row order.
impl<T: Real> PartialEq for SparseVoxelGrid<T> {
    fn eq(&self, other: &Self) -> bool {
        self.geometry == other.geometry
            && self.channels == other.channels
            && self.len() == other.len()
            && self
                .iter()
                .all(|(c, row)| other.lookup(&c).is_some_and(|o| o == row))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> GridGeometry<f64> {
        GridGeometry::new([0.0; 3], 0.2, [64, 64, 64], 1).unwrap()
    }

    #[test]
    fn align_scale_examples() {
        let v = align_scale(VoxelIndex::new(1, 1, 1, 8), 4).unwrap();
        assert_eq!(v, VoxelIndex::new(2, 2, 2, 4));
        let v = align_scale(VoxelIndex::new(3, 5, 7, 4), 4).unwrap();
        assert_eq!(v, VoxelIndex::new(3, 5, 7, 4));
        let v = align_scale(VoxelIndex::new(2, 2, 2, 16), 4).unwrap();
        assert_eq!(v, VoxelIndex::new(8, 8, 8, 4));
        assert_eq!(
            align_scale(VoxelIndex::new(5, 6, 7, 1), 4).unwrap(),
            VoxelIndex::new(1, 1, 1, 4)
        );
        assert!(matches!(
            align_scale(VoxelIndex::new(1, 1, 1, 4), 6),
            Err(Error::InvalidScale(_))
        ));
        assert!(matches!(
            align_scale(VoxelIndex::new(1, 1, 1, 6), 4),
            Err(Error::InvalidScale(_))
        ));
    }

    #[test]
    fn subdivide_examples() {
        let c = subdivide(VoxelIndex::new(0, 0, 0, 4), 2).unwrap();
        assert_eq!(c.len(), 8);
        assert_eq!(c[0], VoxelIndex::new(0, 0, 0, 2));
        assert_eq!(c[1], VoxelIndex::new(0, 0, 1, 2));
        assert_eq!(c[7], VoxelIndex::new(1, 1, 1, 2));

        let c = subdivide(VoxelIndex::new(1, 0, 0, 4), 4).unwrap();
        assert_eq!(c.len(), 64);
        for v in &c {
            assert!((4..8).contains(&v.x) && v.y < 4 && v.z < 4 && v.scale == 1);
        }
        assert!(c.windows(2).all(|w| w[0] < w[1]));

        assert!(matches!(
            subdivide(VoxelIndex::new(0, 0, 0, 4), 3),
            Err(Error::InvalidFactor(3))
        ));
        assert!(matches!(
            subdivide(VoxelIndex::new(0, 0, 0, 2), 4),
            Err(Error::InvalidScale(_))
        ));
    }

    #[test]
    fn voxel_center_examples() {
        let g = geom();
        let c = voxel_center(&VoxelIndex::new(0, 0, 0, 1), &g).unwrap();
        for v in c {
            assert!((v - 0.1).abs() < 1e-12);
        }
        let c = voxel_center(&VoxelIndex::new(0, 0, 0, 2), &g).unwrap();
        for v in c {
            assert!((v - 0.2).abs() < 1e-12);
        }
        let nu = GridGeometry::<f64>::nuscenes_occupancy();
        let c = voxel_center(&VoxelIndex::new(256, 256, 20, 1), &nu).unwrap();
        assert!((c[0] - 0.1).abs() < 1e-9);
        assert!((c[1] - 0.1).abs() < 1e-9);
        assert!((c[2] + 0.9).abs() < 1e-9);
        assert!(matches!(
            voxel_center(&VoxelIndex::new(64, 0, 0, 1), &g),
            Err(Error::OutOfBounds(_))
        ));
    }

    #[test]
    fn presets_and_scaled_dims() {
        let nu = GridGeometry::<f32>::nuscenes_occupancy();
        assert_eq!(nu.dims_scale1, [512, 512, 40]);
        assert_eq!(nu.dims_at(16), [32, 32, 3]);
        let kitti = GridGeometry::<f32>::semantic_kitti();
        assert_eq!(kitti.dims_scale1, [256, 256, 32]);
        assert_eq!(kitti.dims_at(4), [64, 64, 8]);
        assert!((kitti.voxel_size_at(4) - 0.8).abs() < 1e-6);
        assert!(GridGeometry::new([0.0f32; 3], 0.2, [4, 4, 4], 3).is_err());
    }

    #[test]
    fn voxel_of_floors() {
        let g = geom();
        // 0.4 sits on the boundary between cells 1 and 2.
        let v = g.voxel_of([0.4 + 1e-12, 0.1, 0.1]).unwrap();
        assert_eq!(v.x, 2);
        let v = g.voxel_of([0.39999, 0.1, 0.1]).unwrap();
        assert_eq!(v.x, 1);
        assert!(g.voxel_of([-0.01, 0.0, 0.0]).is_none());
        assert!(g.voxel_of([12.8, 0.0, 0.0]).is_none());
    }

    #[test]
    fn linear_index_roundtrip() {
        let g = GridGeometry::new([0.0f64; 3], 0.2, [3, 4, 5], 1).unwrap();
        for i in 0..60 {
            let v = g.index_from_linear(i);
            assert_eq!(g.linear_index(&v), i);
        }
        assert_eq!(g.linear_index(&VoxelIndex::new(1, 0, 0, 1)), 20);
    }

    #[test]
    fn key_roundtrip() {
        let v = VoxelIndex::new(511, 17, 39, 4);
        assert_eq!(VoxelIndex::from_key(v.key(), 4), v);
    }

    #[test]
    fn grid_insert_lookup_and_duplicates() {
        let mut g = SparseVoxelGrid::new(geom(), 2);
        g.insert(VoxelIndex::new(1, 2, 3, 1), &[1.0, 2.0]).unwrap();
        g.insert(VoxelIndex::new(0, 0, 0, 1), &[3.0, 4.0]).unwrap();
        assert_eq!(g.lookup(&VoxelIndex::new(1, 2, 3, 1)), Some(&[1.0, 2.0][..]));
        assert!(g.lookup(&VoxelIndex::new(1, 2, 4, 1)).is_none());
        assert!(matches!(
            g.insert(VoxelIndex::new(1, 2, 3, 1), &[9.0, 9.0]),
            Err(Error::DuplicateVoxel(_))
        ));
        assert_eq!(g.lookup(&VoxelIndex::new(1, 2, 3, 1)), Some(&[1.0, 2.0][..]));
        assert!(matches!(
            g.insert(VoxelIndex::new(5, 5, 5, 1), &[1.0]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            g.insert(VoxelIndex::new(5, 5, 5, 2), &[1.0, 1.0]),
            Err(Error::InvalidScale(_))
        ));
        assert!(matches!(
            g.insert(VoxelIndex::new(64, 5, 5, 1), &[1.0, 1.0]),
            Err(Error::OutOfBounds(_))
        ));
        g.sort();
        assert!(g.is_sorted());
        assert_eq!(g.lookup(&VoxelIndex::new(0, 0, 0, 1)), Some(&[3.0, 4.0][..]));
        assert_eq!(g.len(), 2);
    }
}
