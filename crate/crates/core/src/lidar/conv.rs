//! Gather-multiply-accumulate sparse 3D convolution.
//!
//! For output voxel `p` at the output scale the value is
//! `bias + sum_k sum_i in(stride * p + k)[i] * W[k][i][o]` over kernel offsets
//! `k in [-r, r]^3`, `r = (extent - 1) / 2`. Absent inputs and positions
//! outside the grid contribute zero. The output set depends on the mode:
//! submanifold keeps the input set, expanding keeps every position whose
//! footprint touches at least one input.

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Real;
use crate::voxel::{SparseVoxelGrid, VoxelIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvMode {
    Submanifold,
    Expanding,
}

/// Kernel and layout of one sparse convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseConvSpec<T> {
    pub extent: usize,
    pub stride: u32,
    pub in_channels: usize,
    pub out_channels: usize,
    /// `extent^3 x in x out`, offsets ordered with z fastest.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub mode: ConvMode,
    pub seed: Option<u64>,
}

impl<T: Real> SparseConvSpec<T> {
    pub fn new(
        extent: usize,
        stride: u32,
        in_channels: usize,
        out_channels: usize,
        weights: Vec<T>,
        bias: Vec<T>,
        mode: ConvMode,
    ) -> Result<Self> {
        if extent.is_multiple_of(2) {
            return Err(Error::Shape(format!("kernel extent {extent} must be odd")));
        }
        if stride != 1 && stride != 2 {
            return Err(Error::Shape(format!("stride {stride} must be 1 or 2")));
        }
        if mode == ConvMode::Submanifold && stride != 1 {
            return Err(Error::Shape("submanifold convolution requires stride 1".into()));
        }
        let n = extent.pow(3) * in_channels * out_channels;
        if weights.len() != n || bias.len() != out_channels {
            return Err(Error::Shape(format!(
                "kernel expects {n} weights and {out_channels} biases, got {} and {}",
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            extent,
            stride,
            in_channels,
            out_channels,
            weights,
            bias,
            mode,
            seed: None,
        })
    }

    /// Weights uniform in `+-1/sqrt(fan_in)` from `seed`, zero bias.
    pub fn seeded(
        extent: usize,
        stride: u32,
        in_channels: usize,
        out_channels: usize,
        mode: ConvMode,
        seed: u64,
    ) -> Result<Self> {
        let fan_in = extent.pow(3) * in_channels;
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let weights = rng::uniform_vec(seed, extent.pow(3) * in_channels * out_channels, bound);
        let mut spec = Self::new(
            extent,
            stride,
            in_channels,
            out_channels,
            weights,
            vec![T::zero(); out_channels],
            mode,
        )?;
        spec.seed = Some(seed);
        Ok(spec)
    }

    pub fn zeros(extent: usize, stride: u32, in_channels: usize, out_channels: usize, mode: ConvMode) -> Result<Self> {
        Self::new(
            extent,
            stride,
            in_channels,
            out_channels,
            vec![T::zero(); extent.pow(3) * in_channels * out_channels],
            vec![T::zero(); out_channels],
            mode,
        )
    }

    /// Every weight set to one.
    pub fn ones(extent: usize, in_channels: usize, out_channels: usize, mode: ConvMode) -> Result<Self> {
        Self::new(
            extent,
            1,
            in_channels,
            out_channels,
            vec![T::one(); extent.pow(3) * in_channels * out_channels],
            vec![T::zero(); out_channels],
            mode,
        )
    }

    /// 3^3 submanifold kernel whose center tap is the identity matrix.
    pub fn identity(channels: usize) -> Self {
        let mut spec = Self::zeros(3, 1, channels, channels, ConvMode::Submanifold)
            .expect("valid identity kernel");
        let center = spec.offset_count() / 2;
        for c in 0..channels {
            let i = spec.weight_index(center, c, c);
            spec.weights[i] = T::one();
        }
        spec
    }

    pub fn radius(&self) -> i64 {
        (self.extent as i64 - 1) / 2
    }

    pub fn offset_count(&self) -> usize {
        self.extent.pow(3)
    }

    #[inline]
    pub fn weight_index(&self, offset: usize, i: usize, o: usize) -> usize {
        (offset * self.in_channels + i) * self.out_channels + o
    }

    /// Kernel offsets in weight order.
    pub fn offsets(&self) -> Vec<[i64; 3]> {
        let r = self.radius();
        let mut out = Vec::with_capacity(self.offset_count());
        for dx in -r..=r {
            for dy in -r..=r {
                for dz in -r..=r {
                    out.push([dx, dy, dz]);
                }
            }
        }
        out
    }

    fn check_input(&self, grid: &SparseVoxelGrid<T>) -> Result<()> {
        if grid.channels() != self.in_channels {
            return Err(Error::Shape(format!(
                "convolution expects {} input channels, grid has {}",
                self.in_channels,
                grid.channels()
            )));
        }
        let out_scale = grid.scale() * self.stride;
        if !crate::voxel::is_valid_scale(out_scale) {
            return Err(Error::InvalidScale(format!(
                "stride {} from scale {} leaves the supported scales",
                self.stride,
                grid.scale()
            )));
        }
        Ok(())
    }
}

/// Output coordinates the convolution produces for `grid` under `spec.mode`.
pub fn output_set<T: Real>(grid: &SparseVoxelGrid<T>, spec: &SparseConvSpec<T>) -> Result<Vec<VoxelIndex>> {
    spec.check_input(grid)?;
    if spec.mode == ConvMode::Submanifold {
        let mut c = grid.coords().to_vec();
        c.sort();
        return Ok(c);
    }
    let out_scale = grid.scale() * spec.stride;
    let out_dims = grid.geometry().dims_at(out_scale);
    let stride = i64::from(spec.stride);
    let offsets = spec.offsets();
    let mut set = BTreeSet::new();
    for c in grid.coords() {
        let q = c.xyz().map(i64::from);
        'offsets: for k in &offsets {
            let mut p = [0u32; 3];
            for a in 0..3 {
                let num = q[a] - k[a];
                if num < 0 || num % stride != 0 {
                    continue 'offsets;
                }
                let v = num / stride;
                if v >= i64::from(out_dims[a]) {
                    continue 'offsets;
                }
                p[a] = v as u32;
            }
            set.insert(VoxelIndex::new(p[0], p[1], p[2], out_scale));
        }
    }
    Ok(set.into_iter().collect())
}

/// Applies the convolution, producing the mode's output set.
pub fn sparse_conv<T: Real>(grid: &SparseVoxelGrid<T>, spec: &SparseConvSpec<T>) -> Result<SparseVoxelGrid<T>> {
    let coords = output_set(grid, spec)?;
    sparse_conv_on(grid, spec, &coords)
}

/// Evaluates the convolution at an explicit, duplicate-free output set.
pub fn sparse_conv_on<T: Real>(
    grid: &SparseVoxelGrid<T>,
    spec: &SparseConvSpec<T>,
    out_coords: &[VoxelIndex],
) -> Result<SparseVoxelGrid<T>> {
    spec.check_input(grid)?;
    let out_scale = grid.scale() * spec.stride;
    let out_geom = grid.geometry().at_scale(out_scale)?;
    let offsets = spec.offsets();
    let stride = i64::from(spec.stride);
    let in_dims = grid.geometry().dims().map(i64::from);
    if let Some(bad) = out_coords.iter().find(|c| c.scale != out_scale) {
        return Err(Error::InvalidScale(format!("output voxel {bad} at scale {out_scale} expected")));
    }

    let rows: Vec<Vec<T>> = out_coords
        .par_iter()
        .map(|p| {
            let mut acc = spec.bias.clone();
            let base = p.xyz().map(|v| i64::from(v) * stride);
            for (k, off) in offsets.iter().enumerate() {
                let q = [base[0] + off[0], base[1] + off[1], base[2] + off[2]];
                if (0..3).any(|a| q[a] < 0 || q[a] >= in_dims[a]) {
                    continue;
                }
                let qi = VoxelIndex::new(q[0] as u32, q[1] as u32, q[2] as u32, grid.scale());
                let Some(x) = grid.lookup(&qi) else { continue };
                for (i, &xi) in x.iter().enumerate() {
                    let w = &spec.weights[spec.weight_index(k, i, 0)..spec.weight_index(k, i, 0) + spec.out_channels];
                    for (a, &wio) in acc.iter_mut().zip(w) {
                        *a += xi * wio;
                    }
                }
            }
            acc
        })
        .collect();

    let mut out = SparseVoxelGrid::with_capacity(out_geom, spec.out_channels, out_coords.len());
    for (c, row) in out_coords.iter().zip(rows) {
        out.insert(*c, &row)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxel::GridGeometry;

    fn geom(n: u32) -> GridGeometry<f64> {
        GridGeometry::new([0.0; 3], 0.2, [n, n, n], 1).unwrap()
    }

    #[test]
    fn identity_kernel_preserves_features() {
        let mut g = SparseVoxelGrid::new(geom(8), 2);
        g.insert(VoxelIndex::new(1, 1, 1, 1), &[1.0, -2.0]).unwrap();
        g.insert(VoxelIndex::new(1, 1, 2, 1), &[0.5, 4.0]).unwrap();
        let out = sparse_conv(&g, &SparseConvSpec::identity(2)).unwrap();
        assert_eq!(out, g);
    }

    #[test]
    fn lone_voxel_all_ones_submanifold() {
        let mut g = SparseVoxelGrid::new(geom(5), 1);
        g.insert(VoxelIndex::new(2, 2, 2, 1), &[3.0]).unwrap();
        let out = sparse_conv(&g, &SparseConvSpec::ones(3, 1, 1, ConvMode::Submanifold).unwrap()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out.lookup(&VoxelIndex::new(2, 2, 2, 1)), Some(&[3.0][..]));
    }

    #[test]
    fn adjacent_pair_all_ones() {
        let mut g = SparseVoxelGrid::new(geom(5), 1);
        g.insert(VoxelIndex::new(2, 2, 2, 1), &[3.0]).unwrap();
        g.insert(VoxelIndex::new(2, 2, 3, 1), &[5.0]).unwrap();
        let out = sparse_conv(&g, &SparseConvSpec::ones(3, 1, 1, ConvMode::Submanifold).unwrap()).unwrap();
        assert_eq!(out.lookup(&VoxelIndex::new(2, 2, 2, 1)), Some(&[8.0][..]));
        assert_eq!(out.lookup(&VoxelIndex::new(2, 2, 3, 1)), Some(&[8.0][..]));
    }

    #[test]
    fn expanding_dilates_and_clips() {
        let mut g = SparseVoxelGrid::new(geom(5), 1);
        g.insert(VoxelIndex::new(0, 2, 2, 1), &[1.0]).unwrap();
        let out = sparse_conv(&g, &SparseConvSpec::ones(3, 1, 1, ConvMode::Expanding).unwrap()).unwrap();
        // x = -1 is clipped away: 2 * 3 * 3 positions remain.
        assert_eq!(out.len(), 18);
        assert!(out.iter().all(|(_, f)| f == [1.0]));
    }

    #[test]
    fn strided_output_scale() {
        let mut g = SparseVoxelGrid::new(geom(8), 1);
        g.insert(VoxelIndex::new(2, 2, 2, 1), &[1.0]).unwrap();
        let spec = SparseConvSpec::seeded(3, 2, 1, 1, ConvMode::Expanding, 1).unwrap();
        let out = sparse_conv(&g, &spec).unwrap();
        assert_eq!(out.scale(), 2);
        // 2 = 2p + k with k in {-1,0,1} only for p = 1, k = 0.
        assert_eq!(out.coords(), &[VoxelIndex::new(1, 1, 1, 2)]);
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let g = SparseVoxelGrid::<f64>::new(geom(4), 3);
        let spec = SparseConvSpec::identity(2);
        assert!(matches!(sparse_conv(&g, &spec), Err(Error::Shape(_))));
        assert!(SparseConvSpec::<f64>::zeros(2, 1, 1, 1, ConvMode::Expanding).is_err());
        assert!(SparseConvSpec::<f64>::zeros(3, 2, 1, 1, ConvMode::Submanifold).is_err());
    }
}
