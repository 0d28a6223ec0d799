//! Pixel-to-voxel fusion: LiDAR-guided queries and single-head deformable
//! cross-attention averaged over the cameras that see each voxel.

use rayon::prelude::*;

use crate::camera::{CameraModel, FeatureMap2D};
use crate::error::{Error, Result};
use crate::linear::Linear;
use crate::rng;
use crate::scalar::{softmax, Real};
use crate::voxel::{voxel_center, SparseVoxelGrid};

/// Forward-only attention parameters (seeded stand-ins for learned weights).
#[derive(Debug, Clone, PartialEq)]
pub struct DeformableAttnParams<T> {
    /// Reference points per query per camera.
    pub n_ref: usize,
    /// Static sampling offsets in image pixels, one per reference point.
    pub offsets: Vec<[T; 2]>,
    pub weight_logits: Vec<T>,
    /// Image channels to voxel channels.
    pub value_proj: Linear<T>,
    pub output_proj: Linear<T>,
    /// When set, per-query offsets `query_offsets(Q'_v)` are added to the
    /// static offsets (`n_ref * 2` outputs).
    pub query_offsets: Option<Linear<T>>,
    /// Add the guided query back onto the attention output.
    pub residual: bool,
    pub seed: Option<u64>,
}

impl<T: Real> DeformableAttnParams<T> {
    /// Seeded parameters. Offsets are uniform in +-`offset_px` pixels.
    pub fn seeded(n_ref: usize, image_channels: usize, channels: usize, offset_px: f64, seed: u64) -> Self {
        let offs: Vec<T> = rng::uniform_vec(rng::split_seed(seed, "offsets"), 2 * n_ref, offset_px);
        Self {
            n_ref,
            offsets: offs.chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
            weight_logits: rng::uniform_vec(rng::split_seed(seed, "logits"), n_ref, 1.0),
            value_proj: Linear::seeded(image_channels, channels, rng::split_seed(seed, "value")),
            output_proj: Linear::seeded(channels, channels, rng::split_seed(seed, "output")),
            query_offsets: None,
            residual: true,
            seed: Some(seed),
        }
    }

    /// Identity projections, zero offsets and uniform weights.
    pub fn identity(n_ref: usize, channels: usize) -> Self {
        Self {
            n_ref,
            offsets: vec![[T::zero(); 2]; n_ref],
            weight_logits: vec![T::zero(); n_ref],
            value_proj: Linear::identity(channels),
            output_proj: Linear::identity(channels),
            query_offsets: None,
            residual: true,
            seed: None,
        }
    }

    /// Enables query-conditioned offsets from a seeded linear map.
    pub fn with_query_offsets(mut self, seed: u64, scale_px: f64) -> Self {
        let mut lin = Linear::seeded(self.output_proj.out_dim, 2 * self.n_ref, seed);
        lin.weights.iter_mut().for_each(|w| *w *= T::lit(scale_px));
        self.query_offsets = Some(lin);
        self
    }

    pub fn attention_weights(&self) -> Vec<T> {
        softmax(&self.weight_logits)
    }

    fn validate(&self, image_channels: usize, channels: usize) -> Result<()> {
        if self.offsets.len() != self.n_ref || self.weight_logits.len() != self.n_ref || self.n_ref == 0 {
            return Err(Error::Shape(format!(
                "n_ref {} with {} offsets and {} logits",
                self.n_ref,
                self.offsets.len(),
                self.weight_logits.len()
            )));
        }
        self.value_proj.check_input(image_channels, "value projection")?;
        if self.value_proj.out_dim != channels {
            return Err(Error::Shape(format!(
                "value projection emits {} channels, queries have {channels}",
                self.value_proj.out_dim
            )));
        }
        self.output_proj.check_input(channels, "output projection")?;
        if self.output_proj.out_dim != channels {
            return Err(Error::Shape("output projection must preserve the channel width".into()));
        }
        if let Some(q) = &self.query_offsets {
            q.check_input(channels, "query offsets")?;
            if q.out_dim != 2 * self.n_ref {
                return Err(Error::Shape("query offset map must emit 2 * n_ref values".into()));
            }
        }
        Ok(())
    }
}

/// Base queries `Q_v` and LiDAR-guided queries `Q'_v = dense + Q_v`.
#[derive(Debug, Clone)]
pub struct QuerySet<T> {
    pub base: SparseVoxelGrid<T>,
    pub guided: SparseVoxelGrid<T>,
}

/// How base queries are initialized.
#[derive(Debug, Clone, Copy)]
pub enum QueryInit {
    Zero,
    /// Uniform in +-0.5, drawn over voxels in coordinate order.
    Seeded(u64),
}

/// Builds one guided query per non-empty voxel of the densified grid.
pub fn guide_queries<T: Real>(dense: &SparseVoxelGrid<T>, init: QueryInit) -> Result<QuerySet<T>> {
    if dense.scale() != 4 {
        return Err(Error::InvalidScale(format!("queries live at scale 4, got {}", dense.scale())));
    }
    let mut order: Vec<usize> = (0..dense.len()).collect();
    order.sort_by_key(|&r| dense.coords()[r]);
    let ch = dense.channels();
    let noise: Vec<T> = match init {
        QueryInit::Zero => vec![T::zero(); ch * dense.len()],
        QueryInit::Seeded(seed) => rng::uniform_vec(seed, ch * dense.len(), 0.5),
    };
    let mut base = SparseVoxelGrid::with_capacity(*dense.geometry(), ch, dense.len());
    let mut guided = SparseVoxelGrid::with_capacity(*dense.geometry(), ch, dense.len());
    for (k, &r) in order.iter().enumerate() {
        let c = dense.coords()[r];
        let q = &noise[k * ch..(k + 1) * ch];
        let g: Vec<T> = dense.row(r).iter().zip(q).map(|(&f, &q)| f + q).collect();
        base.insert(c, q)?;
        guided.insert(c, &g)?;
    }
    Ok(QuerySet { base, guided })
}

#[derive(Debug, Clone)]
pub struct FusionOutput<T> {
    /// Fused scale-4 features over the query voxels.
    pub fused: SparseVoxelGrid<T>,
    /// Voxels seen by no camera; they receive only the residual query.
    pub misses: usize,
}

/// Attention result of one voxel for one camera (before averaging).
fn attend_camera<T: Real>(
    params: &DeformableAttnParams<T>,
    weights: &[T],
    maps: &FeatureMap2D<T>,
    cam_id: usize,
    cam: &CameraModel<T>,
    u: T,
    v: T,
    query: &[T],
) -> Vec<T> {
    let dyn_offsets = params.query_offsets.as_ref().map(|l| l.apply(query));
    let mut sampled = vec![T::zero(); maps.channels];
    for j in 0..params.n_ref {
        let mut du = params.offsets[j][0];
        let mut dv = params.offsets[j][1];
        if let Some(d) = &dyn_offsets {
            du += d[2 * j];
            dv += d[2 * j + 1];
        }
        let (mu, mv) = maps.image_to_map(cam, u + du, v + dv);
        maps.accumulate_bilinear(cam_id, mu, mv, weights[j], &mut sampled);
    }
    // The projections are linear, so projecting the weighted sample equals the
    // weighted sum of projected samples.
    params.output_proj.apply(&params.value_proj.apply(&sampled))
}

/// Fuses image features into the guided queries.
///
/// Per voxel: project the center into every camera; for each hit sample the
/// `n_ref` offset locations, combine with softmax weights and pass through the
/// value and output maps; average over the hit cameras (in id order). Voxels
/// no camera sees get zeros. With `residual` the guided query is added.
pub fn fuse<T: Real>(
    queries: &QuerySet<T>,
    rig: &[CameraModel<T>],
    maps: &FeatureMap2D<T>,
    params: &DeformableAttnParams<T>,
) -> Result<FusionOutput<T>> {
    let guided = &queries.guided;
    let ch = guided.channels();
    params.validate(maps.channels, ch)?;
    if maps.cameras() != rig.len() {
        return Err(Error::Shape(format!(
            "{} cameras but {} feature maps",
            rig.len(),
            maps.cameras()
        )));
    }
    let weights = params.attention_weights();
    let geom = *guided.geometry();

    let rows: Vec<Result<(Vec<T>, bool)>> = (0..guided.len())
        .into_par_iter()
        .map(|r| {
            let c = guided.coords()[r];
            let q = guided.row(r);
            let center = voxel_center(&c, &geom)?;
            let mut acc = vec![T::zero(); ch];
            let mut hits = 0usize;
            for (i, cam) in rig.iter().enumerate() {
                let Some(hit) = cam.project(center) else { continue };
                let a = attend_camera(params, &weights, maps, i, cam, hit.u, hit.v, q);
                for (x, y) in acc.iter_mut().zip(a) {
                    *x += y;
                }
                hits += 1;
            }
            if hits > 0 {
                let n = T::lit(hits as f64);
                acc.iter_mut().for_each(|x| *x /= n);
            }
            if params.residual {
                for (x, &y) in acc.iter_mut().zip(q) {
                    *x += y;
                }
            }
            Ok((acc, hits == 0))
        })
        .collect();

    let mut fused = SparseVoxelGrid::with_capacity(geom, ch, guided.len());
    let mut misses = 0;
    for (c, row) in guided.coords().iter().zip(rows) {
        let (f, miss) = row?;
        misses += usize::from(miss);
        fused.insert(*c, &f)?;
    }
    Ok(FusionOutput { fused, misses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{Intrinsics, RigidTransform};
    use crate::voxel::{GridGeometry, VoxelIndex};

    fn setup() -> (SparseVoxelGrid<f64>, Vec<CameraModel<f64>>) {
        // Camera at the world origin looking along +z; voxels in front of it.
        let geom = GridGeometry::new([-3.2, -3.2, 0.0], 0.2, [32, 32, 64], 4).unwrap();
        let mut g = SparseVoxelGrid::new(geom, 2);
        g.insert(VoxelIndex::new(4, 4, 5, 4), &[1.0, -1.0]).unwrap();
        g.insert(VoxelIndex::new(3, 4, 8, 4), &[0.5, 2.0]).unwrap();
        // Near the camera plane: behind the near plane, so a miss.
        g.insert(VoxelIndex::new(4, 4, 0, 4), &[0.25, 0.25]).unwrap();
        let cam = CameraModel::new(
            Intrinsics { fx: 20.0, fy: 20.0, cx: 16.0, cy: 16.0 },
            RigidTransform::identity(),
            32,
            32,
        )
        .unwrap();
        (g, vec![cam])
    }

    #[test]
    fn zero_base_queries_equal_dense() {
        let (g, _) = setup();
        let q = guide_queries(&g, QueryInit::Zero).unwrap();
        assert_eq!(q.guided, g);
        let q = guide_queries(&g, QueryInit::Seeded(3)).unwrap();
        for (c, row) in q.guided.iter() {
            let b = q.base.lookup(&c).unwrap();
            let d = g.lookup(&c).unwrap();
            for i in 0..2 {
                assert_eq!(row[i], d[i] + b[i]);
            }
        }
    }

    #[test]
    fn constant_field_is_preserved() {
        let (g, rig) = setup();
        let zero = g.map_features(2, |_| vec![0.0, 0.0]).unwrap();
        let q = guide_queries(&zero, QueryInit::Zero).unwrap();
        let maps = FeatureMap2D::constant(1, 32, 32, &[0.75, -2.0]);
        let mut p = DeformableAttnParams::identity(4, 2);
        p.weight_logits = vec![0.3, -1.0, 2.0, 0.0];
        let out = fuse(&q, &rig, &maps, &p).unwrap();
        assert_eq!(out.misses, 1);
        for (c, f) in out.fused.iter() {
            if c.z == 0 {
                assert_eq!(f, [0.0, 0.0]);
            } else {
                assert!((f[0] - 0.75).abs() < 1e-12 && (f[1] + 2.0).abs() < 1e-12, "{c} {f:?}");
            }
        }
    }

    #[test]
    fn weighted_two_point_sample() {
        let geom = GridGeometry::new([-0.4, -0.4, 0.0], 0.2, [4, 4, 64], 4).unwrap();
        let mut g = SparseVoxelGrid::new(geom, 1);
        g.insert(VoxelIndex::new(0, 0, 10, 4), &[0.0]).unwrap();
        let q = guide_queries(&g, QueryInit::Zero).unwrap();
        // Voxel center is on the optical axis: pixel (2, 2).
        let cam = CameraModel::new(
            Intrinsics { fx: 4.0, fy: 4.0, cx: 2.0, cy: 2.0 },
            RigidTransform::identity(),
            5,
            5,
        )
        .unwrap();
        let mut maps = FeatureMap2D::new(5, 5, 1, vec![vec![0.0; 25]]).unwrap();
        maps.pixel_mut(0, 1, 2)[0] = 1.0;
        maps.pixel_mut(0, 3, 2)[0] = 3.0;
        let mut p = DeformableAttnParams::identity(2, 1);
        p.offsets = vec![[-1.0, 0.0], [1.0, 0.0]];
        p.weight_logits = vec![0.0, 3f64.ln()];
        let out = fuse(&q, &[cam], &maps, &p).unwrap();
        assert!((out.fused.row(0)[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let (g, rig) = setup();
        let q = guide_queries(&g, QueryInit::Zero).unwrap();
        let maps = FeatureMap2D::constant(1, 32, 32, &[1.0, 1.0, 1.0]);
        let p = DeformableAttnParams::identity(4, 2);
        assert!(matches!(fuse(&q, &rig, &maps, &p), Err(Error::Shape(_))));
        let maps = FeatureMap2D::constant(2, 32, 32, &[1.0, 1.0]);
        assert!(matches!(fuse(&q, &rig, &maps, &p), Err(Error::Shape(_))));
    }

    #[test]
    fn query_offsets_are_deterministic() {
        let (g, rig) = setup();
        let q = guide_queries(&g, QueryInit::Seeded(5)).unwrap();
        let mut maps = FeatureMap2D::constant(1, 32, 32, &[0.0, 0.0]);
        for y in 0..32 {
            for x in 0..32 {
                maps.pixel_mut(0, x, y).copy_from_slice(&[x as f64, y as f64]);
            }
        }
        let p = DeformableAttnParams::seeded(4, 2, 2, 2.0, 9).with_query_offsets(10, 1.0);
        let a = fuse(&q, &rig, &maps, &p).unwrap();
        let b = fuse(&q, &rig, &maps, &p).unwrap();
        assert_eq!(a.fused, b.fused);
    }
}
