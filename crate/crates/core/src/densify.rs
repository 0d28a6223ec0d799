//! Multi-scale LiDAR densification.
//!
//! Non-empty voxels at scales 8 and 16 are re-indexed onto the scale-4 lattice
//! (factors 2 and 4) and merged with the scale-4 voxels; every output voxel
//! holds the unweighted mean of the features that landed on it.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linear::Linear;
use crate::rng;
use crate::scalar::Real;
use crate::voxel::{align_scale, subdivide, SparseVoxelGrid, VoxelIndex};

/// Scales merged by the densifier, in accumulation order.
pub const DENSIFY_SCALES: [u32; 3] = [4, 8, 16];
pub const TARGET_SCALE: u32 = 4;

/// Where a coarse voxel's feature lands on the scale-4 lattice.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Anchor {
    /// Only the aligned index `factor * g` (the minimum-corner child).
    #[default]
    Aligned,
    /// Every scale-4 cell the coarse voxel covers.
    Footprint,
}

/// `{V^4, V^8, V^16}` sharing one grid frame and one channel width.
#[derive(Debug, Clone)]
pub struct MultiScaleFeatures<T> {
    grids: BTreeMap<u32, SparseVoxelGrid<T>>,
    /// Scales whose features were projected to the common width, with the seed used.
    pub projected: Vec<(u32, u64)>,
}

impl<T: Real> MultiScaleFeatures<T> {
    /// Requires every grid to share the frame and the channel width.
    pub fn new(grids: Vec<SparseVoxelGrid<T>>) -> Result<Self> {
        let map = Self::validate(grids)?;
        let widths: Vec<usize> = map.values().map(|g| g.channels()).collect();
        if widths.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::Shape(format!("channel widths differ across scales: {widths:?}")));
        }
        Ok(Self {
            grids: map,
            projected: Vec::new(),
        })
    }

    /// Like `new`, but grids narrower or wider than `channels` are mapped
    /// through a seeded linear projection first.
    pub fn projected(grids: Vec<SparseVoxelGrid<T>>, channels: usize, seed: u64) -> Result<Self> {
        let map = Self::validate(grids)?;
        let mut projected = Vec::new();
        let mut out = BTreeMap::new();
        for (s, g) in map {
            if g.channels() == channels {
                out.insert(s, g);
                continue;
            }
            let child = rng::split_seed(seed, &format!("densify-proj-{s}"));
            let lin = Linear::seeded(g.channels(), channels, child);
            out.insert(s, g.map_features(channels, |r| lin.apply(r))?);
            projected.push((s, child));
        }
        Ok(Self {
            grids: out,
            projected,
        })
    }

    fn validate(grids: Vec<SparseVoxelGrid<T>>) -> Result<BTreeMap<u32, SparseVoxelGrid<T>>> {
        let mut map = BTreeMap::new();
        for g in grids {
            let s = g.scale();
            if !DENSIFY_SCALES.contains(&s) {
                return Err(Error::InvalidScale(format!("densifier takes scales 4, 8, 16; got {s}")));
            }
            if map.insert(s, g).is_some() {
                return Err(Error::InvalidScale(format!("scale {s} given twice")));
            }
        }
        let mut it = map.values();
        if let Some(first) = it.next() {
            if it.any(|g| !g.geometry().same_frame(first.geometry())) {
                return Err(Error::Shape("multi-scale grids do not share one frame".into()));
            }
        }
        Ok(map)
    }

    pub fn get(&self, scale: u32) -> Option<&SparseVoxelGrid<T>> {
        self.grids.get(&scale)
    }

    pub fn channels(&self) -> Option<usize> {
        self.grids.values().next().map(|g| g.channels())
    }

    pub fn total_voxels(&self) -> usize {
        self.grids.values().map(|g| g.len()).sum()
    }
}

/// Scale-4 cells receiving the feature of coarse voxel `v`.
fn targets(v: VoxelIndex, anchor: Anchor, dims4: [u32; 3]) -> Result<Vec<VoxelIndex>> {
    match (anchor, v.scale) {
        (_, TARGET_SCALE) | (Anchor::Aligned, _) => Ok(vec![align_scale(v, TARGET_SCALE)?]),
        (Anchor::Footprint, s) => {
            let mut out = subdivide(v, s / TARGET_SCALE)?;
            out.retain(|c| c.x < dims4[0] && c.y < dims4[1] && c.z < dims4[2]);
            Ok(out)
        }
    }
}

/// Merges the scales into one scale-4 grid by overlap averaging.
///
/// Contributions are accumulated scale by scale (4, 8, 16) and within a
/// scale in coordinate order, so the result is bit-stable under row order.
pub fn densify<T: Real>(ms: &MultiScaleFeatures<T>, anchor: Anchor) -> Result<SparseVoxelGrid<T>> {
    if ms.total_voxels() == 0 {
        return Err(Error::EmptyInput("no non-empty voxels at any scale"));
    }
    let first = ms.grids.values().next().expect("non-empty");
    let channels = first.channels();
    let geom4 = first.geometry().at_scale(TARGET_SCALE)?;
    let dims4 = geom4.dims();

    let mut sums: HashMap<VoxelIndex, (Vec<T>, u32)> = HashMap::new();
    for s in DENSIFY_SCALES {
        let Some(g) = ms.grids.get(&s) else { continue };
        let mut rows: Vec<usize> = (0..g.len()).collect();
        rows.sort_by_key(|&r| g.coords()[r]);
        for r in rows {
            for t in targets(g.coords()[r], anchor, dims4)? {
                if !geom4.contains(&t) {
                    return Err(Error::OutOfBounds(t.to_string()));
                }
                let e = sums.entry(t).or_insert_with(|| (vec![T::zero(); channels], 0));
                for (a, &x) in e.0.iter_mut().zip(g.row(r)) {
                    *a += x;
                }
                e.1 += 1;
            }
        }
    }

    let mut coords: Vec<_> = sums.into_iter().collect();
    coords.sort_by_key(|(c, _)| *c);
    let mut out = SparseVoxelGrid::with_capacity(geom4, channels, coords.len());
    for (c, (mut acc, n)) in coords {
        let n = T::lit(f64::from(n));
        acc.iter_mut().for_each(|a| *a /= n);
        out.insert(c, &acc)?;
    }
    Ok(out)
}
