//! Amanatides-Woo voxel traversal.

use crate::scalar::Real;
use crate::voxel::{GridGeometry, VoxelIndex};

/// Voxels (at `geom.scale`) crossed by the segment `origin -> target`,
/// extended `margin` meters past `target`, in order of increasing distance.
///
/// The segment is clipped to the grid first, so an origin outside the grid
/// starts at the entry face. Returns an empty list when the segment misses.
/// Crossing times are recomputed from the voxel index at every step instead
/// of accumulated, so long rays do not drift.
pub fn traverse<T: Real>(origin: [T; 3], target: [T; 3], geom: &GridGeometry<T>, margin: T) -> Vec<VoxelIndex> {
    let size = geom.cell_size();
    let dims = geom.dims();
    let lo = geom.origin;
    let hi = [0, 1, 2].map(|a| lo[a] + size * T::lit(f64::from(dims[a])));
    let d = [0, 1, 2].map(|a| target[a] - origin[a]);
    let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();

    if len == T::zero() {
        return geom.voxel_of(origin).into_iter().collect();
    }
    let t_end = T::one() + margin.max(T::zero()) / len;

    // Slab clipping against the grid box.
    let mut t0 = T::zero();
    let mut t1 = t_end;
    for a in 0..3 {
        if d[a] == T::zero() {
            if origin[a] < lo[a] || origin[a] > hi[a] {
                return Vec::new();
            }
            continue;
        }
        let mut ta = (lo[a] - origin[a]) / d[a];
        let mut tb = (hi[a] - origin[a]) / d[a];
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    if t0 > t1 {
        return Vec::new();
    }

    let mut idx = [0i64; 3];
    let mut step = [0i64; 3];
    for a in 0..3 {
        let p = origin[a] + d[a] * t0;
        let f = ((p - lo[a]) / size).floor().to_i64().unwrap_or(0);
        idx[a] = f.clamp(0, i64::from(dims[a]) - 1);
        step[a] = if d[a] > T::zero() {
            1
        } else if d[a] < T::zero() {
            -1
        } else {
            0
        };
    }

    let mut out = Vec::new();
    loop {
        out.push(VoxelIndex::new(idx[0] as u32, idx[1] as u32, idx[2] as u32, geom.scale));
        // Next boundary crossing per axis; the smallest wins, lowest axis on ties.
        let mut best_axis = usize::MAX;
        let mut best_t = T::infinity();
        for a in 0..3 {
            if step[a] == 0 {
                continue;
            }
            let face = if step[a] > 0 { idx[a] + 1 } else { idx[a] };
            let t = (lo[a] + size * T::lit(face as f64) - origin[a]) / d[a];
            if t < best_t {
                best_t = t;
                best_axis = a;
            }
        }
        if best_axis == usize::MAX || best_t > t1 {
            break;
        }
        idx[best_axis] += step[best_axis];
        if idx[best_axis] < 0 || idx[best_axis] >= i64::from(dims[best_axis]) {
            break;
        }
    }
    out
}
