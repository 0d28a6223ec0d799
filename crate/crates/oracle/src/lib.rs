//! Slow reference implementations on plain arrays, used only by tests.
//!
//! Nothing here shares code with the main crate.

use std::collections::{BTreeMap, BTreeSet, HashSet};

/// Dense `X x Y x Z x C` volume, x slowest, channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub dims: [usize; 3],
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Dense {
    pub fn zeros(dims: [usize; 3], channels: usize) -> Self {
        Self {
            dims,
            channels,
            data: vec![0.0; dims[0] * dims[1] * dims[2] * channels],
        }
    }

    fn offset(&self, p: [usize; 3]) -> usize {
        ((p[0] * self.dims[1] + p[1]) * self.dims[2] + p[2]) * self.channels
    }

    pub fn at(&self, p: [usize; 3]) -> &[f64] {
        let o = self.offset(p);
        &self.data[o..o + self.channels]
    }

    pub fn at_mut(&mut self, p: [usize; 3]) -> &mut [f64] {
        let o = self.offset(p);
        &mut self.data[o..o + self.channels]
    }

    fn get(&self, p: [i64; 3]) -> Option<&[f64]> {
        if (0..3).any(|a| p[a] < 0 || p[a] >= self.dims[a] as i64) {
            return None;
        }
        Some(self.at([p[0] as usize, p[1] as usize, p[2] as usize]))
    }
}

/// Full dense convolution `out(p) = bias + sum_k in(stride * p + k) W[k]`
/// with zero padding, over every output cell `0 <= p < ceil(dims / stride)`.
///
/// `weights` is `extent^3 x in x out` with kernel offsets `-r..=r` ordered z
/// fastest.
pub fn dense_conv(input: &Dense, extent: usize, stride: usize, weights: &[f64], bias: &[f64]) -> Dense {
    let r = (extent / 2) as i64;
    let cin = input.channels;
    let cout = bias.len();
    assert_eq!(weights.len(), extent * extent * extent * cin * cout);
    let od = input.dims.map(|d| d.div_ceil(stride));
    let mut out = Dense::zeros(od, cout);
    for x in 0..od[0] {
        for y in 0..od[1] {
            for z in 0..od[2] {
                let mut acc = bias.to_vec();
                let mut k = 0;
                for dx in -r..=r {
                    for dy in -r..=r {
                        for dz in -r..=r {
                            let q = [
                                (x * stride) as i64 + dx,
                                (y * stride) as i64 + dy,
                                (z * stride) as i64 + dz,
                            ];
                            if let Some(v) = input.get(q) {
                                for i in 0..cin {
                                    for o in 0..cout {
                                        acc[o] += v[i] * weights[(k * cin + i) * cout + o];
                                    }
                                }
                            }
                            k += 1;
                        }
                    }
                }
                out.at_mut([x, y, z]).copy_from_slice(&acc);
            }
        }
    }
    out
}

/// One multi-scale input voxel: scale, coordinates at that scale, feature.
pub type ScaledVoxel = (u32, [u32; 3], Vec<f64>);

/// Maps every voxel to scale-4 coordinates and averages per coordinate.
///
/// With `footprint == false` a coarse voxel lands only on `(scale / 4) * g`;
/// otherwise on every scale-4 cell it covers (clipped to `dims4`).
pub fn group_mean_densify(entries: &[ScaledVoxel], footprint: bool, dims4: [u32; 3]) -> BTreeMap<[u32; 3], Vec<f64>> {
    let mut groups: BTreeMap<[u32; 3], Vec<&Vec<f64>>> = BTreeMap::new();
    for (scale, g, f) in entries {
        let k = scale / 4;
        let base = g.map(|c| c * k);
        let span = if footprint { k } else { 1 };
        for dx in 0..span {
            for dy in 0..span {
                for dz in 0..span {
                    let p = [base[0] + dx, base[1] + dy, base[2] + dz];
                    if (0..3).all(|a| p[a] < dims4[a]) {
                        groups.entry(p).or_default().push(f);
                    }
                }
            }
        }
    }
    groups
        .into_iter()
        .map(|(p, fs)| {
            let n = fs.len() as f64;
            let mut m = vec![0.0; fs[0].len()];
            for f in fs {
                for (a, b) in m.iter_mut().zip(f) {
                    *a += b;
                }
            }
            m.iter_mut().for_each(|x| *x /= n);
            (p, m)
        })
        .collect()
}

/// Cells of a regular grid whose boxes the segment `origin + t * d`,
/// `t in [0, t_end]`, crosses with positive length, sorted by entry time.
pub fn segment_cells(origin: [f64; 3], d: [f64; 3], t_end: f64, lo: [f64; 3], size: f64, dims: [u32; 3]) -> Vec<[u32; 3]> {
    // Candidate index range from the segment's bounding box.
    let mut range = [(0u32, 0u32); 3];
    for a in 0..3 {
        let e = origin[a] + d[a] * t_end;
        let (mn, mx) = (origin[a].min(e), origin[a].max(e));
        let i0 = ((mn - lo[a]) / size).floor() - 1.0;
        let i1 = ((mx - lo[a]) / size).floor() + 1.0;
        let top = f64::from(dims[a]) - 1.0;
        if i1 < 0.0 || i0 > top {
            return Vec::new();
        }
        range[a] = (i0.max(0.0) as u32, i1.min(top) as u32);
    }
    let mut hits = Vec::new();
    for x in range[0].0..=range[0].1 {
        for y in range[1].0..=range[1].1 {
            for z in range[2].0..=range[2].1 {
                let c = [x, y, z];
                let mut t0 = 0.0f64;
                let mut t1 = t_end;
                let mut miss = false;
                for a in 0..3 {
                    let bmin = lo[a] + size * f64::from(c[a]);
                    let bmax = bmin + size;
                    if d[a] == 0.0 {
                        if origin[a] < bmin || origin[a] >= bmax {
                            miss = true;
                        }
                        continue;
                    }
                    let (mut ta, mut tb) = ((bmin - origin[a]) / d[a], (bmax - origin[a]) / d[a]);
                    if ta > tb {
                        std::mem::swap(&mut ta, &mut tb);
                    }
                    t0 = t0.max(ta);
                    t1 = t1.min(tb);
                }
                if !miss && t1 > t0 {
                    hits.push((t0, c));
                }
            }
        }
    }
    hits.sort_by(|a, b| a.0.total_cmp(&b.0));
    hits.into_iter().map(|h| h.1).collect()
}

/// Jaccard loss of a mispredicted set `m` against ground-truth set `g`:
/// `|m| / |g u m|`, zero when both are empty.
fn jaccard_loss(g: &HashSet<usize>, m: &HashSet<usize>) -> f64 {
    let union = g.union(m).count();
    if union == 0 {
        0.0
    } else {
        m.len() as f64 / union as f64
    }
}

/// Lovász extension evaluated as `integral_0^inf J({i : e_i >= t}) dt`,
/// computed piecewise between the distinct error values.
pub fn lovasz_extension(errors: &[f64], gt: &HashSet<usize>) -> f64 {
    let mut levels: Vec<f64> = errors.to_vec();
    levels.sort_by(|a, b| b.total_cmp(a));
    levels.dedup();
    levels.push(0.0);
    let mut total = 0.0;
    for w in levels.windows(2) {
        let (hi, lo) = (w[0], w[1]);
        if hi <= lo {
            continue;
        }
        let m: HashSet<usize> = (0..errors.len()).filter(|&i| errors[i] >= hi).collect();
        total += (hi - lo) * jaccard_loss(gt, &m);
    }
    total
}

/// Multi-class Lovász-Softmax from the definition: mean over the classes
/// present in `labels` of the extension applied to `|1[y = c] - p_c|`.
/// `probs` is `N x classes`; every label is a valid class.
pub fn lovasz_softmax_definition(probs: &[f64], classes: usize, labels: &[usize]) -> f64 {
    let present: BTreeSet<usize> = labels.iter().copied().collect();
    let mut total = 0.0;
    for &c in &present {
        let gt: HashSet<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        let errors: Vec<f64> = (0..labels.len())
            .map(|i| {
                let fg = if labels[i] == c { 1.0 } else { 0.0 };
                (fg - probs[i * classes + c]).abs()
            })
            .collect();
        total += lovasz_extension(&errors, &gt);
    }
    total / present.len() as f64
}

/// `(geometric IoU, per-class IoU)` from explicit voxel sets. Class 0 is free
/// space; `skip` voxels are left out. Undefined ratios are `None`.
pub fn set_iou(pred: &[u16], gt: &[u16], skip: &[bool], classes: usize) -> (Option<f64>, Vec<Option<f64>>) {
    let keep: Vec<usize> = (0..gt.len()).filter(|&i| !skip[i]).collect();
    let set = |v: &[u16], f: &dyn Fn(u16) -> bool| -> HashSet<usize> { keep.iter().copied().filter(|&i| f(v[i])).collect() };
    let ratio = |a: &HashSet<usize>, b: &HashSet<usize>| {
        let u = a.union(b).count();
        (u > 0).then(|| a.intersection(b).count() as f64 / u as f64)
    };
    let occ = |l: u16| l != 0;
    let geo = ratio(&set(pred, &occ), &set(gt, &occ));
    let per = (0..classes)
        .map(|c| {
            if c == 0 {
                return None;
            }
            let is = move |l: u16| usize::from(l) == c;
            ratio(&set(pred, &is), &set(gt, &is))
        })
        .collect();
    (geo, per)
}
