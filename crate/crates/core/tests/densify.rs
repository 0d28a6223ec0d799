use std::collections::BTreeSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparse_occ::densify::{densify, Anchor, MultiScaleFeatures};
use sparse_occ::{Grid64, GridGeometry, SparseVoxelGrid, VoxelIndex};
use sparse_occ_oracle::{group_mean_densify, ScaledVoxel};

/// Random scale-4/8/16 grids in a 256 x 256 x 32 frame, plus the same voxels
/// as oracle entries.
pub fn instance(seed: u64, max_voxels: usize) -> (MultiScaleFeatures<f64>, Vec<ScaledVoxel>) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let base = GridGeometry::new([0.0; 3], 0.2, [256, 256, 32], 1).unwrap();
    let ch = r.gen_range(1..=4);
    let mut grids = Vec::new();
    let mut entries = Vec::new();
    for s in [4u32, 8, 16] {
        let g = base.at_scale(s).unwrap();
        let d = g.dims();
        let n = r.gen_range(0..=max_voxels / 3);
        let mut coords = BTreeSet::new();
        for _ in 0..n {
            coords.insert([r.gen_range(0..d[0]), r.gen_range(0..d[1]), r.gen_range(0..d[2])]);
        }
        let mut grid: Grid64 = SparseVoxelGrid::new(g, ch);
        for c in coords {
            let f: Vec<f64> = (0..ch).map(|_| r.gen_range(-10.0..10.0)).collect();
            grid.insert(VoxelIndex::new(c[0], c[1], c[2], s), &f).unwrap();
            entries.push((s, c, f));
        }
        grids.push(grid);
    }
    (MultiScaleFeatures::new(grids).unwrap(), entries)
}

fn check(seed: u64, anchor: Anchor) {
    let (ms, entries) = instance(seed, 10_000);
    if ms.total_voxels() == 0 {
        return;
    }
    let got = densify(&ms, anchor).unwrap();
    let want = group_mean_densify(&entries, anchor == Anchor::Footprint, [64, 64, 8]);
    assert_eq!(got.len(), want.len(), "seed {seed}");
    for (c, f) in &want {
        let g = got.lookup(&VoxelIndex::new(c[0], c[1], c[2], 4)).expect("coordinate present");
        for (a, b) in g.iter().zip(f) {
            assert!((a - b).abs() < 1e-6, "seed {seed} at {c:?}: {a} vs {b}");
        }
    }
}

#[test]
fn matches_group_by_mean_oracle() {
    let t = Instant::now();
    for seed in 0..200 {
        check(seed, Anchor::Aligned);
    }
    assert!(t.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn footprint_mode_matches_oracle() {
    for seed in 0..40 {
        check(1000 + seed, Anchor::Footprint);
    }
}

#[test]
fn aligned_examples() {
    let base = GridGeometry::new([0.0f64; 3], 0.2, [256, 256, 32], 1).unwrap();
    let mut g16 = SparseVoxelGrid::new(base.at_scale(16).unwrap(), 1);
    g16.insert(VoxelIndex::new(1, 1, 1, 16), &[7.0]).unwrap();
    let d = densify(&MultiScaleFeatures::new(vec![g16]).unwrap(), Anchor::Aligned).unwrap();
    assert_eq!(d.coords(), &[VoxelIndex::new(4, 4, 4, 4)]);
    assert!(densify(&MultiScaleFeatures::<f64>::new(vec![]).unwrap(), Anchor::Aligned).is_err());
}

#[test]
fn row_order_does_not_matter() {
    let (ms, _) = instance(77, 3000);
    let a = densify(&ms, Anchor::Aligned).unwrap();
    let shuffled: Vec<Grid64> = [4, 8, 16]
        .iter()
        .map(|&s| {
            let g = ms.get(s).unwrap();
            let mut rows: Vec<(VoxelIndex, Vec<f64>)> = g.iter().map(|(c, f)| (c, f.to_vec())).collect();
            rows.reverse();
            let mut out = SparseVoxelGrid::new(*g.geometry(), g.channels());
            for (c, f) in rows {
                out.insert(c, &f).unwrap();
            }
            out
        })
        .collect();
    let b = densify(&MultiScaleFeatures::new(shuffled).unwrap(), Anchor::Aligned).unwrap();
    assert_eq!(a.coords(), b.coords());
    assert_eq!(a.features(), b.features());
}
