use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparse_occ::camera::FeatureMap2D;
use sparse_occ::config::{GeometryConfig, PipelineConfig, ScorerKind};
use sparse_occ::hvfr::{
    estimate_importance, fuse_refined, gather_fine, gather_semi_fine, select_sets, ImportanceMap, RefinementSets,
    DEFAULT_TAU1, DEFAULT_TAU2,
};
use sparse_occ::linear::Linear;
use sparse_occ::lidar::{ConvMode, SparseConvSpec};
use sparse_occ::pipeline::Pipeline;
use sparse_occ::scene::{foreground_fraction, is_foreground, SceneParams, SyntheticScene};
use sparse_occ::{subdivide, Grid64, GridGeometry, SparseVoxelGrid, VoxelIndex};
use sparse_occ_oracle::{dense_conv, Dense};

fn base() -> GridGeometry<f64> {
    GridGeometry::new([0.0; 3], 0.2, [16, 16, 16], 1).unwrap()
}

fn random_grid(r: &mut ChaCha8Rng, scale: u32, ch: usize, fill: f64) -> Grid64 {
    let g = base().at_scale(scale).unwrap();
    let d = g.dims();
    let mut out = SparseVoxelGrid::new(g, ch);
    for x in 0..d[0] {
        for y in 0..d[1] {
            for z in 0..d[2] {
                if r.gen_bool(fill) {
                    let f: Vec<f64> = (0..ch).map(|_| r.gen_range(-1.0..1.0)).collect();
                    out.insert(VoxelIndex::new(x, y, z, scale), &f).unwrap();
                }
            }
        }
    }
    out
}

fn to_dense(g: &Grid64) -> Dense {
    let mut out = Dense::zeros(g.geometry().dims().map(|v| v as usize), g.channels());
    for (c, f) in g.iter() {
        out.at_mut([c.x as usize, c.y as usize, c.z as usize]).copy_from_slice(f);
    }
    out
}

fn at(c: &VoxelIndex) -> [usize; 3] {
    [c.x as usize, c.y as usize, c.z as usize]
}

#[test]
fn importance_matches_dense_conv_and_sigmoid() {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    for seed in 0..20 {
        let fm = random_grid(&mut r, 4, 3, 0.3);
        let mut rie = SparseConvSpec::seeded(3, 1, 3, 1, ConvMode::Submanifold, seed).unwrap();
        rie.bias = vec![r.gen_range(-1.0..1.0)];
        let got = estimate_importance(&fm, &rie).unwrap();
        let dense = dense_conv(&to_dense(&fm), 3, 1, &rie.weights, &rie.bias);
        assert_eq!(got.coords, fm.coords());
        for (c, s) in got.coords.iter().zip(&got.scores) {
            let want = 1.0 / (1.0 + (-dense.at(at(c))[0]).exp());
            assert!((s - want).abs() < 1e-6);
        }
    }
}

#[test]
fn zero_conv_scores_one_half_and_large_bias_saturates() {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let fm = random_grid(&mut r, 4, 2, 0.2);
    let mut rie = SparseConvSpec::zeros(3, 1, 2, 1, ConvMode::Submanifold).unwrap();
    assert!(estimate_importance(&fm, &rie).unwrap().scores.iter().all(|&s| s == 0.5));
    rie.bias = vec![60.0];
    assert!(estimate_importance(&fm, &rie).unwrap().scores.iter().all(|&s| s > 1.0 - 1e-12));
}

fn importance() -> impl Strategy<Value = ImportanceMap<f64>> {
    prop::collection::vec(0.0f64..=1.0, 0..100).prop_map(|s| {
        let coords = (0..s.len() as u32).map(|i| VoxelIndex::new(i % 10, i / 10, 0, 4)).collect();
        ImportanceMap::new(coords, s).unwrap()
    })
}

proptest! {
    #[test]
    fn sets_shrink_as_thresholds_rise(r in importance(), t in prop::array::uniform4(0.0f64..=1.0)) {
        let (lo1, hi1) = (t[0].min(t[1]), t[0].max(t[1]));
        let (lo2, hi2) = (t[2].min(t[3]), t[2].max(t[3]));
        let a = select_sets(&r, lo1, lo2).unwrap();
        let b = select_sets(&r, hi1, hi2).unwrap();
        let sub = |x: &[VoxelIndex], y: &[VoxelIndex]| x.iter().all(|v| y.contains(v));
        prop_assert!(sub(&b.semi_fine, &a.semi_fine));
        prop_assert!(sub(&b.fine, &a.fine));
        let s = select_sets(&r, lo1, hi1).unwrap();
        prop_assert!(sub(&s.fine, &s.semi_fine));
        for (c, x) in r.coords.iter().zip(&r.scores) {
            prop_assert_eq!(s.semi_fine.contains(c), *x >= lo1);
        }
    }

    #[test]
    fn child_counts_are_exact(seed in any::<u64>(), tau in 0.0f64..1.0) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let fm = random_grid(&mut r, 4, 2, 0.1);
        let scores = (0..fm.len()).map(|_| r.gen_range(0.0..1.0)).collect();
        let imap = ImportanceMap::new(fm.coords().to_vec(), scores).unwrap();
        let sets = select_sets(&imap, tau, (tau + 0.2).min(1.0)).unwrap();
        let l2 = random_grid(&mut r, 2, 2, 0.05);
        let l1 = random_grid(&mut r, 1, 2, 0.02);
        let maps = FeatureMap2D::constant(0, 8, 8, &[1.0]);
        let proj = Linear::seeded(3, 2, seed);
        let s = gather_semi_fine(&sets, &l2, &[], &maps, &proj).unwrap();
        let f = gather_fine(&sets, &l1, &[], &maps, &proj).unwrap();
        prop_assert_eq!(s.len(), 8 * sets.semi_fine.len());
        prop_assert_eq!(f.len(), 64 * sets.fine.len());
    }
}

#[test]
fn both_gathers_on_one_parent() {
    let p = VoxelIndex::new(1, 2, 1, 4);
    let sets = RefinementSets { semi_fine: vec![p], fine: vec![p], tau1: 0.4, tau2: 0.7 };
    let mut l2 = SparseVoxelGrid::new(base().at_scale(2).unwrap(), 2);
    l2.insert(VoxelIndex::new(2, 4, 2, 2), &[3.0, -1.0]).unwrap();
    let l1 = SparseVoxelGrid::new(base(), 2);
    let maps = FeatureMap2D::constant(0, 4, 4, &[0.0]);
    let s = gather_semi_fine(&sets, &l2, &[], &maps, &Linear::identity(3)).unwrap();
    let f = gather_fine(&sets, &l1, &[], &maps, &Linear::identity(3)).unwrap();
    assert_eq!((s.len(), f.len()), (8, 64));
    assert_eq!(s.lookup(&VoxelIndex::new(2, 4, 2, 2)).unwrap(), &[3.0, -1.0, 0.0]);
    assert_eq!(s.lookup(&VoxelIndex::new(3, 5, 3, 2)).unwrap(), &[0.0; 3]);
}

/// `F_E` computed on dense arrays: convolutions are evaluated everywhere and
/// masked to the cells an expanding conv would produce.
fn dense_refine(fine: &Grid64, semi: &Grid64, fm: &Grid64, c1: &SparseConvSpec<f64>, c2: &SparseConvSpec<f64>) -> Dense {
    let support = |g: &Dense, set: &dyn Fn([usize; 3]) -> bool| {
        let mut ind = Dense::zeros(g.dims, 1);
        for x in 0..g.dims[0] {
            for y in 0..g.dims[1] {
                for z in 0..g.dims[2] {
                    if set([x, y, z]) {
                        ind.at_mut([x, y, z])[0] = 1.0;
                    }
                }
            }
        }
        dense_conv(&ind, 3, 2, &[1.0; 27], &[0.0])
    };
    let f1 = to_dense(fine);
    let reach1 = support(&f1, &|p| fine.lookup(&VoxelIndex::new(p[0] as u32, p[1] as u32, p[2] as u32, 1)).is_some());
    let up = dense_conv(&f1, 3, 2, &c1.weights, &c1.bias);
    let mut mid = to_dense(semi);
    let mut mid_set = Dense::zeros(mid.dims, 1);
    for x in 0..mid.dims[0] {
        for y in 0..mid.dims[1] {
            for z in 0..mid.dims[2] {
                let p = [x, y, z];
                let in_semi = semi.lookup(&VoxelIndex::new(x as u32, y as u32, z as u32, 2)).is_some();
                if reach1.at(p)[0] > 0.0 {
                    let u = up.at(p).to_vec();
                    mid.at_mut(p).iter_mut().zip(u).for_each(|(m, v)| *m += v);
                }
                if in_semi || reach1.at(p)[0] > 0.0 {
                    mid_set.at_mut(p)[0] = 1.0;
                }
            }
        }
    }
    let reach2 = support(&mid_set, &|p| mid_set.at(p)[0] > 0.0);
    let conv2 = dense_conv(&mid, 3, 2, &c2.weights, &c2.bias);
    let mut out = to_dense(fm);
    for c in fm.coords() {
        let p = at(c);
        if reach2.at(p)[0] > 0.0 {
            let v = conv2.at(p).to_vec();
            out.at_mut(p).iter_mut().zip(v).for_each(|(o, x)| *o += x);
        }
    }
    out
}

#[test]
fn fuse_refined_matches_dense_pipeline() {
    let mut r = ChaCha8Rng::seed_from_u64(8);
    for case in 0..10u64 {
        let ch = 2;
        let mut fm = random_grid(&mut r, 4, ch, 0.3);
        let parent = VoxelIndex::new(r.gen_range(0..4), r.gen_range(0..4), r.gen_range(0..4), 4);
        if fm.lookup(&parent).is_none() {
            fm.insert(parent, &[0.5, -0.5]).unwrap();
        }
        let fill = |scale: u32, factor: u32, r: &mut ChaCha8Rng| {
            let mut g = SparseVoxelGrid::new(base().at_scale(scale).unwrap(), ch);
            for c in subdivide(parent, factor).unwrap() {
                g.insert(c, &[r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)]).unwrap();
            }
            g
        };
        let fine = fill(1, 4, &mut r);
        let semi = fill(2, 2, &mut r);
        let mut c1 = SparseConvSpec::seeded(3, 2, ch, ch, ConvMode::Expanding, 10 + case).unwrap();
        let mut c2 = SparseConvSpec::seeded(3, 2, ch, ch, ConvMode::Expanding, 20 + case).unwrap();
        c1.bias = vec![0.1, -0.2];
        c2.bias = vec![0.3, 0.05];
        let got = fuse_refined(&fine, &semi, &fm, &c1, &c2).unwrap();
        let want = dense_refine(&fine, &semi, &fm, &c1, &c2);
        assert_eq!(got.coords(), fm.coords());
        for (c, f) in got.iter() {
            for (a, b) in f.iter().zip(want.at(at(&c))) {
                assert!((a - b).abs() < 1e-5, "case {case} at {c}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn residual_identity_is_bit_exact() {
    let mut r = ChaCha8Rng::seed_from_u64(9);
    let fm = random_grid(&mut r, 4, 3, 0.3);
    let c1 = SparseConvSpec::seeded(3, 2, 3, 3, ConvMode::Expanding, 1).unwrap();
    let c2 = SparseConvSpec::seeded(3, 2, 3, 3, ConvMode::Expanding, 2).unwrap();
    let empty1 = SparseVoxelGrid::new(base(), 3);
    let empty2 = SparseVoxelGrid::new(base().at_scale(2).unwrap(), 3);
    let out = fuse_refined(&empty1, &empty2, &fm, &c1, &c2).unwrap();
    assert_eq!(out.coords(), fm.coords());
    assert_eq!(out.features(), fm.features());

    let fine = random_grid(&mut r, 1, 3, 0.05);
    let semi = random_grid(&mut r, 2, 3, 0.1);
    let z1 = SparseConvSpec::zeros(3, 2, 3, 3, ConvMode::Expanding).unwrap();
    let z2 = SparseConvSpec::zeros(3, 2, 3, 3, ConvMode::Expanding).unwrap();
    let out = fuse_refined(&fine, &semi, &fm, &z1, &z2).unwrap();
    assert_eq!(out.features(), fm.features());
    assert!(fuse_refined(&semi, &fine, &fm, &z1, &z2).is_err());
}

#[test]
fn threshold_example() {
    let coords = (0..3).map(|i| VoxelIndex::new(i, 0, 0, 4)).collect();
    let r = ImportanceMap::new(coords, vec![0.4, 0.69, 0.7]).unwrap();
    let s = select_sets(&r, DEFAULT_TAU1, DEFAULT_TAU2).unwrap();
    assert_eq!(s.semi_fine.len(), 3);
    assert_eq!(s.fine, vec![VoxelIndex::new(2, 0, 0, 4)]);
}

/// Foreground share of the scene's annotated voxels.
fn scene_foreground(s: &SyntheticScene<f64>) -> f64 {
    let occ = s.gt.labels.iter().filter(|&&l| l != 0 && l != 255).count();
    let fg = s.gt.labels.iter().filter(|&&l| is_foreground(l)).count();
    fg as f64 / occ.max(1) as f64
}

#[test]
fn oracle_scores_focus_on_foreground() {
    let mut checked = 0;
    for seed in 0..12 {
        let params = SceneParams {
            dims: [64, 64, 16],
            origin: [-6.4, -6.4, -1.8],
            image_size: [48, 32],
            image_channels: 4,
            lidar_azimuths: 360,
            lidar_elevations: 16,
            seed,
            ..SceneParams::default()
        };
        let scene = SyntheticScene::<f64>::generate(&params).unwrap();
        if scene_foreground(&scene) < 0.05 {
            continue;
        }
        let mut cfg = PipelineConfig {
            geometry: GeometryConfig::custom(params.origin, params.voxel_size, params.dims),
            ..PipelineConfig::default()
        };
        cfg.channels.lidar = 6;
        cfg.channels.image = 4;
        cfg.decoder.hidden = vec![4];
        cfg.hvfr.scorer = ScorerKind::Oracle;
        let out = Pipeline::<f64>::new(&cfg, Some(seed))
            .unwrap()
            .forward(&scene.cloud, &scene.rig, &scene.features, Some(&scene.gt))
            .unwrap();
        let s: BTreeSet<VoxelIndex> = out.sets.semi_fine.iter().copied().collect();
        let coarse: Vec<VoxelIndex> = out.fused.coords().iter().filter(|c| !s.contains(c)).copied().collect();
        let ff = foreground_fraction(&scene.gt, &out.sets.fine).unwrap();
        let fs = foreground_fraction(&scene.gt, &out.sets.semi_fine).unwrap();
        let fc = foreground_fraction(&scene.gt, &coarse).unwrap();
        assert!(ff > fs && fs > fc, "seed {seed}: F {ff}, S {fs}, coarse {fc}");
        checked += 1;
    }
    assert!(checked >= 8, "only {checked} scenes had enough foreground");
}
