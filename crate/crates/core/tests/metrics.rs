use proptest::prelude::*;
use sparse_occ::metrics::compute_metrics;
use sparse_occ_oracle::set_iou;

const C: usize = 6;

fn volumes() -> impl Strategy<Value = (Vec<u16>, Vec<u16>, Vec<bool>)> {
    (1usize..80).prop_flat_map(|n| {
        (
            prop::collection::vec(0..C as u16, n),
            prop::collection::vec(0..C as u16, n),
            prop::collection::vec(prop::bool::weighted(0.15), n),
        )
    })
}

proptest! {
    #[test]
    fn matches_set_oracle((p, g, skip) in volumes()) {
        let r = compute_metrics(&p, &g, Some(&skip), C).unwrap();
        let (geo, per) = set_iou(&p, &g, &skip, C);
        prop_assert_eq!(r.iou, geo.unwrap_or(1.0));
        prop_assert_eq!(&r.per_class_iou, &per);
        let defined: Vec<f64> = per.iter().flatten().copied().collect();
        if !defined.is_empty() {
            let m = defined.iter().sum::<f64>() / defined.len() as f64;
            prop_assert!((r.miou - m).abs() < 1e-12);
        }
        prop_assert!((0.0..=1.0).contains(&r.iou) && (0.0..=1.0).contains(&r.miou));
    }

    #[test]
    fn swapping_pred_and_gt_keeps_iou((p, g, skip) in volumes()) {
        let a = compute_metrics(&p, &g, Some(&skip), C).unwrap();
        let b = compute_metrics(&g, &p, Some(&skip), C).unwrap();
        prop_assert_eq!(a.iou, b.iou);
        prop_assert_eq!(a.per_class_iou, b.per_class_iou);
    }

    #[test]
    fn class_relabeling_keeps_miou((p, g, _s) in volumes(), perm in Just((1..C as u16).collect::<Vec<_>>()).prop_shuffle()) {
        let map = |l: u16| if l == 0 { 0 } else { perm[usize::from(l) - 1] };
        let a = compute_metrics(&p, &g, None, C).unwrap();
        let pp: Vec<u16> = p.iter().map(|&l| map(l)).collect();
        let gg: Vec<u16> = g.iter().map(|&l| map(l)).collect();
        let b = compute_metrics(&pp, &gg, None, C).unwrap();
        prop_assert!((a.miou - b.miou).abs() < 1e-12);
        prop_assert_eq!(a.iou, b.iou);
    }
}

#[test]
fn two_voxel_overlap_fixture() {
    // 4 x 4 x 4 volume; prediction and ground truth each occupy two voxels and
    // share one.
    let mut pred = vec![0u16; 64];
    let mut gt = vec![0u16; 64];
    pred[5] = 2;
    pred[6] = 2;
    gt[6] = 2;
    gt[40] = 2;
    let r = compute_metrics(&pred, &gt, None, 3).unwrap();
    assert!((r.iou - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(r.per_class_iou, vec![None, None, Some(1.0 / 3.0)]);
    assert!((r.miou - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn identical_and_disjoint() {
    let v = [0u16, 1, 2, 2, 0, 5];
    let r = compute_metrics(&v, &v, None, C).unwrap();
    assert_eq!((r.iou, r.miou, r.defined_classes()), (1.0, 1.0, 3));
    let r = compute_metrics(&[1, 0, 0], &[0, 0, 3], None, C).unwrap();
    assert_eq!(r.iou, 0.0);
    assert!(compute_metrics(&[1, 0], &[0], None, C).is_err());
}
