use proptest::prelude::*;
use sparse_occ::camera::{
    roundtrip_check, visible_cameras, CameraModel, FeatureMap2D, Intrinsics, RigidTransform,
};

fn rig_camera(eye: [f64; 3], target: [f64; 3], f: f64, w: u32, h: u32) -> Option<CameraModel<f64>> {
    let up = if (target[2] - eye[2]).abs() > 0.9 * dist(eye, target) {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    };
    let ext = RigidTransform::look_at(eye, target, up).ok()?;
    let k = Intrinsics {
        fx: f,
        fy: f * 1.01,
        cx: f64::from(w) / 2.0 - 0.3,
        cy: f64::from(h) / 2.0 + 0.7,
    };
    CameraModel::new(k, ext, w, h).ok()
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn camera() -> impl Strategy<Value = CameraModel<f64>> {
    (
        prop::array::uniform3(-20.0f64..20.0),
        prop::array::uniform3(-20.0f64..20.0),
        100.0f64..2000.0,
        64u32..1600,
        64u32..900,
    )
        .prop_filter_map("degenerate rig", |(e, t, f, w, h)| {
            (dist(e, t) > 0.5).then(|| rig_camera(e, t, f, w, h)).flatten()
        })
}

proptest! {
    #[test]
    fn projection_roundtrip(cam in camera(), u in 0.0f64..1.0, v in 0.0f64..1.0, depth in 0.5f64..80.0) {
        let p = cam.back_project(u * f64::from(cam.width - 1), v * f64::from(cam.height - 1), depth);
        let r = roundtrip_check(&cam, p).expect("constructed inside the image");
        prop_assert!(r < 1e-4, "residual {r}");
    }

    #[test]
    fn depth_scaling_keeps_pixel(cam in camera(), u in 0.0f64..1.0, v in 0.0f64..1.0,
                                 depth in 0.5f64..10.0, lambda in 0.2f64..5.0) {
        let p = cam.back_project(u * f64::from(cam.width - 1), v * f64::from(cam.height - 1), depth);
        let c = cam.center();
        let q = [0, 1, 2].map(|a| c[a] + lambda * (p[a] - c[a]));
        let (a, b) = (cam.project(p).unwrap(), cam.project(q).unwrap());
        prop_assert!((a.u - b.u).abs() < 1e-6 && (a.v - b.v).abs() < 1e-6);
        prop_assert!((b.depth - lambda * a.depth).abs() < 1e-6 * b.depth.max(1.0));
    }

    #[test]
    fn visibility_monotone_in_frustum(cam in camera(), p in prop::array::uniform3(-30.0f64..30.0), grow in 1u32..400) {
        // Widening the image about its center keeps every hit.
        let mut wide = cam.clone();
        wide.width += 2 * grow;
        wide.height += 2 * grow;
        wide.intrinsics.cx += f64::from(grow);
        wide.intrinsics.cy += f64::from(grow);
        let small = visible_cameras(std::slice::from_ref(&cam), p);
        let big = visible_cameras(std::slice::from_ref(&wide), p);
        prop_assert!(small.iter().all(|i| big.contains(i)));
    }

    #[test]
    fn bilinear_exact_at_knots_and_affine_between(vals in prop::collection::vec(-5.0f64..5.0, 12),
                                                  x in 0u32..3, y in 0u32..3, t in 0.0f64..1.0) {
        let map = FeatureMap2D::new(4, 3, 1, vec![vals.clone()]).unwrap();
        let at = |u: f64, v: f64| map.bilinear_sample(0, u, v)[0];
        let px = |x: u32, y: u32| vals[(y * 4 + x) as usize];
        let (xf, yf) = (f64::from(x), f64::from(y.min(2)));
        prop_assert!((at(xf, yf) - px(x, y.min(2))).abs() < 1e-12);
        // Along a row between two knots.
        let want = (1.0 - t) * px(x, y.min(2)) + t * px(x + 1, y.min(2));
        prop_assert!((at(xf + t, yf) - want).abs() < 1e-12);
    }
}

#[test]
fn spec_projection_example() {
    let cam = CameraModel::new(
        Intrinsics { fx: 100.0, fy: 100.0, cx: 50.0, cy: 50.0 },
        RigidTransform::identity(),
        200,
        200,
    )
    .unwrap();
    let p = cam.project([1.0, 1.0, 2.0]).unwrap();
    assert_eq!((p.u, p.v, p.depth), (100.0, 100.0, 2.0));
    assert_eq!(roundtrip_check(&cam, [0.0, 0.0, 5.0]), Some(0.0));
    assert!(cam.project([0.0, 0.0, -1.0]).is_none());
    assert!(cam.project([0.0, 0.0, 0.05]).is_none());
}

#[test]
fn bilinear_examples() {
    let map = FeatureMap2D::new(2, 1, 1, vec![vec![0.0, 1.0]]).unwrap();
    assert_eq!(map.bilinear_sample(0, 0.5, 0.0), vec![0.5]);
    assert_eq!(map.bilinear_sample(0, 1.0, 0.0), vec![1.0]);
    assert_eq!(map.bilinear_sample(0, -5.0, 3.0), vec![0.0]);
}
