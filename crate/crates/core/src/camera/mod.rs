//! Pinhole cameras, multi-camera visibility and bilinear feature sampling.
//!
//! Camera frames follow the usual vision convention: x right, y down, z
//! forward. Pixel `(0, 0)` is the center of the top-left pixel.

mod calib;

pub use calib::{parse_kitti_calib, read_kitti_calib, read_rig_json, CameraSpec, RigFile};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Points closer than this (camera-frame depth, meters) never project.
pub const NEAR_PLANE: f64 = 0.1;

pub type Vec3<T> = [T; 3];

pub(crate) fn dot<T: Real>(a: Vec3<T>, b: Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn sub<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn norm<T: Real>(a: Vec3<T>) -> T {
    dot(a, a).sqrt()
}

pub(crate) fn cross<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn normalize<T: Real>(a: Vec3<T>) -> Vec3<T> {
    let n = norm(a);
    a.map(|v| v / n)
}

/// Rigid transform `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform<T> {
    pub rotation: [[T; 3]; 3],
    pub translation: Vec3<T>,
}

impl<T: Real> RigidTransform<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self {
            rotation: [[o, z, z], [z, o, z], [z, z, o]],
            translation: [z; 3],
        }
    }

    pub fn apply(&self, p: Vec3<T>) -> Vec3<T> {
        let r = &self.rotation;
        [0, 1, 2].map(|i| dot(r[i], p) + self.translation[i])
    }

    pub fn rotate(&self, v: Vec3<T>) -> Vec3<T> {
        let r = &self.rotation;
        [0, 1, 2].map(|i| dot(r[i], v))
    }

    pub fn inverse(&self) -> Self {
        let r = &self.rotation;
        let rt = [0, 1, 2].map(|i| [r[0][i], r[1][i], r[2][i]]);
        let t = [0, 1, 2].map(|i| -dot(rt[i], self.translation));
        Self {
            rotation: rt,
            translation: t,
        }
    }

    /// `self` after `first`.
    pub fn compose(&self, first: &Self) -> Self {
        let a = &self.rotation;
        let b = &first.rotation;
        let mut rotation = [[T::zero(); 3]; 3];
        for (i, row) in rotation.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        Self {
            rotation,
            translation: self.apply(first.translation),
        }
    }

    /// World-to-camera transform for a camera at `eye` looking at `target`,
    /// with image "up" as close to `up` as possible.
    pub fn look_at(eye: Vec3<T>, target: Vec3<T>, up: Vec3<T>) -> Result<Self> {
        let forward = sub(target, eye);
        if norm(forward) <= T::epsilon() {
            return Err(Error::InvalidCamera("look_at target equals eye".into()));
        }
        let z = normalize(forward);
        let right = cross(z, up);
        if norm(right) <= T::lit(1e-9) {
            return Err(Error::InvalidCamera("look_at up is parallel to the view direction".into()));
        }
        let x = normalize(right);
        let y = cross(z, x);
        let rotation = [x, y, z];
        let translation = [0, 1, 2].map(|i| -dot(rotation[i], eye));
        Ok(Self {
            rotation,
            translation,
        })
    }

    fn check_rotation(&self) -> Result<()> {
        let r = &self.rotation;
        let tol = T::lit(1e-6);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { T::one() } else { T::zero() };
                if (dot(r[i], r[j]) - want).abs() > tol {
                    return Err(Error::InvalidCamera("rotation is not orthonormal".into()));
                }
            }
        }
        let det = dot(r[0], cross(r[1], r[2]));
        if (det - T::one()).abs() > tol {
            return Err(Error::InvalidCamera(format!("rotation determinant {det} != 1")));
        }
        Ok(())
    }
}

/// Zero-skew pinhole intrinsics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection<T> {
    pub u: T,
    pub v: T,
    pub depth: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel<T> {
    pub intrinsics: Intrinsics<T>,
    /// World to camera.
    pub extrinsics: RigidTransform<T>,
    pub width: u32,
    pub height: u32,
}

impl<T: Real> CameraModel<T> {
    pub fn new(intrinsics: Intrinsics<T>, extrinsics: RigidTransform<T>, width: u32, height: u32) -> Result<Self> {
        if !(intrinsics.fx > T::zero() && intrinsics.fy > T::zero()) {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive, got {} and {}",
                intrinsics.fx, intrinsics.fy
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidCamera("image size must be non-zero".into()));
        }
        extrinsics.check_rotation()?;
        Ok(Self {
            intrinsics,
            extrinsics,
            width,
            height,
        })
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3<T> {
        self.extrinsics.inverse().translation
    }

    /// Pixel and depth of `p_world`, or `None` when it is behind the near
    /// plane or lands outside `[0, W) x [0, H)`.
    pub fn project(&self, p_world: Vec3<T>) -> Option<Projection<T>> {
        let pc = self.extrinsics.apply(p_world);
        let depth = pc[2];
        if !(depth > T::lit(NEAR_PLANE)) {
            return None;
        }
        let k = &self.intrinsics;
        let u = k.fx * pc[0] / depth + k.cx;
        let v = k.fy * pc[1] / depth + k.cy;
        let inside = u >= T::zero()
            && u < T::lit(f64::from(self.width))
            && v >= T::zero()
            && v < T::lit(f64::from(self.height));
        inside.then_some(Projection { u, v, depth })
    }

    /// World point at pixel `(u, v)` and camera-frame depth `depth`.
    pub fn back_project(&self, u: T, v: T, depth: T) -> Vec3<T> {
        let k = &self.intrinsics;
        let pc = [(u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth];
        self.extrinsics.inverse().apply(pc)
    }

    /// Unit direction in world coordinates of the ray through pixel `(u, v)`.
    pub fn pixel_ray(&self, u: T, v: T) -> Vec3<T> {
        let k = &self.intrinsics;
        let d = [(u - k.cx) / k.fx, (v - k.cy) / k.fy, T::one()];
        normalize(self.extrinsics.inverse().rotate(d))
    }
}

/// Ids of the cameras in `rig` that see `p_world`, ascending.
pub fn visible_cameras<T: Real>(rig: &[CameraModel<T>], p_world: Vec3<T>) -> Vec<usize> {
    rig.iter()
        .enumerate()
        .filter_map(|(i, c)| c.project(p_world).map(|_| i))
        .collect()
}

/// Projects, back-projects and re-projects `p_world`; returns the pixel residual.
pub fn roundtrip_check<T: Real>(cam: &CameraModel<T>, p_world: Vec3<T>) -> Option<T> {
    let hit = cam.project(p_world)?;
    let back = cam.back_project(hit.u, hit.v, hit.depth);
    let again = cam.project(back)?;
    let du = again.u - hit.u;
    let dv = again.v - hit.v;
    Some((du * du + dv * dv).sqrt())
}

/// Per-camera `H x W x C` feature maps, row-major with channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap2D<T> {
    pub width: u32,
    pub height: u32,
    pub channels: usize,
    maps: Vec<Vec<T>>,
}

impl<T: Real> FeatureMap2D<T> {
    pub fn new(width: u32, height: u32, channels: usize, maps: Vec<Vec<T>>) -> Result<Self> {
        let n = width as usize * height as usize * channels;
        if let Some(i) = maps.iter().position(|m| m.len() != n) {
            return Err(Error::Shape(format!(
                "camera {i} map has {} values, expected {n}",
                maps[i].len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            maps,
        })
    }

    /// Every pixel of every camera set to `value`.
    pub fn constant(cameras: usize, width: u32, height: u32, value: &[T]) -> Self {
        let px = width as usize * height as usize;
        let map: Vec<T> = value.iter().copied().cycle().take(px * value.len()).collect();
        Self {
            width,
            height,
            channels: value.len(),
            maps: vec![map; cameras],
        }
    }

    pub fn cameras(&self) -> usize {
        self.maps.len()
    }

    pub fn pixel(&self, cam: usize, x: u32, y: u32) -> &[T] {
        let o = ((y as usize * self.width as usize) + x as usize) * self.channels;
        &self.maps[cam][o..o + self.channels]
    }

    pub fn pixel_mut(&mut self, cam: usize, x: u32, y: u32) -> &mut [T] {
        let o = ((y as usize * self.width as usize) + x as usize) * self.channels;
        &mut self.maps[cam][o..o + self.channels]
    }

    /// Bilinear interpolation at map coordinates `(u, v)`. Taps outside the
    /// map contribute zero.
    pub fn bilinear_sample(&self, cam: usize, u: T, v: T) -> Vec<T> {
        let mut out = vec![T::zero(); self.channels];
        self.accumulate_bilinear(cam, u, v, T::one(), &mut out);
        out
    }

    /// Adds `scale * bilinear_sample(cam, u, v)` into `out`.
    pub fn accumulate_bilinear(&self, cam: usize, u: T, v: T, scale: T, out: &mut [T]) {
        if !(u.is_finite() && v.is_finite()) || cam >= self.maps.len() {
            return;
        }
        let u0 = u.floor();
        let v0 = v.floor();
        let fu = u - u0;
        let fv = v - v0;
        let (Some(x0), Some(y0)) = (u0.to_i64(), v0.to_i64()) else {
            return;
        };
        let zeros = vec![T::zero(); self.channels];
        let tap = |dx: i64, dy: i64| -> &[T] {
            let (x, y) = (x0 + dx, y0 + dy);
            if x < 0 || y < 0 || x >= i64::from(self.width) || y >= i64::from(self.height) {
                return &zeros;
            }
            self.pixel(cam, x as u32, y as u32)
        };
        let (p00, p10, p01, p11) = (tap(0, 0), tap(1, 0), tap(0, 1), tap(1, 1));
        // Nested lerps: exact at knots and on constant neighborhoods.
        for k in 0..out.len() {
            let top = p00[k] + fu * (p10[k] - p00[k]);
            let bottom = p01[k] + fu * (p11[k] - p01[k]);
            out[k] += scale * (top + fv * (bottom - top));
        }
    }

    /// Maps an image pixel coordinate of `cam_model` to this map's pixel grid,
    /// keeping pixel centers aligned.
    pub fn image_to_map(&self, cam_model: &CameraModel<T>, u: T, v: T) -> (T, T) {
        if cam_model.width == self.width && cam_model.height == self.height {
            return (u, v);
        }
        let half = T::lit(0.5);
        let sx = T::lit(f64::from(self.width)) / T::lit(f64::from(cam_model.width));
        let sy = T::lit(f64::from(self.height)) / T::lit(f64::from(cam_model.height));
        ((u + half) * sx - half, (v + half) * sy - half)
    }
}
