//! Camera calibration readers: KITTI odometry `calib.txt` and a JSON rig file.
//!
//! Rig file layout (all transforms world -> camera):
//!
//! ```json
//! { "cameras": [
//!     { "name": "front", "fx": 1266.4, "fy": 1266.4, "cx": 816.3, "cy": 491.5,
//!       "width": 1600, "height": 900,
//!       "rotation": [[1,0,0],[0,1,0],[0,0,1]], "translation": [0,0,0] } ] }
//! ```

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{cross, dot, normalize, CameraModel, Intrinsics, RigidTransform};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    #[serde(default)]
    pub name: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigFile {
    pub cameras: Vec<CameraSpec>,
}

impl RigFile {
    pub fn to_models<T: Real>(&self) -> Result<Vec<CameraModel<T>>> {
        self.cameras
            .iter()
            .map(|c| {
                CameraModel::new(
                    Intrinsics {
                        fx: T::lit(c.fx),
                        fy: T::lit(c.fy),
                        cx: T::lit(c.cx),
                        cy: T::lit(c.cy),
                    },
                    RigidTransform {
                        rotation: c.rotation.map(|r| r.map(T::lit)),
                        translation: c.translation.map(T::lit),
                    },
                    c.width,
                    c.height,
                )
            })
            .collect()
    }

    pub fn from_models<T: Real>(rig: &[CameraModel<T>]) -> Self {
        Self {
            cameras: rig
                .iter()
                .enumerate()
                .map(|(i, c)| CameraSpec {
                    name: format!("cam{i}"),
                    fx: c.intrinsics.fx.as_f64(),
                    fy: c.intrinsics.fy.as_f64(),
                    cx: c.intrinsics.cx.as_f64(),
                    cy: c.intrinsics.cy.as_f64(),
                    width: c.width,
                    height: c.height,
                    rotation: c.extrinsics.rotation.map(|r| r.map(|v| v.as_f64())),
                    translation: c.extrinsics.translation.map(|v| v.as_f64()),
                })
                .collect(),
        }
    }
}

pub fn read_rig_json<T: Real>(path: impl AsRef<Path>) -> Result<Vec<CameraModel<T>>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rig: RigFile = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    rig.to_models().map_err(|e| Error::parse(path, e.to_string()))
}

/// Camera 2 of a KITTI odometry calibration: intrinsics from `P2`, extrinsics
/// `[I | t] * Tr` where `t = K^-1 * P2[:, 3]` and `Tr` maps velodyne to the
/// rectified camera-0 frame. `Tr`'s rotation is re-orthonormalized because the
/// file stores it with limited precision.
pub fn parse_kitti_calib<T: Real>(text: &str, width: u32, height: u32, path: &Path) -> Result<CameraModel<T>> {
    let mut rows: HashMap<&str, Vec<f64>> = HashMap::new();
    for line in text.lines() {
        let Some((key, rest)) = line.split_once(':') else { continue };
        let vals: std::result::Result<Vec<f64>, _> = rest.split_whitespace().map(str::parse).collect();
        let vals = vals.map_err(|e| Error::parse(path, format!("{key}: {e}")))?;
        rows.insert(key.trim(), vals);
    }
    let get = |k: &str| -> Result<&Vec<f64>> {
        let v = rows.get(k).ok_or_else(|| Error::parse(path, format!("missing {k}")))?;
        if v.len() != 12 {
            return Err(Error::parse(path, format!("{k} has {} values, expected 12", v.len())));
        }
        Ok(v)
    };
    let p = get("P2")?;
    let tr = get("Tr")?;

    let (fx, cx, fy, cy) = (p[0], p[2], p[5], p[6]);
    if p[1].abs() > 1e-9 {
        return Err(Error::parse(path, "P2 has non-zero skew"));
    }
    let tz = p[11];
    let ty = (p[7] - cy * tz) / fy;
    let tx = (p[3] - cx * tz) / fx;

    let r = [[tr[0], tr[1], tr[2]], [tr[4], tr[5], tr[6]], [tr[8], tr[9], tr[10]]];
    let r = orthonormalize(r);
    let velo_to_cam0 = RigidTransform {
        rotation: r.map(|row| row.map(T::lit)),
        translation: [tr[3], tr[7], tr[11]].map(T::lit),
    };
    let mut offset = RigidTransform::identity();
    offset.translation = [tx, ty, tz].map(T::lit);
    CameraModel::new(
        Intrinsics {
            fx: T::lit(fx),
            fy: T::lit(fy),
            cx: T::lit(cx),
            cy: T::lit(cy),
        },
        offset.compose(&velo_to_cam0),
        width,
        height,
    )
    .map_err(|e| Error::parse(path, e.to_string()))
}

pub fn read_kitti_calib<T: Real>(path: impl AsRef<Path>, width: u32, height: u32) -> Result<CameraModel<T>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kitti_calib(&text, width, height, path)
}

/// Gram-Schmidt on the rows, third row rebuilt as a cross product.
fn orthonormalize(r: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let a = normalize(r[0]);
    let d = dot(r[1], a);
    let b = normalize([r[1][0] - d * a[0], r[1][1] - d * a[1], r[1][2] - d * a[2]]);
    let mut c = cross(a, b);
    if dot(c, r[2]) < 0.0 {
        c = c.map(|v| -v);
    }
    [a, b, c]
}
