//! KITTI velodyne scans: little-endian `f32` quadruples `(x, y, z, intensity)`,
//! no header.

use std::path::Path;

use super::{LidarPoint, PointCloud};
use crate::error::{Error, Result};

const RECORD: usize = 16;

/// Decodes a scan. A byte count that is not a multiple of 16 is a parse error.
pub fn parse_velodyne(bytes: &[u8], path: &Path) -> Result<PointCloud<f32>> {
    if !bytes.len().is_multiple_of(RECORD) {
        return Err(Error::parse(
            path,
            format!("{} bytes is not a whole number of 16-byte points", bytes.len()),
        ));
    }
    let points = bytes
        .chunks_exact(RECORD)
        .map(|rec| {
            let f = |i: usize| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().expect("4 bytes"));
            LidarPoint {
                position: [f(0), f(1), f(2)],
                intensity: f(3),
            }
        })
        .collect();
    PointCloud::new(points, [0.0; 3]).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn read_velodyne_bin(path: impl AsRef<Path>) -> Result<PointCloud<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_velodyne(&bytes, path)
}

pub fn write_velodyne_bin(path: impl AsRef<Path>, pc: &PointCloud<f32>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(pc.len() * RECORD);
    for p in &pc.points {
        for v in [p.position[0], p.position[1], p.position[2], p.intensity] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
