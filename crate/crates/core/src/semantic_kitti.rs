//! SemanticKITTI sequence layout:
//!
//! ```text
//! <root>/sequences/<seq>/calib.txt
//! <root>/sequences/<seq>/velodyne/<frame>.bin
//! <root>/sequences/<seq>/voxels/<frame>.label     u16 per voxel, raw ids
//! <root>/sequences/<seq>/voxels/<frame>.invalid   bit-packed, MSB first
//! <root>/sequences/<seq>/image_2/<frame>.png      only the size is read
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use crate::camera::{read_kitti_calib, CameraModel};
use crate::error::{Error, Result};
use crate::lidar::{read_velodyne_bin, PointCloud};
use crate::occlusion::{read_bitpacked_mask, read_label_u16, SemanticVolume};
use crate::scalar::Real;
use crate::voxel::GridGeometry;

/// Training classes including free space.
pub const NUM_CLASSES: usize = 20;

/// Image size of sequences 00-02, used when no image is on disk.
pub const DEFAULT_IMAGE_SIZE: [u32; 2] = [1241, 376];

const LEARNING_MAP: [(u16, u16); 34] = [
    (0, 0),
    (1, 0),
    (10, 1),
    (11, 2),
    (13, 5),
    (15, 3),
    (16, 5),
    (18, 4),
    (20, 5),
    (30, 6),
    (31, 7),
    (32, 8),
    (40, 9),
    (44, 10),
    (48, 11),
    (49, 12),
    (50, 13),
    (51, 14),
    (52, 0),
    (60, 9),
    (70, 15),
    (71, 16),
    (72, 17),
    (80, 18),
    (81, 19),
    (99, 0),
    (252, 1),
    (253, 7),
    (254, 6),
    (255, 8),
    (256, 5),
    (257, 5),
    (258, 4),
    (259, 5),
];

/// Raw annotation id to training class; unknown ids become free space.
pub fn learning_map(raw: u16) -> u16 {
    LEARNING_MAP
        .binary_search_by_key(&raw, |&(r, _)| r)
        .map_or(0, |i| LEARNING_MAP[i].1)
}

/// Width and height from a PNG's IHDR chunk.
pub fn png_size(bytes: &[u8], path: &Path) -> Result<[u32; 2]> {
    const SIG: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];
    if bytes.len() < 24 || bytes[..8] != SIG || &bytes[12..16] != b"IHDR" {
        return Err(Error::parse(path, "not a PNG file"));
    }
    let be = |o: usize| u32::from_be_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    Ok([be(16), be(20)])
}

#[derive(Debug, Clone)]
pub struct Sequence {
    pub dir: PathBuf,
}

impl Sequence {
    pub fn open(root: &Path, sequence: &str) -> Result<Self> {
        let dir = root.join("sequences").join(sequence);
        if !dir.is_dir() {
            return Err(Error::io(
                &dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "sequence directory not found"),
            ));
        }
        Ok(Self { dir })
    }

    /// Frame ids with voxel annotations, sorted; all scans when the sequence
    /// has no `voxels` directory.
    pub fn frames(&self) -> Result<Vec<String>> {
        let (sub, ext) = if self.dir.join("voxels").is_dir() {
            ("voxels", "label")
        } else {
            ("velodyne", "bin")
        };
        let dir = self.dir.join(sub);
        let mut out: Vec<String> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == ext))
            .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
            .collect();
        out.sort();
        Ok(out)
    }

    pub fn cloud(&self, frame: &str) -> Result<PointCloud<f32>> {
        read_velodyne_bin(self.dir.join("velodyne").join(format!("{frame}.bin")))
    }

    /// Camera 2, sized from its image when present.
    pub fn camera<T: Real>(&self, frame: &str) -> Result<CameraModel<T>> {
        let png = self.dir.join("image_2").join(format!("{frame}.png"));
        let [w, h] = match fs::read(&png) {
            Ok(bytes) => png_size(&bytes, &png)?,
            Err(_) => DEFAULT_IMAGE_SIZE,
        };
        read_kitti_calib(self.dir.join("calib.txt"), w, h)
    }

    /// Remapped annotation with the `.invalid` mask applied when present.
    pub fn labels<T: Real>(&self, frame: &str, geometry: GridGeometry<T>) -> Result<SemanticVolume<T>> {
        let path = self.dir.join("voxels").join(format!("{frame}.label"));
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let raw = read_label_u16(&bytes, geometry.num_voxels(), &path)?;
        let vol = SemanticVolume::new(geometry, raw.into_iter().map(learning_map).collect())?;
        let invalid = path.with_extension("invalid");
        if invalid.exists() {
            vol.with_invalid(read_bitpacked_mask(&invalid, geometry.num_voxels())?)
        } else {
            Ok(vol)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_examples() {
        assert_eq!(learning_map(40), 9);
        assert_eq!(learning_map(252), 1);
        assert_eq!(learning_map(0), 0);
        assert_eq!(learning_map(1234), 0);
        assert!(LEARNING_MAP.windows(2).all(|w| w[0].0 < w[1].0));
        assert!(LEARNING_MAP.iter().all(|&(_, c)| usize::from(c) < NUM_CLASSES));
    }

    #[test]
    fn png_header() {
        let mut b = vec![0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a, 0, 0, 0, 13];
        b.extend_from_slice(b"IHDR");
        b.extend_from_slice(&1241u32.to_be_bytes());
        b.extend_from_slice(&376u32.to_be_bytes());
        assert_eq!(png_size(&b, Path::new("x.png")).unwrap(), [1241, 376]);
        assert!(png_size(&b[..20], Path::new("x.png")).is_err());
    }
}
