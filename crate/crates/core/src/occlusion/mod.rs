//! Occlusion-aware ground truth.
//!
//! Rays are cast from the LiDAR through every return and from each camera
//! through a strided pixel lattice. Along a ray, the voxel of first contact is
//! non-occluded and annotated voxels further along are occluded. The two
//! modalities are then merged voxel by voxel with [`combine`].

mod io;
mod label;
mod output;
mod traverse;

use serde::{Deserialize, Serialize};

pub use io::{
    pack_bits_msb, read_bitpacked_mask, read_label_u16, read_occlusion_volume, read_semantic_volume,
    read_sparse_index_class, unpack_bits_msb, write_label_u16, write_occlusion_volume, write_semantic_volume,
    VolumeHeader,
};
pub use label::{
    combine_volumes, generate_occlusion_volume, label_camera, label_lidar, LabelConfig, ModalityLabels, RayRecord,
};
pub use output::{
    assemble_output, decoder_input_set, OutputVolume, OCCLUSION_CHANNELS, OUTPUT_CHANNELS, SEMANTIC_CHANNELS,
};
pub use traverse::traverse;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::voxel::{GridGeometry, VoxelIndex};

/// Semantic id of free space.
pub const EMPTY_CLASS: u16 = 0;
/// Semantic id of unknown / unannotated voxels, excluded everywhere.
pub const IGNORE_CLASS: u16 = 255;

/// Visibility state of a voxel. The numeric codes are the on-disk bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[repr(u8)]
pub enum OcclusionLabel {
    #[default]
    Empty = 0,
    NonOccluded = 1,
    Occluded = 2,
}

impl OcclusionLabel {
    pub const ALL: [OcclusionLabel; 3] = [Self::Empty, Self::NonOccluded, Self::Occluded];

    /// Merge rank inside one modality: non-occluded > occluded > empty.
    pub fn priority(self) -> u8 {
        match self {
            Self::Empty => 0,
            Self::Occluded => 1,
            Self::NonOccluded => 2,
        }
    }

    /// Keeps the higher-priority label.
    pub fn merge(self, other: Self) -> Self {
        if other.priority() > self.priority() {
            other
        } else {
            self
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::Empty),
            1 => Some(Self::NonOccluded),
            2 => Some(Self::Occluded),
            _ => None,
        }
    }
}

/// Cross-modality merge: non-occluded if either says so, occluded only when
/// both agree, empty otherwise.
pub fn combine(lidar: OcclusionLabel, camera: OcclusionLabel) -> OcclusionLabel {
    use OcclusionLabel::*;
    match (lidar, camera) {
        (NonOccluded, _) | (_, NonOccluded) => NonOccluded,
        (Occluded, Occluded) => Occluded,
        _ => Empty,
    }
}

/// Dense semantic annotation, x slowest and z fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticVolume<T> {
    pub geometry: GridGeometry<T>,
    pub labels: Vec<u16>,
    /// Voxels excluded from labeling and evaluation.
    pub invalid: Option<Vec<bool>>,
}

impl<T: Real> SemanticVolume<T> {
    pub fn new(geometry: GridGeometry<T>, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != geometry.num_voxels() {
            return Err(Error::DimMismatch(format!(
                "{} labels for a {:?} grid",
                labels.len(),
                geometry.dims()
            )));
        }
        Ok(Self {
            geometry,
            labels,
            invalid: None,
        })
    }

    pub fn empty(geometry: GridGeometry<T>) -> Self {
        Self {
            labels: vec![EMPTY_CLASS; geometry.num_voxels()],
            geometry,
            invalid: None,
        }
    }

    pub fn with_invalid(mut self, invalid: Vec<bool>) -> Result<Self> {
        if invalid.len() != self.labels.len() {
            return Err(Error::DimMismatch(format!(
                "invalid mask of {} for {} voxels",
                invalid.len(),
                self.labels.len()
            )));
        }
        self.invalid = Some(invalid);
        Ok(self)
    }

    pub fn label(&self, idx: &VoxelIndex) -> u16 {
        self.labels[self.geometry.linear_index(idx)]
    }

    pub fn set(&mut self, idx: &VoxelIndex, class: u16) {
        let i = self.geometry.linear_index(idx);
        self.labels[i] = class;
    }

    pub fn is_ignored(&self, linear: usize) -> bool {
        self.labels[linear] == IGNORE_CLASS || self.invalid.as_ref().is_some_and(|m| m[linear])
    }

    /// Carries a semantic class (not free, not unknown, not masked).
    pub fn is_occupied_linear(&self, linear: usize) -> bool {
        let l = self.labels[linear];
        l != EMPTY_CLASS && !self.is_ignored(linear)
    }

    pub fn is_occupied(&self, idx: &VoxelIndex) -> bool {
        self.is_occupied_linear(self.geometry.linear_index(idx))
    }

    pub fn occupied_count(&self) -> usize {
        (0..self.labels.len()).filter(|&i| self.is_occupied_linear(i)).count()
    }
}

/// Per-voxel semantic class and visibility label.
#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionVolume<T> {
    pub geometry: GridGeometry<T>,
    pub semantic: Vec<u16>,
    pub occlusion: Vec<OcclusionLabel>,
}

impl<T: Real> OcclusionVolume<T> {
    /// Counts per label in `[Empty, NonOccluded, Occluded]` order.
    pub fn histogram(&self) -> [usize; 3] {
        let mut h = [0; 3];
        for l in &self.occlusion {
            h[l.code() as usize] += 1;
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use OcclusionLabel::*;

    #[test]
    fn combine_truth_table() {
        let expect = [
            ((Empty, Empty), Empty),
            ((Empty, NonOccluded), NonOccluded),
            ((Empty, Occluded), Empty),
            ((NonOccluded, Empty), NonOccluded),
            ((NonOccluded, NonOccluded), NonOccluded),
            ((NonOccluded, Occluded), NonOccluded),
            ((Occluded, Empty), Empty),
            ((Occluded, NonOccluded), NonOccluded),
            ((Occluded, Occluded), Occluded),
        ];
        for ((a, b), want) in expect {
            assert_eq!(combine(a, b), want, "{a:?} x {b:?}");
        }
    }

    #[test]
    fn merge_is_a_max() {
        for a in OcclusionLabel::ALL {
            for b in OcclusionLabel::ALL {
                assert_eq!(a.merge(b), b.merge(a));
                for c in OcclusionLabel::ALL {
                    assert_eq!(a.merge(b).merge(c), a.merge(b.merge(c)));
                }
            }
        }
        assert_eq!(Occluded.merge(NonOccluded), NonOccluded);
        assert_eq!(Empty.merge(Occluded), Occluded);
        for l in OcclusionLabel::ALL {
            assert_eq!(OcclusionLabel::from_code(l.code()), Some(l));
        }
        assert_eq!(OcclusionLabel::from_code(3), None);
    }

    #[test]
    fn semantic_volume_occupancy() {
        let g = GridGeometry::new([0.0f64; 3], 0.2, [2, 2, 2], 1).unwrap();
        let mut v = SemanticVolume::empty(g);
        v.set(&VoxelIndex::new(1, 0, 1, 1), 7);
        v.set(&VoxelIndex::new(0, 1, 0, 1), IGNORE_CLASS);
        assert!(v.is_occupied(&VoxelIndex::new(1, 0, 1, 1)));
        assert!(!v.is_occupied(&VoxelIndex::new(0, 1, 0, 1)));
        assert_eq!(v.occupied_count(), 1);
        let mut mask = vec![false; 8];
        mask[g.linear_index(&VoxelIndex::new(1, 0, 1, 1))] = true;
        let v = v.with_invalid(mask).unwrap();
        assert_eq!(v.occupied_count(), 0);
        assert!(SemanticVolume::new(g, vec![0; 7]).is_err());
    }
}
