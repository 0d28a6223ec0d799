//! Occupancy IoU and per-class IoU.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::occlusion::{EMPTY_CLASS, IGNORE_CLASS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Geometric IoU of the occupied masks.
    pub iou: f64,
    /// Indexed by class id; `None` where the class has zero union. Entry 0
    /// (free space) is always `None`.
    pub per_class_iou: Vec<Option<f64>>,
    /// Mean of the defined per-class entries.
    pub miou: f64,
    pub evaluated_voxels: usize,
}

impl MetricsReport {
    pub fn defined_classes(&self) -> usize {
        self.per_class_iou.iter().flatten().count()
    }
}

/// Compares dense label volumes of equal length.
///
/// Voxels whose ground truth is [`IGNORE_CLASS`] or that are set in `ignore`
/// are excluded from every count. A prediction of [`IGNORE_CLASS`] counts as
/// free space. When nothing is occupied on either side the IoU is 1, and when
/// no class has a nonzero union the mIoU is 1.
pub fn compute_metrics(pred: &[u16], gt: &[u16], ignore: Option<&[bool]>, num_classes: usize) -> Result<MetricsReport> {
    if pred.len() != gt.len() || ignore.is_some_and(|m| m.len() != gt.len()) {
        return Err(Error::DimMismatch(format!(
            "prediction has {} voxels, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    let mut inter = vec![0u64; num_classes];
    let mut union = vec![0u64; num_classes];
    let (mut occ_inter, mut occ_union) = (0u64, 0u64);
    let mut evaluated = 0;
    for i in 0..gt.len() {
        let g = gt[i];
        if g == IGNORE_CLASS || ignore.is_some_and(|m| m[i]) {
            continue;
        }
        evaluated += 1;
        let p = if pred[i] == IGNORE_CLASS { EMPTY_CLASS } else { pred[i] };
        for (label, what) in [(g, "ground truth"), (p, "prediction")] {
            if usize::from(label) >= num_classes {
                return Err(Error::Shape(format!("{what} class {label} at voxel {i} with {num_classes} classes")));
            }
        }
        let (po, go) = (p != EMPTY_CLASS, g != EMPTY_CLASS);
        occ_inter += u64::from(po && go);
        occ_union += u64::from(po || go);
        if p == g {
            inter[usize::from(p)] += 1;
            union[usize::from(p)] += 1;
        } else {
            union[usize::from(p)] += 1;
            union[usize::from(g)] += 1;
        }
    }
    let per_class_iou: Vec<Option<f64>> = (0..num_classes)
        .map(|c| (c != usize::from(EMPTY_CLASS) && union[c] > 0).then(|| inter[c] as f64 / union[c] as f64))
        .collect();
    let defined: Vec<f64> = per_class_iou.iter().flatten().copied().collect();
    Ok(MetricsReport {
        iou: if occ_union == 0 { 1.0 } else { occ_inter as f64 / occ_union as f64 },
        miou: if defined.is_empty() {
            1.0
        } else {
            defined.iter().sum::<f64>() / defined.len() as f64
        },
        per_class_iou,
        evaluated_voxels: evaluated,
    })
}
