use rayon::prelude::*;

use super::{combine, traverse, OcclusionLabel, OcclusionVolume, SemanticVolume};
use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::lidar::PointCloud;
use crate::scalar::Real;
use crate::voxel::VoxelIndex;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelConfig<T> {
    /// Cast a camera ray every `camera_stride` pixels in u and v.
    pub camera_stride: u32,
    /// Distance LiDAR rays continue past their return; `None` means one
    /// grid diagonal.
    pub margin: Option<T>,
    /// Keep per-ray provenance for later inspection.
    pub record_provenance: bool,
}

impl<T: Real> Default for LabelConfig<T> {
    fn default() -> Self {
        Self {
            camera_stride: 4,
            margin: None,
            record_provenance: false,
        }
    }
}

/// What one ray contributed.
#[derive(Debug, Clone, PartialEq)]
pub struct RayRecord {
    /// Voxel of first contact, labeled non-occluded.
    pub hit: VoxelIndex,
    /// Annotated voxels behind the hit, in ray order, labeled occluded.
    pub occluded: Vec<VoxelIndex>,
}

#[derive(Debug, Clone)]
pub struct ModalityLabels {
    pub labels: Vec<OcclusionLabel>,
    pub rays_cast: usize,
    pub provenance: Option<Vec<RayRecord>>,
}

impl ModalityLabels {
    fn from_records(n: usize, records: Vec<Option<RayRecord>>, gt_geom_index: impl Fn(&VoxelIndex) -> usize, keep: bool) -> Self {
        let rays_cast = records.len();
        let mut labels = vec![OcclusionLabel::Empty; n];
        let records: Vec<RayRecord> = records.into_iter().flatten().collect();
        for r in &records {
            let i = gt_geom_index(&r.hit);
            labels[i] = labels[i].merge(OcclusionLabel::NonOccluded);
            for o in &r.occluded {
                let j = gt_geom_index(o);
                labels[j] = labels[j].merge(OcclusionLabel::Occluded);
            }
        }
        Self {
            labels,
            rays_cast,
            provenance: keep.then_some(records),
        }
    }
}

/// Labels from LiDAR returns: the voxel holding a return is non-occluded and
/// annotated voxels behind it along the sensor ray are occluded. Free space
/// in front of a return is left empty.
pub fn label_lidar<T: Real>(pc: &PointCloud<T>, gt: &SemanticVolume<T>, cfg: &LabelConfig<T>) -> ModalityLabels {
    let geom = gt.geometry;
    let margin = cfg.margin.unwrap_or_else(|| geom.diagonal());
    let records: Vec<Option<RayRecord>> = pc
        .points
        .par_iter()
        .map(|p| {
            let hit = geom.voxel_of(p.position)?;
            let ray = traverse(pc.sensor_origin, p.position, &geom, margin);
            let occluded = match ray.iter().rposition(|v| *v == hit) {
                Some(k) => ray[k + 1..].iter().copied().filter(|v| gt.is_occupied(v)).collect(),
                // The floor cell of a return on a face can be the one the ray
                // only grazes; keep the hit and skip the behind-hit pass.
                None => Vec::new(),
            };
            Some(RayRecord { hit, occluded })
        })
        .collect();
    ModalityLabels::from_records(gt.labels.len(), records, |v| geom.linear_index(v), cfg.record_provenance)
}

/// Labels from camera rays: the first annotated voxel along each pixel ray is
/// non-occluded, annotated voxels behind it are occluded.
pub fn label_camera<T: Real>(
    rig: &[CameraModel<T>],
    gt: &SemanticVolume<T>,
    cfg: &LabelConfig<T>,
) -> Result<ModalityLabels> {
    if rig.is_empty() {
        return Err(Error::EmptyInput("camera rig has no cameras"));
    }
    if cfg.camera_stride == 0 {
        return Err(Error::Config("camera stride must be positive".into()));
    }
    let geom = gt.geometry;
    let lo = geom.origin;
    let hi = geom.max_corner();
    let stride = cfg.camera_stride as usize;

    let mut rays = Vec::new();
    for (c, cam) in rig.iter().enumerate() {
        for v in (0..cam.height).step_by(stride) {
            for u in (0..cam.width).step_by(stride) {
                rays.push((c, u, v));
            }
        }
    }

    let records: Vec<Option<RayRecord>> = rays
        .par_iter()
        .map(|&(c, u, v)| {
            let cam = &rig[c];
            let eye = cam.center();
            // Far enough to leave the grid from anywhere.
            let mut reach = T::zero();
            for corner in 0..8 {
                let p = [0, 1, 2].map(|a| if corner >> a & 1 == 1 { hi[a] } else { lo[a] });
                let d = [0, 1, 2].map(|a| p[a] - eye[a]);
                reach = reach.max((d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt());
            }
            let dir = cam.pixel_ray(T::lit(f64::from(u)), T::lit(f64::from(v)));
            let target = [0, 1, 2].map(|a| eye[a] + dir[a] * reach);
            let ray = traverse(eye, target, &geom, T::zero());
            let first = ray.iter().position(|x| gt.is_occupied(x))?;
            Some(RayRecord {
                hit: ray[first],
                occluded: ray[first + 1..].iter().copied().filter(|x| gt.is_occupied(x)).collect(),
            })
        })
        .collect();
    Ok(ModalityLabels::from_records(
        gt.labels.len(),
        records,
        |x| geom.linear_index(x),
        cfg.record_provenance,
    ))
}

/// Voxel-wise [`combine`], then voxels without an annotation are forced empty.
pub fn combine_volumes<T: Real>(
    lidar: &[OcclusionLabel],
    camera: &[OcclusionLabel],
    gt: &SemanticVolume<T>,
) -> Result<Vec<OcclusionLabel>> {
    if lidar.len() != gt.labels.len() || camera.len() != gt.labels.len() {
        return Err(Error::DimMismatch(format!(
            "label volumes of {} and {} voxels for a {}-voxel annotation",
            lidar.len(),
            camera.len(),
            gt.labels.len()
        )));
    }
    Ok((0..gt.labels.len())
        .map(|i| {
            if gt.is_occupied_linear(i) {
                combine(lidar[i], camera[i])
            } else {
                OcclusionLabel::Empty
            }
        })
        .collect())
}

/// Full labeling of one frame.
pub fn generate_occlusion_volume<T: Real>(
    pc: &PointCloud<T>,
    rig: &[CameraModel<T>],
    gt: &SemanticVolume<T>,
    cfg: &LabelConfig<T>,
) -> Result<OcclusionVolume<T>> {
    let lidar = label_lidar(pc, gt, cfg);
    let camera = label_camera(rig, gt, cfg)?;
    Ok(OcclusionVolume {
        geometry: gt.geometry,
        semantic: gt.labels.clone(),
        occlusion: combine_volumes(&lidar.labels, &camera.labels, gt)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{Intrinsics, RigidTransform};
    use crate::lidar::LidarPoint;
    use crate::voxel::GridGeometry;
    use OcclusionLabel::*;

    fn geom() -> GridGeometry<f64> {
        GridGeometry::new([0.0; 3], 1.0, [12, 3, 3], 1).unwrap()
    }

    fn cloud(xs: &[f64]) -> PointCloud<f64> {
        PointCloud::new(
            xs.iter()
                .map(|&x| LidarPoint {
                    position: [x, 1.5, 1.5],
                    intensity: 0.5,
                })
                .collect(),
            [0.5, 1.5, 1.5],
        )
        .unwrap()
    }

    fn at(x: u32) -> VoxelIndex {
        VoxelIndex::new(x, 1, 1, 1)
    }

    #[test]
    fn single_return_nothing_behind() {
        let gt = SemanticVolume::empty(geom());
        let l = label_lidar(&cloud(&[4.5]), &gt, &LabelConfig::default());
        let g = geom();
        assert_eq!(l.labels[g.linear_index(&at(4))], NonOccluded);
        assert_eq!(l.labels.iter().filter(|&&x| x != Empty).count(), 1);
    }

    #[test]
    fn wall_and_voxel_behind() {
        let g = geom();
        let mut gt = SemanticVolume::empty(g);
        gt.set(&at(5), 3);
        gt.set(&at(7), 3);
        let l = label_lidar(&cloud(&[5.2]), &gt, &LabelConfig::default());
        assert_eq!(l.labels[g.linear_index(&at(5))], NonOccluded);
        assert_eq!(l.labels[g.linear_index(&at(6))], Empty);
        assert_eq!(l.labels[g.linear_index(&at(7))], Occluded);
        assert_eq!(l.labels[g.linear_index(&at(3))], Empty);
    }

    #[test]
    fn priority_merge_across_rays() {
        let g = geom();
        let mut gt = SemanticVolume::empty(g);
        gt.set(&at(5), 3);
        gt.set(&at(7), 3);
        // One return at x = 5 marks 7 occluded, another at x = 7 marks it non-occluded.
        for order in [[5.2, 7.5], [7.5, 5.2]] {
            let l = label_lidar(&cloud(&order), &gt, &LabelConfig::default());
            assert_eq!(l.labels[g.linear_index(&at(7))], NonOccluded);
        }
    }

    #[test]
    fn camera_wall() {
        // Camera at x = -1 looking along +x through the middle row.
        let g = geom();
        let mut gt = SemanticVolume::empty(g);
        gt.set(&at(4), 2);
        gt.set(&at(5), 2);
        let ext = RigidTransform::look_at([-1.0, 1.5, 1.5], [10.0, 1.5, 1.5], [0.0, 0.0, 1.0]).unwrap();
        let cam = CameraModel::new(Intrinsics { fx: 1.0, fy: 1.0, cx: 0.0, cy: 0.0 }, ext, 1, 1).unwrap();
        let cfg = LabelConfig {
            camera_stride: 1,
            record_provenance: true,
            ..LabelConfig::default()
        };
        let l = label_camera(std::slice::from_ref(&cam), &gt, &cfg).unwrap();
        assert_eq!(l.labels[g.linear_index(&at(4))], NonOccluded);
        assert_eq!(l.labels[g.linear_index(&at(5))], Occluded);
        assert_eq!(l.labels.iter().filter(|&&x| x != Empty).count(), 2);
        assert_eq!(l.provenance.unwrap().len(), 1);

        // Nothing annotated on the ray: all empty.
        let l = label_camera(&[cam], &SemanticVolume::empty(g), &cfg).unwrap();
        assert!(l.labels.iter().all(|&x| x == Empty));
        assert!(label_camera::<f64>(&[], &gt, &cfg).is_err());
    }

    #[test]
    fn combined_volume_masks_free_space() {
        let g = geom();
        let mut gt = SemanticVolume::empty(g);
        gt.set(&at(5), 3);
        let n = gt.labels.len();
        let mut lidar = vec![Empty; n];
        lidar[g.linear_index(&at(2))] = NonOccluded; // free voxel
        lidar[g.linear_index(&at(5))] = Occluded;
        let mut cam = vec![Empty; n];
        cam[g.linear_index(&at(5))] = Occluded;
        let c = combine_volumes(&lidar, &cam, &gt).unwrap();
        assert_eq!(c[g.linear_index(&at(2))], Empty);
        assert_eq!(c[g.linear_index(&at(5))], Occluded);
        assert!(combine_volumes(&lidar[1..], &cam, &gt).is_err());
    }
}
