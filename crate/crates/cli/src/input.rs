//! Frame sources shared by the subcommands.

use std::path::{Path, PathBuf};

use sparse_occ::camera::{CameraModel, FeatureMap2D};
use sparse_occ::config::PipelineConfig;
use sparse_occ::lidar::PointCloud;
use sparse_occ::occlusion::SemanticVolume;
use sparse_occ::scene::{SceneParams, SyntheticScene};
use sparse_occ::semantic_kitti::Sequence;
use sparse_occ::{Error, Geometry64};

use crate::error::{usage, CliResult};

pub const ROOT_ENV: &str = "SPARSE_OCC_DATASET_ROOT";

/// `synthetic[:SEED]`, `kitti:SEQ/FRAME`, or a scene TOML file.
#[derive(Debug, Clone, PartialEq)]
pub enum SceneSpec {
    Synthetic(Option<u64>),
    Kitti { sequence: String, frame: String },
    File(PathBuf),
}

impl SceneSpec {
    pub fn parse(s: &str) -> CliResult<Self> {
        if s == "synthetic" {
            return Ok(Self::Synthetic(None));
        }
        if let Some(seed) = s.strip_prefix("synthetic:") {
            let seed = seed.parse().map_err(|_| usage(format!("bad scene seed in {s:?}")))?;
            return Ok(Self::Synthetic(Some(seed)));
        }
        if let Some(rest) = s.strip_prefix("kitti:") {
            let (sequence, frame) = rest
                .split_once('/')
                .ok_or_else(|| usage(format!("expected kitti:SEQ/FRAME, got {s:?}")))?;
            return Ok(Self::Kitti {
                sequence: sequence.into(),
                frame: frame.into(),
            });
        }
        Ok(Self::File(s.into()))
    }
}

pub struct Frame {
    pub name: String,
    pub cloud: PointCloud<f64>,
    pub rig: Vec<CameraModel<f64>>,
    pub maps: FeatureMap2D<f64>,
    pub gt: Option<SemanticVolume<f64>>,
    pub seed: Option<u64>,
}

pub fn load_scene_params(path: &Path) -> CliResult<SceneParams> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())).into())
}

/// Scene parameters matching the configured grid and image width.
pub fn params_for(cfg: &PipelineConfig, seed: u64) -> CliResult<SceneParams> {
    let g: Geometry64 = cfg.geometry.build()?;
    Ok(SceneParams {
        origin: g.origin,
        voxel_size: g.voxel_size,
        dims: g.dims(),
        image_channels: cfg.channels.image,
        seed,
        ..SceneParams::default()
    })
}

pub fn synthetic_frame(params: &SceneParams) -> CliResult<Frame> {
    let s = SyntheticScene::<f64>::generate(params)?;
    Ok(Frame {
        name: format!("synthetic_{:06}", params.seed),
        cloud: s.cloud,
        rig: s.rig,
        maps: s.features,
        gt: Some(s.gt),
        seed: Some(params.seed),
    })
}

pub fn dataset_root(flag: Option<PathBuf>, cfg: Option<&PipelineConfig>) -> CliResult<PathBuf> {
    flag.or_else(|| cfg.and_then(|c| c.paths.dataset_root.clone()))
        .ok_or_else(|| usage(format!("dataset root not given; pass --root or set {ROOT_ENV}")))
}

/// One SemanticKITTI frame. There is no image backbone, so camera features
/// are splatted LiDAR returns: inverse depth and intensity in the first two
/// channels at a quarter of the image resolution.
pub fn kitti_frame(root: &Path, sequence: &str, frame: &str, geometry: Geometry64, channels: usize) -> CliResult<Frame> {
    let seq = Sequence::open(root, sequence)?;
    let cloud = seq.cloud(frame)?.cast::<f64>();
    let cam = seq.camera::<f64>(frame)?;
    let maps = splat_lidar(&cloud, &cam, channels)?;
    let gt = if seq.dir.join("voxels").join(format!("{frame}.label")).exists() {
        Some(seq.labels(frame, geometry)?)
    } else {
        None
    };
    Ok(Frame {
        name: frame.into(),
        cloud,
        rig: vec![cam],
        maps,
        gt,
        seed: None,
    })
}

fn splat_lidar(cloud: &PointCloud<f64>, cam: &CameraModel<f64>, channels: usize) -> CliResult<FeatureMap2D<f64>> {
    let (w, h) = (cam.width.div_ceil(4), cam.height.div_ceil(4));
    let mut maps = FeatureMap2D::new(w, h, channels, vec![vec![0.0; (w * h) as usize * channels]])?;
    let mut nearest = vec![f64::INFINITY; (w * h) as usize];
    for p in &cloud.points {
        let Some(hit) = cam.project(p.position) else { continue };
        let (x, y) = maps.image_to_map(cam, hit.u, hit.v);
        let (x, y) = (x.round(), y.round());
        if x < 0.0 || y < 0.0 || x >= f64::from(w) || y >= f64::from(h) {
            continue;
        }
        let (x, y) = (x as u32, y as u32);
        let k = (y * w + x) as usize;
        if hit.depth < nearest[k] {
            nearest[k] = hit.depth;
            let px = maps.pixel_mut(0, x, y);
            px[0] = 1.0 / hit.depth;
            if channels > 1 {
                px[1] = p.intensity;
            }
        }
    }
    Ok(maps)
}
