//! Pipeline configuration, read from TOML.
//!
//! ```toml
//! [geometry]
//! preset = "custom"            # nuscenes-occ | semantickitti | custom
//! origin = [-12.8, -12.8, -1.0]
//! voxel_size = 0.2
//! dims = [128, 128, 16]
//!
//! [hvfr]
//! tau1 = 0.4
//! tau2 = 0.7
//! ```
//!
//! Every section and key is optional; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::densify::Anchor;
use crate::error::{Error, Result};
use crate::hvfr::{DEFAULT_TAU1, DEFAULT_TAU2};
use crate::loss::LossWeights;
use crate::scalar::Real;
use crate::voxel::GridGeometry;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeometryPreset {
    #[serde(rename = "nuscenes-occ")]
    NuscenesOcc,
    #[default]
    #[serde(rename = "semantickitti")]
    SemanticKitti,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    pub preset: GeometryPreset,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub origin: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub voxel_size: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dims: Option<[u32; 3]>,
}

impl GeometryConfig {
    pub fn custom(origin: [f64; 3], voxel_size: f64, dims: [u32; 3]) -> Self {
        Self {
            preset: GeometryPreset::Custom,
            origin: Some(origin),
            voxel_size: Some(voxel_size),
            dims: Some(dims),
        }
    }

    /// Scale-1 geometry.
    pub fn build<T: Real>(&self) -> Result<GridGeometry<T>> {
        let explicit = self.origin.is_some() || self.voxel_size.is_some() || self.dims.is_some();
        match self.preset {
            GeometryPreset::Custom => {
                let (Some(o), Some(v), Some(d)) = (self.origin, self.voxel_size, self.dims) else {
                    return Err(Error::Config(
                        "custom geometry needs origin, voxel_size and dims".into(),
                    ));
                };
                GridGeometry::new(o.map(T::lit), T::lit(v), d, 1)
            }
            _ if explicit => Err(Error::Config(
                "origin, voxel_size and dims are only allowed with preset = \"custom\"".into(),
            )),
            GeometryPreset::NuscenesOcc => Ok(GridGeometry::nuscenes_occupancy()),
            GeometryPreset::SemanticKitti => Ok(GridGeometry::semantic_kitti()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    /// Width of the LiDAR features at every scale.
    pub lidar: usize,
    pub image: usize,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self { lidar: 16, image: 16 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct DensifyConfig {
    pub anchor: Anchor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttentionConfig {
    pub n_ref: usize,
    /// Half-width of the seeded sampling offsets, pixels.
    pub offset_px: f64,
    pub residual: bool,
    pub query_offsets: bool,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            n_ref: 4,
            offset_px: 2.0,
            residual: true,
            query_offsets: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerKind {
    /// Seeded importance convolution.
    #[default]
    Conv,
    /// Annotated fraction of each voxel's children (needs ground truth).
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HvfrConfig {
    pub tau1: f64,
    pub tau2: f64,
    pub scorer: ScorerKind,
}

impl Default for HvfrConfig {
    fn default() -> Self {
        Self {
            tau1: DEFAULT_TAU1,
            tau2: DEFAULT_TAU2,
            scorer: ScorerKind::Conv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelsConfig {
    pub camera_stride: u32,
}

impl Default for LabelsConfig {
    fn default() -> Self {
        Self { camera_stride: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    pub hidden: Vec<usize>,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self { hidden: vec![32] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SeedConfig {
    pub root: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset_root: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub geometry: GeometryConfig,
    pub channels: ChannelConfig,
    pub densify: DensifyConfig,
    pub attention: AttentionConfig,
    pub hvfr: HvfrConfig,
    pub labels: LabelsConfig,
    pub decoder: DecoderConfig,
    pub loss: LossWeights,
    pub seeds: SeedConfig,
    pub paths: PathsConfig,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.build::<f64>()?;
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.channels.lidar == 0 || self.channels.image == 0 {
            return bad("channel widths must be positive");
        }
        if self.channels.lidar < crate::lidar::ENCODED_CHANNELS {
            return bad("channels.lidar must hold the 5 encoded point channels");
        }
        if self.attention.n_ref == 0 {
            return bad("attention.n_ref must be positive");
        }
        if !(self.attention.offset_px >= 0.0 && self.attention.offset_px.is_finite()) {
            return bad("attention.offset_px must be finite and non-negative");
        }
        for t in [self.hvfr.tau1, self.hvfr.tau2] {
            if !(t >= 0.0 && t.is_finite()) {
                return bad("hvfr thresholds must be finite and non-negative");
            }
        }
        if self.labels.camera_stride == 0 {
            return bad("labels.camera_stride must be positive");
        }
        if self.decoder.hidden.contains(&0) {
            return bad("decoder widths must be positive");
        }
        let w = &self.loss;
        if [w.ce, w.lovasz, w.geo_scal, w.sem_scal, w.rie_bce, w.occlusion_ce]
            .iter()
            .any(|x| !(*x >= 0.0 && x.is_finite()))
        {
            return bad("loss weights must be finite and non-negative");
        }
        Ok(())
    }
}
