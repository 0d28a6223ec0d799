//! End-to-end forward pass with seeded stand-in weights.
//!
//! voxelize -> strided convs to scales 2/4/8/16 -> densify -> guided queries
//! -> camera fusion -> importance, set selection, gathers, refinement ->
//! decoder. Every stage is timed and sized in a [`StageReport`].

use std::time::Instant;

use serde::Serialize;

use crate::camera::{CameraModel, FeatureMap2D};
use crate::config::{PipelineConfig, ScorerKind};
use crate::decoder::{Decoder, DecoderOutput};
use crate::densify::{densify, MultiScaleFeatures};
use crate::error::{Error, Result};
use crate::fusion::{fuse, guide_queries, DeformableAttnParams, QueryInit};
use crate::hvfr::{
    gather_fine, gather_semi_fine, fuse_refined, select_sets, ImportanceMap, OccupancyFractionScorer, RefinementSets,
    Scorer,
};
use crate::lidar::{downsample, voxelize, ConvMode, Downsample, PointCloud, SparseConvSpec};
use crate::linear::Linear;
use crate::occlusion::SemanticVolume;
use crate::rng::split_seed;
use crate::scalar::Real;
use crate::voxel::{GridGeometry, SparseVoxelGrid};

/// Seeded weights for every learned stage.
#[derive(Debug, Clone)]
pub struct Pipeline<T> {
    pub config: PipelineConfig,
    pub geometry: GridGeometry<T>,
    pub seed: u64,
    pub down: Vec<SparseConvSpec<T>>,
    pub attention: DeformableAttnParams<T>,
    pub rie: SparseConvSpec<T>,
    pub semi_fine_proj: Linear<T>,
    pub fine_proj: Linear<T>,
    pub sconv1: SparseConvSpec<T>,
    pub sconv2: SparseConvSpec<T>,
    pub decoder: Decoder<T>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Stage {
    pub name: &'static str,
    pub millis: f64,
    pub voxels: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageReport {
    pub seed: u64,
    pub stages: Vec<Stage>,
    pub points: usize,
    pub points_discarded: usize,
    pub fusion_misses: usize,
    pub semi_fine: usize,
    pub fine: usize,
    pub tau1: f64,
    pub tau2: f64,
    /// The refined grid equals the fused grid bit for bit.
    pub residual_identity: bool,
    pub coarse_shape: [usize; 4],
    pub fine_shape: [usize; 4],
    pub coarse_voxels: usize,
    pub fine_voxels: usize,
}

impl StageReport {
    pub fn stage(&self, name: &str) -> Option<&Stage> {
        self.stages.iter().find(|s| s.name == name)
    }
}

/// Intermediate grids of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput<T: Real> {
    /// LiDAR features at scales 1, 2, 4, 8, 16.
    pub lidar: Vec<SparseVoxelGrid<T>>,
    pub dense: SparseVoxelGrid<T>,
    pub fused: SparseVoxelGrid<T>,
    pub importance: ImportanceMap<T>,
    pub sets: RefinementSets<T>,
    pub semi_fine: SparseVoxelGrid<T>,
    pub fine: SparseVoxelGrid<T>,
    pub refined: SparseVoxelGrid<T>,
    pub decoded: DecoderOutput<T>,
    pub report: StageReport,
}

struct Clock {
    stages: Vec<Stage>,
    t: Instant,
}

impl Clock {
    fn lap<T: Real>(&mut self, name: &'static str, g: &SparseVoxelGrid<T>) {
        let now = Instant::now();
        self.stages.push(Stage {
            name,
            millis: (now - self.t).as_secs_f64() * 1e3,
            voxels: g.len(),
            channels: g.channels(),
        });
        self.t = now;
    }
}

impl<T: Real> Pipeline<T> {
    /// Builds all weights from `config` and `seed` (the config's root seed
    /// when `None`).
    pub fn new(config: &PipelineConfig, seed: Option<u64>) -> Result<Self> {
        config.validate()?;
        let seed = seed.unwrap_or(config.seeds.root);
        let geometry = config.geometry.build::<T>()?;
        let c = config.channels.lidar;
        let ci = config.channels.image;
        let s = |name: &str| split_seed(seed, name);
        let down = ["down2", "down4", "down8", "down16"]
            .iter()
            .map(|n| SparseConvSpec::seeded(3, 2, c, c, ConvMode::Expanding, s(n)))
            .collect::<Result<Vec<_>>>()?;
        let a = &config.attention;
        let mut attention = DeformableAttnParams::seeded(a.n_ref, ci, c, a.offset_px, s("attention"));
        attention.residual = a.residual;
        if a.query_offsets {
            attention = attention.with_query_offsets(s("query-offsets"), a.offset_px);
        }
        Ok(Self {
            config: config.clone(),
            geometry,
            seed,
            down,
            attention,
            rie: SparseConvSpec::seeded(3, 1, c, 1, ConvMode::Submanifold, s("importance"))?,
            semi_fine_proj: Linear::seeded(c + ci, c, s("gather2")),
            fine_proj: Linear::seeded(c + ci, c, s("gather1")),
            sconv1: SparseConvSpec::seeded(3, 2, c, c, ConvMode::Expanding, s("sconv1"))?,
            sconv2: SparseConvSpec::seeded(3, 2, c, c, ConvMode::Expanding, s("sconv2"))?,
            decoder: Decoder::seeded(c, &config.decoder.hidden, s("decoder"))?,
        })
    }

    /// Runs every stage. `gt` is needed only by the oracle scorer.
    pub fn forward(
        &self,
        cloud: &PointCloud<T>,
        rig: &[CameraModel<T>],
        maps: &FeatureMap2D<T>,
        gt: Option<&SemanticVolume<T>>,
    ) -> Result<ForwardOutput<T>> {
        let c = self.config.channels.lidar;
        if maps.channels != self.config.channels.image {
            return Err(Error::Shape(format!(
                "feature maps have {} channels, config says {}",
                maps.channels, self.config.channels.image
            )));
        }
        let mut clock = Clock {
            stages: Vec::new(),
            t: Instant::now(),
        };

        let (l1, discarded) = if cloud.is_empty() {
            (SparseVoxelGrid::new(self.geometry, c), 0)
        } else {
            let v = voxelize(cloud, &self.geometry, c)?;
            (v.grid, v.discarded)
        };
        clock.lap("voxelize", &l1);
        let mut lidar = vec![l1];
        for spec in &self.down {
            let next = downsample(lidar.last().expect("non-empty"), Downsample::Conv(spec))?;
            lidar.push(next);
        }
        clock.lap("downsample", &lidar[4]);

        let dense = if lidar[2..].iter().all(SparseVoxelGrid::is_empty) {
            SparseVoxelGrid::new(*lidar[2].geometry(), c)
        } else {
            let ms = MultiScaleFeatures::new(lidar[2..].to_vec())?;
            densify(&ms, self.config.densify.anchor)?
        };
        clock.lap("densify", &dense);

        let queries = guide_queries(&dense, QueryInit::Seeded(split_seed(self.seed, "queries")))?;
        let fusion = fuse(&queries, rig, maps, &self.attention)?;
        let fused = fusion.fused;
        clock.lap("fuse", &fused);

        let importance = match self.config.hvfr.scorer {
            ScorerKind::Conv => self.rie.score(&fused)?,
            ScorerKind::Oracle => {
                let gt = gt.ok_or_else(|| Error::Config("oracle scorer needs ground truth".into()))?;
                OccupancyFractionScorer { gt }.score(&fused)?
            }
        };
        let h = &self.config.hvfr;
        let sets = select_sets(&importance, T::lit(h.tau1), T::lit(h.tau2))?;
        let semi_fine = gather_semi_fine(&sets, &lidar[1], rig, maps, &self.semi_fine_proj)?;
        let fine = gather_fine(&sets, &lidar[0], rig, maps, &self.fine_proj)?;
        let refined = fuse_refined(&fine, &semi_fine, &fused, &self.sconv1, &self.sconv2)?;
        clock.lap("hvfr", &refined);

        let decoded = self.decoder.forward(&refined)?;
        clock.lap("decode", &decoded.fine.grid);

        let report = StageReport {
            seed: self.seed,
            stages: clock.stages,
            points: cloud.len(),
            points_discarded: discarded,
            fusion_misses: fusion.misses,
            semi_fine: sets.semi_fine.len(),
            fine: sets.fine.len(),
            tau1: h.tau1,
            tau2: h.tau2,
            residual_identity: refined.coords() == fused.coords() && refined.features() == fused.features(),
            coarse_shape: decoded.coarse.dense_shape(),
            fine_shape: decoded.fine.dense_shape(),
            coarse_voxels: decoded.coarse.grid.len(),
            fine_voxels: decoded.fine.grid.len(),
        };
        Ok(ForwardOutput {
            lidar,
            dense,
            fused,
            importance,
            sets,
            semi_fine,
            fine,
            refined,
            decoded,
            report,
        })
    }
}
