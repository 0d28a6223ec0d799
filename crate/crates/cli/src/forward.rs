use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sparse_occ::config::PipelineConfig;
use sparse_occ::occlusion::{write_occlusion_volume, write_semantic_volume, OutputVolume, SemanticVolume, VolumeHeader};
use sparse_occ::pipeline::{Pipeline, StageReport};
use sparse_occ::{Error, Geometry64};

use crate::error::{CliError, CliResult};
use crate::input::{self, Frame, SceneSpec};

pub struct Args {
    pub config: PipelineConfig,
    pub scene: SceneSpec,
    pub seed: Option<u64>,
    pub root: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct ForwardReport {
    pub frame: String,
    pub scene_seed: Option<u64>,
    #[serde(flatten)]
    pub stages: StageReport,
}

pub fn load_frame(args: &Args) -> CliResult<Frame> {
    let cfg = &args.config;
    let geometry: Geometry64 = cfg.geometry.build()?;
    match &args.scene {
        SceneSpec::Synthetic(seed) => input::synthetic_frame(&input::params_for(cfg, seed.unwrap_or(cfg.seeds.root))?),
        SceneSpec::File(path) => {
            let params = input::load_scene_params(path)?;
            let g: Geometry64 = params.geometry()?;
            if !g.same_frame(&geometry) {
                return Err(Error::DimMismatch(format!(
                    "scene grid {:?} at {} m does not match the configured grid {:?} at {} m",
                    g.dims(),
                    g.voxel_size,
                    geometry.dims(),
                    geometry.voxel_size
                ))
                .into());
            }
            if params.image_channels != cfg.channels.image {
                return Err(Error::Config(format!(
                    "scene renders {} image channels, config expects {}",
                    params.image_channels, cfg.channels.image
                ))
                .into());
            }
            input::synthetic_frame(&params)
        }
        SceneSpec::Kitti { sequence, frame } => {
            let root = input::dataset_root(args.root.clone(), Some(cfg))?;
            input::kitti_frame(&root, sequence, frame, geometry, cfg.channels.image)
        }
    }
}

pub fn run(args: &Args) -> CliResult<ForwardReport> {
    let frame = load_frame(args)?;
    let pipeline = Pipeline::<f64>::new(&args.config, args.seed)?;
    let out = pipeline.forward(&frame.cloud, &frame.rig, &frame.maps, frame.gt.as_ref())?;
    let report = ForwardReport {
        frame: frame.name,
        scene_seed: frame.seed,
        stages: out.report,
    };
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        let seed = Some(report.stages.seed);
        write_output(dir, "coarse", &out.decoded.coarse, seed)?;
        write_output(dir, "fine", &out.decoded.fine, seed)?;
        if let Some(gt) = &frame.gt {
            write_semantic_volume(&dir.join("gt.label"), gt, frame.seed)?;
        }
        let path = dir.join("report.json");
        let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Output(e.to_string()))?;
        fs::write(&path, text).map_err(|e| Error::Io { path, source: e })?;
    }
    Ok(report)
}

/// Semantic argmax as `<name>.label` and visibility argmax as `<name>.occ`.
fn write_output(dir: &Path, name: &str, v: &OutputVolume<f64>, seed: Option<u64>) -> CliResult<()> {
    let g = *v.geometry();
    write_semantic_volume(&dir.join(format!("{name}.label")), &SemanticVolume::new(g, v.semantic_labels())?, seed)?;
    write_occlusion_volume(
        &dir.join(format!("{name}.occ")),
        &VolumeHeader::from_geometry(&g, seed),
        &v.occlusion_labels(),
    )?;
    Ok(())
}

pub fn print(r: &ForwardReport) {
    let s = &r.stages;
    println!("frame {}  seed {}  points {} ({} outside grid)", r.frame, s.seed, s.points, s.points_discarded);
    println!("{:<11} {:>10} {:>10} {:>9}", "stage", "ms", "voxels", "channels");
    for st in &s.stages {
        println!("{:<11} {:>10.2} {:>10} {:>9}", st.name, st.millis, st.voxels, st.channels);
    }
    println!(
        "tau1 {} tau2 {}  semi-fine {}  fine {}  fusion misses {}  residual identity {}",
        s.tau1, s.tau2, s.semi_fine, s.fine, s.fusion_misses, s.residual_identity
    );
    println!("coarse output {:?} ({} voxels)", s.coarse_shape, s.coarse_voxels);
    println!("fine output   {:?} ({} voxels)", s.fine_shape, s.fine_voxels);
}
