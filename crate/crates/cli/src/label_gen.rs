use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sparse_occ::camera::CameraModel;
use sparse_occ::lidar::PointCloud;
use sparse_occ::occlusion::{
    generate_occlusion_volume, write_occlusion_volume, write_semantic_volume, LabelConfig, OcclusionVolume,
    SemanticVolume, VolumeHeader,
};
use sparse_occ::scene::{SceneParams, SyntheticScene};
use sparse_occ::semantic_kitti::Sequence;
use sparse_occ::{Error, Geometry64};

use crate::error::{CliError, CliResult};

pub struct Args {
    pub kitti: Option<(PathBuf, String)>,
    pub scene: SceneParams,
    pub frames: Option<usize>,
    pub stride: u32,
    pub out: PathBuf,
}

#[derive(Debug, Default, Clone, Copy, Serialize)]
pub struct Histogram {
    pub empty: usize,
    pub non_occluded: usize,
    pub occluded: usize,
}

impl Histogram {
    fn of(v: &OcclusionVolume<f64>) -> Self {
        let [empty, non_occluded, occluded] = v.histogram();
        Self { empty, non_occluded, occluded }
    }

    fn add(&mut self, o: &Self) {
        self.empty += o.empty;
        self.non_occluded += o.non_occluded;
        self.occluded += o.occluded;
    }
}

#[derive(Debug, Serialize)]
pub struct FrameSummary {
    pub frame: String,
    pub dims: [u32; 3],
    pub seed: Option<u64>,
    pub histogram: Histogram,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub dataset: &'static str,
    pub sequence: Option<String>,
    pub camera_stride: u32,
    pub frames: Vec<FrameSummary>,
    pub total: Histogram,
}

struct Input {
    name: String,
    seed: Option<u64>,
    cloud: PointCloud<f64>,
    rig: Vec<CameraModel<f64>>,
    gt: SemanticVolume<f64>,
}

pub fn run(args: &Args) -> CliResult<Summary> {
    fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    let cfg = LabelConfig {
        camera_stride: args.stride,
        ..LabelConfig::default()
    };
    let (dataset, sequence, jobs) = match &args.kitti {
        Some((root, seq)) => {
            let s = Sequence::open(root, seq)?;
            let mut frames = s.frames()?;
            if let Some(n) = args.frames {
                frames.truncate(n);
            }
            let jobs: Vec<Job> = frames.into_iter().map(|f| Job::Kitti(s.clone(), f)).collect();
            ("semantickitti", Some(seq.clone()), jobs)
        }
        None => {
            let jobs = (0..args.frames.unwrap_or(1) as u64)
                .map(|i| {
                    Job::Synthetic(SceneParams {
                        seed: args.scene.seed + i,
                        ..args.scene.clone()
                    })
                })
                .collect();
            ("synthetic", None, jobs)
        }
    };
    let frames = jobs
        .par_iter()
        .map(|job| label_one(&job.load()?, &cfg, &args.out))
        .collect::<CliResult<Vec<_>>>()?;
    let mut total = Histogram::default();
    frames.iter().for_each(|f| total.add(&f.histogram));
    let summary = Summary {
        dataset,
        sequence,
        camera_stride: args.stride,
        frames,
        total,
    };
    let path = args.out.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Output(e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::Io { path, source: e })?;
    Ok(summary)
}

enum Job {
    Kitti(Sequence, String),
    Synthetic(SceneParams),
}

impl Job {
    fn load(&self) -> CliResult<Input> {
        match self {
            Job::Kitti(s, f) => kitti_input(s, f),
            Job::Synthetic(p) => synthetic_input(p),
        }
    }
}

fn kitti_input(s: &Sequence, frame: &str) -> CliResult<Input> {
    Ok(Input {
        name: frame.into(),
        seed: None,
        cloud: s.cloud(frame)?.cast(),
        rig: vec![s.camera(frame)?],
        gt: s.labels(frame, Geometry64::semantic_kitti())?,
    })
}

fn synthetic_input(p: &SceneParams) -> CliResult<Input> {
    let s = SyntheticScene::<f64>::generate(p)?;
    Ok(Input {
        name: format!("{:06}", p.seed),
        seed: Some(p.seed),
        cloud: s.cloud,
        rig: s.rig,
        gt: s.gt,
    })
}

fn label_one(input: &Input, cfg: &LabelConfig<f64>, out: &Path) -> CliResult<FrameSummary> {
    let vol = generate_occlusion_volume(&input.cloud, &input.rig, &input.gt, cfg)?;
    let header = VolumeHeader::from_geometry(&vol.geometry, input.seed);
    write_occlusion_volume(&out.join(format!("{}.occ", input.name)), &header, &vol.occlusion)?;
    write_semantic_volume(&out.join(format!("{}.label", input.name)), &input.gt, input.seed)?;
    Ok(FrameSummary {
        frame: input.name.clone(),
        dims: vol.geometry.dims(),
        seed: input.seed,
        histogram: Histogram::of(&vol),
    })
}
