mod alloc;
mod bench;
mod error;
mod eval;
mod forward;
mod input;
mod label_gen;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sparse_occ::config::PipelineConfig;
use sparse_occ::scene::SceneParams;

use crate::error::{usage, CliError, CliResult};
use crate::input::{SceneSpec, ROOT_ENV};

#[global_allocator]
static ALLOC: alloc::Tracking = alloc::Tracking;

#[derive(Parser)]
#[command(name = "sparse-occ", version, about = "Sparse multi-resolution occupancy toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dataset {
    Semantickitti,
    Synthetic,
}

#[derive(Subcommand)]
enum Command {
    /// Generate visibility-aware ground truth volumes.
    LabelGen {
        #[arg(long, value_enum)]
        dataset: Dataset,
        #[arg(long, env = ROOT_ENV)]
        root: Option<PathBuf>,
        #[arg(long, default_value = "00")]
        sequence: String,
        #[arg(long)]
        out: PathBuf,
        /// Camera ray spacing in pixels.
        #[arg(long, default_value_t = 4)]
        stride: u32,
        /// Limit on the number of frames; synthetic runs default to one.
        #[arg(long)]
        frames: Option<usize>,
        /// Synthetic scene parameters (TOML).
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        walls: Option<usize>,
        #[arg(long)]
        objects: Option<usize>,
        #[arg(long)]
        no_ground: bool,
    },
    /// Score a predicted semantic volume against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = 20)]
        classes: usize,
        /// Bit-packed mask of voxels to skip.
        #[arg(long)]
        invalid: Option<PathBuf>,
        /// Map raw SemanticKITTI ids to training classes first.
        #[arg(long)]
        kitti_remap: bool,
        /// Grid dims for inputs without a header, e.g. 256x256x32.
        #[arg(long, value_parser = parse_size)]
        dims: Option<[u32; 3]>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full model on one frame.
    Forward {
        #[arg(long)]
        config: Option<PathBuf>,
        /// synthetic[:SEED], kitti:SEQ/FRAME, or a scene TOML file.
        #[arg(long, default_value = "synthetic")]
        scene: String,
        /// Weight seed; defaults to seeds.root from the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = ROOT_ENV)]
        root: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time every stage over grid sizes and thresholds; CSV on stdout.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', value_parser = parse_size, default_value = "64x64x16,128x128x32")]
        sizes: Vec<[u32; 3]>,
        /// TAU1:TAU2 pairs.
        #[arg(long, value_delimiter = ',', value_parser = parse_tau, default_value = "0.4:0.7")]
        taus: Vec<(f64, f64)>,
        /// Extent of the scene content, voxels.
        #[arg(long, value_parser = parse_size, default_value = "32x32x16")]
        region: [u32; 3],
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_size(s: &str) -> Result<[u32; 3], String> {
    bench::parse_size(s).map_err(|e| e.to_string())
}

fn parse_tau(s: &str) -> Result<(f64, f64), String> {
    bench::parse_tau(s).map_err(|e| e.to_string())
}

fn load_config(path: Option<&PathBuf>, fallback: PipelineConfig) -> CliResult<PipelineConfig> {
    match path {
        Some(p) => Ok(PipelineConfig::load(p)?),
        None => Ok(fallback),
    }
}

fn write_json<T: serde::Serialize>(v: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| CliError::Output(e.to_string()))?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Output(e.to_string())),
        _ => Ok(()),
    }
}

fn run(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::LabelGen {
            dataset,
            root,
            sequence,
            out,
            stride,
            frames,
            scene,
            seed,
            walls,
            objects,
            no_ground,
        } => {
            if stride == 0 {
                return Err(usage("--stride must be positive"));
            }
            let mut params = match &scene {
                Some(p) => input::load_scene_params(p)?,
                None => SceneParams::default(),
            };
            params.seed = seed.unwrap_or(params.seed);
            params.walls = walls.unwrap_or(params.walls);
            params.objects = objects.unwrap_or(params.objects);
            params.ground &= !no_ground;
            let kitti = match dataset {
                Dataset::Semantickitti => Some((input::dataset_root(root, None)?, sequence)),
                Dataset::Synthetic => None,
            };
            let s = label_gen::run(&label_gen::Args {
                kitti,
                scene: params,
                frames,
                stride,
                out,
            })?;
            write_json(&s)
        }
        Command::Eval {
            pred,
            gt,
            classes,
            invalid,
            kitti_remap,
            dims,
            out,
        } => {
            let r = eval::run(&eval::Args {
                pred,
                gt,
                classes,
                invalid,
                kitti_remap,
                dims,
                out,
            })?;
            write_json(&r)
        }
        Command::Forward {
            config,
            scene,
            seed,
            root,
            out,
        } => {
            let config = load_config(config.as_ref(), PipelineConfig::default())?;
            let args = forward::Args {
                config,
                scene: SceneSpec::parse(&scene)?,
                seed,
                root,
                out,
            };
            forward::print(&forward::run(&args)?);
            Ok(())
        }
        Command::Bench {
            config,
            sizes,
            taus,
            region,
            repeats,
            seed,
            out,
        } => {
            let config = load_config(config.as_ref(), bench::default_config())?;
            let rows = bench::run(&bench::Args {
                config,
                sizes,
                taus,
                region,
                repeats,
                seed,
            })?;
            match out {
                Some(p) => {
                    let f = std::fs::File::create(&p).map_err(|e| sparse_occ::Error::Io { path: p, source: e })?;
                    bench::write_csv(&rows, f)
                }
                None => bench::write_csv(&rows, std::io::stdout().lock()),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
