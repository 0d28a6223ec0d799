use std::io::Write;
use std::time::Instant;

use serde::Serialize;
use sparse_occ::config::{GeometryConfig, PipelineConfig};
use sparse_occ::pipeline::Pipeline;
use sparse_occ::scene::{SceneParams, SyntheticScene};

use crate::alloc;
use crate::error::{usage, CliError, CliResult};

pub struct Args {
    pub config: PipelineConfig,
    pub sizes: Vec<[u32; 3]>,
    pub taus: Vec<(f64, f64)>,
    pub region: [u32; 3],
    pub repeats: usize,
    pub seed: u64,
}

/// One CSV row. Times are the minimum over repeats; `peak_bytes` is the
/// largest heap high-water mark of a forward pass above its starting size.
#[derive(Debug, Clone, Serialize)]
pub struct Row {
    pub dims: String,
    pub volume: u64,
    pub tau1: f64,
    pub tau2: f64,
    pub points: usize,
    pub coarse_nonempty: usize,
    pub semi_fine: usize,
    pub fine: usize,
    pub refined_nonempty: usize,
    pub voxelize_ms: f64,
    pub downsample_ms: f64,
    pub densify_ms: f64,
    pub fuse_ms: f64,
    pub hvfr_ms: f64,
    pub decode_ms: f64,
    pub total_ms: f64,
    pub peak_bytes: usize,
}

fn round_ms(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

pub fn parse_size(s: &str) -> CliResult<[u32; 3]> {
    let v: Vec<u32> = s
        .split('x')
        .map(|t| t.trim().parse().map_err(|_| usage(format!("bad size {s:?}, expected XxYxZ"))))
        .collect::<CliResult<_>>()?;
    <[u32; 3]>::try_from(v).map_err(|_| usage(format!("bad size {s:?}, expected XxYxZ")))
}

pub fn parse_tau(s: &str) -> CliResult<(f64, f64)> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| usage(format!("bad threshold pair {s:?}, expected TAU1:TAU2")))?;
    let p = |t: &str| t.trim().parse::<f64>().map_err(|_| usage(format!("bad threshold in {s:?}")));
    Ok((p(a)?, p(b)?))
}

/// Small default model for benchmarking when no config is given.
pub fn default_config() -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.channels.lidar = 8;
    c.channels.image = 8;
    c.decoder.hidden = vec![8];
    c
}

pub fn run(args: &Args) -> CliResult<Vec<Row>> {
    if args.repeats == 0 {
        return Err(usage("--repeats must be positive"));
    }
    let mut rows = Vec::new();
    for &dims in &args.sizes {
        let params = SceneParams {
            origin: [-3.2, -3.2, -1.8],
            dims,
            region: Some(args.region),
            image_size: [48, 32],
            image_channels: args.config.channels.image,
            lidar_azimuths: 360,
            lidar_elevations: 16,
            seed: args.seed,
            ..SceneParams::default()
        };
        let scene = SyntheticScene::<f64>::generate(&params)?;
        for &(tau1, tau2) in &args.taus {
            let mut cfg = args.config.clone();
            cfg.geometry = GeometryConfig::custom(params.origin, params.voxel_size, dims);
            cfg.hvfr.tau1 = tau1;
            cfg.hvfr.tau2 = tau2;
            cfg.validate()?;
            let pipeline = Pipeline::<f64>::new(&cfg, Some(args.seed))?;
            let mut best: Option<Row> = None;
            for _ in 0..args.repeats {
                let base = alloc::reset_peak();
                let t = Instant::now();
                let out = pipeline.forward(&scene.cloud, &scene.rig, &scene.features, Some(&scene.gt))?;
                let total_ms = round_ms(t.elapsed().as_secs_f64() * 1e3);
                let peak_bytes = alloc::peak() - base;
                let r = &out.report;
                let ms = |n: &str| round_ms(r.stage(n).map_or(0.0, |s| s.millis));
                let row = Row {
                    dims: format!("{}x{}x{}", dims[0], dims[1], dims[2]),
                    volume: dims.iter().map(|&d| u64::from(d)).product(),
                    tau1,
                    tau2,
                    points: r.points,
                    coarse_nonempty: out.fused.len(),
                    semi_fine: r.semi_fine,
                    fine: r.fine,
                    refined_nonempty: out.refined.len(),
                    voxelize_ms: ms("voxelize"),
                    downsample_ms: ms("downsample"),
                    densify_ms: ms("densify"),
                    fuse_ms: ms("fuse"),
                    hvfr_ms: ms("hvfr"),
                    decode_ms: ms("decode"),
                    total_ms,
                    peak_bytes,
                };
                best = Some(match best {
                    None => row,
                    Some(b) => Row {
                        voxelize_ms: b.voxelize_ms.min(row.voxelize_ms),
                        downsample_ms: b.downsample_ms.min(row.downsample_ms),
                        densify_ms: b.densify_ms.min(row.densify_ms),
                        fuse_ms: b.fuse_ms.min(row.fuse_ms),
                        hvfr_ms: b.hvfr_ms.min(row.hvfr_ms),
                        decode_ms: b.decode_ms.min(row.decode_ms),
                        total_ms: b.total_ms.min(row.total_ms),
                        peak_bytes: b.peak_bytes.max(row.peak_bytes),
                        ..b
                    },
                });
            }
            rows.extend(best);
        }
    }
    Ok(rows)
}

pub fn write_csv(rows: &[Row], w: impl Write) -> CliResult<()> {
    let mut out = csv::Writer::from_writer(w);
    let res = (|| {
        if rows.is_empty() {
            out.write_record(HEADER)?;
        }
        for r in rows {
            out.serialize(r)?;
        }
        out.flush().map_err(csv::Error::from)
    })();
    match res {
        Err(e) if !matches!(e.kind(), csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::BrokenPipe) => {
            Err(CliError::Output(e.to_string()))
        }
        _ => Ok(()),
    }
}

pub const HEADER: [&str; 17] = [
    "dims",
    "volume",
    "tau1",
    "tau2",
    "points",
    "coarse_nonempty",
    "semi_fine",
    "fine",
    "refined_nonempty",
    "voxelize_ms",
    "downsample_ms",
    "densify_ms",
    "fuse_ms",
    "hvfr_ms",
    "decode_ms",
    "total_ms",
    "peak_bytes",
];
