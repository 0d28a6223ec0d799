use std::fs;
use std::path::{Path, PathBuf};

use sparse_occ::metrics::{compute_metrics, MetricsReport};
use sparse_occ::occlusion::{read_bitpacked_mask, read_label_u16, read_semantic_volume};
use sparse_occ::semantic_kitti::learning_map;
use sparse_occ::Error;

use crate::error::{CliError, CliResult};

pub struct Args {
    pub pred: PathBuf,
    pub gt: PathBuf,
    pub classes: usize,
    pub invalid: Option<PathBuf>,
    pub kitti_remap: bool,
    /// Dims for inputs without a `.hdr` sidecar.
    pub dims: Option<[u32; 3]>,
    pub out: Option<PathBuf>,
}

struct Labels {
    dims: Option<[u32; 3]>,
    labels: Vec<u16>,
}

fn has_header(path: &Path) -> bool {
    let mut h = path.as_os_str().to_owned();
    h.push(".hdr");
    Path::new(&h).exists()
}

fn load(path: &Path, dims: Option<[u32; 3]>) -> CliResult<Labels> {
    if has_header(path) {
        let v = read_semantic_volume::<f64>(path, None)?;
        return Ok(Labels {
            dims: Some(v.geometry.dims()),
            labels: v.labels,
        });
    }
    let bytes = fs::read(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })?;
    if bytes.len() % 2 != 0 {
        return Err(Error::Parse {
            path: path.into(),
            msg: format!("{} bytes is not a whole number of u16 labels", bytes.len()),
        }
        .into());
    }
    Ok(Labels {
        dims,
        labels: read_label_u16(&bytes, bytes.len() / 2, path)?,
    })
}

pub fn run(args: &Args) -> CliResult<MetricsReport> {
    let mut pred = load(&args.pred, args.dims)?;
    let mut gt = load(&args.gt, args.dims)?;
    if let (Some(a), Some(b)) = (pred.dims, gt.dims) {
        if a != b {
            return Err(Error::DimMismatch(format!("prediction dims {a:?}, ground truth dims {b:?}")).into());
        }
    }
    if args.kitti_remap {
        for v in [&mut pred.labels, &mut gt.labels] {
            v.iter_mut().for_each(|l| *l = learning_map(*l));
        }
    }
    let invalid = match &args.invalid {
        Some(p) => Some(read_bitpacked_mask(p, gt.labels.len())?),
        None => None,
    };
    let report = compute_metrics(&pred.labels, &gt.labels, invalid.as_deref(), args.classes)?;
    if let Some(out) = &args.out {
        let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Output(e.to_string()))?;
        fs::write(out, text).map_err(|e| Error::Io {
            path: out.clone(),
            source: e,
        })?;
    }
    Ok(report)
}
