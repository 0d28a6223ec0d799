//! Binary volume formats.
//!
//! Dense volumes are stored x slowest, z fastest. Occlusion volumes are one
//! byte per voxel and semantic volumes one little-endian `u16` per voxel; both
//! carry a sidecar text header at `<path>.hdr`:
//!
//! ```text
//! dims 256 256 32
//! dims_scale1 256 256 32
//! scale 1
//! origin 0 -25.6 -2
//! voxel_size 0.2
//! order x-major
//! seed 7
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{OcclusionLabel, SemanticVolume};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::voxel::GridGeometry;

/// Contents of a `.hdr` sidecar.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeHeader {
    pub dims: [u32; 3],
    pub dims_scale1: [u32; 3],
    pub scale: u32,
    pub origin: [f64; 3],
    /// Edge length at scale 1.
    pub voxel_size: f64,
    pub seed: Option<u64>,
}

impl VolumeHeader {
    pub fn from_geometry<T: Real>(g: &GridGeometry<T>, seed: Option<u64>) -> Self {
        Self {
            dims: g.dims(),
            dims_scale1: g.dims_scale1,
            scale: g.scale,
            origin: g.origin.map(|c| c.as_f64()),
            voxel_size: g.voxel_size.as_f64(),
            seed,
        }
    }

    pub fn geometry<T: Real>(&self) -> Result<GridGeometry<T>> {
        let g = GridGeometry::new(
            self.origin.map(T::lit),
            T::lit(self.voxel_size),
            self.dims_scale1,
            self.scale,
        )?;
        if g.dims() != self.dims {
            return Err(Error::DimMismatch(format!(
                "header dims {:?} disagree with {:?} at scale {}",
                self.dims,
                g.dims(),
                self.scale
            )));
        }
        Ok(g)
    }

    pub fn num_voxels(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let [x, y, z] = self.dims;
        let [a, b, c] = self.dims_scale1;
        let [ox, oy, oz] = self.origin;
        let _ = writeln!(s, "dims {x} {y} {z}");
        let _ = writeln!(s, "dims_scale1 {a} {b} {c}");
        let _ = writeln!(s, "scale {}", self.scale);
        let _ = writeln!(s, "origin {ox} {oy} {oz}");
        let _ = writeln!(s, "voxel_size {}", self.voxel_size);
        let _ = writeln!(s, "order x-major");
        if let Some(seed) = self.seed {
            let _ = writeln!(s, "seed {seed}");
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |msg: String| Error::parse(path, msg);
        let mut dims = None;
        let mut dims_scale1 = None;
        let mut scale = None;
        let mut origin = None;
        let mut voxel_size = None;
        let mut seed = None;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or_default();
            let vals: Vec<&str> = parts.collect();
            let ints = |want: usize| -> Result<Vec<u64>> {
                if vals.len() != want {
                    return Err(bad(format!("line {}: `{key}` expects {want} values", n + 1)));
                }
                vals.iter()
                    .map(|v| v.parse::<u64>().map_err(|e| bad(format!("line {}: {e}", n + 1))))
                    .collect()
            };
            let floats = |want: usize| -> Result<Vec<f64>> {
                if vals.len() != want {
                    return Err(bad(format!("line {}: `{key}` expects {want} values", n + 1)));
                }
                vals.iter()
                    .map(|v| v.parse::<f64>().map_err(|e| bad(format!("line {}: {e}", n + 1))))
                    .collect()
            };
            let triple = |v: Vec<u64>| -> Result<[u32; 3]> {
                let c = |x: u64| u32::try_from(x).map_err(|_| bad(format!("line {}: dimension too large", n + 1)));
                Ok([c(v[0])?, c(v[1])?, c(v[2])?])
            };
            match key {
                "dims" => dims = Some(triple(ints(3)?)?),
                "dims_scale1" => dims_scale1 = Some(triple(ints(3)?)?),
                "scale" => scale = Some(ints(1)?[0] as u32),
                "origin" => {
                    let o = floats(3)?;
                    origin = Some([o[0], o[1], o[2]]);
                }
                "voxel_size" => voxel_size = Some(floats(1)?[0]),
                "seed" => seed = Some(ints(1)?[0]),
                "order" => {
                    if vals != ["x-major"] {
                        return Err(bad(format!("unsupported order {vals:?}")));
                    }
                }
                other => return Err(bad(format!("line {}: unknown key `{other}`", n + 1))),
            }
        }
        let dims = dims.ok_or_else(|| bad("missing `dims`".into()))?;
        let scale = scale.unwrap_or(1);
        Ok(Self {
            dims,
            dims_scale1: dims_scale1.unwrap_or(dims.map(|d| d * scale)),
            scale,
            origin: origin.ok_or_else(|| bad("missing `origin`".into()))?,
            voxel_size: voxel_size.ok_or_else(|| bad("missing `voxel_size`".into()))?,
            seed,
        })
    }
}

fn header_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".hdr");
    PathBuf::from(s)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_header(path: &Path) -> Result<VolumeHeader> {
    let hp = header_path(path);
    let text = fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?;
    VolumeHeader::parse(&text, &hp)
}

/// Writes one label byte per voxel plus the header.
pub fn write_occlusion_volume(path: &Path, header: &VolumeHeader, labels: &[OcclusionLabel]) -> Result<()> {
    if labels.len() != header.num_voxels() {
        return Err(Error::DimMismatch(format!(
            "{} labels for dims {:?}",
            labels.len(),
            header.dims
        )));
    }
    let bytes: Vec<u8> = labels.iter().map(|l| l.code()).collect();
    write_bytes(path, &bytes)?;
    write_bytes(&header_path(path), header.to_text().as_bytes())
}

pub fn read_occlusion_volume(path: &Path) -> Result<(VolumeHeader, Vec<OcclusionLabel>)> {
    let header = read_header(path)?;
    let bytes = read_bytes(path)?;
    if bytes.len() != header.num_voxels() {
        return Err(Error::parse(
            path,
            format!("{} bytes, header expects {}", bytes.len(), header.num_voxels()),
        ));
    }
    let labels = bytes
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            OcclusionLabel::from_code(b).ok_or_else(|| Error::parse(path, format!("byte {i}: invalid label {b}")))
        })
        .collect::<Result<_>>()?;
    Ok((header, labels))
}

/// Decodes exactly `n` little-endian `u16` values.
pub fn read_label_u16(bytes: &[u8], n: usize, path: &Path) -> Result<Vec<u16>> {
    if bytes.len() != 2 * n {
        return Err(Error::parse(path, format!("{} bytes, expected {}", bytes.len(), 2 * n)));
    }
    Ok(bytes.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect())
}

pub fn write_label_u16(labels: &[u16]) -> Vec<u8> {
    labels.iter().flat_map(|l| l.to_le_bytes()).collect()
}

/// Packs booleans eight per byte, most significant bit first.
pub fn pack_bits_msb(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 0x80 >> (i % 8);
        }
    }
    out
}

/// Inverse of [`pack_bits_msb`]; the input must be exactly `ceil(n / 8)` bytes.
pub fn unpack_bits_msb(bytes: &[u8], n: usize, path: &Path) -> Result<Vec<bool>> {
    if bytes.len() != n.div_ceil(8) {
        return Err(Error::parse(
            path,
            format!("{} bytes, expected {} for {n} bits", bytes.len(), n.div_ceil(8)),
        ));
    }
    Ok((0..n).map(|i| bytes[i / 8] & (0x80 >> (i % 8)) != 0).collect())
}

/// Reads a SemanticKITTI-style `.invalid` / `.occluded` mask.
pub fn read_bitpacked_mask(path: &Path, n: usize) -> Result<Vec<bool>> {
    unpack_bits_msb(&read_bytes(path)?, n, path)
}

/// Semantic volume as `u16` labels plus the header.
pub fn write_semantic_volume<T: Real>(path: &Path, vol: &SemanticVolume<T>, seed: Option<u64>) -> Result<()> {
    write_bytes(path, &write_label_u16(&vol.labels))?;
    let header = VolumeHeader::from_geometry(&vol.geometry, seed);
    write_bytes(&header_path(path), header.to_text().as_bytes())
}

/// Reads a volume written by [`write_semantic_volume`]. Without a header the
/// geometry must be supplied, as for raw SemanticKITTI `.label` files.
pub fn read_semantic_volume<T: Real>(path: &Path, geometry: Option<GridGeometry<T>>) -> Result<SemanticVolume<T>> {
    let geometry = match geometry {
        Some(g) => g,
        None => read_header(path)?.geometry()?,
    };
    let labels = read_label_u16(&read_bytes(path)?, geometry.num_voxels(), path)?;
    SemanticVolume::new(geometry, labels)
}

/// Flat sparse annotation: consecutive `(u32 linear index, u32 class)` pairs,
/// little-endian, expanded to a dense volume. Unlisted voxels are empty.
pub fn read_sparse_index_class<T: Real>(bytes: &[u8], geometry: GridGeometry<T>, path: &Path) -> Result<SemanticVolume<T>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::parse(path, format!("{} bytes is not a whole number of pairs", bytes.len())));
    }
    let mut vol = SemanticVolume::empty(geometry);
    let n = vol.labels.len();
    for (k, c) in bytes.chunks_exact(8).enumerate() {
        let idx = u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize;
        let class = u32::from_le_bytes([c[4], c[5], c[6], c[7]]);
        if idx >= n {
            return Err(Error::parse(path, format!("pair {k}: index {idx} outside {n} voxels")));
        }
        let class = u16::try_from(class).map_err(|_| Error::parse(path, format!("pair {k}: class {class}")))?;
        vol.labels[idx] = class;
    }
    Ok(vol)
}
