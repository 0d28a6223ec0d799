//! Occupancy head: scale-4 features to 21-channel volumes at scales 4 and 1.
//!
//! A stack of submanifold convolutions with ReLU feeds a per-voxel linear
//! head producing `O^4`. Voxels predicted non-occluded or occluded are split
//! into 64 scale-1 children, each decoded from its parent's hidden feature
//! and its offset inside the parent, giving `O^1`.

use crate::error::{Error, Result};
use crate::lidar::{sparse_conv, ConvMode, SparseConvSpec};
use crate::linear::Linear;
use crate::occlusion::{assemble_output, decoder_input_set, OutputVolume, OUTPUT_CHANNELS, SEMANTIC_CHANNELS};
use crate::rng::split_seed;
use crate::scalar::{softmax, Real};
use crate::voxel::{subdivide, SparseVoxelGrid, VoxelIndex};

const FINE_FACTOR: u32 = 4;

#[derive(Debug, Clone)]
pub struct Decoder<T> {
    pub convs: Vec<SparseConvSpec<T>>,
    pub head: Linear<T>,
    /// Input is `[hidden ; child offset (3)]`.
    pub fine: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct DecoderOutput<T: Real> {
    pub coarse: OutputVolume<T>,
    pub fine: OutputVolume<T>,
    /// Scale-4 voxels that were refined into `fine`.
    pub refined_parents: Vec<VoxelIndex>,
}

/// Softmax over the semantic and occlusion groups separately.
fn group_softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let mut out = softmax(&logits[..SEMANTIC_CHANNELS]);
    out.extend(softmax(&logits[SEMANTIC_CHANNELS..]));
    out
}

impl<T: Real> Decoder<T> {
    /// `hidden` lists the widths of the convolution stack.
    pub fn seeded(in_channels: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut convs = Vec::with_capacity(hidden.len());
        let mut c = in_channels;
        for (i, &h) in hidden.iter().enumerate() {
            if h == 0 {
                return Err(Error::Config("decoder widths must be positive".into()));
            }
            convs.push(SparseConvSpec::seeded(3, 1, c, h, ConvMode::Submanifold, split_seed(seed, &format!("conv{i}")))?);
            c = h;
        }
        Ok(Self {
            convs,
            head: Linear::seeded(c, OUTPUT_CHANNELS, split_seed(seed, "head")),
            fine: Linear::seeded(c + 3, OUTPUT_CHANNELS, split_seed(seed, "fine")),
        })
    }

    pub fn hidden_channels(&self) -> usize {
        self.head.in_dim
    }

    pub fn forward(&self, fe: &SparseVoxelGrid<T>) -> Result<DecoderOutput<T>> {
        let mut x = fe.clone();
        for conv in &self.convs {
            x = sparse_conv(&x, conv)?.map_features(conv.out_channels, |f| {
                f.iter().map(|&v| v.max(T::zero())).collect()
            })?;
        }
        self.head.check_input(x.channels(), "decoder head")?;

        let geom = *x.geometry();
        let mut sem = SparseVoxelGrid::with_capacity(geom, SEMANTIC_CHANNELS, x.len());
        let mut occ = SparseVoxelGrid::with_capacity(geom, OUTPUT_CHANNELS - SEMANTIC_CHANNELS, x.len());
        for (c, f) in x.iter() {
            let p = group_softmax(&self.head.apply(f));
            sem.insert(c, &p[..SEMANTIC_CHANNELS])?;
            occ.insert(c, &p[SEMANTIC_CHANNELS..])?;
        }
        let coarse = assemble_output(&sem, &occ)?;
        let refined_parents = decoder_input_set(&coarse);

        let fine_geom = geom.at_scale(geom.scale / FINE_FACTOR)?;
        let mut fine = SparseVoxelGrid::with_capacity(fine_geom, OUTPUT_CHANNELS, refined_parents.len() * 64);
        let step = T::lit(1.0 / f64::from(FINE_FACTOR - 1));
        let half = T::lit(0.5);
        let mut input = vec![T::zero(); x.channels() + 3];
        for p in &refined_parents {
            input[..x.channels()].copy_from_slice(x.lookup(p).expect("parent drawn from grid"));
            for child in subdivide(*p, FINE_FACTOR)? {
                let off = [child.x - p.x * FINE_FACTOR, child.y - p.y * FINE_FACTOR, child.z - p.z * FINE_FACTOR];
                for a in 0..3 {
                    input[x.channels() + a] = T::lit(f64::from(off[a])) * step - half;
                }
                fine.insert(child, &group_softmax(&self.fine.apply(&input)))?;
            }
        }
        Ok(DecoderOutput {
            coarse,
            fine: OutputVolume::new(fine)?,
            refined_parents,
        })
    }
}
