use super::OcclusionLabel;
use crate::error::{Error, Result};
use crate::scalar::{argmax, Real};
use crate::voxel::{GridGeometry, SparseVoxelGrid, VoxelIndex};

pub const SEMANTIC_CHANNELS: usize = 18;
pub const OCCLUSION_CHANNELS: usize = 3;
pub const OUTPUT_CHANNELS: usize = SEMANTIC_CHANNELS + OCCLUSION_CHANNELS;

/// Sparse 21-channel prediction: channels `0..18` are semantic class scores,
/// `18..21` are `[Empty, NonOccluded, Occluded]` scores.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputVolume<T: Real> {
    pub grid: SparseVoxelGrid<T>,
}

impl<T: Real> OutputVolume<T> {
    pub fn new(grid: SparseVoxelGrid<T>) -> Result<Self> {
        if grid.channels() != OUTPUT_CHANNELS {
            return Err(Error::Shape(format!(
                "output volume needs {OUTPUT_CHANNELS} channels, got {}",
                grid.channels()
            )));
        }
        Ok(Self { grid })
    }

    pub fn geometry(&self) -> &GridGeometry<T> {
        self.grid.geometry()
    }

    /// `[X, Y, Z, 21]` at the volume's scale.
    pub fn dense_shape(&self) -> [usize; 4] {
        let [x, y, z] = self.geometry().dims();
        [x as usize, y as usize, z as usize, OUTPUT_CHANNELS]
    }

    pub fn semantic(&self, row: usize) -> &[T] {
        &self.grid.row(row)[..SEMANTIC_CHANNELS]
    }

    pub fn occlusion(&self, row: usize) -> &[T] {
        &self.grid.row(row)[SEMANTIC_CHANNELS..]
    }

    pub fn occlusion_label(&self, row: usize) -> OcclusionLabel {
        OcclusionLabel::ALL[argmax(self.occlusion(row))]
    }

    /// Dense semantic argmax, x slowest. Voxels without a prediction are 0.
    pub fn semantic_labels(&self) -> Vec<u16> {
        let g = self.geometry();
        let mut out = vec![0u16; g.num_voxels()];
        for (r, idx) in self.grid.coords().iter().enumerate() {
            out[g.linear_index(idx)] = argmax(self.semantic(r)) as u16;
        }
        out
    }

    /// Dense occlusion argmax. Voxels without a prediction are empty.
    pub fn occlusion_labels(&self) -> Vec<OcclusionLabel> {
        let g = self.geometry();
        let mut out = vec![OcclusionLabel::Empty; g.num_voxels()];
        for (r, idx) in self.grid.coords().iter().enumerate() {
            out[g.linear_index(idx)] = self.occlusion_label(r);
        }
        out
    }
}

/// Concatenates 18 semantic and 3 occlusion channels over the same voxels.
pub fn assemble_output<T: Real>(sem: &SparseVoxelGrid<T>, occ: &SparseVoxelGrid<T>) -> Result<OutputVolume<T>> {
    if sem.channels() != SEMANTIC_CHANNELS || occ.channels() != OCCLUSION_CHANNELS {
        return Err(Error::Shape(format!(
            "expected {SEMANTIC_CHANNELS} + {OCCLUSION_CHANNELS} channels, got {} + {}",
            sem.channels(),
            occ.channels()
        )));
    }
    if !sem.geometry().same_frame(occ.geometry()) || sem.scale() != occ.scale() || sem.len() != occ.len() {
        return Err(Error::Shape("semantic and occlusion grids cover different voxels".into()));
    }
    let mut out = SparseVoxelGrid::with_capacity(*sem.geometry(), OUTPUT_CHANNELS, sem.len());
    let mut row = vec![T::zero(); OUTPUT_CHANNELS];
    for (idx, s) in sem.iter() {
        let o = occ
            .lookup(&idx)
            .ok_or_else(|| Error::Shape(format!("voxel {idx} has no occlusion scores")))?;
        row[..SEMANTIC_CHANNELS].copy_from_slice(s);
        row[SEMANTIC_CHANNELS..].copy_from_slice(o);
        out.insert(idx, &row)?;
    }
    OutputVolume::new(out)
}

/// Voxels predicted non-occluded or occluded, sorted.
pub fn decoder_input_set<T: Real>(out: &OutputVolume<T>) -> Vec<VoxelIndex> {
    let mut v: Vec<VoxelIndex> = out
        .grid
        .coords()
        .iter()
        .enumerate()
        .filter(|&(r, _)| out.occlusion_label(r) != OcclusionLabel::Empty)
        .map(|(_, idx)| *idx)
        .collect();
    v.sort();
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> GridGeometry<f64> {
        GridGeometry::new([0.0; 3], 0.2, [16, 16, 8], 4).unwrap()
    }

    fn grids(occ_rows: &[[f64; 3]]) -> (SparseVoxelGrid<f64>, SparseVoxelGrid<f64>) {
        let mut s = SparseVoxelGrid::new(geom(), SEMANTIC_CHANNELS);
        let mut o = SparseVoxelGrid::new(geom(), OCCLUSION_CHANNELS);
        for (i, r) in occ_rows.iter().enumerate() {
            let idx = VoxelIndex::new(i as u32, 1, 0, 4);
            let mut sem = vec![0.0; SEMANTIC_CHANNELS];
            sem[i + 1] = 1.0;
            s.insert(idx, &sem).unwrap();
            o.insert(idx, r).unwrap();
        }
        (s, o)
    }

    #[test]
    fn layout_and_input_set() {
        assert_eq!(OUTPUT_CHANNELS, 21);
        let (s, o) = grids(&[[0.8, 0.1, 0.1], [0.1, 0.7, 0.2], [0.1, 0.2, 0.7]]);
        let out = assemble_output(&s, &o).unwrap();
        assert_eq!(out.dense_shape(), [4, 4, 2, 21]);
        assert_eq!(out.grid.row(1)[18..], [0.1, 0.7, 0.2]);
        assert_eq!(
            decoder_input_set(&out),
            vec![VoxelIndex::new(1, 1, 0, 4), VoxelIndex::new(2, 1, 0, 4)]
        );
        let sem = out.semantic_labels();
        assert_eq!(sem[geom().linear_index(&VoxelIndex::new(2, 1, 0, 4))], 3);
        assert_eq!(sem.iter().filter(|&&l| l != 0).count(), 3);
    }

    #[test]
    fn all_empty_gives_no_decoder_input() {
        let (s, o) = grids(&[[0.9, 0.05, 0.05], [0.5, 0.25, 0.25]]);
        assert!(decoder_input_set(&assemble_output(&s, &o).unwrap()).is_empty());
    }

    #[test]
    fn channel_mismatch() {
        let (s, _) = grids(&[[1.0, 0.0, 0.0]]);
        let bad = SparseVoxelGrid::<f64>::new(geom(), 2);
        assert!(matches!(assemble_output(&s, &bad), Err(Error::Shape(_))));
        let (_, o) = grids(&[[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        assert!(assemble_output(&s, &o).is_err());
    }
}
