//! Dense per-voxel linear maps (the 1x1 convolutions and attention projections).

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Real;

/// `y = W x + b` with `W` stored row-major as `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Linear<T> {
    pub fn new(in_dim: usize, out_dim: usize, weights: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::Shape(format!(
                "linear {in_dim}->{out_dim} given {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
        })
    }

    /// Weights uniform in `+-1/sqrt(in_dim)`, zero bias.
    pub fn seeded(in_dim: usize, out_dim: usize, seed: u64) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        Self {
            in_dim,
            out_dim,
            weights: rng::uniform_vec(seed, in_dim * out_dim, bound),
            bias: vec![T::zero(); out_dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut weights = vec![T::zero(); dim * dim];
        for i in 0..dim {
            weights[i * dim + i] = T::one();
        }
        Self {
            in_dim: dim,
            out_dim: dim,
            weights,
            bias: vec![T::zero(); dim],
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
        }
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.in_dim);
        let mut y = self.bias.clone();
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            for (w, xi) in row.iter().zip(x) {
                *yo += *w * *xi;
            }
        }
        y
    }

    pub fn check_input(&self, width: usize, what: &str) -> Result<()> {
        if width != self.in_dim {
            return Err(Error::Shape(format!(
                "{what}: input width {width} != linear input {}",
                self.in_dim
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_affine() {
        let id = Linear::<f64>::identity(3);
        assert_eq!(id.apply(&[1.0, -2.0, 3.5]), vec![1.0, -2.0, 3.5]);
        let l = Linear::new(2, 1, vec![2.0, 3.0], vec![1.0]).unwrap();
        assert_eq!(l.apply(&[1.0, 1.0]), vec![6.0]);
        assert!(Linear::<f64>::new(2, 2, vec![0.0; 3], vec![0.0; 2]).is_err());
    }
}
