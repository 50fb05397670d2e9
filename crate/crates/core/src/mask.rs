//! Stochastic prefix masks over the measurement tensor.
//!
//! A mask keeps the leading `m_1 × .. × m_K` block of a measurement and zeroes
//! the rest, with each `m_k` drawn uniformly from `[min_k, max_k]`.

use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::tensor::Tensor;

/// Minimum and maximum measurement extents per mode.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskSpec {
    min_dims: Vec<usize>,
    max_dims: Vec<usize>,
}

/// One sampled extent tuple.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MaskDims(Vec<usize>);

impl MaskSpec {
    pub fn new(min_dims: Vec<usize>, max_dims: Vec<usize>) -> Result<Self> {
        if min_dims.is_empty() || min_dims.len() != max_dims.len() {
            return Err(Error::Dims(format!(
                "mask bounds {:?} and {:?} must be non-empty and of equal rank",
                min_dims, max_dims
            )));
        }
        for (k, (&lo, &hi)) in min_dims.iter().zip(&max_dims).enumerate() {
            if lo < 1 || lo > hi {
                return Err(Error::Dims(format!(
                    "mode {k}: need 1 <= min ({lo}) <= max ({hi})"
                )));
            }
        }
        Ok(Self { min_dims, max_dims })
    }

    /// Degenerate spec that only admits `dims`.
    pub fn fixed(dims: &[usize]) -> Result<Self> {
        Self::new(dims.to_vec(), dims.to_vec())
    }

    pub fn min_dims(&self) -> MaskDims {
        MaskDims(self.min_dims.clone())
    }

    pub fn max_dims(&self) -> MaskDims {
        MaskDims(self.max_dims.clone())
    }

    pub fn rank(&self) -> usize {
        self.max_dims.len()
    }

    pub fn contains(&self, dims: &[usize]) -> bool {
        dims.len() == self.rank()
            && dims
                .iter()
                .zip(self.min_dims.iter().zip(&self.max_dims))
                .all(|(d, (lo, hi))| lo <= d && d <= hi)
    }

    pub fn check(&self, dims: &[usize]) -> Result<()> {
        if self.contains(dims) {
            Ok(())
        } else {
            Err(Error::Dims(format!(
                "{} outside mask range {}..{}",
                MaskDims(dims.to_vec()),
                self.min_dims(),
                self.max_dims()
            )))
        }
    }

    /// Every admissible dims tuple in lexicographic order.
    pub fn enumerate(&self) -> Vec<MaskDims> {
        let mut out = Vec::new();
        let mut cur = self.min_dims.clone();
        loop {
            out.push(MaskDims(cur.clone()));
            let mut k = self.rank();
            loop {
                if k == 0 {
                    return out;
                }
                k -= 1;
                if cur[k] < self.max_dims[k] {
                    cur[k] += 1;
                    break;
                }
                cur[k] = self.min_dims[k];
            }
        }
    }
}

impl MaskDims {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::Dims(format!("invalid dims {:?}", dims)));
        }
        Ok(Self(dims))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }
}

impl Deref for MaskDims {
    type Target = [usize];
    fn deref(&self) -> &[usize] {
        &self.0
    }
}

impl fmt::Display for MaskDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        write!(f, "{}", parts.join("x"))
    }
}

impl FromStr for MaskDims {
    type Err = Error;

    /// Parses `4x6x2` (commas also accepted).
    fn from_str(s: &str) -> Result<Self> {
        let dims = s
            .split(|c| c == 'x' || c == ',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Dims(format!("cannot parse dims '{s}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        MaskDims::new(dims)
    }
}

/// Draws each extent independently and uniformly from `[min_k, max_k]`.
pub fn sample_mask_dims(spec: &MaskSpec, rng: &mut StreamRng) -> MaskDims {
    MaskDims(
        spec.min_dims
            .iter()
            .zip(&spec.max_dims)
            .map(|(&lo, &hi)| rng.int_inclusive(lo, hi))
            .collect(),
    )
}

/// Binary tensor that is 1 exactly on the leading `dims` block.
pub fn materialize_mask(dims: &[usize], full_shape: &[usize]) -> Result<Tensor> {
    if dims.len() != full_shape.len() || dims.iter().zip(full_shape).any(|(d, e)| *d == 0 || d > e) {
        return Err(Error::Dims(format!(
            "mask dims {:?} do not fit shape {:?}",
            dims, full_shape
        )));
    }
    Tensor::from_fn(full_shape, |idx| {
        if idx.iter().zip(dims).all(|(i, d)| i < d) {
            1.0
        } else {
            0.0
        }
    })
}
