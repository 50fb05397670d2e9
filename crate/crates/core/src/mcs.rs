//! Separable sensing, feature synthesis and HOSVD initialization.

use crate::error::{Error, Result};
use crate::linalg::sym_eigen;
use crate::tensor::{mode_product, Matrix, Tensor};

/// Per-mode sensing matrices `Φ_k` of shape `M_k × I_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct SensingOperatorSet {
    phis: Vec<Matrix>,
}

/// Per-mode synthesis matrices `Θ_k` of shape `I_k × M_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthesisOperatorSet {
    thetas: Vec<Matrix>,
}

impl SensingOperatorSet {
    pub fn new(phis: Vec<Matrix>) -> Result<Self> {
        if phis.is_empty() {
            return Err(Error::Argument("at least one sensing operator required".into()));
        }
        if let Some((k, p)) = phis.iter().enumerate().find(|(_, p)| p.rows() > p.cols()) {
            return Err(Error::Shape(format!(
                "sensing operator {k} is {}x{}: measurement extent exceeds input extent",
                p.rows(),
                p.cols()
            )));
        }
        Ok(Self { phis })
    }

    pub fn phis(&self) -> &[Matrix] {
        &self.phis
    }

    pub fn phis_mut(&mut self) -> &mut [Matrix] {
        &mut self.phis
    }

    pub fn input_shape(&self) -> Vec<usize> {
        self.phis.iter().map(Matrix::cols).collect()
    }

    pub fn measurement_shape(&self) -> Vec<usize> {
        self.phis.iter().map(Matrix::rows).collect()
    }

    /// Synthesis set with `Θ_k = Φ_k^T`.
    pub fn transposed(&self) -> SynthesisOperatorSet {
        SynthesisOperatorSet {
            thetas: self.phis.iter().map(Matrix::transpose).collect(),
        }
    }
}

impl SynthesisOperatorSet {
    pub fn new(thetas: Vec<Matrix>) -> Result<Self> {
        if thetas.is_empty() {
            return Err(Error::Argument("at least one synthesis operator required".into()));
        }
        Ok(Self { thetas })
    }

    pub fn thetas(&self) -> &[Matrix] {
        &self.thetas
    }

    pub fn thetas_mut(&mut self) -> &mut [Matrix] {
        &mut self.thetas
    }

    pub fn input_shape(&self) -> Vec<usize> {
        self.thetas.iter().map(Matrix::rows).collect()
    }

    pub fn measurement_shape(&self) -> Vec<usize> {
        self.thetas.iter().map(Matrix::cols).collect()
    }
}

/// `Z = Y ×_1 Φ_1 … ×_K Φ_K`, applied in ascending mode order.
pub fn sense(y: &Tensor, ops: &SensingOperatorSet) -> Result<Tensor> {
    if y.shape() != ops.input_shape().as_slice() {
        return Err(Error::Shape(format!(
            "signal shape {:?} does not match sensing input {:?}",
            y.shape(),
            ops.input_shape()
        )));
    }
    let mut z = y.clone();
    for (k, phi) in ops.phis.iter().enumerate() {
        z = mode_product(&z, phi, k)?;
    }
    Ok(z)
}

/// `T = Z ×_1 Θ_1 … ×_K Θ_K`, applied in ascending mode order.
pub fn synthesize(z: &Tensor, ops: &SynthesisOperatorSet) -> Result<Tensor> {
    if z.shape() != ops.measurement_shape().as_slice() {
        return Err(Error::Shape(format!(
            "measurement shape {:?} does not match synthesis input {:?}",
            z.shape(),
            ops.measurement_shape()
        )));
    }
    let mut t = z.clone();
    for (k, theta) in ops.thetas.iter().enumerate() {
        t = mode_product(&t, theta, k)?;
    }
    Ok(t)
}

/// Dense compressive sensing `z = Φ·y` on a vectorized signal.
pub fn vector_sense(y_flat: &[f64], phi: &Matrix) -> Result<Vec<f64>> {
    phi.matvec(y_flat)
}

/// HOSVD-derived operator pair and the fraction of dataset energy retained.
#[derive(Clone, Debug)]
pub struct HosvdInit {
    pub sensing: SensingOperatorSet,
    pub synthesis: SynthesisOperatorSet,
    pub core_energy: f64,
}

/// Sum over samples of `Y_(k) · Y_(k)^T`, the Gram matrix of the mode-k
/// unfolding of the sample-concatenated dataset tensor.
pub fn mode_gram(dataset: &[Tensor], k: usize) -> Result<Matrix> {
    let shape = dataset
        .first()
        .ok_or_else(|| Error::Argument("empty dataset".into()))?
        .shape();
    let n = shape[k];
    let outer: usize = shape[..k].iter().product();
    let inner: usize = shape[k + 1..].iter().product();
    let mut gram = vec![0.0; n * n];
    for y in dataset {
        let d = y.data();
        for o in 0..outer {
            let block = &d[o * n * inner..(o + 1) * n * inner];
            for a in 0..n {
                let ra = &block[a * inner..(a + 1) * inner];
                for b in a..n {
                    let rb = &block[b * inner..(b + 1) * inner];
                    gram[a * n + b] += ra.iter().zip(rb).map(|(x, y)| x * y).sum::<f64>();
                }
            }
        }
    }
    for a in 0..n {
        for b in 0..a {
            gram[a * n + b] = gram[b * n + a];
        }
    }
    Matrix::new(n, n, gram)
}

/// Leading `M_k` left singular vectors of every mode unfolding of the
/// concatenated dataset, computed from the per-mode Gram matrices.
/// Sets `Φ_k = U_k^T` and `Θ_k = U_k`.
pub fn hosvd_init(dataset: &[Tensor], measurement_shape: &[usize]) -> Result<HosvdInit> {
    let first = dataset
        .first()
        .ok_or_else(|| Error::Argument("empty dataset".into()))?;
    let input_shape = first.shape().to_vec();
    if dataset.iter().any(|y| y.shape() != input_shape.as_slice()) {
        return Err(Error::Shape("dataset samples differ in shape".into()));
    }
    if measurement_shape.len() != input_shape.len()
        || measurement_shape
            .iter()
            .zip(&input_shape)
            .any(|(m, i)| *m == 0 || m > i)
    {
        return Err(Error::Shape(format!(
            "measurement shape {:?} invalid for input {:?}",
            measurement_shape, input_shape
        )));
    }
    let mut phis = Vec::with_capacity(input_shape.len());
    for (k, &m) in measurement_shape.iter().enumerate() {
        let eig = sym_eigen(&mode_gram(dataset, k)?)?;
        phis.push(eig.vectors.left_cols(m).transpose());
    }
    let sensing = SensingOperatorSet::new(phis)?;
    let synthesis = sensing.transposed();

    let mut total = 0.0;
    let mut kept = 0.0;
    for y in dataset {
        total += y.squared_norm();
        kept += sense(y, &sensing)?.squared_norm();
    }
    let core_energy = if total > 0.0 { kept / total } else { 1.0 };
    Ok(HosvdInit {
        sensing,
        synthesis,
        core_energy,
    })
}
