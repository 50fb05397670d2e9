//! The three-stage model: separable sensing, feature synthesis and the task
//! network, with reverse-mode gradients for every stage.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mask::{materialize_mask, MaskSpec};
use crate::mcs::{hosvd_init, sense, synthesize, HosvdInit, SensingOperatorSet, SynthesisOperatorSet};
use crate::nn::{softmax_cross_entropy, LayerSpec, NetCache, TaskNetwork};
use crate::rng::{streams, StreamRng};
use crate::tensor::{
    elementwise_mul, mode_cross, mode_product, subtensor_prefix, zero_pad_to, Matrix, Tensor,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainingMode {
    Init,
    Single,
    Adaptive,
    Baseline,
    Finetuned,
}

impl fmt::Display for TrainingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainingMode::Init => "init",
            TrainingMode::Single => "single",
            TrainingMode::Adaptive => "adaptive",
            TrainingMode::Baseline => "baseline",
            TrainingMode::Finetuned => "finetuned",
        })
    }
}

impl FromStr for TrainingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "init" => TrainingMode::Init,
            "single" => TrainingMode::Single,
            "adaptive" => TrainingMode::Adaptive,
            "baseline" => TrainingMode::Baseline,
            "finetuned" => TrainingMode::Finetuned,
            other => return Err(Error::Argument(format!("unknown training mode '{other}'"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelMeta {
    pub input_shape: Vec<usize>,
    pub measurement_shape: Vec<usize>,
    pub class_count: usize,
    pub seed: u64,
    pub mode: TrainingMode,
    pub mask_spec: Option<MaskSpec>,
}

/// Sensing operators, synthesis operators and task network.
#[derive(Clone, Debug, PartialEq)]
pub struct MclModel {
    pub meta: ModelMeta,
    pub sensing: SensingOperatorSet,
    pub synthesis: SynthesisOperatorSet,
    pub network: TaskNetwork,
}

/// How the measurement is reduced before synthesis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeasurementPath<'a> {
    /// The full measurement.
    Full,
    /// Hadamard product with the prefix mask of the given dims.
    Masked(&'a [usize]),
    /// Prefix sub-tensor of the given dims, zero-padded back to full size.
    Deployed(&'a [usize]),
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Inputs to each sensing mode product; the last entry is the measurement.
    sense_chain: Vec<Tensor>,
    /// `Some` when a mask was applied.
    mask: Option<Tensor>,
    /// Inputs to each synthesis mode product.
    synth_chain: Vec<Tensor>,
    net: NetCache,
}

/// Per-parameter gradients in canonical order.
pub type Gradients = Vec<Vec<f64>>;

/// Description of one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub id: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

impl MclModel {
    /// Validates that the stages chain: input → measurement → input shape → scores.
    pub fn new(
        meta: ModelMeta,
        sensing: SensingOperatorSet,
        synthesis: SynthesisOperatorSet,
        network: TaskNetwork,
    ) -> Result<Self> {
        if sensing.input_shape() != meta.input_shape
            || sensing.measurement_shape() != meta.measurement_shape
        {
            return Err(Error::Shape(format!(
                "sensing maps {:?} -> {:?}, model declares {:?} -> {:?}",
                sensing.input_shape(),
                sensing.measurement_shape(),
                meta.input_shape,
                meta.measurement_shape
            )));
        }
        if synthesis.measurement_shape() != meta.measurement_shape
            || synthesis.input_shape() != meta.input_shape
        {
            return Err(Error::Shape("synthesis operators do not invert the sensing shapes".into()));
        }
        if network.input_shape() != meta.input_shape.as_slice() || network.classes() != meta.class_count {
            return Err(Error::Shape("task network does not match model shapes".into()));
        }
        if let Some(spec) = &meta.mask_spec {
            if spec.max_dims().as_slice() != meta.measurement_shape.as_slice() {
                return Err(Error::Dims(format!(
                    "mask maximum {} differs from measurement shape {:?}",
                    spec.max_dims(),
                    meta.measurement_shape
                )));
            }
        }
        Ok(Self {
            meta,
            sensing,
            synthesis,
            network,
        })
    }

    /// HOSVD operators for `measurement_shape` plus the given network.
    pub fn from_hosvd(
        init: HosvdInit,
        network: TaskNetwork,
        seed: u64,
    ) -> Result<Self> {
        let meta = ModelMeta {
            input_shape: init.sensing.input_shape(),
            measurement_shape: init.sensing.measurement_shape(),
            class_count: network.classes(),
            seed,
            mode: TrainingMode::Init,
            mask_spec: None,
        };
        Self::new(meta, init.sensing, init.synthesis, network)
    }

    /// HOSVD initialization on `signals` with a freshly initialized network.
    pub fn init(
        signals: &[Tensor],
        measurement_shape: &[usize],
        layers: &[LayerSpec],
        classes: usize,
        seed: u64,
    ) -> Result<(Self, f64)> {
        let init = hosvd_init(signals, measurement_shape)?;
        let energy = init.core_energy;
        let mut rng = StreamRng::new(seed, streams::INIT);
        let net = TaskNetwork::new(&init.sensing.input_shape(), layers, classes, &mut rng)?;
        Ok((Self::from_hosvd(init, net, seed)?, energy))
    }

    /// Random Gaussian operators; used only by tests.
    pub fn random(
        input_shape: &[usize],
        measurement_shape: &[usize],
        layers: &[LayerSpec],
        classes: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = StreamRng::new(seed, streams::INIT);
        let phis = input_shape
            .iter()
            .zip(measurement_shape)
            .map(|(&i, &m)| {
                let std = 1.0 / (i as f64).sqrt();
                Matrix::from_fn(m, i, |_, _| rng.normal(0.0, std))
            })
            .collect();
        let thetas = input_shape
            .iter()
            .zip(measurement_shape)
            .map(|(&i, &m)| {
                let std = 1.0 / (m as f64).sqrt();
                Matrix::from_fn(i, m, |_, _| rng.normal(0.0, std))
            })
            .collect();
        let net = TaskNetwork::new(input_shape, layers, classes, &mut rng)?;
        let meta = ModelMeta {
            input_shape: input_shape.to_vec(),
            measurement_shape: measurement_shape.to_vec(),
            class_count: classes,
            seed,
            mode: TrainingMode::Init,
            mask_spec: None,
        };
        Self::new(
            meta,
            SensingOperatorSet::new(phis)?,
            SynthesisOperatorSet::new(thetas)?,
            net,
        )
    }

    pub fn rank(&self) -> usize {
        self.meta.input_shape.len()
    }

    /// Canonical parameter order: `phi.k`, `theta.k`, then network tensors.
    pub fn parameters(&self) -> Vec<Parameter> {
        let mut out = Vec::new();
        for (k, p) in self.sensing.phis().iter().enumerate() {
            out.push(Parameter {
                id: format!("phi.{k}"),
                shape: vec![p.rows(), p.cols()],
                trainable: true,
            });
        }
        for (k, t) in self.synthesis.thetas().iter().enumerate() {
            out.push(Parameter {
                id: format!("theta.{k}"),
                shape: vec![t.rows(), t.cols()],
                trainable: true,
            });
        }
        for (id, shape) in self.network.param_info() {
            out.push(Parameter {
                id,
                shape,
                trainable: true,
            });
        }
        out
    }

    pub fn param_values(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        out.extend(self.sensing.phis().iter().map(Matrix::data));
        out.extend(self.synthesis.thetas().iter().map(Matrix::data));
        out.extend(self.network.params().into_iter().map(Tensor::data));
        out
    }

    pub fn param_values_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        out.extend(self.sensing.phis_mut().iter_mut().map(Matrix::data_mut));
        out.extend(self.synthesis.thetas_mut().iter_mut().map(Matrix::data_mut));
        out.extend(self.network.params_mut().into_iter().map(Tensor::data_mut));
        out
    }

    fn check_dims(&self, dims: &[usize]) -> Result<()> {
        let m = &self.meta.measurement_shape;
        if dims.len() != m.len() || dims.iter().zip(m).any(|(d, e)| *d == 0 || d > e) {
            return Err(Error::Dims(format!(
                "dims {:?} outside measurement shape {:?}",
                dims, m
            )));
        }
        Ok(())
    }

    /// Client side: full measurement reduced to its leading `dims` block.
    pub fn measure(&self, y: &Tensor, dims: &[usize]) -> Result<Tensor> {
        self.check_dims(dims)?;
        subtensor_prefix(&sense(y, &self.sensing)?, dims)
    }

    /// Server side: zero-pads a received sub-tensor, synthesizes features and
    /// returns class scores.
    pub fn predict_received(&self, z_bar: &Tensor) -> Result<Vec<f64>> {
        self.check_dims(z_bar.shape())?;
        let z = zero_pad_to(z_bar, &self.meta.measurement_shape)?;
        let t = synthesize(&z, &self.synthesis)?;
        Ok(self.network.forward(&t)?.0)
    }

    /// Class scores for one signal along `path`, with the backward cache.
    pub fn forward(&self, y: &Tensor, path: MeasurementPath<'_>) -> Result<(Vec<f64>, ForwardCache)> {
        if y.shape() != self.meta.input_shape.as_slice() {
            return Err(Error::Shape(format!(
                "input {:?} does not match model input {:?}",
                y.shape(),
                self.meta.input_shape
            )));
        }
        let mut sense_chain = Vec::with_capacity(self.rank() + 1);
        sense_chain.push(y.clone());
        for (k, phi) in self.sensing.phis().iter().enumerate() {
            let next = mode_product(sense_chain.last().expect("non-empty"), phi, k)?;
            sense_chain.push(next);
        }
        let z = sense_chain.last().expect("non-empty");
        let (reduced, mask) = match path {
            MeasurementPath::Full => (z.clone(), None),
            MeasurementPath::Masked(dims) => {
                self.check_dims(dims)?;
                let b = materialize_mask(dims, &self.meta.measurement_shape)?;
                (elementwise_mul(z, &b)?, Some(b))
            }
            MeasurementPath::Deployed(dims) => {
                self.check_dims(dims)?;
                let z_bar = subtensor_prefix(z, dims)?;
                let b = materialize_mask(dims, &self.meta.measurement_shape)?;
                (zero_pad_to(&z_bar, &self.meta.measurement_shape)?, Some(b))
            }
        };
        let mut synth_chain = Vec::with_capacity(self.rank() + 1);
        synth_chain.push(reduced);
        for (k, theta) in self.synthesis.thetas().iter().enumerate() {
            let next = mode_product(synth_chain.last().expect("non-empty"), theta, k)?;
            synth_chain.push(next);
        }
        let features = synth_chain.pop().expect("non-empty");
        let (scores, net) = self.network.forward(&features)?;
        sense_chain.pop();
        Ok((
            scores,
            ForwardCache {
                sense_chain,
                mask,
                synth_chain,
                net,
            },
        ))
    }

    /// Gradients of the loss for every parameter, given `dscores`.
    /// Sensing gradients are skipped (left empty) when `with_sensing` is false.
    pub fn backward(&self, cache: &ForwardCache, dscores: &[f64], with_sensing: bool) -> Result<Gradients> {
        let k_modes = self.rank();
        if cache.sense_chain.len() != k_modes || cache.synth_chain.len() != k_modes {
            return Err(Error::Argument("stale or mismatched forward cache".into()));
        }
        let (dfeat, net_grads) = self.network.backward(&cache.net, dscores)?;
        let mut delta = Tensor::new(self.meta.input_shape.clone(), dfeat)?;

        let mut theta_grads = vec![Vec::new(); k_modes];
        for k in (0..k_modes).rev() {
            let theta = &self.synthesis.thetas()[k];
            let input = &cache.synth_chain[k];
            theta_grads[k] = mode_cross(&delta, input, k)?.data().to_vec();
            if k > 0 || with_sensing {
                delta = mode_product(&delta, &theta.transpose(), k)?;
            }
        }

        let mut phi_grads = vec![Vec::new(); k_modes];
        if with_sensing {
            if let Some(b) = &cache.mask {
                delta = elementwise_mul(&delta, b)?;
            }
            for k in (0..k_modes).rev() {
                let phi = &self.sensing.phis()[k];
                let input = &cache.sense_chain[k];
                phi_grads[k] = mode_cross(&delta, input, k)?.data().to_vec();
                if k > 0 {
                    delta = mode_product(&delta, &phi.transpose(), k)?;
                }
            }
        }

        let mut grads = phi_grads;
        grads.extend(theta_grads);
        grads.extend(net_grads);
        Ok(grads)
    }

    /// Loss, correctness and gradients for one labelled sample.
    pub fn sample_gradients(
        &self,
        y: &Tensor,
        label: usize,
        path: MeasurementPath<'_>,
        with_sensing: bool,
    ) -> Result<(f64, bool, Gradients)> {
        if label >= self.meta.class_count {
            return Err(Error::Argument(format!("label {label} out of range")));
        }
        let (scores, cache) = self.forward(y, path)?;
        let (loss, dscores) = softmax_cross_entropy(&scores, label);
        let correct = crate::nn::argmax(&scores) == label;
        let grads = self.backward(&cache, &dscores, with_sensing)?;
        Ok((loss, correct, grads))
    }
}

/// Rounds every element to the nearest `f32`, as the wire format does.
pub fn quantize_f32(t: &Tensor) -> Tensor {
    Tensor::new(
        t.shape().to_vec(),
        t.data().iter().map(|&v| v as f32 as f64).collect(),
    )
    .expect("shape unchanged")
}
