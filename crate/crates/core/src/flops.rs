//! Floating-point operation counts for the sensing, synthesis and task
//! network stages. One multiply-add counts as 2 flops; mode products are
//! applied in ascending mode order.

use crate::error::{Error, Result};
use crate::nn::{layer_output, ActShape, LayerSpec};

#[derive(Clone, Debug)]
pub struct FlopConfig {
    pub input_shape: Vec<usize>,
    pub measurement_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlopReport {
    pub mcs_flops: u64,
    pub fs_flops: u64,
    pub tasknet_flops: u64,
    /// Dense `Φ·vec(y)` sensing with the same number of measurements.
    pub vector_sense_flops: u64,
}

impl FlopReport {
    /// `(mcs + fs) / tasknet`; infinite when the network is empty.
    pub fn ratio(&self) -> f64 {
        (self.mcs_flops + self.fs_flops) as f64 / self.tasknet_flops as f64
    }
}

/// Flops of `from ×_1 A_1 … ×_K A_K` where `A_k` maps extent `from[k]` to `to[k]`.
pub fn separable_flops(from: &[usize], to: &[usize]) -> u64 {
    let mut cur: Vec<u64> = from.iter().map(|&e| e as u64).collect();
    let mut total = 0;
    for k in 0..cur.len() {
        let others: u64 = cur
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != k)
            .map(|(_, e)| *e)
            .product();
        total += 2 * to[k] as u64 * cur[k] * others;
        cur[k] = to[k] as u64;
    }
    total
}

pub fn layer_flops(spec: &LayerSpec, input: ActShape) -> Result<u64> {
    let out = layer_output(spec, input)?;
    Ok(match (spec, input, out) {
        (
            LayerSpec::Conv2d { kernel, .. },
            ActShape::Spatial { c: cin, .. },
            ActShape::Spatial { h, w, c: cout },
        ) => 2 * (cin * cout * kernel * kernel * h * w) as u64,
        (LayerSpec::Dense { out }, s, _) => 2 * (s.len() * out) as u64,
        _ => 0,
    })
}

pub fn count_flops(config: &FlopConfig) -> Result<FlopReport> {
    let input = &config.input_shape;
    let meas = &config.measurement_shape;
    if input.len() != meas.len() || input.iter().zip(meas).any(|(i, m)| *m == 0 || m > i) {
        return Err(Error::Shape(format!(
            "measurement {:?} invalid for input {:?}",
            meas, input
        )));
    }
    let mcs_flops = separable_flops(input, meas);
    let fs_flops = separable_flops(meas, input);
    let mut tasknet_flops = 0;
    if !config.layers.is_empty() {
        let [h, w, c] = input[..] else {
            return Err(Error::Shape("task network needs an (H, W, C) input".into()));
        };
        let mut shape = ActShape::Spatial { h, w, c };
        for spec in &config.layers {
            tasknet_flops += layer_flops(spec, shape)?;
            shape = layer_output(spec, shape)?;
        }
    }
    let m: u64 = meas.iter().map(|&e| e as u64).product();
    let i: u64 = input.iter().map(|&e| e as u64).product();
    Ok(FlopReport {
        mcs_flops,
        fs_flops,
        tasknet_flops,
        vector_sense_flops: 2 * m * i,
    })
}
