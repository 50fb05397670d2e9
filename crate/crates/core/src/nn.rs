//! Small all-convolutional classifier with hand-written reverse-mode
//! gradients. Activations are channel-last `(H, W, C)` tensors until global
//! average pooling flattens them to a channel vector.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::tensor::Tensor;

/// Architecture description of one layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Conv2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    GlobalAvgPool,
    Dense {
        out: usize,
    },
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv2d {
                out_channels,
                kernel,
                stride,
                padding,
            } => write!(f, "conv:{out_channels}:{kernel}:{stride}:{padding}"),
            LayerSpec::Relu => write!(f, "relu"),
            LayerSpec::GlobalAvgPool => write!(f, "gap"),
            LayerSpec::Dense { out } => write!(f, "dense:{out}"),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    /// `conv:<out>:<kernel>:<stride>:<padding>`, `relu`, `gap`, `dense:<out>`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |i: usize| -> Result<usize> {
            parts
                .get(i)
                .and_then(|p| p.parse().ok())
                .ok_or_else(|| Error::Argument(format!("malformed layer '{s}'")))
        };
        match parts[0] {
            "conv" if parts.len() == 5 => Ok(LayerSpec::Conv2d {
                out_channels: num(1)?,
                kernel: num(2)?,
                stride: num(3)?,
                padding: num(4)?,
            }),
            "relu" if parts.len() == 1 => Ok(LayerSpec::Relu),
            "gap" if parts.len() == 1 => Ok(LayerSpec::GlobalAvgPool),
            "dense" if parts.len() == 2 => Ok(LayerSpec::Dense { out: num(1)? }),
            other => Err(Error::Argument(format!("unknown layer kind '{other}'"))),
        }
    }
}

pub fn format_layers(layers: &[LayerSpec]) -> String {
    layers
        .iter()
        .map(LayerSpec::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

pub fn parse_layers(s: &str) -> Result<Vec<LayerSpec>> {
    s.split(',').map(str::parse).collect()
}

fn conv(out_channels: usize, kernel: usize, stride: usize, padding: usize) -> LayerSpec {
    LayerSpec::Conv2d {
        out_channels,
        kernel,
        stride,
        padding,
    }
}

/// Desk-scale stand-in for AllCNN: two 3x3 conv-relu layers, a strided
/// conv-relu, global average pooling and a dense classifier.
pub fn desk_network(classes: usize) -> Vec<LayerSpec> {
    vec![
        conv(16, 3, 1, 1),
        LayerSpec::Relu,
        conv(16, 3, 1, 1),
        LayerSpec::Relu,
        conv(24, 3, 2, 1),
        LayerSpec::Relu,
        LayerSpec::GlobalAvgPool,
        LayerSpec::Dense { out: classes },
    ]
}

/// AllCNN-C layer list for 32x32 inputs, used for operation counting.
pub fn all_cnn_c(classes: usize) -> Vec<LayerSpec> {
    vec![
        conv(96, 3, 1, 1),
        LayerSpec::Relu,
        conv(96, 3, 1, 1),
        LayerSpec::Relu,
        conv(96, 3, 2, 1),
        LayerSpec::Relu,
        conv(192, 3, 1, 1),
        LayerSpec::Relu,
        conv(192, 3, 1, 1),
        LayerSpec::Relu,
        conv(192, 3, 2, 1),
        LayerSpec::Relu,
        conv(192, 3, 1, 0),
        LayerSpec::Relu,
        conv(192, 1, 1, 0),
        LayerSpec::Relu,
        conv(classes, 1, 1, 0),
        LayerSpec::GlobalAvgPool,
    ]
}

/// Shape of an activation between layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActShape {
    Spatial { h: usize, w: usize, c: usize },
    Flat(usize),
}

impl ActShape {
    pub fn len(&self) -> usize {
        match *self {
            ActShape::Spatial { h, w, c } => h * w * c,
            ActShape::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Output shape of `spec` applied to `input`, or a shape-chain error.
pub fn layer_output(spec: &LayerSpec, input: ActShape) -> Result<ActShape> {
    match (spec, input) {
        (
            LayerSpec::Conv2d {
                out_channels,
                kernel,
                stride,
                padding,
            },
            ActShape::Spatial { h, w, .. },
        ) => {
            if *kernel == 0 || *stride == 0 || *out_channels == 0 {
                return Err(Error::Shape(format!("degenerate layer {spec}")));
            }
            if h + 2 * padding < *kernel || w + 2 * padding < *kernel {
                return Err(Error::Shape(format!("{spec} does not fit a {h}x{w} input")));
            }
            Ok(ActShape::Spatial {
                h: (h + 2 * padding - kernel) / stride + 1,
                w: (w + 2 * padding - kernel) / stride + 1,
                c: *out_channels,
            })
        }
        (LayerSpec::Relu, s) => Ok(s),
        (LayerSpec::GlobalAvgPool, ActShape::Spatial { c, .. }) => Ok(ActShape::Flat(c)),
        (LayerSpec::Dense { out }, _) if *out > 0 => Ok(ActShape::Flat(*out)),
        (spec, s) => Err(Error::Shape(format!("layer {spec} cannot consume {s:?}"))),
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Conv2d {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    /// `(kernel, kernel, in, out)`
    weight: Tensor,
    bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
struct Dense {
    inputs: usize,
    outputs: usize,
    /// `(in, out)`
    weight: Tensor,
    bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
enum Layer {
    Conv2d(Conv2d),
    Relu,
    GlobalAvgPool,
    Dense(Dense),
}

/// Classifier `f_N` mapping a `(H, W, C)` feature tensor to class scores.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskNetwork {
    input_shape: Vec<usize>,
    specs: Vec<LayerSpec>,
    layers: Vec<Layer>,
    /// Input shape of every layer.
    shapes: Vec<ActShape>,
    classes: usize,
}

/// Intermediate activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct NetCache {
    inputs: Vec<Vec<f64>>,
}

impl TaskNetwork {
    /// Builds the network with He-normal conv/dense weights and zero biases.
    pub fn new(
        input_shape: &[usize],
        specs: &[LayerSpec],
        classes: usize,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        let shapes = Self::shape_chain(input_shape, specs, classes)?;
        let mut layers = Vec::with_capacity(specs.len());
        for (spec, shape) in specs.iter().zip(&shapes) {
            let layer = match (spec, *shape) {
                (
                    LayerSpec::Conv2d {
                        out_channels,
                        kernel,
                        stride,
                        padding,
                    },
                    ActShape::Spatial { c, .. },
                ) => {
                    let fan_in = (kernel * kernel * c) as f64;
                    let std = (2.0 / fan_in).sqrt();
                    let wshape = [*kernel, *kernel, c, *out_channels];
                    Layer::Conv2d(Conv2d {
                        in_channels: c,
                        out_channels: *out_channels,
                        kernel: *kernel,
                        stride: *stride,
                        padding: *padding,
                        weight: Tensor::from_fn(&wshape, |_| rng.normal(0.0, std))?,
                        bias: Tensor::zeros(&[*out_channels])?,
                    })
                }
                (LayerSpec::Dense { out }, s) => {
                    let inputs = s.len();
                    let std = (2.0 / inputs as f64).sqrt();
                    Layer::Dense(Dense {
                        inputs,
                        outputs: *out,
                        weight: Tensor::from_fn(&[inputs, *out], |_| rng.normal(0.0, std))?,
                        bias: Tensor::zeros(&[*out])?,
                    })
                }
                (LayerSpec::Relu, _) => Layer::Relu,
                (LayerSpec::GlobalAvgPool, _) => Layer::GlobalAvgPool,
                (spec, s) => {
                    return Err(Error::Shape(format!("layer {spec} cannot consume {s:?}")))
                }
            };
            layers.push(layer);
        }
        Ok(Self {
            input_shape: input_shape.to_vec(),
            specs: specs.to_vec(),
            layers,
            shapes,
            classes,
        })
    }

    /// Validates the layer chain and returns the input shape of each layer.
    pub fn shape_chain(
        input_shape: &[usize],
        specs: &[LayerSpec],
        classes: usize,
    ) -> Result<Vec<ActShape>> {
        let [h, w, c] = match input_shape {
            &[h, w, c] if h > 0 && w > 0 && c > 0 => [h, w, c],
            _ => {
                return Err(Error::Shape(format!(
                    "task network needs an (H, W, C) input, got {:?}",
                    input_shape
                )))
            }
        };
        let mut shape = ActShape::Spatial { h, w, c };
        let mut shapes = Vec::with_capacity(specs.len());
        for spec in specs {
            shapes.push(shape);
            shape = layer_output(spec, shape)?;
        }
        if shape != ActShape::Flat(classes) {
            return Err(Error::Shape(format!(
                "network output {shape:?} does not match {classes} classes"
            )));
        }
        Ok(shapes)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// `(name, shape)` of every parameter tensor in canonical order.
    pub fn param_info(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv2d(c) => {
                    out.push((format!("net.{i}.weight"), c.weight.shape().to_vec()));
                    out.push((format!("net.{i}.bias"), c.bias.shape().to_vec()));
                }
                Layer::Dense(d) => {
                    out.push((format!("net.{i}.weight"), d.weight.shape().to_vec()));
                    out.push((format!("net.{i}.bias"), d.bias.shape().to_vec()));
                }
                Layer::Relu | Layer::GlobalAvgPool => {}
            }
        }
        out
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv2d(c) => out.extend([&c.weight, &c.bias]),
                Layer::Dense(d) => out.extend([&d.weight, &d.bias]),
                Layer::Relu | Layer::GlobalAvgPool => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv2d(c) => out.extend([&mut c.weight, &mut c.bias]),
                Layer::Dense(d) => out.extend([&mut d.weight, &mut d.bias]),
                Layer::Relu | Layer::GlobalAvgPool => {}
            }
        }
        out
    }

    /// Class scores for one `(H, W, C)` input plus the cache for [`backward`].
    ///
    /// [`backward`]: TaskNetwork::backward
    pub fn forward(&self, x: &Tensor) -> Result<(Vec<f64>, NetCache)> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(Error::Shape(format!(
                "network input {:?} does not match {:?}",
                x.shape(),
                self.input_shape
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut act = x.data().to_vec();
        for (layer, shape) in self.layers.iter().zip(&self.shapes) {
            let next = match layer {
                Layer::Conv2d(c) => c.forward(&act, *shape),
                Layer::Relu => act.iter().map(|&v| v.max(0.0)).collect(),
                Layer::GlobalAvgPool => gap_forward(&act, *shape),
                Layer::Dense(d) => d.forward(&act),
            };
            inputs.push(std::mem::replace(&mut act, next));
        }
        Ok((act, NetCache { inputs }))
    }

    /// Gradient with respect to the network input and every parameter tensor
    /// (canonical order), given the gradient of the loss wrt the scores.
    pub fn backward(&self, cache: &NetCache, dscores: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        if cache.inputs.len() != self.layers.len() || dscores.len() != self.classes {
            return Err(Error::Argument("stale or mismatched network cache".into()));
        }
        let mut grads: Vec<Vec<f64>> = Vec::new();
        let mut delta = dscores.to_vec();
        for ((layer, shape), input) in self
            .layers
            .iter()
            .zip(&self.shapes)
            .zip(&cache.inputs)
            .rev()
        {
            delta = match layer {
                Layer::Conv2d(c) => {
                    let (dx, dw, db) = c.backward(input, *shape, &delta);
                    grads.push(db);
                    grads.push(dw);
                    dx
                }
                Layer::Relu => input
                    .iter()
                    .zip(&delta)
                    .map(|(&x, &d)| if x > 0.0 { d } else { 0.0 })
                    .collect(),
                Layer::GlobalAvgPool => gap_backward(*shape, &delta),
                Layer::Dense(d) => {
                    let (dx, dw, db) = d.backward(input, &delta);
                    grads.push(db);
                    grads.push(dw);
                    dx
                }
            };
        }
        grads.reverse();
        Ok((delta, grads))
    }
}

impl Conv2d {
    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding - self.kernel) / self.stride + 1,
            (w + 2 * self.padding - self.kernel) / self.stride + 1,
        )
    }

    /// Input pixel feeding output `(oy, ox)` through tap `(dy, dx)`, if inside.
    #[inline]
    fn tap(&self, o: usize, d: usize, extent: usize) -> Option<usize> {
        let i = (o * self.stride + d) as isize - self.padding as isize;
        (i >= 0 && (i as usize) < extent).then_some(i as usize)
    }

    fn forward(&self, x: &[f64], shape: ActShape) -> Vec<f64> {
        let ActShape::Spatial { h, w, .. } = shape else {
            unreachable!("checked by shape_chain")
        };
        let (ho, wo) = self.out_hw(h, w);
        let (cin, cout, k) = (self.in_channels, self.out_channels, self.kernel);
        let wt = self.weight.data();
        let mut out = vec![0.0; ho * wo * cout];
        for oy in 0..ho {
            for ox in 0..wo {
                let dst = &mut out[(oy * wo + ox) * cout..(oy * wo + ox + 1) * cout];
                dst.copy_from_slice(self.bias.data());
                for dy in 0..k {
                    let Some(iy) = self.tap(oy, dy, h) else { continue };
                    for dx in 0..k {
                        let Some(ix) = self.tap(ox, dx, w) else { continue };
                        let px = &x[(iy * w + ix) * cin..(iy * w + ix + 1) * cin];
                        let base = (dy * k + dx) * cin;
                        for (ci, &v) in px.iter().enumerate() {
                            if v == 0.0 {
                                continue;
                            }
                            let row = &wt[(base + ci) * cout..(base + ci + 1) * cout];
                            for (d, &wv) in dst.iter_mut().zip(row) {
                                *d += v * wv;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn backward(&self, x: &[f64], shape: ActShape, dout: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let ActShape::Spatial { h, w, .. } = shape else {
            unreachable!("checked by shape_chain")
        };
        let (ho, wo) = self.out_hw(h, w);
        let (cin, cout, k) = (self.in_channels, self.out_channels, self.kernel);
        let wt = self.weight.data();
        let mut dx = vec![0.0; x.len()];
        let mut dw = vec![0.0; wt.len()];
        let mut db = vec![0.0; cout];
        for oy in 0..ho {
            for ox in 0..wo {
                let g = &dout[(oy * wo + ox) * cout..(oy * wo + ox + 1) * cout];
                for (b, &gv) in db.iter_mut().zip(g) {
                    *b += gv;
                }
                for dy in 0..k {
                    let Some(iy) = self.tap(oy, dy, h) else { continue };
                    for dx_ in 0..k {
                        let Some(ix) = self.tap(ox, dx_, w) else { continue };
                        let pix = (iy * w + ix) * cin;
                        let base = (dy * k + dx_) * cin;
                        for ci in 0..cin {
                            let row = (base + ci) * cout;
                            let v = x[pix + ci];
                            let wrow = &wt[row..row + cout];
                            let dwrow = &mut dw[row..row + cout];
                            let mut acc = 0.0;
                            for ((dwv, &wv), &gv) in dwrow.iter_mut().zip(wrow).zip(g) {
                                *dwv += v * gv;
                                acc += wv * gv;
                            }
                            dx[pix + ci] += acc;
                        }
                    }
                }
            }
        }
        (dx, dw, db)
    }
}

impl Dense {
    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.data().to_vec();
        let wt = self.weight.data();
        for (i, &v) in x.iter().enumerate() {
            for (o, &wv) in out.iter_mut().zip(&wt[i * self.outputs..(i + 1) * self.outputs]) {
                *o += v * wv;
            }
        }
        out
    }

    fn backward(&self, x: &[f64], dout: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let wt = self.weight.data();
        let mut dw = vec![0.0; wt.len()];
        let mut dx = vec![0.0; self.inputs];
        for i in 0..self.inputs {
            let row = &wt[i * self.outputs..(i + 1) * self.outputs];
            let drow = &mut dw[i * self.outputs..(i + 1) * self.outputs];
            let mut acc = 0.0;
            for ((dwv, &wv), &g) in drow.iter_mut().zip(row).zip(dout) {
                *dwv = x[i] * g;
                acc += wv * g;
            }
            dx[i] = acc;
        }
        (dx, dw, dout.to_vec())
    }
}

fn gap_forward(x: &[f64], shape: ActShape) -> Vec<f64> {
    let ActShape::Spatial { h, w, c } = shape else {
        unreachable!("checked by shape_chain")
    };
    let mut out = vec![0.0; c];
    for px in x.chunks_exact(c) {
        for (o, &v) in out.iter_mut().zip(px) {
            *o += v;
        }
    }
    let n = (h * w) as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

fn gap_backward(shape: ActShape, dout: &[f64]) -> Vec<f64> {
    let ActShape::Spatial { h, w, c } = shape else {
        unreachable!("checked by shape_chain")
    };
    let n = (h * w) as f64;
    let scaled: Vec<f64> = dout.iter().map(|d| d / n).collect();
    let mut dx = Vec::with_capacity(h * w * c);
    for _ in 0..h * w {
        dx.extend_from_slice(&scaled);
    }
    dx
}

/// Numerically stable softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of `scores` against `label`, and its gradient wrt the scores.
pub fn softmax_cross_entropy(scores: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    let loss = lse - scores[label];
    let mut grad = softmax(scores);
    grad[label] -= 1.0;
    (loss, grad)
}

/// Index of the largest score, first one on ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}
