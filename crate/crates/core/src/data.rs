//! Labelled datasets: CIFAR-style binary records, a synthetic generator,
//! augmentation and stratified splitting.
//!
//! Samples are channel-last `(H, W, C)` tensors with values in `[0, 1]`.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mcs::synthesize;
use crate::mcs::SynthesisOperatorSet;
use crate::rng::StreamRng;
use crate::tensor::{Matrix, Tensor};

pub const CIFAR_SHAPE: [usize; 3] = [32, 32, 3];
pub const CIFAR_RECORD_BYTES: usize = 3073;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub samples: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub split: Split,
    pub provenance: String,
}

impl LabeledDataset {
    pub fn new(
        samples: Vec<Tensor>,
        labels: Vec<usize>,
        class_count: usize,
        split: Split,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(Error::Argument(format!(
                "{} samples but {} labels",
                samples.len(),
                labels.len()
            )));
        }
        if let Some(first) = samples.first() {
            if samples.iter().any(|s| s.shape() != first.shape()) {
                return Err(Error::Shape("samples differ in shape".into()));
            }
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Format(format!("label {l} >= class count {class_count}")));
        }
        Ok(Self {
            samples,
            labels,
            class_count,
            split,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn input_shape(&self) -> Option<&[usize]> {
        self.samples.first().map(Tensor::shape)
    }

    /// Sub-dataset of the given indices, in that order.
    pub fn select(&self, indices: &[usize], split: Split) -> LabeledDataset {
        LabeledDataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            split,
            provenance: self.provenance.clone(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Fraction of the most frequent class.
    pub fn majority_fraction(&self) -> f64 {
        let max = self.class_counts().into_iter().max().unwrap_or(0);
        max as f64 / self.len().max(1) as f64
    }
}

/// Decodes channel-planar byte records (`1 + H·W·C` bytes each).
pub fn decode_records(
    bytes: &[u8],
    shape: &[usize; 3],
    class_count: usize,
    split: Split,
    provenance: &str,
) -> Result<LabeledDataset> {
    let [h, w, c] = *shape;
    let plane = h * w;
    let record = 1 + plane * c;
    if bytes.len() % record != 0 {
        return Err(Error::Format(format!(
            "file length {} is not a multiple of the {record}-byte record size",
            bytes.len()
        )));
    }
    let mut samples = Vec::with_capacity(bytes.len() / record);
    let mut labels = Vec::with_capacity(bytes.len() / record);
    for rec in bytes.chunks_exact(record) {
        let label = rec[0] as usize;
        if label >= class_count {
            return Err(Error::Format(format!(
                "label byte {label} >= class count {class_count}"
            )));
        }
        let pixels = &rec[1..];
        let t = Tensor::from_fn(&[h, w, c], |i| {
            pixels[i[2] * plane + i[0] * w + i[1]] as f64 / 255.0
        })?;
        samples.push(t);
        labels.push(label);
    }
    LabeledDataset::new(samples, labels, class_count, split, provenance)
}

/// Encodes samples as channel-planar byte records, rounding `v·255`.
pub fn encode_records(dataset: &LabeledDataset) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for (t, &label) in dataset.samples.iter().zip(&dataset.labels) {
        let &[h, w, c] = t.shape() else {
            return Err(Error::Shape("records need (H, W, C) samples".into()));
        };
        if label > u8::MAX as usize {
            return Err(Error::Format(format!("label {label} does not fit a byte")));
        }
        out.push(label as u8);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let v = t.get(&[y, x, ch]).clamp(0.0, 1.0);
                    out.push((v * 255.0).round() as u8);
                }
            }
        }
    }
    Ok(out)
}

/// Reads a CIFAR-10/100 binary batch file.
pub fn load_cifar_binary(path: &Path, split: Split, class_count: usize) -> Result<LabeledDataset> {
    let bytes = fs::read(path)?;
    decode_records(
        &bytes,
        &CIFAR_SHAPE,
        class_count,
        split,
        &format!("cifar-binary:{}", path.display()),
    )
}

pub fn write_records(path: &Path, dataset: &LabeledDataset) -> Result<()> {
    fs::write(path, encode_records(dataset)?)?;
    Ok(())
}

/// Parameters of the synthetic class-template generator.
#[derive(Clone, Debug)]
pub struct SyntheticConfig {
    pub class_count: usize,
    pub samples_per_class: usize,
    pub input_shape: [usize; 3],
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn new(class_count: usize, samples_per_class: usize, input_shape: [usize; 3], seed: u64) -> Self {
        Self {
            class_count,
            samples_per_class,
            input_shape,
            noise: 0.1,
            seed,
        }
    }
}

/// Smooth random factor: a few low-frequency cosines.
fn smooth_factor(len: usize, rng: &mut StreamRng) -> Vec<f64> {
    let mut v = vec![0.0; len];
    for freq in 1..=3 {
        let amp = rng.normal(0.0, 1.0) / freq as f64;
        let phase = rng.uniform(0.0, std::f64::consts::TAU);
        for (i, x) in v.iter_mut().enumerate() {
            let t = (i as f64 + 0.5) / len as f64;
            *x += amp * (std::f64::consts::PI * freq as f64 * t + phase).cos();
        }
    }
    v
}

/// Class templates: a random rank-(2,2,1) Tucker tensor per class, rescaled
/// into `[0.15, 0.85]`.
pub fn synthetic_templates(cfg: &SyntheticConfig) -> Result<Vec<Tensor>> {
    let [h, w, c] = cfg.input_shape;
    let mut rng = StreamRng::new(cfg.seed, crate::rng::streams::DATA);
    (0..cfg.class_count)
        .map(|_| {
            let core = Tensor::from_fn(&[2, 2, 1], |_| rng.normal(0.0, 1.0))?;
            let u1: Vec<Vec<f64>> = (0..2).map(|_| smooth_factor(h, &mut rng)).collect();
            let u2: Vec<Vec<f64>> = (0..2).map(|_| smooth_factor(w, &mut rng)).collect();
            let u3: Vec<f64> = (0..c).map(|_| rng.uniform(0.2, 1.0)).collect();
            let ops = SynthesisOperatorSet::new(vec![
                Matrix::from_fn(h, 2, |i, j| u1[j][i]),
                Matrix::from_fn(w, 2, |i, j| u2[j][i]),
                Matrix::from_fn(c, 1, |i, _| u3[i]),
            ])?;
            let raw = synthesize(&core, &ops)?;
            let lo = raw.data().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = raw.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let span = (hi - lo).max(1e-12);
            Tensor::new(
                raw.shape().to_vec(),
                raw.data().iter().map(|v| 0.15 + 0.7 * (v - lo) / span).collect(),
            )
        })
        .collect()
}

/// Class-template dataset with uniform noise in `[-noise, noise]`, clipped to
/// `[0, 1]`. Samples are ordered class by class.
pub fn make_synthetic(cfg: &SyntheticConfig) -> Result<LabeledDataset> {
    if cfg.class_count < 2 {
        return Err(Error::Argument("need at least two classes".into()));
    }
    let templates = synthetic_templates(cfg)?;
    let mut rng = StreamRng::new(cfg.seed, crate::rng::streams::DATA).split(1_000_003);
    let mut samples = Vec::with_capacity(cfg.class_count * cfg.samples_per_class);
    let mut labels = Vec::with_capacity(samples.capacity());
    for (class, tpl) in templates.iter().enumerate() {
        for _ in 0..cfg.samples_per_class {
            let data = tpl
                .data()
                .iter()
                .map(|v| (v + rng.uniform(-cfg.noise, cfg.noise)).clamp(0.0, 1.0))
                .collect();
            samples.push(Tensor::new(tpl.shape().to_vec(), data)?);
            labels.push(class);
        }
    }
    LabeledDataset::new(
        samples,
        labels,
        cfg.class_count,
        Split::Train,
        format!(
            "synthetic:classes={},per_class={},shape={:?},noise={},seed={}",
            cfg.class_count, cfg.samples_per_class, cfg.input_shape, cfg.noise, cfg.seed
        ),
    )
}

/// Per-sample augmentation decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct AugmentParams {
    pub flip: bool,
    pub shift_y: i64,
    pub shift_x: i64,
}

/// Maximum shift for a given height: 4 pixels at 32, scaled, at least 1.
pub fn max_shift(height: usize) -> i64 {
    ((4.0 * height as f64 / 32.0).round() as i64).max(1)
}

pub fn draw_augment(height: usize, rng: &mut StreamRng) -> AugmentParams {
    let s = max_shift(height);
    AugmentParams {
        flip: rng.bernoulli(0.5),
        shift_y: rng.int_signed_inclusive(-s, s),
        shift_x: rng.int_signed_inclusive(-s, s),
    }
}

/// Horizontal flip (reverses the width axis), then translation by
/// `(shift_y, shift_x)` with zero fill.
pub fn apply_augment(t: &Tensor, p: AugmentParams) -> Result<Tensor> {
    let &[h, w, c] = t.shape() else {
        return Err(Error::Shape("augmentation needs (H, W, C) samples".into()));
    };
    if !p.flip && p.shift_x == 0 && p.shift_y == 0 {
        return Ok(t.clone());
    }
    let src = t.data();
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        let sy = y as i64 - p.shift_y;
        if sy < 0 || sy >= h as i64 {
            continue;
        }
        for x in 0..w {
            let sx = x as i64 - p.shift_x;
            if sx < 0 || sx >= w as i64 {
                continue;
            }
            let sx = if p.flip { w - 1 - sx as usize } else { sx as usize };
            let from = (sy as usize * w + sx) * c;
            out[(y * w + x) * c..(y * w + x + 1) * c].copy_from_slice(&src[from..from + c]);
        }
    }
    Tensor::new(t.shape().to_vec(), out)
}

/// Independently flips and shifts every sample of a batch.
pub fn augment(batch: &[Tensor], rng: &mut StreamRng) -> Result<Vec<Tensor>> {
    batch
        .iter()
        .map(|t| {
            let h = *t.shape().first().unwrap_or(&1);
            apply_augment(t, draw_augment(h, rng))
        })
        .collect()
}

/// Class-stratified split into one dataset per fraction. Every class is
/// shuffled with the seed and cut consecutively; split sizes are
/// `floor(f·N)` (with rounding leftovers distributed when the fractions
/// sum to one) and per-class counts stay within one of proportional.
pub fn split(dataset: &LabeledDataset, fractions: &[f64], seed: u64) -> Result<Vec<LabeledDataset>> {
    if fractions.is_empty() || fractions.iter().any(|&f| !(f > 0.0)) {
        return Err(Error::Argument("split fractions must be positive".into()));
    }
    let sum: f64 = fractions.iter().sum();
    if sum > 1.0 + 1e-9 {
        return Err(Error::Argument(format!("split fractions sum to {sum} > 1")));
    }
    let n = dataset.len();
    let classes = dataset.class_count;
    let by_class: Vec<Vec<usize>> = (0..classes)
        .map(|c| (0..n).filter(|&i| dataset.labels[i] == c).collect())
        .collect();

    // Split totals.
    let mut totals: Vec<usize> = fractions
        .iter()
        .map(|f| (f * n as f64 + 1e-9).floor() as usize)
        .collect();
    if (sum - 1.0).abs() <= 1e-9 {
        let mut deficit = n - totals.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..fractions.len()).collect();
        let rem = |j: usize| fractions[j] * n as f64 - totals[j] as f64;
        order.sort_by(|&a, &b| rem(b).total_cmp(&rem(a)).then(a.cmp(&b)));
        for &j in order.iter().cycle() {
            if deficit == 0 {
                break;
            }
            totals[j] += 1;
            deficit -= 1;
        }
    }

    // Per-class allocation: floors, then +1 by largest remainder.
    let mut alloc: Vec<Vec<usize>> = by_class
        .iter()
        .map(|idx| {
            fractions
                .iter()
                .map(|f| (f * idx.len() as f64 + 1e-9).floor() as usize)
                .collect()
        })
        .collect();
    for (j, f) in fractions.iter().enumerate() {
        let assigned: usize = alloc.iter().map(|a| a[j]).sum();
        let mut extra = totals[j].saturating_sub(assigned);
        let rem: Vec<f64> = (0..classes)
            .map(|c| f * by_class[c].len() as f64 - alloc[c][j] as f64)
            .collect();
        let mut order: Vec<usize> = (0..classes).collect();
        order.sort_by(|&a, &b| rem[b].total_cmp(&rem[a]).then(a.cmp(&b)));
        for c in order {
            if extra == 0 {
                break;
            }
            let used: usize = alloc[c].iter().sum();
            if used < by_class[c].len() && rem[c] > 1e-9 {
                alloc[c][j] += 1;
                extra -= 1;
            }
        }
    }

    let mut rng = StreamRng::new(seed, crate::rng::streams::SPLIT);
    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); fractions.len()];
    for (c, idx) in by_class.iter().enumerate() {
        let perm = rng.permutation(idx.len());
        let mut cursor = 0;
        for (j, part) in parts.iter_mut().enumerate() {
            part.extend(perm[cursor..cursor + alloc[c][j]].iter().map(|&p| idx[p]));
            cursor += alloc[c][j];
        }
    }
    let tags = [Split::Train, Split::Val, Split::Test];
    Ok(parts
        .into_iter()
        .enumerate()
        .map(|(j, mut part)| {
            part.sort_unstable();
            dataset.select(&part, *tags.get(j).unwrap_or(&Split::Test))
        })
        .collect())
}
