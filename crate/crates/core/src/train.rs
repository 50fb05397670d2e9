//! Training loops: task-network pretraining, single-rate joint training,
//! adaptive-rate masked training, server-side finetuning, and evaluation.
//!
//! Per-sample forward/backward passes inside a batch run in parallel; their
//! gradients are summed in batch order so results are bitwise reproducible.

use std::fmt;

use rayon::prelude::*;

use crate::adam::{AdamConfig, AdamState};
use crate::data::{apply_augment, draw_augment, LabeledDataset};
use crate::error::{Error, Result};
use crate::mask::{sample_mask_dims, MaskDims, MaskSpec};
use crate::mcs::SynthesisOperatorSet;
use crate::model::{quantize_f32, Gradients, MclModel, MeasurementPath, TrainingMode};
use crate::nn::{argmax, softmax_cross_entropy, TaskNetwork};
use crate::rng::{streams, StreamRng};
use crate::tensor::Tensor;

/// Step-wise learning-rate schedule: multiplied by `factor` at the start of
/// each (0-based) epoch listed in `decay_epochs`.
#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    pub initial: f64,
    pub factor: f64,
    pub decay_epochs: Vec<usize>,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        Self {
            initial: lr,
            factor: 1.0,
            decay_epochs: Vec::new(),
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.decay_epochs.iter().filter(|&&e| epoch >= e).count();
        self.initial * self.factor.powi(decays as i32)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub weight_decay: f64,
    pub seed: u64,
    pub augment: bool,
}

impl TrainConfig {
    /// 60 epochs at lr 0.001, divided by 10 at epochs 15 and 54.
    pub fn desk(seed: u64) -> Self {
        Self {
            epochs: 60,
            batch_size: 32,
            schedule: LrSchedule {
                initial: 0.001,
                factor: 0.1,
                decay_epochs: vec![15, 54],
            },
            weight_decay: 5e-5,
            seed,
            augment: true,
        }
    }

    /// Server-side finetuning: 30 epochs at a constant lr of 0.0001.
    pub fn finetune(seed: u64) -> Self {
        Self {
            epochs: 30,
            schedule: LrSchedule::constant(1e-4),
            ..Self::desk(seed)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Argument("batch size must be positive".into()));
        }
        if self.schedule.decay_epochs.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Argument("decay epochs must be sorted".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

/// Summary of the mask sizes drawn during one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSummary {
    pub draws: usize,
    pub mean_elems: f64,
    pub min: MaskDims,
    pub max: MaskDims,
}

/// One line of training progress.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: &'static str,
    pub loss: f64,
    pub accuracy: f64,
    pub lr: f64,
    pub mask: Option<MaskSummary>,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} split={} loss={:.6} accuracy={:.6} lr={:.2e}",
            self.epoch, self.split, self.loss, self.accuracy, self.lr
        )?;
        if let Some(m) = &self.mask {
            write!(
                f,
                " mask_draws={} mask_mean_elems={:.3} mask_min={} mask_max={}",
                m.draws, m.mean_elems, m.min, m.max
            )?;
        }
        Ok(())
    }
}

/// How each training sample's measurement is reduced.
#[derive(Clone, Debug)]
enum MaskPlan {
    None,
    Random(MaskSpec),
    Deployed(MaskDims),
}

/// Something with parameters and a per-sample loss gradient.
trait Objective: Sync {
    fn lens(&self) -> Vec<usize>;
    fn trainable_flags(&self) -> Vec<bool>;
    fn sample(&self, y: &Tensor, label: usize, dims: Option<&MaskDims>) -> Result<(f64, bool, Gradients)>;
    fn params(&mut self) -> Vec<&mut [f64]>;
    fn as_model(&self) -> Option<&MclModel>;
}

struct NetworkObjective<'a>(&'a mut TaskNetwork);

impl Objective for NetworkObjective<'_> {
    fn lens(&self) -> Vec<usize> {
        self.0.params().iter().map(|t| t.len()).collect()
    }

    fn trainable_flags(&self) -> Vec<bool> {
        vec![true; self.0.params().len()]
    }

    fn sample(&self, y: &Tensor, label: usize, _: Option<&MaskDims>) -> Result<(f64, bool, Gradients)> {
        let (scores, cache) = self.0.forward(y)?;
        let (loss, dscores) = softmax_cross_entropy(&scores, label);
        let (_, grads) = self.0.backward(&cache, &dscores)?;
        Ok((loss, argmax(&scores) == label, grads))
    }

    fn params(&mut self) -> Vec<&mut [f64]> {
        self.0.params_mut().into_iter().map(Tensor::data_mut).collect()
    }

    fn as_model(&self) -> Option<&MclModel> {
        None
    }
}

struct ModelObjective<'a> {
    model: &'a mut MclModel,
    train_sensing: bool,
    deployed: bool,
}

impl Objective for ModelObjective<'_> {
    fn lens(&self) -> Vec<usize> {
        self.model.param_values().iter().map(|p| p.len()).collect()
    }

    fn trainable_flags(&self) -> Vec<bool> {
        let k = self.model.rank();
        let n = self.model.param_values().len();
        (0..n).map(|i| i >= k || self.train_sensing).collect()
    }

    fn sample(&self, y: &Tensor, label: usize, dims: Option<&MaskDims>) -> Result<(f64, bool, Gradients)> {
        let path = match (dims, self.deployed) {
            (None, _) => MeasurementPath::Full,
            (Some(d), false) => MeasurementPath::Masked(d),
            (Some(d), true) => MeasurementPath::Deployed(d),
        };
        self.model.sample_gradients(y, label, path, self.train_sensing)
    }

    fn params(&mut self) -> Vec<&mut [f64]> {
        self.model.param_values_mut()
    }

    fn as_model(&self) -> Option<&MclModel> {
        Some(self.model)
    }
}

fn run_training(
    obj: &mut dyn Objective,
    train: &LabeledDataset,
    cfg: &TrainConfig,
    plan: &MaskPlan,
    mut validate: impl FnMut(&dyn Objective, usize, f64) -> Result<Option<EpochRecord>>,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Argument("empty training set".into()));
    }
    let mut records = Vec::new();
    if cfg.epochs == 0 {
        return Ok(records);
    }
    let lens = obj.lens();
    let trainable = obj.trainable_flags();
    let mut adam = AdamState::new(&lens, cfg.adam());
    let mut shuffle_rng = StreamRng::new(cfg.seed, streams::SHUFFLE);
    let mut aug_rng = StreamRng::new(cfg.seed, streams::AUGMENT);
    let mut mask_rng = StreamRng::new(cfg.seed, streams::MASK);
    let height = train.input_shape().map_or(1, |s| s[0]);

    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.lr_at(epoch);
        let order = shuffle_rng.permutation(train.len());
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut drawn: Vec<MaskDims> = Vec::new();

        for batch in order.chunks(cfg.batch_size) {
            // All random draws happen sequentially before the parallel section.
            let mut jobs = Vec::with_capacity(batch.len());
            for &i in batch {
                let y = if cfg.augment {
                    apply_augment(&train.samples[i], draw_augment(height, &mut aug_rng))?
                } else {
                    train.samples[i].clone()
                };
                let dims = match plan {
                    MaskPlan::None => None,
                    MaskPlan::Random(spec) => Some(sample_mask_dims(spec, &mut mask_rng)),
                    MaskPlan::Deployed(d) => Some(d.clone()),
                };
                if let (MaskPlan::Random(_), Some(d)) = (plan, &dims) {
                    drawn.push(d.clone());
                }
                jobs.push((y, train.labels[i], dims));
            }
            let results: Vec<Result<(f64, bool, Gradients)>> = {
                let shared: &dyn Objective = &*obj;
                jobs.par_iter()
                    .map(|(y, label, dims)| shared.sample(y, *label, dims.as_ref()))
                    .collect()
            };
            let mut acc: Gradients = lens
                .iter()
                .zip(&trainable)
                .map(|(&n, &t)| if t { vec![0.0; n] } else { Vec::new() })
                .collect();
            for r in results {
                let (loss, ok, grads) = r?;
                loss_sum += loss;
                correct += ok as usize;
                for ((a, g), &t) in acc.iter_mut().zip(&grads).zip(&trainable) {
                    if t {
                        a.iter_mut().zip(g).for_each(|(a, g)| *a += g);
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            acc.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v *= scale));
            let mut params = obj.params();
            adam.step(&mut params, &acc, &trainable, lr);
        }

        let loss = loss_sum / train.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("training loss diverged at epoch {}", epoch + 1)));
        }
        let mask = summarize(&drawn);
        let rec = EpochRecord {
            epoch: epoch + 1,
            split: "train",
            loss,
            accuracy: correct as f64 / train.len() as f64,
            lr,
            mask,
        };
        observer(&rec);
        records.push(rec);
        if let Some(v) = validate(&*obj, epoch + 1, lr)? {
            observer(&v);
            records.push(v);
        }
    }
    Ok(records)
}

fn summarize(drawn: &[MaskDims]) -> Option<MaskSummary> {
    if drawn.is_empty() {
        return None;
    }
    let mean = drawn.iter().map(|d| d.numel() as f64).sum::<f64>() / drawn.len() as f64;
    Some(MaskSummary {
        draws: drawn.len(),
        mean_elems: mean,
        min: drawn.iter().min_by_key(|d| (d.numel(), (*d).clone())).cloned()?,
        max: drawn.iter().max_by_key(|d| (d.numel(), (*d).clone())).cloned()?,
    })
}

/// Validation record at the model's full measurement shape.
fn validation_hook<'v>(
    val: Option<&'v LabeledDataset>,
) -> impl FnMut(&dyn Objective, usize, f64) -> Result<Option<EpochRecord>> + 'v {
    move |obj, epoch, lr| {
        let (Some(val), Some(model)) = (val, obj.as_model()) else {
            return Ok(None);
        };
        let dims = model.meta.measurement_shape.clone();
        let (loss, accuracy) = evaluate_with_loss(model, &dims, val)?;
        Ok(Some(EpochRecord {
            epoch,
            split: "val",
            loss,
            accuracy,
            lr,
            mask: None,
        }))
    }
}

/// Trains the task network alone on the uncompressed signals.
pub fn pretrain_task_network(
    net: &mut TaskNetwork,
    train: &LabeledDataset,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    if train.is_empty() {
        return Err(Error::Argument("empty training set".into()));
    }
    let mut obj = NetworkObjective(net);
    run_training(&mut obj, train, cfg, &MaskPlan::None, |_, _, _| Ok(None), observer)
}

fn check_model_data(model: &MclModel, data: &LabeledDataset) -> Result<()> {
    match data.input_shape() {
        Some(s) if s == model.meta.input_shape.as_slice() => {}
        Some(s) => {
            return Err(Error::Shape(format!(
                "dataset shape {:?} does not match model input {:?}",
                s, model.meta.input_shape
            )))
        }
        None => return Err(Error::Argument("empty training set".into())),
    }
    if data.class_count != model.meta.class_count {
        return Err(Error::Shape(format!(
            "dataset has {} classes, model {}",
            data.class_count, model.meta.class_count
        )));
    }
    Ok(())
}

/// Joint training of all three stages at the model's fixed measurement shape.
pub fn train_single_rate(
    model: &mut MclModel,
    train: &LabeledDataset,
    val: Option<&LabeledDataset>,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    train_fixed(model, train, val, cfg, TrainingMode::Single, observer)
}

/// Single-rate training at the maximum measurement shape, intended to be
/// evaluated at smaller dims afterwards.
pub fn train_baseline(
    model: &mut MclModel,
    train: &LabeledDataset,
    val: Option<&LabeledDataset>,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    train_fixed(model, train, val, cfg, TrainingMode::Baseline, observer)
}

fn train_fixed(
    model: &mut MclModel,
    train: &LabeledDataset,
    val: Option<&LabeledDataset>,
    cfg: &TrainConfig,
    mode: TrainingMode,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    check_model_data(model, train)?;
    if cfg.epochs == 0 {
        return Ok(Vec::new());
    }
    let mut obj = ModelObjective {
        model,
        train_sensing: true,
        deployed: false,
    };
    let records = run_training(&mut obj, train, cfg, &MaskPlan::None, validation_hook(val), observer)?;
    model.meta.mode = mode;
    model.meta.mask_spec = None;
    Ok(records)
}

/// Joint training under a fresh random prefix mask per sample and pass.
pub fn train_adaptive(
    model: &mut MclModel,
    spec: &MaskSpec,
    train: &LabeledDataset,
    val: Option<&LabeledDataset>,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    check_model_data(model, train)?;
    if spec.max_dims().as_slice() != model.meta.measurement_shape.as_slice() {
        return Err(Error::Dims(format!(
            "mask maximum {} must equal the measurement shape {:?}",
            spec.max_dims(),
            model.meta.measurement_shape
        )));
    }
    if cfg.epochs == 0 {
        return Ok(Vec::new());
    }
    let mut obj = ModelObjective {
        model,
        train_sensing: true,
        deployed: false,
    };
    let plan = MaskPlan::Random(spec.clone());
    let records = run_training(&mut obj, train, cfg, &plan, validation_hook(val), observer)?;
    model.meta.mode = TrainingMode::Adaptive;
    model.meta.mask_spec = Some(spec.clone());
    Ok(records)
}

/// Synthesis operators and task network specialised to one measurement size.
#[derive(Clone, Debug, PartialEq)]
pub struct RateModel {
    pub dims: MaskDims,
    pub synthesis: SynthesisOperatorSet,
    pub network: TaskNetwork,
}

/// Finetunes synthesis and network for fixed `dims` along the deployment
/// path. The sensing operators are frozen.
pub fn finetune_server_side(
    model: &MclModel,
    dims: &MaskDims,
    train: &LabeledDataset,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<(RateModel, Vec<EpochRecord>)> {
    check_model_data(model, train)?;
    match &model.meta.mask_spec {
        Some(spec) => spec.check(dims)?,
        None => {
            return Err(Error::Argument(
                "finetuning needs a model trained with a mask spec".into(),
            ))
        }
    }
    let mut tuned = model.clone();
    let records = {
        let mut obj = ModelObjective {
            model: &mut tuned,
            train_sensing: false,
            deployed: true,
        };
        run_training(
            &mut obj,
            train,
            cfg,
            &MaskPlan::Deployed(dims.clone()),
            |_, _, _| Ok(None),
            observer,
        )?
    };
    debug_assert_eq!(tuned.sensing, model.sensing);
    Ok((
        RateModel {
            dims: dims.clone(),
            synthesis: tuned.synthesis,
            network: tuned.network,
        },
        records,
    ))
}

impl MclModel {
    /// The model with synthesis and network replaced by a finetuned pair.
    pub fn with_rate_model(&self, rate: &RateModel) -> Result<MclModel> {
        let mut meta = self.meta.clone();
        meta.mode = TrainingMode::Finetuned;
        MclModel::new(meta, self.sensing.clone(), rate.synthesis.clone(), rate.network.clone())
    }
}

/// Checks `dims` against what the model was trained for.
pub fn check_eval_dims(model: &MclModel, dims: &[usize]) -> Result<()> {
    let meas = &model.meta.measurement_shape;
    match (&model.meta.mask_spec, model.meta.mode) {
        (Some(spec), _) => spec.check(dims),
        (None, TrainingMode::Single) if dims != meas.as_slice() => Err(Error::Dims(format!(
            "single-rate model only supports its trained shape {:?}",
            meas
        ))),
        _ => {
            if dims.len() == meas.len() && dims.iter().zip(meas).all(|(d, m)| *d >= 1 && d <= m) {
                Ok(())
            } else {
                Err(Error::Dims(format!(
                    "dims {:?} outside measurement shape {:?}",
                    dims, meas
                )))
            }
        }
    }
}

/// Scores for one signal along the deployment path with 32-bit transmission.
pub fn deployed_scores(model: &MclModel, y: &Tensor, dims: &[usize]) -> Result<Vec<f64>> {
    let z_bar = quantize_f32(&model.measure(y, dims)?);
    model.predict_received(&z_bar)
}

fn evaluate_with_loss(model: &MclModel, dims: &[usize], data: &LabeledDataset) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::Argument("empty evaluation set".into()));
    }
    let results: Vec<Result<(f64, bool)>> = data
        .samples
        .par_iter()
        .zip(&data.labels)
        .map(|(y, &label)| {
            let scores = deployed_scores(model, y, dims)?;
            let (loss, _) = softmax_cross_entropy(&scores, label);
            Ok((loss, argmax(&scores) == label))
        })
        .collect();
    let mut loss = 0.0;
    let mut correct = 0usize;
    for r in results {
        let (l, ok) = r?;
        loss += l;
        correct += ok as usize;
    }
    let n = data.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Accuracy of the deployment path (sense, keep the leading `dims` block,
/// round to 32-bit, zero-pad, synthesize, classify).
pub fn evaluate(model: &MclModel, dims: &[usize], data: &LabeledDataset) -> Result<f64> {
    check_eval_dims(model, dims)?;
    Ok(evaluate_with_loss(model, dims, data)?.1)
}

/// Accuracy of the task network on uncompressed signals.
pub fn evaluate_network(net: &TaskNetwork, data: &LabeledDataset) -> Result<f64> {
    let hits: Vec<Result<bool>> = data
        .samples
        .par_iter()
        .zip(&data.labels)
        .map(|(y, &l)| Ok(argmax(&net.forward(y)?.0) == l))
        .collect();
    let mut correct = 0;
    for h in hits {
        correct += h? as usize;
    }
    Ok(correct as f64 / data.len().max(1) as f64)
}
