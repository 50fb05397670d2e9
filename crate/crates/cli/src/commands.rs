//! Argument definitions and the implementation of every subcommand.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use mcl_core::data::{load_cifar_binary, make_synthetic, split, LabeledDataset, Split, SyntheticConfig};
use mcl_core::flops::{count_flops, FlopConfig};
use mcl_core::mcs::hosvd_init;
use mcl_core::model::{MclModel, TrainingMode};
use mcl_core::nn::{all_cnn_c, desk_network, parse_layers, LayerSpec, TaskNetwork};
use mcl_core::rng::{streams, StreamRng};
use mcl_core::train::{
    evaluate, finetune_server_side, pretrain_task_network, train_adaptive, train_baseline,
    train_single_rate, EpochRecord, TrainConfig,
};
use mcl_core::{MaskDims, MaskSpec};
use mcl_sim::session::{RatePolicy, ServerModel, SessionConfig, Transport};
use mcl_sim::{run_session, ChannelTrace};

use crate::container::{load_model, save_model};
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "mcl", version, about = "Multilinear compressive learning with adaptive compression rates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// HOSVD-initialize sensing and synthesis and pretrain the task network.
    Init(InitArgs),
    /// Train a model end to end in single, adaptive or baseline mode.
    Train(TrainArgs),
    /// Accuracy at one or more measurement sizes.
    Evaluate(EvaluateArgs),
    /// Finetune synthesis and network per measurement size with frozen sensing.
    Finetune(FinetuneArgs),
    /// Stream a dataset through the simulated client/server link.
    Simulate(SimulateArgs),
    /// Floating-point operation counts of a model or configuration.
    Flops(FlopsArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Directory with CIFAR binary batches (data_batch_*.bin, test_batch.bin).
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    pub data_dir: Option<PathBuf>,
    /// Use the built-in class-template dataset.
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    /// Signal shape of the synthetic dataset, e.g. 16x16x3.
    #[arg(long, default_value = "16x16x3")]
    pub input_shape: MaskDims,
    #[arg(long, default_value_t = 250)]
    pub samples_per_class: usize,
    /// Seed of the synthetic dataset and its train/test split.
    #[arg(long, default_value_t = 7)]
    pub data_seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct OptimArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Disable flip and shift augmentation.
    #[arg(long)]
    pub no_augment: bool,
}

impl OptimArgs {
    fn config(&self, base: TrainConfig, default_epochs: usize) -> Result<TrainConfig> {
        if self.batch == 0 {
            return Err(CliError::Usage("--batch must be positive".into()));
        }
        let mut cfg = base;
        cfg.epochs = self.epochs.unwrap_or(default_epochs);
        cfg.batch_size = self.batch;
        cfg.augment = !self.no_augment;
        if let Some(lr) = self.lr {
            if !(lr > 0.0) {
                return Err(CliError::Usage("--lr must be positive".into()));
            }
            cfg.schedule.initial = lr;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub measurement_shape: MaskDims,
    /// Comma-separated layers such as conv:16:3:1:1,relu,gap,dense:4.
    #[arg(long)]
    pub layers: Option<String>,
    /// Pretraining epochs (default 20).
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Single,
    Adaptive,
    Baseline,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Mode,
    #[command(flatten)]
    pub data: DataArgs,
    /// Smallest mask dims (adaptive mode only).
    #[arg(long)]
    pub mask_min: Option<MaskDims>,
    /// Largest mask dims; must equal the measurement shape (adaptive mode only).
    #[arg(long)]
    pub mask_max: Option<MaskDims>,
    /// Training epochs (default 60).
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Measurement dims to evaluate; repeatable. Defaults to the full measurement.
    #[arg(long)]
    pub dims: Vec<MaskDims>,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, required = true)]
    pub dims: Vec<MaskDims>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Finetuning epochs (default 30, constant lr 1e-4).
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Model or per-rate table container.
    #[arg(long)]
    pub model: PathBuf,
    /// Bandwidth trace with `timestamp_s rate_Bps` lines.
    #[arg(long)]
    pub trace: PathBuf,
    /// Seconds between samples.
    #[arg(long)]
    pub deadline: f64,
    /// Send these dims for every sample instead of following the controller.
    #[arg(long)]
    pub dims: Option<MaskDims>,
    /// Carry packets over loopback TCP instead of an in-process pipe.
    #[arg(long)]
    pub tcp: bool,
    #[command(flatten)]
    pub data: DataArgs,
    /// Report file; the summary is always printed.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    /// Model container; without it the shapes and layers below are used.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value = "32x32x3")]
    pub input_shape: MaskDims,
    #[arg(long, default_value = "15x15x2")]
    pub measurement_shape: MaskDims,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    /// Layers; defaults to the AllCNN-C architecture.
    #[arg(long)]
    pub layers: Option<String>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(path.display().to_string(), e)
}

/// Training or test part of the selected dataset.
pub fn load_data(args: &DataArgs, which: Split) -> Result<LabeledDataset> {
    match (&args.data_dir, args.synthetic) {
        (Some(dir), _) => {
            let files: Vec<PathBuf> = match which {
                Split::Test => vec![dir.join("test_batch.bin")],
                _ => (1..=5)
                    .map(|i| dir.join(format!("data_batch_{i}.bin")))
                    .filter(|p| p.exists())
                    .collect(),
            };
            if files.is_empty() || !files.iter().all(|p| p.exists()) {
                return Err(CliError::Format(format!("no CIFAR batch files for the {which} split in {}", dir.display())));
            }
            let (mut samples, mut labels) = (Vec::new(), Vec::new());
            for f in &files {
                let d = load_cifar_binary(f, which, args.classes)?;
                samples.extend(d.samples);
                labels.extend(d.labels);
            }
            Ok(LabeledDataset::new(samples, labels, args.classes, which, format!("cifar-binary:{}", dir.display()))?)
        }
        (None, true) => {
            let [h, w, c] = args.input_shape[..] else {
                return Err(CliError::Usage("--input-shape must have three extents".into()));
            };
            let cfg = SyntheticConfig::new(args.classes, args.samples_per_class, [h, w, c], args.data_seed);
            let mut parts = split(&make_synthetic(&cfg)?, &[0.8, 0.2], args.data_seed)?;
            Ok(match which {
                Split::Test => parts.pop().unwrap(),
                _ => parts.swap_remove(0),
            })
        }
        (None, false) => Err(CliError::Usage("choose a dataset with --synthetic or --data-dir".into())),
    }
}

fn log_record(out: &mut dyn Write, log: &mut String, r: &EpochRecord) {
    let line = r.to_string();
    let _ = writeln!(out, "{line}");
    log.push_str(&line);
    log.push('\n');
}

fn metrics_path(out: &Path) -> PathBuf {
    let mut p = out.as_os_str().to_owned();
    p.push(".metrics");
    PathBuf::from(p)
}

fn write_metrics(out: &Path, log: &str) -> Result<()> {
    let path = metrics_path(out);
    fs::write(&path, log).map_err(io_err(&path))
}

fn single_model(model: ServerModel, what: &str) -> Result<MclModel> {
    match model {
        ServerModel::Single(m) => Ok(m),
        ServerModel::Table { .. } => Err(CliError::Usage(format!("{what} needs a model container, not a rate table"))),
    }
}

fn default_layers(classes: usize, input: &[usize]) -> Vec<LayerSpec> {
    if input == [32, 32, 3] {
        all_cnn_c(classes)
    } else {
        desk_network(classes)
    }
}

fn cmd_init(args: InitArgs, out: &mut dyn Write) -> Result<()> {
    let train = load_data(&args.data, Split::Train)?;
    let input = train.input_shape().unwrap().to_vec();
    let layers = match &args.layers {
        Some(s) => parse_layers(s)?,
        None => default_layers(train.class_count, &input),
    };
    let seed = args.optim.seed;
    let mut net = TaskNetwork::new(&input, &layers, train.class_count, &mut StreamRng::new(seed, streams::INIT))?;
    let cfg = args.optim.config(TrainConfig::desk(seed), 20)?;
    let mut log = String::new();
    pretrain_task_network(&mut net, &train, &cfg, &mut |r| log_record(out, &mut log, r))?;
    let init = hosvd_init(&train.samples, &args.measurement_shape)?;
    let energy = init.core_energy;
    let model = MclModel::from_hosvd(init, net, seed)?;
    save_model(&ServerModel::Single(model), &args.out)?;
    write_metrics(&args.out, &log)?;
    let _ = writeln!(out, "core_energy={energy:.12}");
    Ok(())
}

fn cmd_train(args: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut model = single_model(load_model(&args.model)?, "train")?;
    let has_mask_flags = args.mask_min.is_some() || args.mask_max.is_some();
    if args.mode != Mode::Adaptive && has_mask_flags {
        return Err(CliError::Usage("--mask-min/--mask-max only apply to --mode adaptive".into()));
    }
    let train = load_data(&args.data, Split::Train)?;
    let val = load_data(&args.data, Split::Test)?;
    let cfg = args.optim.config(TrainConfig::desk(args.optim.seed), 60)?;
    let mut log = String::new();
    let mut observe = |r: &EpochRecord| log_record(out, &mut log, r);
    match args.mode {
        Mode::Single => train_single_rate(&mut model, &train, Some(&val), &cfg, &mut observe)?,
        Mode::Baseline => train_baseline(&mut model, &train, Some(&val), &cfg, &mut observe)?,
        Mode::Adaptive => {
            let meas = &model.meta.measurement_shape;
            let min = args.mask_min.clone().unwrap_or(MaskDims::new(vec![1; meas.len()])?);
            let max = args.mask_max.clone().unwrap_or(MaskDims::new(meas.clone())?);
            let spec = MaskSpec::new(min.to_vec(), max.to_vec())?;
            train_adaptive(&mut model, &spec, &train, Some(&val), &cfg, &mut observe)?
        }
    };
    save_model(&ServerModel::Single(model), &args.out)?;
    write_metrics(&args.out, &log)
}

fn default_dims(model: &ServerModel) -> Result<Vec<MaskDims>> {
    Ok(match model {
        ServerModel::Single(m) => vec![MaskDims::new(m.meta.measurement_shape.clone())?],
        ServerModel::Table { rates, .. } => rates.iter().map(|r| r.dims.clone()).collect(),
    })
}

/// The model that serves `dims`: the single model, or the table entry.
fn model_for(model: &ServerModel, dims: &MaskDims) -> Result<MclModel> {
    match model {
        ServerModel::Single(m) => Ok(m.clone()),
        ServerModel::Table { base, rates } => {
            let rate = rates
                .iter()
                .find(|r| &r.dims == dims)
                .ok_or_else(|| CliError::Core(mcl_core::Error::Dims(format!("no rate model for {dims}"))))?;
            Ok(base.with_rate_model(rate)?)
        }
    }
}

fn cmd_evaluate(args: EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let model = load_model(&args.model)?;
    let test = load_data(&args.data, Split::Test)?;
    let dims = if args.dims.is_empty() { default_dims(&model)? } else { args.dims };
    for d in &dims {
        let acc = evaluate(&model_for(&model, d)?, d, &test)?;
        let correct = (acc * test.len() as f64).round() as usize;
        let _ = writeln!(out, "dims={d} accuracy={acc:.6} correct={correct} total={}", test.len());
    }
    Ok(())
}

fn cmd_finetune(args: FinetuneArgs, out: &mut dyn Write) -> Result<()> {
    let model = single_model(load_model(&args.model)?, "finetune")?;
    if model.meta.mode != TrainingMode::Adaptive || model.meta.mask_spec.is_none() {
        return Err(CliError::Usage(format!(
            "finetuning needs an adaptive-rate model, got a '{}' model",
            model.meta.mode
        )));
    }
    let train = load_data(&args.data, Split::Train)?;
    let cfg = args.optim.config(TrainConfig::finetune(args.optim.seed), 30)?;
    let mut log = String::new();
    let mut rates = Vec::new();
    for d in &args.dims {
        let _ = writeln!(out, "finetune dims={d}");
        log.push_str(&format!("finetune dims={d}\n"));
        let (rate, _) = finetune_server_side(&model, d, &train, &cfg, &mut |r| log_record(out, &mut log, r))?;
        rates.push(rate);
    }
    save_model(&ServerModel::Table { base: model, rates }, &args.out)?;
    write_metrics(&args.out, &log)
}

fn cmd_simulate(args: SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let model = load_model(&args.model)?;
    let trace = ChannelTrace::load(&args.trace)?;
    let data = load_data(&args.data, Split::Test)?;
    if !(args.deadline > 0.0) {
        return Err(CliError::Usage("--deadline must be positive".into()));
    }
    let cfg = SessionConfig {
        deadline: args.deadline,
        policy: args.dims.map_or(RatePolicy::Adaptive, RatePolicy::Fixed),
        transport: if args.tcp { Transport::Tcp } else { Transport::InProcess },
    };
    let report = run_session(&model, &data, &trace, &cfg)?;
    let text = report.to_text();
    if let Some(path) = &args.out {
        fs::write(path, &text).map_err(io_err(path))?;
    }
    let _ = writeln!(out, "{}", text.lines().last().unwrap_or_default());
    Ok(())
}

fn cmd_flops(args: FlopsArgs, out: &mut dyn Write) -> Result<()> {
    let config = match &args.model {
        Some(path) => {
            let model = load_model(path)?;
            let base = model.base();
            FlopConfig {
                input_shape: base.meta.input_shape.clone(),
                measurement_shape: base.meta.measurement_shape.clone(),
                layers: base.network.specs().to_vec(),
            }
        }
        None => FlopConfig {
            input_shape: args.input_shape.to_vec(),
            measurement_shape: args.measurement_shape.to_vec(),
            layers: match &args.layers {
                Some(s) => parse_layers(s)?,
                None => all_cnn_c(args.classes),
            },
        },
    };
    let r = count_flops(&config)?;
    let _ = writeln!(out, "mcs_flops={}", r.mcs_flops);
    let _ = writeln!(out, "fs_flops={}", r.fs_flops);
    let _ = writeln!(out, "tasknet_flops={}", r.tasknet_flops);
    let _ = writeln!(out, "vector_sense_flops={}", r.vector_sense_flops);
    let _ = writeln!(out, "ratio={:.6e}", r.ratio());
    Ok(())
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Init(a) => cmd_init(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Evaluate(a) => cmd_evaluate(a, out),
        Command::Finetune(a) => cmd_finetune(a, out),
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::Flops(a) => cmd_flops(a, out),
    }
}
