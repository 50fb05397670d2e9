use mcl_core::data::{
    decode_records, encode_records, load_cifar_binary, make_synthetic, split, synthetic_templates,
    write_records, LabeledDataset, Split, SyntheticConfig,
};
use mcl_core::model::{MclModel, TrainingMode};
use mcl_core::nn::{parse_layers, LayerSpec, TaskNetwork};
use mcl_core::rng::{streams, StreamRng};
use mcl_core::train::{
    evaluate, evaluate_network, finetune_server_side, pretrain_task_network, train_adaptive,
    train_single_rate, TrainConfig,
};
use mcl_core::{MaskDims, MaskSpec};

const SHAPE: [usize; 3] = [8, 8, 3];

fn layers() -> Vec<LayerSpec> {
    parse_layers("conv:6:3:1:1,relu,conv:8:3:2:1,relu,gap,dense:4").unwrap()
}

fn toy(per_class: usize, seed: u64) -> (LabeledDataset, LabeledDataset) {
    let data = make_synthetic(&SyntheticConfig::new(4, per_class, SHAPE, seed)).unwrap();
    let mut parts = split(&data, &[0.8, 0.2], seed).unwrap();
    let test = parts.pop().unwrap();
    (parts.pop().unwrap(), test)
}

fn quick(epochs: usize, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::desk(seed);
    cfg.epochs = epochs;
    cfg.schedule.decay_epochs.clear();
    cfg.schedule.initial = 0.01;
    cfg.batch_size = 16;
    cfg
}

fn pretrained_model(train: &LabeledDataset, meas: &[usize], seed: u64) -> MclModel {
    let mut net = TaskNetwork::new(&SHAPE, &layers(), 4, &mut StreamRng::new(seed, streams::INIT)).unwrap();
    pretrain_task_network(&mut net, train, &quick(15, seed), &mut |_| {}).unwrap();
    let init = mcl_core::mcs::hosvd_init(&train.samples, meas).unwrap();
    MclModel::from_hosvd(init, net, seed).unwrap()
}

fn bits(m: &MclModel) -> Vec<u64> {
    m.param_values().iter().flat_map(|p| p.iter().map(|v| v.to_bits())).collect()
}

#[test]
fn nearest_template_classifier_separates_synthetic_classes() {
    let cfg = SyntheticConfig::new(4, 50, [16, 16, 3], 7);
    let templates = synthetic_templates(&cfg).unwrap();
    let data = make_synthetic(&cfg).unwrap();
    let correct = data
        .samples
        .iter()
        .zip(&data.labels)
        .filter(|(y, &label)| {
            let best = templates
                .iter()
                .enumerate()
                .map(|(c, t)| (c, y.sub(t).unwrap().squared_norm()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap()
                .0;
            best == label
        })
        .count();
    assert!(correct as f64 / data.len() as f64 >= 0.95);
}

#[test]
fn synthetic_generation_is_deterministic() {
    let cfg = SyntheticConfig::new(3, 5, SHAPE, 11);
    let a = encode_records(&make_synthetic(&cfg).unwrap()).unwrap();
    let b = encode_records(&make_synthetic(&cfg).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn record_file_round_trip() {
    let data = make_synthetic(&SyntheticConfig::new(3, 4, [32, 32, 3], 2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("batch.bin");
    write_records(&path, &data).unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().len(), 12 * 3073);
    let back = load_cifar_binary(&path, Split::Test, 3).unwrap();
    assert_eq!(back.labels, data.labels);
    for (a, b) in back.samples.iter().zip(&data.samples) {
        // Pixels are stored as bytes, so values are rounded to multiples of 1/255.
        let err = a.sub(b).unwrap().data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err <= 0.5 / 255.0 + 1e-12);
    }
    let reencoded = encode_records(&back).unwrap();
    assert_eq!(decode_records(&reencoded, &[32, 32, 3], 3, Split::Test, "x".into()).unwrap().samples, back.samples);
}

#[test]
fn pretraining_memorizes_a_small_subset() {
    let (train, _) = toy(10, 3);
    let subset = train.select(&(0..32).collect::<Vec<_>>(), Split::Train);
    let mut net = TaskNetwork::new(&SHAPE, &layers(), 4, &mut StreamRng::new(3, streams::INIT)).unwrap();
    let before = evaluate_network(&net, &subset).unwrap();
    let mut cfg = quick(200, 3);
    cfg.augment = false;
    let records = pretrain_task_network(&mut net, &subset, &cfg, &mut |_| {}).unwrap();
    assert!(records.iter().all(|r| r.loss.is_finite()));
    let acc = evaluate_network(&net, &subset).unwrap();
    assert!(acc >= 0.95, "train accuracy {acc} (before {before})");
}

#[test]
fn zero_epochs_leave_everything_unchanged() {
    let (train, _) = toy(10, 4);
    let model = MclModel::random(&SHAPE, &[3, 3, 1], &layers(), 4, 4).unwrap();
    let cfg = quick(0, 4);
    let mut m = model.clone();
    assert!(train_single_rate(&mut m, &train, None, &cfg, &mut |_| {}).unwrap().is_empty());
    assert_eq!(bits(&m), bits(&model));
    let spec = MaskSpec::new(vec![1, 1, 1], vec![3, 3, 1]).unwrap();
    assert!(train_adaptive(&mut m, &spec, &train, None, &cfg, &mut |_| {}).unwrap().is_empty());
    assert_eq!(bits(&m), bits(&model));
}

#[test]
fn single_rate_loss_descends_and_beats_majority() {
    let (train, test) = toy(40, 5);
    let mut model = pretrained_model(&train, &[3, 3, 1], 5);
    let records = train_single_rate(&mut model, &train, None, &quick(5, 5), &mut |_| {}).unwrap();
    let losses: Vec<f64> = records.iter().map(|r| r.loss).collect();
    assert!(losses.iter().all(|l| l.is_finite()));
    assert!(losses[4] < losses[0], "{losses:?}");
    assert_eq!(model.meta.mode, TrainingMode::Single);
    let acc = evaluate(&model, &[3, 3, 1], &test).unwrap();
    assert!(acc > test.majority_fraction(), "{acc}");
    assert_eq!(acc, evaluate(&model, &[3, 3, 1], &test).unwrap());
    assert!(evaluate(&model, &[2, 2, 1], &test).is_err());
}

#[test]
fn degenerate_spec_reproduces_single_rate_bitwise() {
    let (train, _) = toy(8, 6);
    let base = MclModel::random(&SHAPE, &[3, 3, 1], &layers(), 4, 6).unwrap();
    let cfg = quick(2, 6);
    let mut single = base.clone();
    train_single_rate(&mut single, &train, None, &cfg, &mut |_| {}).unwrap();
    let mut adaptive = base.clone();
    let spec = MaskSpec::fixed(&[3, 3, 1]).unwrap();
    train_adaptive(&mut adaptive, &spec, &train, None, &cfg, &mut |_| {}).unwrap();
    assert_eq!(bits(&single), bits(&adaptive));
}

#[test]
fn training_is_bitwise_reproducible() {
    let (train, _) = toy(8, 8);
    let spec = MaskSpec::new(vec![1, 1, 1], vec![3, 3, 1]).unwrap();
    let run = || {
        let mut m = MclModel::random(&SHAPE, &[3, 3, 1], &layers(), 4, 8).unwrap();
        let recs = train_adaptive(&mut m, &spec, &train, None, &quick(2, 8), &mut |_| {}).unwrap();
        (bits(&m), recs.iter().map(|r| r.to_string()).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}

#[test]
fn adaptive_model_works_at_several_dims_and_finetuning_freezes_sensing() {
    let (train, test) = toy(40, 9);
    let spec = MaskSpec::new(vec![2, 2, 1], vec![4, 4, 2]).unwrap();
    let mut model = pretrained_model(&train, &[4, 4, 2], 9);
    let records = train_adaptive(&mut model, &spec, &train, None, &quick(6, 9), &mut |_| {}).unwrap();
    let summary = records.last().unwrap().mask.clone().unwrap();
    assert_eq!(summary.draws, train.len());
    for d in ["2x2x1", "3x2x1", "2x4x2", "4x4x2"] {
        let dims: MaskDims = d.parse().unwrap();
        let acc = evaluate(&model, &dims, &test).unwrap();
        assert!(acc > test.majority_fraction(), "{d}: {acc}");
    }
    assert!(evaluate(&model, &[1, 1, 1], &test).is_err());

    let dims: MaskDims = "2x2x1".parse().unwrap();
    let (rate, _) = finetune_server_side(&model, &dims, &train, &quick(0, 9), &mut |_| {}).unwrap();
    assert_eq!(rate.synthesis, model.synthesis);
    assert_eq!(rate.network, model.network);
    let (rate, _) = finetune_server_side(&model, &dims, &train, &quick(2, 9), &mut |_| {}).unwrap();
    let tuned = model.with_rate_model(&rate).unwrap();
    assert_eq!(tuned.sensing, model.sensing);
    assert_ne!(tuned.synthesis, model.synthesis);
    assert!(finetune_server_side(&model, &"5x1x1".parse().unwrap(), &train, &quick(1, 9), &mut |_| {}).is_err());
}

#[test]
fn untrained_random_model_is_at_chance() {
    let data = make_synthetic(&SyntheticConfig::new(4, 100, SHAPE, 10)).unwrap();
    let n = data.len() as f64;
    let p = 0.25;
    let sigma = (p * (1.0 - p) / n).sqrt();
    // Average over several random models so one unlucky initialization that
    // maps everything to a single class does not dominate.
    let accs: Vec<f64> = (0..8)
        .map(|s| {
            let mut m = MclModel::random(&SHAPE, &[3, 3, 1], &layers(), 4, 100 + s).unwrap();
            m.meta.mode = TrainingMode::Baseline;
            evaluate(&m, &[3, 3, 1], &data).unwrap()
        })
        .collect();
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let bound = 4.0 * sigma / (accs.len() as f64).sqrt() + 4.0 * sigma;
    assert!((mean - p).abs() <= bound, "mean {mean}, per-model {accs:?}");
}
