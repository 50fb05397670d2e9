//! Desk-scale comparison of single-rate, baseline, adaptive-rate and
//! finetuned adaptive-rate models on synthetic data.

use std::time::Instant;

use mcl_core::data::{make_synthetic, split, SyntheticConfig};
use mcl_core::model::{MclModel, TrainingMode};
use mcl_core::nn::{desk_network, TaskNetwork};
use mcl_core::rng::{streams, StreamRng};
use mcl_core::train::{
    evaluate, evaluate_network, finetune_server_side, pretrain_task_network, train_adaptive,
    train_single_rate, TrainConfig,
};
use mcl_core::{MaskDims, MaskSpec};

fn main() -> mcl_core::Result<()> {
    let seed = 7;
    let epochs: usize = std::env::args().nth(1).map_or(60, |s| s.parse().unwrap());
    let data = make_synthetic(&SyntheticConfig::new(4, 250, [16, 16, 3], seed))?;
    let parts = split(&data, &[0.8, 0.2], seed)?;
    let (train, test) = (&parts[0], &parts[1]);
    let layers = desk_network(4);
    let mut cfg = TrainConfig::desk(seed);
    cfg.epochs = epochs;

    let t0 = Instant::now();
    let mut net = TaskNetwork::new(&[16, 16, 3], &layers, 4, &mut StreamRng::new(seed, streams::INIT))?;
    let mut pre = cfg.clone();
    pre.epochs = 20;
    pretrain_task_network(&mut net, train, &pre, &mut |_| {})?;
    println!("pretrain {:.1}s acc {:.3}", t0.elapsed().as_secs_f64(), evaluate_network(&net, test)?);

    let signals = &train.samples;
    let make = |dims: &[usize]| -> mcl_core::Result<MclModel> {
        let init = mcl_core::mcs::hosvd_init(signals, dims)?;
        println!("  core energy {:?}: {:.4}", dims, init.core_energy);
        MclModel::from_hosvd(init, net.clone(), seed)
    };
    let grid: Vec<MaskDims> = ["3x3x1", "4x6x1", "6x4x2", "8x8x2"].iter().map(|s| s.parse().unwrap()).collect();

    let t = Instant::now();
    let spec = MaskSpec::new(vec![3, 3, 1], vec![8, 8, 2])?;
    let mut adaptive = make(&[8, 8, 2])?;
    train_adaptive(&mut adaptive, &spec, train, None, &cfg, &mut |r| if r.epoch % 10 == 0 { println!("  {r}") })?;
    println!("adaptive {:.1}s", t.elapsed().as_secs_f64());
    let mut singles = Vec::new();
    for d in &grid {
        let t = Instant::now();
        let mut m = make(d)?;
        train_single_rate(&mut m, train, None, &cfg, &mut |_| {})?;
        println!("single {d} {:.1}s", t.elapsed().as_secs_f64());
        singles.push(m);
    }
    let mut baseline = singles.last().unwrap().clone();
    baseline.meta.mode = TrainingMode::Baseline;
    let mut ft = Vec::new();
    for d in &grid {
        let (rate, _) = finetune_server_side(&adaptive, d, train, &TrainConfig::finetune(seed), &mut |_| {})?;
        ft.push(adaptive.with_rate_model(&rate)?);
    }
    println!("dims     single  adaptive  adaptive*  baseline");
    for (i, d) in grid.iter().enumerate() {
        println!(
            "{:8} {:.3}   {:.3}     {:.3}      {:.3}",
            d.to_string(),
            evaluate(&singles[i], d, test)?,
            evaluate(&adaptive, d, test)?,
            evaluate(&ft[i], d, test)?,
            evaluate(&baseline, d, test)?
        );
    }
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
    Ok(())
}
