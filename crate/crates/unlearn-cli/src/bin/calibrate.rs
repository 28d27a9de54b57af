//! Scratch calibration driver (not part of the shipped interface):
//! traces KL, accuracy and cross-cosine through the phases epoch by epoch.

use std::path::Path;

use unlearn_core::backend::checkpoint::load_checkpoint;
use unlearn_core::data::{load_cifar10, make_forget_split, subset_dataset, toy_subset_indices, SplitMode};
use unlearn_core::eval::{accuracy_pct, mean_cross_cosine};
use unlearn_core::unlearn::{
    adversarial_finetune_phase, compute_saliency, forgetting_phase, MaskMode, UnlearnConfig,
};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let data_dir = &args[1];
    let ckpt = &args[2];
    let n: usize = args[3].parse().unwrap();
    let p1_epochs: usize = args[4].parse().unwrap();
    let p1_lr: f32 = args[5].parse().unwrap();
    let p2_epochs: usize = args[6].parse().unwrap();
    let p2_lr: f32 = args[7].parse().unwrap();

    let (train, _test) = load_cifar10(Path::new(data_dir)).unwrap();
    let idx = toy_subset_indices(&train, n).unwrap();
    let train = subset_dataset(&train, &idx, "toy");
    let split = make_forget_split(&train, SplitMode::Random { fraction: 0.1 }, 1).unwrap();
    let (mut model, _) = load_checkpoint(Path::new(ckpt)).unwrap();

    let mut cfg = UnlearnConfig {
        phase1_epochs: 1,
        phase1_lr: p1_lr,
        phase2_epochs: 1,
        phase2_lr: p2_lr,
        batch_size_forget: 128,
        batch_size_retain: 256,
        mask_mode: MaskMode::Soft,
        ..Default::default()
    };

    let cos = mean_cross_cosine(&mut model, &train, &split.forget, &split.retain).unwrap();
    let fa = accuracy_pct(&mut model, &train, &split.forget).unwrap();
    let ra = accuracy_pct(&mut model, &train, &split.retain).unwrap();
    println!("start: cos {cos:.4} forget-acc {fa:.2} retain-acc {ra:.2}");
    for e in 0..p1_epochs {
        cfg.seed = e as u64; // vary shuffle per single-epoch call
        let rep = forgetting_phase(&mut model, &train, &split.forget, &cfg).unwrap();
        let cos = mean_cross_cosine(&mut model, &train, &split.forget, &split.retain).unwrap();
        let fa = accuracy_pct(&mut model, &train, &split.forget).unwrap();
        let ra = accuracy_pct(&mut model, &train, &split.retain).unwrap();
        println!(
            "p1 e{}: kl {:.4} cos {cos:.4} forget-acc {fa:.2} retain-acc {ra:.2}",
            e + 1,
            rep.kl_loss[0]
        );
    }
    cfg.seed = 0;
    let mask = compute_saliency(&mut model, &train, &split.forget, &cfg, MaskMode::Soft).unwrap();
    let mut mask_mean = 0.0f64;
    for (_, t) in mask.entries() {
        mask_mean += t.as_slice().iter().map(|&v| f64::from(v)).sum::<f64>();
    }
    println!("mask mean value: {:.6}", mask_mean / mask.num_elements() as f64);
    for e in 0..p2_epochs {
        cfg.seed = 100 + e as u64;
        let rep =
            adversarial_finetune_phase(&mut model, &train, &split.forget, &split.retain, &mask, &cfg)
                .unwrap();
        let cos = mean_cross_cosine(&mut model, &train, &split.forget, &split.retain).unwrap();
        let fa = accuracy_pct(&mut model, &train, &split.forget).unwrap();
        let ra = accuracy_pct(&mut model, &train, &split.retain).unwrap();
        println!(
            "p2 e{}: ce {:.4} con {:.4} cos {cos:.4} forget-acc {fa:.2} retain-acc {ra:.2}",
            e + 1,
            rep.ce_loss[0],
            rep.contrastive_loss[0]
        );
    }
}
