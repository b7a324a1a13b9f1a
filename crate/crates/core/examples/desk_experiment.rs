//! Desk-scale Burgers or Laplace experiment: pre-train on S1, then fine-tune
//! every S2 task with MAD-L and MAD-LM and report mean errors with 95% CIs.
//! Extra `key=value` arguments override config fields.
//!
//! cargo run --release --example desk_experiment -- burgers_desk.json
//! cargo run --release --example desk_experiment -- laplace_desk.json pretrain.total_iters=1000

use std::path::PathBuf;

use madpde::cli::{finetune_all, ExperimentConfig, Mode};
use madpde::mad::Pretrainer;
use madpde::oracles::mean_ci;
use madpde::problems::generate_tasks;

fn main() -> madpde::Result<()> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "burgers_desk.json".into());
    let sets: Vec<String> = args.collect();
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..");
    let cfg = ExperimentConfig::load(&root.join("configs").join(&name), &sets, None)?;
    println!("{}: {}", cfg.experiment, cfg.description);

    let tasks = generate_tasks(&cfg.family, cfg.seed)?;
    let mut trainer = Pretrainer::new(&tasks.s1, &cfg.network, &cfg.pretrain)?;
    let total = cfg.pretrain.total_iters;
    for k in 1..=10 {
        trainer.run_until(total * k / 10)?;
        println!(
            "pre-train {:>6}/{total}: loss {:.4e}",
            trainer.ckpt.iteration,
            trainer.ckpt.loss_history.last().copied().unwrap_or(f64::NAN)
        );
    }
    let ckpt = trainer.run()?;

    for mode in [Mode::L, Mode::Lm] {
        let outs = finetune_all(&cfg, &ckpt, &tasks.s2, mode, &cfg.finetune, false)?;
        let first: Vec<f64> = outs.iter().map(|o| o.record.series[0].rel_l2).collect();
        let last: Vec<f64> = outs.iter().map(|o| o.record.series.last().unwrap().rel_l2).collect();
        let (a, b) = (mean_ci(&first)?, mean_ci(&last)?);
        println!(
            "{:>6}: rel L2 {:.4} [{:.4}, {:.4}] -> {:.4} [{:.4}, {:.4}] over {} tasks",
            mode.method(),
            a.mean,
            a.lo,
            a.hi,
            b.mean,
            b.lo,
            b.hi,
            outs.len()
        );
    }
    Ok(())
}
