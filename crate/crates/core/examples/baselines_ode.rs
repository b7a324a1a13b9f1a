//! Compare MAD-LM with From-Scratch, Transfer-Learning, Reptile and
//! first-order MAML on the held-out ODE task, reporting the iteration at
//! which each first reaches relative L2 0.05.
//!
//! cargo run --release --example baselines_ode

use std::path::PathBuf;

use madpde::baselines::run_baseline;
use madpde::cli::ExperimentConfig;
use madpde::mad::{finetune_lm, init_latent, pretrain};
use madpde::problems::generate_tasks;
use madpde::trainer::EvalSet;

fn main() -> madpde::Result<()> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..");
    let cfg = ExperimentConfig::load(&root.join("configs/ode.json"), &[], None)?;
    let mut train = cfg.finetune.clone();
    train.eval_every = 1;

    let sets = generate_tasks(&cfg.family, cfg.seed)?;
    let target = &sets.s2[0];
    let eval = EvalSet::build(target, &cfg.eval, cfg.seed)?;
    let report = |name: &str, rec: &madpde::benchviz::ConvergenceRecord| {
        println!(
            "{name:>18}: start {:.4}, final {:.4}, reaches 0.05 at {}",
            rec.series[0].rel_l2,
            rec.series.last().unwrap().rel_l2,
            rec.first_reaching(0.05).map_or("never".to_string(), |i| i.to_string())
        );
    };

    let ckpt = pretrain(&sets.s1, &cfg.network, &cfg.pretrain)?;
    let z0 = init_latent(target, &ckpt, cfg.latent_init)?;
    report("mad_lm", &finetune_lm(&ckpt, target, z0, &train, &eval, false)?.record);

    for kind in &cfg.baselines {
        let run = run_baseline(kind, &sets.s1, target, &cfg.baseline_net(), &train, Some(&eval))?;
        report(kind.name(), &run.outcome.record);
        if let (Some(a), Some(b)) = (run.meta_loss.first(), run.meta_loss.last()) {
            println!("{:>18}  meta loss {a:.3e} -> {b:.3e}", "");
        }
    }
    Ok(())
}
