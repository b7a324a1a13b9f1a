//! Pre-train on the shifted-chirp ODE family, fine-tune on the held-out shift
//! with MAD-L and MAD-LM, and write the PCA picture of the solution manifold.
//!
//! cargo run --release --example ode_manifold -- [out_dir]

use std::path::PathBuf;

use madpde::cli::{manifold_points, ExperimentConfig};
use madpde::benchviz::write_manifold_csv;
use madpde::mad::{finetune_l, finetune_lm, init_latent, pretrain};
use madpde::problems::generate_tasks;
use madpde::trainer::EvalSet;

fn main() -> madpde::Result<()> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..");
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| root.join("runs/ode_manifold"));
    let cfg = ExperimentConfig::load(&root.join("configs/ode.json"), &[], None)?;

    let sets = generate_tasks(&cfg.family, cfg.seed)?;
    let ckpt = pretrain(&sets.s1, &cfg.network, &cfg.pretrain)?;
    println!(
        "pre-training loss {:.3e} -> {:.3e} over {} iterations",
        ckpt.loss_history[0],
        ckpt.loss_history.last().unwrap(),
        ckpt.iteration
    );
    for (id, z) in &ckpt.latents {
        print!("{id}:{:+.3} ", z.0[0]);
    }
    println!("\n(task id: learned latent)");

    let target = &sets.s2[0];
    let eval = EvalSet::build(target, &cfg.eval, cfg.seed)?;
    let z0 = init_latent(target, &ckpt, cfg.latent_init)?;
    let l = finetune_l(&ckpt, target, z0.clone(), &cfg.finetune, &eval, false)?;
    let lm = finetune_lm(&ckpt, target, z0, &cfg.finetune, &eval, false)?;
    for run in [&l, &lm] {
        let s = &run.record.series;
        println!(
            "{:>6}: rel L2 {:.4} -> {:.4}",
            run.record.method,
            s[0].rel_l2,
            s.last().unwrap().rel_l2
        );
    }

    std::fs::create_dir_all(&out)?;
    let points = manifold_points(&cfg, &ckpt, &sets.s1, &sets.s2)?;
    write_manifold_csv(&out.join("manifold.csv"), &points)?;
    println!("{} manifold points written to {}", points.len(), out.join("manifold.csv").display());
    Ok(())
}
