//! The command-line pipeline driven in-process: generate tasks, pre-train,
//! fine-tune both ways, run a baseline, evaluate and write plot data.
//!
//! cargo run --release --example cli_pipeline -- [out_dir]

use std::path::PathBuf;

use clap::Parser;
use madpde::cli::{run, Cli};

fn main() -> madpde::Result<()> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..");
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| root.join("runs/cli_pipeline"));
    let config = root.join("configs/ode.json");
    let steps: [&[&str]; 7] = [
        &["gen-tasks"],
        &["pretrain"],
        &["finetune", "--mode", "L"],
        &["finetune", "--mode", "LM"],
        &["baseline", "--kind", "from_scratch"],
        &["eval"],
        &["viz"],
    ];
    for step in steps {
        let mut argv = vec!["madpde"];
        argv.extend_from_slice(step);
        argv.extend(["--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--force"]);
        println!("$ {}", argv.join(" "));
        run(&Cli::parse_from(argv))?;
    }
    for entry in std::fs::read_dir(&out)? {
        let p = entry?.path();
        println!("{}", p.display());
    }
    let summary = std::fs::read_to_string(out.join("eval_summary.json"))?;
    let v: serde_json::Value = serde_json::from_str(&summary)?;
    for m in v["methods"].as_array().into_iter().flatten() {
        println!("{}: mean final rel L2 {}", m["method"], m["mean"]);
    }
    Ok(())
}
