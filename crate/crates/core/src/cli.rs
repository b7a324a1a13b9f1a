//! Command-line pipeline: task generation, pre-training, fine-tuning,
//! baselines, evaluation and visualization data, all driven by one JSON
//! experiment config with `--set key=value` overrides.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::baselines::{run_baseline, BaselineKind};
use crate::benchviz::{
    aggregate, pca_fit, project_trajectory, read_convergence_csv, summarize, write_convergence_csv,
    ConvergenceRecord, ManifoldPoint, MethodSummary, write_manifold_csv,
};
use crate::binio::write_atomic;
use crate::error::{Error, Result};
use crate::mad::{finetune_l, finetune_lm, init_latent, Checkpoint, LatentInit, Pretrainer};
use crate::network::{forward_batch, LatentVector, NetworkConfig};
use crate::oracles::{burgers_solve, mean_ci, MeanCi};
use crate::problems::{generate_tasks, load_tasks, save_tasks, FamilyConfig, TaskSpec, TaskVariant};
use crate::trainer::{EvalGrid, EvalSet, FitOutcome, TrainConfig};

pub const TASKS_S1: &str = "tasks_s1.json";
pub const TASKS_S2: &str = "tasks_s2.json";
pub const CONFIG: &str = "config.json";
pub const MANIFEST: &str = "manifest.json";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const PRETRAIN_LOSS: &str = "pretrain_loss.csv";
pub const EVAL_SUMMARY: &str = "eval_summary.json";
pub const CURVES: &str = "curves.csv";
pub const MANIFOLD: &str = "manifold.csv";

/// Everything one experiment needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub seed: u64,
    pub family: FamilyConfig,
    pub network: NetworkConfig,
    /// Network for the baselines; defaults to `network` with no latent input.
    #[serde(default)]
    pub baseline_network: Option<NetworkConfig>,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    #[serde(default)]
    pub eval: EvalGrid,
    pub latent_init: LatentInit,
    #[serde(default)]
    pub baselines: Vec<BaselineKind>,
}

impl ExperimentConfig {
    /// Parse, apply `--set` overrides and an optional seed, then validate.
    pub fn from_value(mut value: Value, sets: &[String], seed: Option<u64>) -> Result<Self> {
        for s in sets {
            apply_set(&mut value, s)?;
        }
        let mut cfg: Self = serde_json::from_value(value)?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.pretrain.seed = cfg.seed;
        cfg.finetune.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, sets: &[String], seed: Option<u64>) -> Result<Self> {
        let value: Value = serde_json::from_slice(&std::fs::read(path)?)?;
        Self::from_value(value, sets, seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.baseline_net().validate()?;
        self.pretrain.validate()?;
        self.finetune.validate()?;
        if self.pretrain.total_iters == 0 {
            return Err(Error::Config("pretrain.total_iters must be >= 1".into()));
        }
        if self.network.latent_dim == 0 {
            return Err(Error::Config("network.latent_dim must be >= 1".into()));
        }
        for b in &self.baselines {
            b.validate()?;
        }
        Ok(())
    }

    pub fn baseline_net(&self) -> NetworkConfig {
        self.baseline_network.clone().unwrap_or_else(|| NetworkConfig {
            latent_dim: 0,
            ..self.network.clone()
        })
    }
}

/// Set `key` (dotted path, numeric segments index arrays) to `raw`, parsed as
/// JSON when possible and as a string otherwise.
pub fn apply_set(root: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("--set expects key=value, got `{spec}`")))?;
    let mut value = Some(serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string())));
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = root;
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        let missing = || Error::Usage(format!("--set: no field `{part}` in `{key}`"));
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value.take().expect("set once"));
                    return Ok(());
                }
                map.get_mut(*part).ok_or_else(missing)?
            }
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| missing())?;
                let slot = items.get_mut(idx).ok_or_else(missing)?;
                if last {
                    *slot = value.take().expect("set once");
                    return Ok(());
                }
                slot
            }
            _ => return Err(missing()),
        };
    }
    Err(Error::Usage("--set: empty key".into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum Mode {
    #[value(name = "L")]
    L,
    #[value(name = "LM")]
    Lm,
}

impl Mode {
    pub fn method(self) -> &'static str {
        match self {
            Mode::L => "mad_l",
            Mode::Lm => "mad_lm",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "madpde", version, about = "Meta-auto-decoder solver for parametric PDEs")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Experiment config; later commands fall back to the copy in the run directory.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run directory. Defaults to `$MADPDE_OUT/<experiment>` or `runs/<experiment>`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for task-parallel work.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    /// Override a config field, e.g. `--set pretrain.total_iters=500`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the S1/S2 task split and reference fields.
    GenTasks,
    /// Pre-train the shared network and the S1 latents.
    Pretrain {
        /// Continue from an existing checkpoint in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Fine-tune on every S2 task.
    Finetune {
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        iters: Option<u64>,
    },
    /// Run a baseline from the config's `baselines` list on every S2 task.
    Baseline {
        /// One of from_scratch, transfer_learning, reptile, maml_fo.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        iters: Option<u64>,
    },
    /// Zero-shot error of the initialized latents and summaries of all recorded runs.
    Eval,
    /// Aggregated convergence curves and, for 1-D families, the PCA manifold.
    Viz,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenTasks => "gen-tasks",
            Command::Pretrain { .. } => "pretrain",
            Command::Finetune { .. } => "finetune",
            Command::Baseline { .. } => "baseline",
            Command::Eval => "eval",
            Command::Viz => "viz",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub command: String,
    pub args: Vec<String>,
    pub config_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub workers: Option<usize>,
    pub revision: String,
    pub started_unix: u64,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn refuse_overwrite(paths: &[PathBuf], force: bool) -> Result<()> {
    if force {
        return Ok(());
    }
    match paths.iter().find(|p| p.exists()) {
        Some(p) => Err(Error::Usage(format!(
            "{} already exists; pass --force to overwrite",
            p.display()
        ))),
        None => Ok(()),
    }
}

fn need(path: &Path, hint: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Usage(format!("missing {}; run `{hint}` first", path.display())))
    }
}

/// Resolve the config and run directory for one invocation.
pub fn resolve(global: &GlobalArgs) -> Result<(ExperimentConfig, PathBuf)> {
    let from_out = global.out.as_ref().map(|o| o.join(CONFIG)).filter(|p| p.exists());
    let path = match (&global.config, from_out) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => p,
        (None, None) => return Err(Error::Usage("no --config given and no config.json in --out".into())),
    };
    let cfg = ExperimentConfig::load(&path, &global.sets, global.seed)?;
    let out = match &global.out {
        Some(o) => o.clone(),
        None => std::env::var_os("MADPDE_OUT")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"))
            .join(&cfg.experiment),
    };
    Ok((cfg, out))
}

pub fn gen_tasks(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let sets = generate_tasks(&cfg.family, cfg.seed)?;
    save_tasks(&out.join(TASKS_S1), &sets.s1)?;
    save_tasks(&out.join(TASKS_S2), &sets.s2)?;
    let refs: Vec<_> = sets
        .s2
        .par_iter()
        .filter_map(|t| match &t.variant {
            TaskVariant::Burgers1d { u0, nu } => Some(
                burgers_solve(u0, *nu, cfg.eval.burgers_solver_nx, cfg.eval.burgers_nt)
                    .map(|mut f| {
                        f.task_id = t.id;
                        f
                    }),
            ),
            _ => None,
        })
        .collect();
    if !refs.is_empty() {
        std::fs::create_dir_all(out.join("references"))?;
    }
    for r in refs {
        let r = r?;
        r.save(&out.join("references").join(format!("task_{}.bin", r.task_id)))?;
    }
    Ok(())
}

fn load_sets(out: &Path) -> Result<(Vec<TaskSpec>, Vec<TaskSpec>)> {
    need(&out.join(TASKS_S1), "gen-tasks")?;
    Ok((load_tasks(&out.join(TASKS_S1))?, load_tasks(&out.join(TASKS_S2))?))
}

fn load_checkpoint(out: &Path) -> Result<Checkpoint> {
    let p = out.join(CHECKPOINT);
    need(&p, "pretrain")?;
    Checkpoint::load(&p)
}

pub fn pretrain_run(cfg: &ExperimentConfig, s1: &[TaskSpec], resume: Option<Checkpoint>) -> Result<Checkpoint> {
    let trainer = match resume {
        Some(ck) => Pretrainer::resume(ck)?,
        None => Pretrainer::new(s1, &cfg.network, &cfg.pretrain)?,
    };
    trainer.run()
}

fn write_loss_csv(path: &Path, history: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["iteration", "loss"])?;
    for (i, l) in history.iter().enumerate() {
        w.write_record([i.to_string(), format!("{l:e}")])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

/// Fine-tune every task in `tasks` from the checkpoint; results in task order.
pub fn finetune_all(
    cfg: &ExperimentConfig,
    ckpt: &Checkpoint,
    tasks: &[TaskSpec],
    mode: Mode,
    train: &TrainConfig,
    keep_snapshots: bool,
) -> Result<Vec<FitOutcome>> {
    tasks
        .par_iter()
        .map(|t| {
            let eval = EvalSet::build(t, &cfg.eval, cfg.seed)?;
            let z0 = init_latent(t, ckpt, cfg.latent_init)?;
            match mode {
                Mode::L => finetune_l(ckpt, t, z0, train, &eval, keep_snapshots),
                Mode::Lm => finetune_lm(ckpt, t, z0, train, &eval, keep_snapshots),
            }
        })
        .collect()
}

fn with_iters(train: &TrainConfig, iters: Option<u64>) -> TrainConfig {
    let mut t = train.clone();
    if let Some(n) = iters {
        t.total_iters = n;
    }
    t
}

fn records(outcomes: &[FitOutcome]) -> Vec<ConvergenceRecord> {
    outcomes.iter().map(|o| o.record.clone()).collect()
}

fn find_baseline<'a>(cfg: &'a ExperimentConfig, name: &str) -> Result<&'a BaselineKind> {
    cfg.baselines.iter().find(|b| b.name() == name).ok_or_else(|| {
        let known: Vec<&str> = cfg.baselines.iter().map(|b| b.name()).collect();
        Error::Usage(format!("baseline `{name}` not in config (available: {})", known.join(", ")))
    })
}

/// Mean with an optional 95% interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean: f64,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

impl ErrorStats {
    pub fn of(errors: &[f64]) -> Result<Self> {
        if errors.len() >= 2 {
            let MeanCi { mean, lo, hi } = mean_ci(errors)?;
            return Ok(Self {
                mean,
                lo: Some(lo),
                hi: Some(hi),
            });
        }
        let mean = *errors.first().ok_or(Error::TooFewSamples { needed: 1, got: 0 })?;
        Ok(Self { mean, lo: None, hi: None })
    }
}

/// Summary written by `eval`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub latent_init: LatentInit,
    pub n_tasks: usize,
    /// Relative L2 error of the initialized latent with the pre-trained
    /// weights; the interval needs at least two tasks.
    pub initial: ErrorStats,
    pub methods: Vec<MethodSummary>,
}

fn recorded_runs(out: &Path) -> Result<Vec<ConvergenceRecord>> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(out)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let n = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            (n.starts_with("finetune_") || n.starts_with("baseline_")) && n.ends_with(".csv")
        })
        .collect();
    names.sort();
    let mut all = Vec::new();
    for p in names {
        all.extend(read_convergence_csv(&p)?);
    }
    Ok(all)
}

pub fn evaluate(cfg: &ExperimentConfig, ckpt: &Checkpoint, s2: &[TaskSpec], out: &Path) -> Result<EvalSummary> {
    let errors: Vec<f64> = s2
        .par_iter()
        .map(|t| {
            let eval = EvalSet::build(t, &cfg.eval, cfg.seed)?;
            let z = init_latent(t, ckpt, cfg.latent_init)?;
            eval.rel_l2(&ckpt.network, &ckpt.theta, &z)
        })
        .collect::<Result<_>>()?;
    Ok(EvalSummary {
        latent_init: cfg.latent_init,
        n_tasks: s2.len(),
        initial: ErrorStats::of(&errors)?,
        methods: summarize(&recorded_runs(out)?)?,
    })
}

fn write_curves(path: &Path, runs: &[ConvergenceRecord]) -> Result<()> {
    let mut methods: Vec<&str> = runs.iter().map(|r| r.method.as_str()).collect();
    methods.sort();
    methods.dedup();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "iteration", "n", "mean", "lo", "hi"])?;
    for m in methods {
        let group: Vec<ConvergenceRecord> = runs.iter().filter(|r| r.method == m).cloned().collect();
        for p in aggregate(&group)? {
            let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
            w.write_record([
                m.to_string(),
                p.iteration.to_string(),
                p.n.to_string(),
                format!("{:e}", p.mean),
                opt(p.lo),
                opt(p.hi),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

/// PCA picture of a 1-D family: exact S1 solutions, their pre-trained fits,
/// the latent curve (1-D latents) and both fine-tune trajectories on the
/// first S2 task, all projected on the top-2 components of the exact set.
pub fn manifold_points(
    cfg: &ExperimentConfig,
    ckpt: &Checkpoint,
    s1: &[TaskSpec],
    s2: &[TaskSpec],
) -> Result<Vec<ManifoldPoint>> {
    let target = s2
        .first()
        .ok_or_else(|| Error::Config("manifold view needs at least one S2 task".into()))?;
    let evals: Vec<EvalSet> = s1
        .iter()
        .chain(std::iter::once(target))
        .map(|t| EvalSet::build(t, &cfg.eval, cfg.seed))
        .collect::<Result<_>>()?;
    let exact: Vec<Vec<f64>> = evals.iter().map(|e| e.reference.clone()).collect();
    let proj = pca_fit(&exact)?;
    let coords = &evals[0].coords;
    let mut points = Vec::new();
    let mut push = |label: String, step: u64, v: &[f64]| -> Result<()> {
        let [pc1, pc2] = proj.project(v)?;
        points.push(ManifoldPoint { label, step, pc1, pc2 });
        Ok(())
    };
    for (t, e) in s1.iter().zip(&exact) {
        push(format!("exact:{}", t.id), 0, e)?;
    }
    push(format!("target:{}", target.id), 0, exact.last().expect("target"))?;
    for (id, z) in &ckpt.latents {
        let y = forward_batch(&ckpt.theta, &ckpt.network, coords.view(), z)?;
        push(format!("pretrained:{id}"), 0, y.row(0).as_slice().expect("row"))?;
    }
    if ckpt.network.latent_dim == 1 {
        let zs: Vec<f64> = ckpt.latents.iter().map(|(_, z)| z.0[0]).collect();
        let lo = zs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = zs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pad = 0.1 * (hi - lo).max(1e-3);
        for k in 0..=100u64 {
            let z = LatentVector(vec![lo - pad + (hi - lo + 2.0 * pad) * k as f64 / 100.0]);
            let y = forward_batch(&ckpt.theta, &ckpt.network, coords.view(), &z)?;
            push("latent_curve".into(), k, y.row(0).as_slice().expect("row"))?;
        }
    }
    for mode in [Mode::L, Mode::Lm] {
        let out = finetune_all(cfg, ckpt, std::slice::from_ref(target), mode, &cfg.finetune, true)?;
        let traj = project_trajectory(&proj, &out[0].snapshots.iter().map(|s| s.1.clone()).collect::<Vec<_>>())?;
        for ((step, _), [pc1, pc2]) in out[0].snapshots.iter().zip(traj) {
            points.push(ManifoldPoint {
                label: mode.method().into(),
                step: *step,
                pc1,
                pc2,
            });
        }
    }
    Ok(points)
}

fn manifest(global: &GlobalArgs, cfg: &ExperimentConfig, out: &Path, command: &Command) -> RunManifest {
    RunManifest {
        experiment: cfg.experiment.clone(),
        command: command.name().into(),
        args: std::env::args().skip(1).collect(),
        config_path: global.config.clone(),
        out_dir: out.to_path_buf(),
        seed: cfg.seed,
        workers: global.workers,
        revision: option_env!("MADPDE_REVISION")
            .unwrap_or(env!("CARGO_PKG_VERSION"))
            .to_string(),
        started_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    }
}

fn outputs(command: &Command, out: &Path) -> Vec<PathBuf> {
    match command {
        Command::GenTasks => vec![out.join(TASKS_S1), out.join(TASKS_S2)],
        Command::Pretrain { resume: false } => vec![out.join(CHECKPOINT)],
        Command::Pretrain { resume: true } => vec![],
        Command::Finetune { mode, .. } => vec![out.join(format!("finetune_{}.csv", mode.method()))],
        Command::Baseline { kind, .. } => vec![out.join(format!("baseline_{kind}.csv"))],
        Command::Eval => vec![out.join(EVAL_SUMMARY)],
        Command::Viz => vec![out.join(CURVES)],
    }
}

/// Execute a parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    let (cfg, out) = resolve(&cli.global)?;
    refuse_overwrite(&outputs(&cli.command, &out), cli.global.force)?;
    std::fs::create_dir_all(&out)?;
    write_json(&out.join(MANIFEST), &manifest(&cli.global, &cfg, &out, &cli.command))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| dispatch(&cli.command, &cfg, &out))
}

fn dispatch(command: &Command, cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    match command {
        Command::GenTasks => {
            write_json(&out.join(CONFIG), cfg)?;
            gen_tasks(cfg, out)
        }
        Command::Pretrain { resume } => {
            let (s1, _) = load_sets(out)?;
            let prior = if *resume { Some(load_checkpoint(out)?) } else { None };
            let ckpt = pretrain_run(cfg, &s1, prior)?;
            ckpt.save(&out.join(CHECKPOINT))?;
            write_loss_csv(&out.join(PRETRAIN_LOSS), &ckpt.loss_history)
        }
        Command::Finetune { mode, iters } => {
            let (_, s2) = load_sets(out)?;
            let ckpt = load_checkpoint(out)?;
            let train = with_iters(&cfg.finetune, *iters);
            let runs = records(&finetune_all(cfg, &ckpt, &s2, *mode, &train, false)?);
            write_convergence_csv(&out.join(format!("finetune_{}.csv", mode.method())), &runs)?;
            write_json(
                &out.join(format!("summary_finetune_{}.json", mode.method())),
                &summarize(&runs)?,
            )
        }
        Command::Baseline { kind, iters } => {
            let b = find_baseline(cfg, kind)?;
            let (s1, s2) = load_sets(out)?;
            let train = with_iters(&cfg.finetune, *iters);
            let net = cfg.baseline_net();
            let results: Vec<_> = s2
                .par_iter()
                .map(|t| {
                    let eval = EvalSet::build(t, &cfg.eval, cfg.seed)?;
                    run_baseline(b, &s1, t, &net, &train, Some(&eval))
                })
                .collect::<Result<_>>()?;
            let runs: Vec<ConvergenceRecord> = results.iter().map(|r| r.outcome.record.clone()).collect();
            write_convergence_csv(&out.join(format!("baseline_{kind}.csv")), &runs)?;
            write_json(&out.join(format!("summary_baseline_{kind}.json")), &summarize(&runs)?)
        }
        Command::Eval => {
            let (_, s2) = load_sets(out)?;
            let ckpt = load_checkpoint(out)?;
            write_json(&out.join(EVAL_SUMMARY), &evaluate(cfg, &ckpt, &s2, out)?)
        }
        Command::Viz => {
            write_curves(&out.join(CURVES), &recorded_runs(out)?)?;
            if matches!(cfg.family, FamilyConfig::OdeShift { .. }) {
                let (s1, s2) = load_sets(out)?;
                let ckpt = load_checkpoint(out)?;
                write_manifold_csv(&out.join(MANIFOLD), &manifold_points(cfg, &ckpt, &s1, &s2)?)?;
            }
            Ok(())
        }
    }
}

/// Parse `std::env::args`, run, and map errors to a nonzero exit code.
pub fn main_from_env() -> i32 {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn set_overrides_nested_fields() {
        let mut v = json!({"a": {"b": 1, "c": [1, 2]}, "s": "x"});
        apply_set(&mut v, "a.b=2.5").unwrap();
        apply_set(&mut v, "a.c.1=7").unwrap();
        apply_set(&mut v, "s=hello").unwrap();
        apply_set(&mut v, "a.new={\"k\":true}").unwrap();
        assert_eq!(v, json!({"a": {"b": 2.5, "c": [1, 7], "new": {"k": true}}, "s": "hello"}));
        assert!(apply_set(&mut v, "nokey").is_err());
        assert!(apply_set(&mut v, "a.c.9=1").is_err());
        assert!(apply_set(&mut v, "missing.x=1").is_err());
    }

    #[test]
    fn mode_parses_from_cli_names() {
        assert_eq!(Mode::from_str("L", false).unwrap(), Mode::L);
        assert_eq!(Mode::from_str("LM", false).unwrap(), Mode::Lm);
        assert!(Mode::from_str("X", false).is_err());
    }

    #[test]
    fn cli_parses_global_flags_after_subcommand() {
        let cli = Cli::try_parse_from([
            "madpde", "finetune", "--mode", "LM", "--iters", "3", "--config", "c.json", "--set", "seed=4", "--force",
        ])
        .unwrap();
        assert!(cli.global.force);
        assert_eq!(cli.global.sets, vec!["seed=4".to_string()]);
        assert!(matches!(
            cli.command,
            Command::Finetune {
                mode: Mode::Lm,
                iters: Some(3)
            }
        ));
    }
}
