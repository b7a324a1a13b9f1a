//! Pre-training over a task family, latent initialization for new tasks,
//! latent-only (MAD-L) and joint (MAD-LM) fine-tuning, and checkpoints.

use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{Error, Result};
use crate::network::{init_siren, LatentVector, ModelParams, NetworkConfig, Trainable};
use crate::problems::{TaskSpec, TaskVariant};
use crate::trainer::{
    batch_for, clip_global_norm, fit_task, loss_and_grad, lr_at, purpose, stream_rng, AdamState, EvalSet,
    FitOptions, FitOutcome, TrainConfig,
};

pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_MAGIC: &[u8; 8] = b"MADCKPT1";
/// Grid size used to compare Burgers initial conditions for nearest-task lookup.
pub const NEAREST_GRID: usize = 128;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    /// Pre-training tasks, sorted by id.
    pub tasks: Vec<TaskSpec>,
    pub theta: ModelParams,
    /// `(task id, z)` in the same order as `tasks`.
    pub latents: Vec<(u64, LatentVector)>,
    /// Seed and next iteration, little-endian; enough to continue the
    /// stateless per-iteration RNG streams.
    pub rng_state: Vec<u8>,
    pub adam: AdamState,
    pub iteration: u64,
    /// Mean per-task loss of each completed iteration.
    pub loss_history: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    network: NetworkConfig,
    train: TrainConfig,
    tasks: Vec<TaskSpec>,
    latent_ids: Vec<u64>,
    rng_state: String,
    adam_step: u64,
    adam_blocks: Vec<crate::trainer::Block>,
    iteration: u64,
}

fn rng_state(seed: u64, next_iter: u64) -> Vec<u8> {
    let mut v = seed.to_le_bytes().to_vec();
    v.extend_from_slice(&next_iter.to_le_bytes());
    v
}

impl Checkpoint {
    pub fn validate(&self) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        if self.latents.len() != self.tasks.len() {
            return Err(Error::Checkpoint(format!(
                "{} latents for {} tasks",
                self.latents.len(),
                self.tasks.len()
            )));
        }
        if self.theta.len() != self.network.param_count() {
            return Err(Error::Checkpoint("theta length does not match network".into()));
        }
        for ((id, z), t) in self.latents.iter().zip(&self.tasks) {
            if *id != t.id || z.dim() != self.network.latent_dim || !z.is_finite() {
                return Err(Error::Checkpoint(format!("bad latent for task {id}")));
            }
        }
        if self.adam.len() != self.theta.len() + self.tasks.len() * self.network.latent_dim {
            return Err(Error::Checkpoint("optimizer state has the wrong size".into()));
        }
        Ok(())
    }

    pub fn latent_of(&self, task_id: u64) -> Option<&LatentVector> {
        self.latents.iter().find(|(id, _)| *id == task_id).map(|(_, z)| z)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let header = CheckpointHeader {
            version: self.version,
            network: self.network.clone(),
            train: self.train.clone(),
            tasks: self.tasks.clone(),
            latent_ids: self.latents.iter().map(|(id, _)| *id).collect(),
            rng_state: hex::encode(&self.rng_state),
            adam_step: self.adam.step,
            adam_blocks: self.adam.blocks.clone(),
            iteration: self.iteration,
        };
        let latents: Vec<f64> = self.latents.iter().flat_map(|(_, z)| z.0.iter().copied()).collect();
        binio::encode(
            CHECKPOINT_MAGIC,
            &header,
            &[
                ("theta", &self.theta.flat),
                ("latents", &latents),
                ("adam_m", &self.adam.m),
                ("adam_v", &self.adam.v),
                ("loss_history", &self.loss_history),
            ],
        )
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, mut blocks): (CheckpointHeader, _) = binio::decode(CHECKPOINT_MAGIC, bytes)?;
        if h.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                h.version
            )));
        }
        let l = h.network.latent_dim;
        let flat = binio::take_block(&mut blocks, "latents")?;
        if flat.len() != l * h.latent_ids.len() {
            return Err(Error::Checkpoint("latent block has the wrong length".into()));
        }
        let latents = h
            .latent_ids
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, LatentVector(flat[i * l..(i + 1) * l].to_vec())))
            .collect();
        let ckpt = Self {
            version: h.version,
            theta: ModelParams::from_flat(&h.network, binio::take_block(&mut blocks, "theta")?)
                .map_err(|e| Error::Checkpoint(e.to_string()))?,
            network: h.network,
            train: h.train,
            tasks: h.tasks,
            latents,
            rng_state: hex::decode(&h.rng_state).map_err(|e| Error::Checkpoint(e.to_string()))?,
            adam: AdamState {
                m: binio::take_block(&mut blocks, "adam_m")?,
                v: binio::take_block(&mut blocks, "adam_v")?,
                step: h.adam_step,
                blocks: h.adam_blocks,
            },
            iteration: h.iteration,
            loss_history: binio::take_block(&mut blocks, "loss_history")?,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Joint optimization of `θ` and one latent per task.
pub struct Pretrainer {
    pub ckpt: Checkpoint,
}

impl Pretrainer {
    pub fn new(tasks: &[TaskSpec], network: &NetworkConfig, train: &TrainConfig) -> Result<Self> {
        network.validate()?;
        train.validate()?;
        if tasks.is_empty() {
            return Err(Error::Config("pre-training needs at least one task".into()));
        }
        let mut tasks = tasks.to_vec();
        tasks.sort_by_key(|t| t.id);
        if tasks.windows(2).any(|w| w[0].id == w[1].id) {
            return Err(Error::Config("duplicate task ids".into()));
        }
        for t in &tasks {
            t.validate()?;
            if t.input_dim() != network.input_dim {
                return Err(Error::Dimension {
                    what: "network input_dim for task",
                    expected: t.input_dim(),
                    got: network.input_dim,
                });
            }
        }
        let latents: Vec<(u64, LatentVector)> = tasks
            .iter()
            .map(|t| {
                let mut rng = stream_rng(train.seed, purpose::LATENT_INIT, t.id, 0);
                let z = (0..network.latent_dim)
                    .map(|_| train.latent_init_sd * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                (t.id, LatentVector(z))
            })
            .collect();
        let theta = init_siren(network, train.seed);
        let mut blocks = vec![("theta".to_string(), theta.len())];
        blocks.extend(tasks.iter().map(|t| (format!("z[{}]", t.id), network.latent_dim)));
        let block_refs: Vec<(&str, usize)> = blocks.iter().map(|(n, l)| (n.as_str(), *l)).collect();
        Ok(Self {
            ckpt: Checkpoint {
                version: CHECKPOINT_VERSION,
                network: network.clone(),
                train: train.clone(),
                tasks,
                theta,
                latents,
                rng_state: rng_state(train.seed, 0),
                adam: AdamState::new(&block_refs),
                iteration: 0,
                loss_history: Vec::new(),
            },
        })
    }

    pub fn resume(ckpt: Checkpoint) -> Result<Self> {
        ckpt.validate()?;
        Ok(Self { ckpt })
    }

    fn selected(&self, iter: u64) -> Vec<usize> {
        let n = self.ckpt.tasks.len();
        match self.ckpt.train.tasks_per_iter {
            Some(k) if k < n => {
                let mut rng = stream_rng(self.ckpt.train.seed, purpose::TASK_SUBSET, 0, iter);
                let mut pick = index::sample(&mut rng, n, k).into_vec();
                pick.sort_unstable();
                pick
            }
            _ => (0..n).collect(),
        }
    }

    /// One Adam step on the summed loss of the selected tasks; returns the
    /// mean per-task loss before the step.
    pub fn step(&mut self) -> Result<f64> {
        let c = &self.ckpt;
        let iter = c.iteration;
        let picked = self.selected(iter);
        let results: Vec<Result<_>> = picked
            .par_iter()
            .map(|&i| {
                let task = &c.tasks[i];
                let batch = batch_for(task, &c.train, purpose::PRETRAIN_BATCH, iter)?;
                loss_and_grad(task, &c.network, &c.theta, &c.latents[i].1, &batch, &c.train, Trainable::ALL)
            })
            .collect();
        let l = c.network.latent_dim;
        let n_theta = c.theta.len();
        let mut grad = vec![0.0; c.adam.len()];
        let mut total = 0.0;
        for (&i, r) in picked.iter().zip(results) {
            let g = r?;
            total += g.loss.total;
            for (acc, x) in grad[..n_theta].iter_mut().zip(&g.params) {
                *acc += x;
            }
            grad[n_theta + i * l..n_theta + (i + 1) * l].copy_from_slice(&g.latent);
        }
        let mean = total / picked.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence { iteration: iter, loss: mean });
        }
        if let Some(clip) = c.train.grad_clip {
            clip_global_norm(&mut grad, clip);
        }
        let lr = lr_at(&c.train, iter);
        let c = &mut self.ckpt;
        let mut vars = c.theta.flat.clone();
        for (_, z) in &c.latents {
            vars.extend(&z.0);
        }
        c.adam.step(&mut vars, &grad, lr)?;
        c.theta.flat.copy_from_slice(&vars[..n_theta]);
        for (i, (_, z)) in c.latents.iter_mut().enumerate() {
            z.0.copy_from_slice(&vars[n_theta + i * l..n_theta + (i + 1) * l]);
        }
        c.iteration += 1;
        c.rng_state = rng_state(c.train.seed, c.iteration);
        c.loss_history.push(mean);
        Ok(mean)
    }

    pub fn run_until(&mut self, iteration: u64) -> Result<()> {
        while self.ckpt.iteration < iteration {
            self.step()?;
        }
        Ok(())
    }

    pub fn run(mut self) -> Result<Checkpoint> {
        let t = self.ckpt.train.total_iters;
        self.run_until(t)?;
        Ok(self.ckpt)
    }
}

/// Pre-train for `train.total_iters` iterations from scratch.
pub fn pretrain(tasks: &[TaskSpec], network: &NetworkConfig, train: &TrainConfig) -> Result<Checkpoint> {
    Pretrainer::new(tasks, network, train)?.run()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentInit {
    Nearest,
    Mean,
    Zero,
}

fn eta_distance(a: &TaskSpec, b: &TaskSpec) -> Result<f64> {
    match (&a.variant, &b.variant) {
        (TaskVariant::OdeShift { eta: x }, TaskVariant::OdeShift { eta: y }) => Ok((x - y).abs()),
        (TaskVariant::Burgers1d { u0: f, .. }, TaskVariant::Burgers1d { u0: g, .. }) => Ok((0..NEAREST_GRID)
            .map(|j| {
                let x = j as f64 / NEAREST_GRID as f64;
                (f.evaluate_at(x) - g.evaluate_at(x)).powi(2)
            })
            .sum::<f64>()
            .sqrt()),
        (TaskVariant::LaplaceTriangle { .. }, TaskVariant::LaplaceTriangle { .. }) => Err(Error::Config(
            "nearest latent init is undefined for laplace_triangle tasks (domains differ); use `mean`".into(),
        )),
        _ => Err(Error::Task(format!(
            "cannot compare {} task with {} task",
            a.kind(),
            b.kind()
        ))),
    }
}

pub fn init_latent(task: &TaskSpec, ckpt: &Checkpoint, strategy: LatentInit) -> Result<LatentVector> {
    let l = ckpt.network.latent_dim;
    if ckpt.latents.is_empty() {
        return Err(Error::Checkpoint("checkpoint has no latents".into()));
    }
    match strategy {
        LatentInit::Zero => Ok(LatentVector::zeros(l)),
        LatentInit::Mean => {
            let n = ckpt.latents.len() as f64;
            Ok(LatentVector(
                (0..l)
                    .map(|k| ckpt.latents.iter().map(|(_, z)| z.0[k]).sum::<f64>() / n)
                    .collect(),
            ))
        }
        LatentInit::Nearest => {
            let mut best: Option<(f64, usize)> = None;
            for (i, t) in ckpt.tasks.iter().enumerate() {
                let d = eta_distance(task, t)?;
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, i));
                }
            }
            Ok(ckpt.latents[best.expect("non-empty").1].1.clone())
        }
    }
}

fn check_task(ckpt: &Checkpoint, task: &TaskSpec) -> Result<()> {
    task.validate()?;
    if task.input_dim() != ckpt.network.input_dim {
        return Err(Error::Dimension {
            what: "network input_dim for task",
            expected: task.input_dim(),
            got: ckpt.network.input_dim,
        });
    }
    Ok(())
}

fn finetune(
    ckpt: &Checkpoint,
    task: &TaskSpec,
    z0: LatentVector,
    cfg: &TrainConfig,
    eval: &EvalSet,
    method: &str,
    trainable: Trainable,
    keep_snapshots: bool,
) -> Result<FitOutcome> {
    check_task(ckpt, task)?;
    let opts = FitOptions {
        method: method.to_string(),
        trainable,
        keep_snapshots,
        batch_purpose: purpose::FINETUNE_BATCH,
    };
    fit_task(task, &ckpt.network, ckpt.theta.clone(), z0, cfg, Some(eval), &opts)
}

/// Optimize only the latent with `θ*` frozen.
pub fn finetune_l(
    ckpt: &Checkpoint,
    task: &TaskSpec,
    z0: LatentVector,
    cfg: &TrainConfig,
    eval: &EvalSet,
    keep_snapshots: bool,
) -> Result<FitOutcome> {
    finetune(ckpt, task, z0, cfg, eval, "mad_l", Trainable::LATENT_ONLY, keep_snapshots)
}

/// Optimize latent and weights jointly, starting from `θ*`.
pub fn finetune_lm(
    ckpt: &Checkpoint,
    task: &TaskSpec,
    z0: LatentVector,
    cfg: &TrainConfig,
    eval: &EvalSet,
    keep_snapshots: bool,
) -> Result<FitOutcome> {
    finetune(ckpt, task, z0, cfg, eval, "mad_lm", Trainable::ALL, keep_snapshots)
}
