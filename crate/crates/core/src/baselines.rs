//! Comparison methods: PINN from scratch, transfer learning from one task,
//! Reptile and first-order MAML. All fine-tune through [`fit_task`].

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{init_siren, LatentVector, ModelParams, NetworkConfig, Trainable};
use crate::problems::TaskSpec;
use crate::trainer::{
    batch_for, fit_task, loss_and_grad, purpose, stream_rng, AdamState, EvalSet, FitOptions, FitOutcome,
    TrainConfig,
};

fn default_inner_steps() -> usize {
    8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BaselineKind {
    FromScratch {},
    TransferLearning {
        pretrain_iters: u64,
    },
    /// `meta_lr` is the initial interpolation step, annealed linearly to 0.
    Reptile {
        inner_lr: f64,
        #[serde(default = "default_inner_steps")]
        inner_steps: usize,
        #[serde(default = "one")]
        meta_lr: f64,
        meta_iters: u64,
    },
    MamlFirstOrder {
        inner_lr: f64,
        #[serde(default = "default_inner_steps")]
        inner_steps: usize,
        meta_lr: f64,
        meta_iters: u64,
        meta_batch: usize,
    },
}

fn one() -> f64 {
    1.0
}

impl BaselineKind {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::FromScratch {} => "from_scratch",
            BaselineKind::TransferLearning { .. } => "transfer_learning",
            BaselineKind::Reptile { .. } => "reptile",
            BaselineKind::MamlFirstOrder { .. } => "maml_fo",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("{}: {m}", self.name())));
        match *self {
            BaselineKind::FromScratch {} => Ok(()),
            BaselineKind::TransferLearning { .. } => Ok(()),
            BaselineKind::Reptile {
                inner_lr, meta_lr, ..
            } => {
                if !(inner_lr > 0.0 && inner_lr.is_finite()) {
                    return bad("inner_lr must be positive");
                }
                if !(0.0..=1.0).contains(&meta_lr) {
                    return bad("meta_lr must lie in [0, 1]");
                }
                Ok(())
            }
            BaselineKind::MamlFirstOrder {
                inner_lr,
                meta_lr,
                meta_batch,
                ..
            } => {
                if !(inner_lr >= 0.0 && inner_lr.is_finite()) {
                    return bad("inner_lr must be non-negative");
                }
                if !(meta_lr > 0.0 && meta_lr.is_finite()) {
                    return bad("meta_lr must be positive");
                }
                if meta_batch == 0 {
                    return bad("meta_batch must be at least 1");
                }
                Ok(())
            }
        }
    }
}

/// Fine-tune outcome plus the per-iteration meta-training loss, empty for
/// methods without a meta stage.
#[derive(Clone, Debug)]
pub struct BaselineRun {
    pub outcome: FitOutcome,
    pub meta_loss: Vec<f64>,
}

fn require_plain(net: &NetworkConfig) -> Result<()> {
    if net.latent_dim != 0 {
        return Err(Error::Config(format!(
            "baselines need latent_dim = 0, got {}",
            net.latent_dim
        )));
    }
    net.validate()
}

fn empty() -> LatentVector {
    LatentVector::zeros(0)
}

fn finetune(
    task: &TaskSpec,
    net: &NetworkConfig,
    params: ModelParams,
    cfg: &TrainConfig,
    eval: Option<&EvalSet>,
    method: &str,
) -> Result<FitOutcome> {
    let opts = FitOptions {
        method: method.to_string(),
        trainable: Trainable::PARAMS_ONLY,
        keep_snapshots: false,
        batch_purpose: purpose::FINETUNE_BATCH,
    };
    fit_task(task, net, params, empty(), cfg, eval, &opts)
}

/// Plain PINN training on one task from a seeded random init.
pub fn run_from_scratch(
    task: &TaskSpec,
    net: &NetworkConfig,
    cfg: &TrainConfig,
    eval: Option<&EvalSet>,
) -> Result<FitOutcome> {
    require_plain(net)?;
    finetune(task, net, init_siren(net, cfg.seed), cfg, eval, "from_scratch")
}

/// Seeded choice of the single S1 task used by transfer learning.
pub fn pick_transfer_task(s1: &[TaskSpec], seed: u64) -> Result<&TaskSpec> {
    if s1.is_empty() {
        return Err(Error::Config("transfer learning needs a non-empty S1".into()));
    }
    let mut rng = stream_rng(seed, purpose::META_TASK, u64::MAX, 0);
    Ok(&s1[rng.random_range(0..s1.len())])
}

/// PINN-pretrain on `source` for `pretrain_iters`, then fine-tune all weights on `task`.
pub fn run_transfer(
    source: &TaskSpec,
    task: &TaskSpec,
    net: &NetworkConfig,
    cfg: &TrainConfig,
    pretrain_iters: u64,
    eval: Option<&EvalSet>,
) -> Result<FitOutcome> {
    require_plain(net)?;
    let mut pre_cfg = cfg.clone();
    pre_cfg.total_iters = pretrain_iters.max(1);
    let opts = FitOptions {
        method: "transfer_pretrain".into(),
        trainable: Trainable::PARAMS_ONLY,
        keep_snapshots: false,
        batch_purpose: purpose::PRETRAIN_BATCH,
    };
    let params = if pretrain_iters == 0 {
        init_siren(net, cfg.seed)
    } else {
        fit_task(source, net, init_siren(net, cfg.seed), empty(), &pre_cfg, None, &opts)?.params
    };
    finetune(task, net, params, cfg, eval, "transfer_learning")
}

/// `steps` Adam steps on one task from `params` with a fresh optimizer state.
/// Returns the adapted weights and the loss at the first step.
fn inner_adam(
    task: &TaskSpec,
    net: &NetworkConfig,
    mut params: ModelParams,
    cfg: &TrainConfig,
    lr: f64,
    steps: usize,
    batch_base: u64,
) -> Result<(ModelParams, f64)> {
    let mut adam = AdamState::new(&[("theta", params.len())]);
    let mut first = f64::NAN;
    for j in 0..steps {
        let batch = batch_for(task, cfg, purpose::META_BATCH, batch_base + j as u64)?;
        let g = loss_and_grad(task, net, &params, &empty(), &batch, cfg, Trainable::PARAMS_ONLY)?;
        if j == 0 {
            first = g.loss.total;
        }
        adam.step(&mut params.flat, &g.params, lr)?;
    }
    Ok((params, first))
}

/// Reptile meta-training on `s1`; returns the meta-learned weights and the
/// inner-loop starting loss per meta-iteration.
pub fn reptile_meta(
    s1: &[TaskSpec],
    net: &NetworkConfig,
    cfg: &TrainConfig,
    inner_lr: f64,
    inner_steps: usize,
    meta_lr: f64,
    meta_iters: u64,
) -> Result<(ModelParams, Vec<f64>)> {
    require_plain(net)?;
    if s1.is_empty() {
        return Err(Error::Config("reptile needs a non-empty S1".into()));
    }
    let mut theta = init_siren(net, cfg.seed);
    let mut history = Vec::with_capacity(meta_iters as usize);
    for k in 0..meta_iters {
        let mut rng = stream_rng(cfg.seed, purpose::META_TASK, 0, k);
        let task = &s1[rng.random_range(0..s1.len())];
        let base = k * inner_steps as u64;
        let (adapted, loss) = inner_adam(task, net, theta.clone(), cfg, inner_lr, inner_steps, base)?;
        let eps = meta_lr * (1.0 - k as f64 / meta_iters as f64);
        for (t, a) in theta.flat.iter_mut().zip(&adapted.flat) {
            *t += eps * (a - *t);
        }
        history.push(loss);
    }
    Ok((theta, history))
}

/// First-order MAML: each meta-iteration adapts to `meta_batch` tasks with
/// plain SGD, takes the gradient at the adapted weights and feeds the batch
/// mean to an outer Adam. Returns weights and the mean post-adaptation loss.
#[allow(clippy::too_many_arguments)]
pub fn maml_fo_meta(
    s1: &[TaskSpec],
    net: &NetworkConfig,
    cfg: &TrainConfig,
    inner_lr: f64,
    inner_steps: usize,
    meta_lr: f64,
    meta_iters: u64,
    meta_batch: usize,
) -> Result<(ModelParams, Vec<f64>)> {
    require_plain(net)?;
    if s1.is_empty() {
        return Err(Error::Config("maml needs a non-empty S1".into()));
    }
    let mut theta = init_siren(net, cfg.seed);
    let mut adam = AdamState::new(&[("theta", theta.len())]);
    let mut history = Vec::with_capacity(meta_iters as usize);
    let b = meta_batch.min(s1.len());
    for k in 0..meta_iters {
        let mut rng = stream_rng(cfg.seed, purpose::META_TASK, 1, k);
        let mut picked: Vec<usize> = index::sample(&mut rng, s1.len(), b).into_vec();
        picked.sort_unstable();
        let per_task: Vec<Result<(Vec<f64>, f64)>> = picked
            .par_iter()
            .map(|&i| {
                let task = &s1[i];
                let base = k * (inner_steps as u64 + 1);
                let mut p = theta.clone();
                for j in 0..inner_steps {
                    let batch = batch_for(task, cfg, purpose::META_BATCH, base + j as u64)?;
                    let g = loss_and_grad(task, net, &p, &empty(), &batch, cfg, Trainable::PARAMS_ONLY)?;
                    for (w, gw) in p.flat.iter_mut().zip(&g.params) {
                        *w -= inner_lr * gw;
                    }
                }
                let batch = batch_for(task, cfg, purpose::META_BATCH, base + inner_steps as u64)?;
                let g = loss_and_grad(task, net, &p, &empty(), &batch, cfg, Trainable::PARAMS_ONLY)?;
                Ok((g.params, g.loss.total))
            })
            .collect();
        let mut grad = vec![0.0; theta.len()];
        let mut loss = 0.0;
        for r in per_task {
            let (g, l) = r?;
            for (a, gi) in grad.iter_mut().zip(&g) {
                *a += gi / b as f64;
            }
            loss += l / b as f64;
        }
        if !loss.is_finite() {
            return Err(Error::Divergence { iteration: k, loss });
        }
        adam.step(&mut theta.flat, &grad, meta_lr)?;
        history.push(loss);
    }
    Ok((theta, history))
}

/// Run one baseline end to end on `task`.
pub fn run_baseline(
    kind: &BaselineKind,
    s1: &[TaskSpec],
    task: &TaskSpec,
    net: &NetworkConfig,
    cfg: &TrainConfig,
    eval: Option<&EvalSet>,
) -> Result<BaselineRun> {
    kind.validate()?;
    let (outcome, meta_loss) = match *kind {
        BaselineKind::FromScratch {} => (run_from_scratch(task, net, cfg, eval)?, Vec::new()),
        BaselineKind::TransferLearning { pretrain_iters } => {
            let source = pick_transfer_task(s1, cfg.seed)?;
            (run_transfer(source, task, net, cfg, pretrain_iters, eval)?, Vec::new())
        }
        BaselineKind::Reptile {
            inner_lr,
            inner_steps,
            meta_lr,
            meta_iters,
        } => {
            let (theta, hist) = reptile_meta(s1, net, cfg, inner_lr, inner_steps, meta_lr, meta_iters)?;
            (finetune(task, net, theta, cfg, eval, "reptile")?, hist)
        }
        BaselineKind::MamlFirstOrder {
            inner_lr,
            inner_steps,
            meta_lr,
            meta_iters,
            meta_batch,
        } => {
            let (theta, hist) =
                maml_fo_meta(s1, net, cfg, inner_lr, inner_steps, meta_lr, meta_iters, meta_batch)?;
            (finetune(task, net, theta, cfg, eval, "maml_fo")?, hist)
        }
    };
    Ok(BaselineRun { outcome, meta_loss })
}
