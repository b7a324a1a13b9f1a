//! Physics-informed loss assembly, Adam, the step learning-rate schedule and
//! the single-task training loop shared by fine-tuning and the baselines.

use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::benchviz::{ConvergenceRecord, SeriesPoint};
use crate::diffcore::{Tape, Var};
use crate::error::{Error, Result};
use crate::network::{forward_batch, LatentVector, ModelParams, NetworkConfig, TapedModel, Trainable};
use crate::oracles::{self, burgers_solve, laplace_disk_at, relative_l2};
use crate::problems::{linspace, residual, sample_batch, triangle, SampleBatch, TaskSpec, TaskVariant, ODE_LEFT, ODE_RIGHT};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    pub total_iters: u64,
    pub m_r: usize,
    pub m_bc: usize,
    #[serde(default = "one")]
    pub lambda_bc: f64,
    #[serde(default = "default_inv_sigma2")]
    pub inv_sigma2: f64,
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    #[serde(default)]
    pub seed: u64,
    /// Tasks drawn per pre-training iteration; `None` uses all of them.
    #[serde(default)]
    pub tasks_per_iter: Option<usize>,
    /// Global gradient-norm clip; `None` disables clipping.
    #[serde(default)]
    pub grad_clip: Option<f64>,
    /// Draw fresh random collocation points every this many iterations.
    #[serde(default = "one_u64")]
    pub resample_every: u64,
    /// Standard deviation of the pre-training latent initialization.
    #[serde(default = "default_latent_init_sd")]
    pub latent_init_sd: f64,
}

fn one() -> f64 {
    1.0
}
fn one_u64() -> u64 {
    1
}
fn default_inv_sigma2() -> f64 {
    1e-4
}
fn default_eval_every() -> u64 {
    10
}
fn default_latent_init_sd() -> f64 {
    0.1
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr0 > 0.0) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(self.inv_sigma2 >= 0.0) || !(self.lambda_bc >= 0.0) {
            return bad("inv_sigma2 and lambda_bc must be non-negative".into());
        }
        if self.m_r == 0 || self.m_bc == 0 {
            return bad("m_r and m_bc must be >= 1".into());
        }
        if self.eval_every == 0 || self.resample_every == 0 {
            return bad("eval_every and resample_every must be >= 1".into());
        }
        if !(self.latent_init_sd >= 0.0) {
            return bad(format!("latent_init_sd must be non-negative, got {}", self.latent_init_sd));
        }
        if self.tasks_per_iter == Some(0) {
            return bad("tasks_per_iter must be >= 1".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("grad_clip must be positive, got {c}"));
            }
        }
        Ok(())
    }
}

/// Halves `lr0` at `⌊0.4T⌋`, `⌊0.6T⌋` and `⌊0.8T⌋`.
pub fn lr_at(cfg: &TrainConfig, iter: u64) -> f64 {
    let t = cfg.total_iters;
    let passed = [4, 6, 8].iter().filter(|&&k| iter >= t * k / 10).count();
    cfg.lr0 * 0.5f64.powi(passed as i32)
}

/// Named contiguous range inside an optimizer vector, used in error messages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub blocks: Vec<Block>,
}

impl AdamState {
    pub fn new(blocks: &[(&str, usize)]) -> Self {
        let mut start = 0;
        let blocks: Vec<Block> = blocks
            .iter()
            .map(|&(name, len)| {
                let b = Block {
                    name: name.to_string(),
                    start,
                    len,
                };
                start += len;
                b
            })
            .collect();
        Self {
            m: vec![0.0; start],
            v: vec![0.0; start],
            step: 0,
            blocks,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    fn block_of(&self, i: usize) -> String {
        self.blocks
            .iter()
            .find(|b| (b.start..b.start + b.len).contains(&i))
            .map_or_else(|| format!("index {i}"), |b| format!("{}[{}]", b.name, i - b.start))
    }

    /// One bias-corrected Adam update of `vars` in place.
    pub fn step(&mut self, vars: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if vars.len() != self.len() || grads.len() != self.len() {
            return Err(Error::Dimension {
                what: "Adam variables",
                expected: self.len(),
                got: vars.len().min(grads.len()),
            });
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient {
                step: self.step + 1,
                block: self.block_of(i),
            });
        }
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step as i32);
        let c2 = 1.0 - BETA2.powi(self.step as i32);
        for i in 0..vars.len() {
            let g = grads[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            vars[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
        }
        Ok(())
    }
}

/// Scale `grads` so its Euclidean norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let f = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= f);
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub residual: f64,
    pub boundary: f64,
    pub reg: f64,
    pub total: f64,
}

/// Loss terms as tape nodes.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub residual: Var,
    pub boundary: Var,
    pub reg: Var,
    pub total: Var,
}

impl LossVars {
    pub fn values(&self, tape: &Tape) -> LossBreakdown {
        LossBreakdown {
            residual: tape.scalar(self.residual),
            boundary: tape.scalar(self.boundary),
            reg: tape.scalar(self.reg),
            total: tape.scalar(self.total),
        }
    }
}

/// `mean(r²) + λ_bc mean((u - g)²) + inv_sigma2 ‖z‖²`, recorded on `tape`.
pub fn assemble_loss(
    tape: &mut Tape,
    task: &TaskSpec,
    model: &TapedModel,
    batch: &SampleBatch,
    cfg: &TrainConfig,
) -> Result<LossVars> {
    batch.validate()?;
    let jets = model.forward_jets(tape, batch.interior.view(), &task.directions())?;
    let r = residual(tape, task, batch.interior.view(), &jets[0])?;
    let residual = tape.mean_square(r);

    let ub = model.forward_value(tape, batch.boundary.view())?[0];
    let g = Array2::from_shape_vec((1, batch.boundary_targets.len()), batch.boundary_targets.clone())
        .expect("row vector");
    let g = tape.constant(g);
    let diff = tape.sub(ub, g);
    let boundary = tape.mean_square(diff);

    let reg = match model.latent {
        Some(z) if cfg.inv_sigma2 > 0.0 => {
            let sq = tape.square(z);
            let s = tape.sum(sq);
            tape.scale(s, cfg.inv_sigma2)
        }
        _ => tape.constant_scalar(0.0),
    };
    let weighted = tape.scale(boundary, cfg.lambda_bc);
    let data = tape.add(residual, weighted);
    let total = tape.add(data, reg);
    Ok(LossVars {
        residual,
        boundary,
        reg,
        total,
    })
}

/// Loss and gradients for one task; gradient vectors are empty for inputs
/// that are not trainable.
#[derive(Clone, Debug)]
pub struct TaskGradient {
    pub loss: LossBreakdown,
    pub params: Vec<f64>,
    pub latent: Vec<f64>,
}

pub fn loss_and_grad(
    task: &TaskSpec,
    config: &NetworkConfig,
    params: &ModelParams,
    z: &LatentVector,
    batch: &SampleBatch,
    cfg: &TrainConfig,
    trainable: Trainable,
) -> Result<TaskGradient> {
    let mut tape = Tape::new();
    let model = TapedModel::register(&mut tape, config, params, z, trainable)?;
    let loss = assemble_loss(&mut tape, task, &model, batch, cfg)?;
    let mut wrt = Vec::new();
    if trainable.params {
        wrt.extend(model.param_vars());
    }
    let latent_var = model.latent.filter(|_| trainable.latent);
    if let Some(zv) = latent_var {
        wrt.push(zv);
    }
    let mut grads = if wrt.is_empty() {
        Vec::new()
    } else {
        tape.gradient(loss.total, &wrt)?
    };
    let latent = match latent_var {
        Some(_) => grads.pop().expect("latent gradient").iter().copied().collect(),
        None => Vec::new(),
    };
    let params = if trainable.params {
        model.flatten_param_grads(&grads)
    } else {
        Vec::new()
    };
    Ok(TaskGradient {
        loss: loss.values(&tape),
        params,
        latent,
    })
}

/// Loss without gradients.
pub fn loss_value(
    task: &TaskSpec,
    config: &NetworkConfig,
    params: &ModelParams,
    z: &LatentVector,
    batch: &SampleBatch,
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let frozen = Trainable {
        params: false,
        latent: false,
    };
    let model = TapedModel::register(&mut tape, config, params, z, frozen)?;
    Ok(assemble_loss(&mut tape, task, &model, batch, cfg)?.values(&tape))
}

/// Purpose tags keep RNG streams of different pipeline stages apart.
pub mod purpose {
    pub const PRETRAIN_BATCH: u64 = 1;
    pub const FINETUNE_BATCH: u64 = 2;
    pub const LATENT_INIT: u64 = 3;
    pub const TASK_SUBSET: u64 = 4;
    pub const EVAL_POINTS: u64 = 5;
    pub const META_BATCH: u64 = 6;
    pub const META_TASK: u64 = 7;
}

/// Stateless RNG for `(seed, purpose, stream, index)`: ChaCha8 keyed by seed
/// and purpose, stream id as the ChaCha stream, `index` selecting a disjoint
/// block of 2^24 words.
pub fn stream_rng(seed: u64, purpose: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream);
    rng.set_word_pos((index as u128) << 24);
    rng
}

/// Collocation batch of `task` for iteration `iter` of a run.
pub fn batch_for(task: &TaskSpec, cfg: &TrainConfig, purpose: u64, iter: u64) -> Result<SampleBatch> {
    let mut rng = stream_rng(cfg.seed, purpose, task.id, iter / cfg.resample_every);
    sample_batch(task, cfg.m_r, cfg.m_bc, &mut rng)
}

/// Evaluation grid sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalGrid {
    #[serde(default = "d128")]
    pub ode_points: usize,
    #[serde(default = "d256")]
    pub burgers_nx: usize,
    #[serde(default = "d50")]
    pub burgers_nt: usize,
    /// Spectral solver resolution; must be a multiple of `burgers_nx`.
    #[serde(default = "d512")]
    pub burgers_solver_nx: usize,
    #[serde(default = "d16k")]
    pub laplace_points: usize,
}

fn d128() -> usize {
    128
}
fn d256() -> usize {
    256
}
fn d50() -> usize {
    50
}
fn d512() -> usize {
    512
}
fn d16k() -> usize {
    16 * 1024
}

impl Default for EvalGrid {
    fn default() -> Self {
        Self {
            ode_points: d128(),
            burgers_nx: d256(),
            burgers_nt: d50(),
            burgers_solver_nx: d512(),
            laplace_points: d16k(),
        }
    }
}

/// Evaluation points (columns) and reference values for one task.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSet {
    pub task_id: u64,
    pub coords: Array2<f64>,
    pub reference: Vec<f64>,
}

impl EvalSet {
    pub fn build(task: &TaskSpec, grid: &EvalGrid, seed: u64) -> Result<Self> {
        task.validate()?;
        let (coords, reference) = match &task.variant {
            TaskVariant::OdeShift { eta } => {
                let xs = linspace(ODE_LEFT, ODE_RIGHT, grid.ode_points);
                let reference = xs.iter().map(|&x| oracles::ode_exact(*eta, x)).collect();
                (Array2::from_shape_vec((1, xs.len()), xs).expect("row"), reference)
            }
            TaskVariant::Burgers1d { u0, nu } => {
                if grid.burgers_solver_nx % grid.burgers_nx != 0 {
                    return Err(Error::Config("burgers_solver_nx must be a multiple of burgers_nx".into()));
                }
                let field = burgers_solve(u0, *nu, grid.burgers_solver_nx, grid.burgers_nt)?;
                let stride = grid.burgers_solver_nx / grid.burgers_nx;
                let nt1 = grid.burgers_nt + 1;
                let mut coords = Array2::zeros((2, grid.burgers_nx * nt1));
                let mut reference = Vec::with_capacity(grid.burgers_nx * nt1);
                for i in 0..grid.burgers_nx {
                    let j = i * stride;
                    for n in 0..nt1 {
                        let col = i * nt1 + n;
                        coords[[0, col]] = field.axes[0].points[j];
                        coords[[1, col]] = field.axes[1].points[n];
                        reference.push(field.values[j * nt1 + n]);
                    }
                }
                (coords, reference)
            }
            TaskVariant::LaplaceTriangle {
                vertex_angles,
                boundary_field,
            } => {
                let tri = triangle(vertex_angles)?;
                let mut rng = stream_rng(seed, purpose::EVAL_POINTS, task.id, 0);
                let mut coords = Array2::zeros((2, grid.laplace_points));
                let mut reference = Vec::with_capacity(grid.laplace_points);
                for j in 0..grid.laplace_points {
                    let p = tri.sample_interior(&mut rng);
                    coords[[0, j]] = p[0];
                    coords[[1, j]] = p[1];
                    reference.push(laplace_disk_at(boundary_field, p[0], p[1])?);
                }
                (coords, reference)
            }
        };
        Ok(Self {
            task_id: task.id,
            coords,
            reference,
        })
    }

    pub fn predict(&self, config: &NetworkConfig, params: &ModelParams, z: &LatentVector) -> Result<Vec<f64>> {
        // chunked to bound the activation memory on large grids
        let n = self.coords.ncols();
        let mut out = Vec::with_capacity(n);
        for start in (0..n).step_by(4096) {
            let end = (start + 4096).min(n);
            let y = forward_batch(params, config, self.coords.slice(s![.., start..end]), z)?;
            out.extend(y.row(0).iter().copied());
        }
        Ok(out)
    }

    pub fn rel_l2(&self, config: &NetworkConfig, params: &ModelParams, z: &LatentVector) -> Result<f64> {
        relative_l2(&self.predict(config, params, z)?, &self.reference)
    }
}

/// Options for [`fit_task`].
#[derive(Clone, Debug)]
pub struct FitOptions {
    pub method: String,
    pub trainable: Trainable,
    /// Keep the network evaluations on the eval set at every recorded iteration.
    pub keep_snapshots: bool,
    pub batch_purpose: u64,
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub params: ModelParams,
    pub z: LatentVector,
    pub record: ConvergenceRecord,
    pub snapshots: Vec<(u64, Vec<f64>)>,
    pub final_loss: LossBreakdown,
}

/// Adam on one task for `cfg.total_iters` iterations. With an eval set the
/// record holds iteration 0, every `eval_every`-th iteration and the final one.
pub fn fit_task(
    task: &TaskSpec,
    config: &NetworkConfig,
    params: ModelParams,
    z: LatentVector,
    cfg: &TrainConfig,
    eval: Option<&EvalSet>,
    opts: &FitOptions,
) -> Result<FitOutcome> {
    cfg.validate()?;
    let train_latent = opts.trainable.latent && config.latent_dim > 0;
    let n_theta = if opts.trainable.params { params.len() } else { 0 };
    let n_z = if train_latent { z.dim() } else { 0 };
    let mut adam = AdamState::new(&[("theta", n_theta), ("z", n_z)]);
    let mut params = params;
    let mut z = z;
    let mut record = ConvergenceRecord::new(task.id, &opts.method, cfg.seed);
    let mut snapshots = Vec::new();
    let mut vars = vec![0.0; n_theta + n_z];
    let mut final_loss = LossBreakdown::default();

    for iter in 0..=cfg.total_iters {
        let batch = batch_for(task, cfg, opts.batch_purpose, iter)?;
        let last = iter == cfg.total_iters;
        let evaluate = last || iter % cfg.eval_every == 0;
        let grad = if last {
            TaskGradient {
                loss: loss_value(task, config, &params, &z, &batch, cfg)?,
                params: Vec::new(),
                latent: Vec::new(),
            }
        } else {
            loss_and_grad(task, config, &params, &z, &batch, cfg, opts.trainable)?
        };
        if !grad.loss.total.is_finite() {
            return Err(Error::Divergence {
                iteration: iter,
                loss: grad.loss.total,
            });
        }
        if let (true, Some(eval)) = (evaluate, eval) {
            let pred = eval.predict(config, &params, &z)?;
            record.push(SeriesPoint {
                iteration: iter,
                rel_l2: relative_l2(&pred, &eval.reference)?,
                loss: grad.loss.total,
            })?;
            if opts.keep_snapshots {
                snapshots.push((iter, pred));
            }
        }
        if last {
            final_loss = grad.loss;
            break;
        }
        let mut g = grad.params;
        g.extend(&grad.latent);
        if let Some(c) = cfg.grad_clip {
            clip_global_norm(&mut g, c);
        }
        vars[..n_theta].copy_from_slice(if n_theta > 0 { &params.flat } else { &[] });
        vars[n_theta..].copy_from_slice(if n_z > 0 { &z.0 } else { &[] });
        adam.step(&mut vars, &g, lr_at(cfg, iter))?;
        if n_theta > 0 {
            params.flat.copy_from_slice(&vars[..n_theta]);
        }
        if n_z > 0 {
            z.0.copy_from_slice(&vars[n_theta..]);
        }
    }
    Ok(FitOutcome {
        params,
        z,
        record,
        snapshots,
        final_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grf::{sample_grf, GrfSpec};
    use crate::network::{init_siren, Activation, InputEncoding};

    fn cfg(total: u64) -> TrainConfig {
        TrainConfig {
            lr0: 1e-3,
            total_iters: total,
            m_r: 8,
            m_bc: 4,
            lambda_bc: 1.0,
            inv_sigma2: 1e-2,
            eval_every: 10,
            seed: 1,
            tasks_per_iter: None,
            grad_clip: None,
            resample_every: 1,
            latent_init_sd: 0.1,
        }
    }

    #[test]
    fn schedule_milestones() {
        let c = cfg(1000);
        assert_eq!(lr_at(&c, 100), 1e-3);
        assert_eq!(lr_at(&c, 399), 1e-3);
        assert_eq!(lr_at(&c, 400), 5e-4);
        assert_eq!(lr_at(&c, 600), 2.5e-4);
        assert_eq!(lr_at(&c, 900), 1.25e-4);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut a = AdamState::new(&[("w", 3)]);
        let mut x = vec![0.0, 1.0, 2.0];
        a.step(&mut x, &[2.0, -0.5, 1e-3], 0.1).unwrap();
        for (xi, (x0, s)) in x.iter().zip([(0.0, -1.0), (1.0, 1.0), (2.0, -1.0)]) {
            assert!((xi - (x0 + 0.1 * s)).abs() < 1e-6, "{xi}");
        }
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut a = AdamState::new(&[("w", 2)]);
        let mut x = vec![0.3, -0.7];
        for _ in 0..50 {
            a.step(&mut x, &[0.0, 0.0], 0.1).unwrap();
        }
        assert_eq!(x, vec![0.3, -0.7]);
    }

    #[test]
    fn adam_reports_block_of_bad_gradient() {
        let mut a = AdamState::new(&[("theta", 2), ("z", 2)]);
        let mut x = vec![0.0; 4];
        let err = a.step(&mut x, &[0.0, 0.0, 0.0, f64::NAN], 0.1).unwrap_err();
        match err {
            Error::NonFiniteGradient { step, block } => {
                assert_eq!(step, 1);
                assert_eq!(block, "z[1]");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![3.0, 4.0];
        clip_global_norm(&mut g, 1.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
    }

    fn small_net(input_dim: usize, enc: InputEncoding) -> NetworkConfig {
        NetworkConfig {
            input_dim,
            latent_dim: 2,
            hidden_layers: 3,
            width: 16,
            output_dim: 1,
            activation: Activation::Sine,
            first_layer_omega: 3.0,
            input_encoding: enc,
            output_scale: 1.0,
        }
    }

    #[test]
    fn breakdown_total_is_consistent() {
        let net = small_net(1, InputEncoding::Identity);
        let p = init_siren(&net, 0);
        let z = LatentVector(vec![0.3, -0.2]);
        let task = TaskSpec::ode(0, 0.4);
        let c = cfg(1);
        let b = batch_for(&task, &c, purpose::FINETUNE_BATCH, 0).unwrap();
        let l = loss_value(&task, &net, &p, &z, &b, &c).unwrap();
        assert_eq!(l.total, l.residual + c.lambda_bc * l.boundary + l.reg);
        assert!((l.reg - 1e-2 * 0.13).abs() < 1e-15);

        let mut off = c.clone();
        off.inv_sigma2 = 0.0;
        assert_eq!(loss_value(&task, &net, &p, &z, &b, &off).unwrap().reg, 0.0);
    }

    #[test]
    fn doubling_residual_quadruples_term() {
        // the Laplace residual is linear in u, so doubling the output layer
        // doubles every pointwise residual
        let net = NetworkConfig {
            latent_dim: 0,
            ..small_net(2, InputEncoding::Identity)
        };
        let p = init_siren(&net, 4);
        let mut p2 = p.clone();
        let (rows, cols) = net.layer_shapes().last().copied().unwrap();
        let n = p2.len();
        for w in &mut p2.flat[n - rows * cols - rows..] {
            *w *= 2.0;
        }
        let task = TaskSpec {
            id: 0,
            variant: TaskVariant::LaplaceTriangle {
                vertex_angles: [0.2, 2.3, 4.1],
                boundary_field: crate::grf::GrfSample::zeros(2, crate::grf::GrfDomain::UnitCircle),
            },
        };
        let c = cfg(1);
        let b = batch_for(&task, &c, purpose::FINETUNE_BATCH, 0).unwrap();
        let z = LatentVector::zeros(0);
        let a = loss_value(&task, &net, &p, &z, &b, &c).unwrap().residual;
        let d = loss_value(&task, &net, &p2, &z, &b, &c).unwrap().residual;
        assert!((d / a - 4.0).abs() < 1e-12, "ratio {}", d / a);
    }

    fn fd_check(task: &TaskSpec, net: &NetworkConfig) {
        let p = init_siren(net, 11);
        let z = LatentVector(vec![0.2, -0.4]);
        let c = cfg(1);
        let b = batch_for(task, &c, purpose::FINETUNE_BATCH, 0).unwrap();
        let g = loss_and_grad(task, net, &p, &z, &b, &c, Trainable::ALL).unwrap();
        let f = |p: &ModelParams, z: &LatentVector| loss_value(task, net, p, z, &b, &c).unwrap().total;
        let h = 1e-4;
        let mut worst = 0.0f64;
        let scale = g.params.iter().chain(&g.latent).fold(0.0f64, |m, x| m.max(x.abs()));
        for i in (0..p.len()).step_by(7) {
            let (mut a, mut m) = (p.clone(), p.clone());
            a.flat[i] += h;
            m.flat[i] -= h;
            let fd = (f(&a, &z) - f(&m, &z)) / (2.0 * h);
            worst = worst.max((fd - g.params[i]).abs() / (g.params[i].abs().max(1e-2 * scale)));
        }
        for i in 0..z.dim() {
            let (mut a, mut m) = (z.clone(), z.clone());
            a.0[i] += h;
            m.0[i] -= h;
            let fd = (f(&p, &a) - f(&p, &m)) / (2.0 * h);
            worst = worst.max((fd - g.latent[i]).abs() / g.latent[i].abs().max(1e-2 * scale));
        }
        assert!(worst <= 1e-4, "{}: worst relative error {worst:e}", task.kind());
    }

    #[test]
    fn gradients_match_finite_differences() {
        fd_check(&TaskSpec::ode(0, 0.7), &small_net(1, InputEncoding::Identity));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let burgers = TaskSpec {
            id: 1,
            variant: TaskVariant::Burgers1d {
                u0: sample_grf(&GrfSpec::burgers(), &mut rng).unwrap(),
                nu: 0.01,
            },
        };
        fd_check(&burgers, &small_net(2, InputEncoding::PeriodicX));
        let laplace = TaskSpec {
            id: 2,
            variant: TaskVariant::LaplaceTriangle {
                vertex_angles: [0.2, 2.3, 4.1],
                boundary_field: sample_grf(&GrfSpec::laplace(), &mut rng).unwrap(),
            },
        };
        fd_check(&laplace, &small_net(2, InputEncoding::Identity));
    }

    #[test]
    fn fit_with_zero_iterations_records_initial_state() {
        let net = small_net(1, InputEncoding::Identity);
        let p = init_siren(&net, 0);
        let z = LatentVector(vec![0.1, 0.1]);
        let task = TaskSpec::ode(0, 0.4);
        let eval = EvalSet::build(&task, &EvalGrid::default(), 0).unwrap();
        let opts = FitOptions {
            method: "t".into(),
            trainable: Trainable::ALL,
            keep_snapshots: true,
            batch_purpose: purpose::FINETUNE_BATCH,
        };
        let out = fit_task(&task, &net, p.clone(), z.clone(), &cfg(0), Some(&eval), &opts).unwrap();
        assert_eq!(out.record.series.len(), 1);
        assert_eq!(out.params, p);
        assert_eq!(out.z, z);
        assert_eq!(out.snapshots[0].1.len(), 128);
    }

    #[test]
    fn fit_is_deterministic_and_reduces_loss() {
        let net = small_net(1, InputEncoding::Identity);
        let task = TaskSpec::ode(0, 0.4);
        let eval = EvalSet::build(&task, &EvalGrid::default(), 0).unwrap();
        let opts = FitOptions {
            method: "t".into(),
            trainable: Trainable::ALL,
            keep_snapshots: false,
            batch_purpose: purpose::FINETUNE_BATCH,
        };
        let mut c = cfg(60);
        c.m_r = 64;
        c.lr0 = 3e-3;
        let run = || fit_task(&task, &net, init_siren(&net, 5), LatentVector::zeros(2), &c, Some(&eval), &opts).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.params, b.params);
        assert_eq!(a.record, b.record);
        let s = &a.record.series;
        assert_eq!(s.iter().map(|p| p.iteration).collect::<Vec<_>>(), vec![0, 10, 20, 30, 40, 50, 60]);
        assert!(s.last().unwrap().loss < 0.5 * s[0].loss);
    }

    #[test]
    fn stream_rngs_are_independent_and_reproducible() {
        use rand::Rng;
        let a: u64 = stream_rng(1, 1, 0, 0).random();
        assert_eq!(a, stream_rng(1, 1, 0, 0).random::<u64>());
        assert_ne!(a, stream_rng(1, 1, 1, 0).random::<u64>());
        assert_ne!(a, stream_rng(1, 1, 0, 1).random::<u64>());
        assert_ne!(a, stream_rng(1, 2, 0, 0).random::<u64>());
        assert_ne!(a, stream_rng(2, 1, 0, 0).random::<u64>());
    }
}
