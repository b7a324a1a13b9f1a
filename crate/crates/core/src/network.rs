//! Latent-conditioned MLP `f(x, z)` with sine (or tanh) activations.
//!
//! The network sees `encode(x) ++ z`. Activations are `features x points`
//! matrices, so a whole batch of coordinates goes through in one pass.

use std::f64::consts::PI;

use ndarray::{s, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Jet2, JetOp, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sine,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputEncoding {
    Identity,
    /// `x -> (cos 2πx, sin 2πx)` on axis 0 (phase reduced mod 1, so the map is
    /// exactly periodic in floating point); other axes pass through.
    PeriodicX,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub hidden_layers: usize,
    pub width: usize,
    #[serde(default = "one")]
    pub output_dim: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_omega")]
    pub first_layer_omega: f64,
    #[serde(default = "default_encoding")]
    pub input_encoding: InputEncoding,
    /// Fixed factor on the output layer, so targets of magnitude `s` are
    /// learned at unit scale.
    #[serde(default = "unit_scale")]
    pub output_scale: f64,
}

fn one() -> usize {
    1
}
fn default_activation() -> Activation {
    Activation::Sine
}
fn default_omega() -> f64 {
    30.0
}
fn unit_scale() -> f64 {
    1.0
}
fn default_encoding() -> InputEncoding {
    InputEncoding::Identity
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.input_dim == 0 {
            return bad("input_dim must be >= 1");
        }
        if self.hidden_layers == 0 {
            return bad("hidden_layers must be >= 1");
        }
        if self.width == 0 || self.output_dim == 0 {
            return bad("width and output_dim must be >= 1");
        }
        if !self.first_layer_omega.is_finite() || self.first_layer_omega <= 0.0 {
            return bad("first_layer_omega must be positive");
        }
        if !self.output_scale.is_finite() || self.output_scale <= 0.0 {
            return bad("output_scale must be positive");
        }
        Ok(())
    }

    pub fn encoded_dim(&self) -> usize {
        match self.input_encoding {
            InputEncoding::Identity => self.input_dim,
            InputEncoding::PeriodicX => self.input_dim + 1,
        }
    }

    /// `(rows, cols)` of every weight matrix, input layer first.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = vec![(self.width, self.encoded_dim() + self.latent_dim)];
        shapes.extend((1..self.hidden_layers).map(|_| (self.width, self.width)));
        shapes.push((self.output_dim, self.width));
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(r, c)| r * c + r).sum()
    }
}

/// Flat network weights: for each layer, its row-major weight matrix then its bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelParams {
    pub flat: Vec<f64>,
}

impl ModelParams {
    pub fn from_flat(config: &NetworkConfig, flat: Vec<f64>) -> Result<Self> {
        let expected = config.param_count();
        if flat.len() != expected {
            return Err(Error::Dimension {
                what: "parameter vector",
                expected,
                got: flat.len(),
            });
        }
        Ok(Self { flat })
    }

    pub fn zeros(config: &NetworkConfig) -> Self {
        Self {
            flat: vec![0.0; config.param_count()],
        }
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    /// Weight and bias views of every layer.
    pub fn layers<'a>(
        &'a self,
        config: &NetworkConfig,
    ) -> Vec<(ArrayView2<'a, f64>, ArrayView1<'a, f64>)> {
        let mut offset = 0;
        config
            .layer_shapes()
            .into_iter()
            .map(|(r, c)| {
                let w = ArrayView2::from_shape((r, c), &self.flat[offset..offset + r * c])
                    .expect("layer layout");
                offset += r * c;
                let b = ArrayView1::from(&self.flat[offset..offset + r]);
                offset += r;
                (w, b)
            })
            .collect()
    }
}

/// Per-task latent code `z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatentVector(pub Vec<f64>);

impl LatentVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    fn column(&self) -> Tensor {
        Tensor::from_shape_vec((self.0.len(), 1), self.0.clone()).expect("column")
    }
}

/// Sinusoidal-network initialization, deterministic per seed.
///
/// Hidden and output weights are `U(±sqrt(6/fan_in))`; the input layer is
/// `U(±1/fan_in)` scaled by `first_layer_omega` (bias scaled likewise). Tanh
/// networks use Glorot-uniform weights and zero biases instead.
pub fn init_siren(config: &NetworkConfig, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flat = Vec::with_capacity(config.param_count());
    for (layer, (rows, cols)) in config.layer_shapes().into_iter().enumerate() {
        let fan_in = cols as f64;
        let (w_bound, b_bound) = match config.activation {
            Activation::Sine if layer == 0 => (
                config.first_layer_omega / fan_in,
                config.first_layer_omega / fan_in.sqrt(),
            ),
            Activation::Sine => ((6.0 / fan_in).sqrt(), 1.0 / fan_in.sqrt()),
            Activation::Tanh => ((6.0 / (fan_in + rows as f64)).sqrt(), 0.0),
        };
        flat.extend((0..rows * cols).map(|_| uniform(&mut rng, w_bound)));
        flat.extend((0..rows).map(|_| uniform(&mut rng, b_bound)));
    }
    ModelParams { flat }
}

fn uniform(rng: &mut ChaCha8Rng, bound: f64) -> f64 {
    if bound == 0.0 {
        0.0
    } else {
        rng.random_range(-bound..bound)
    }
}

fn check_inputs(config: &NetworkConfig, params: &ModelParams, rows: usize, z: &LatentVector) -> Result<()> {
    if params.len() != config.param_count() {
        return Err(Error::Dimension {
            what: "parameter vector",
            expected: config.param_count(),
            got: params.len(),
        });
    }
    if rows != config.input_dim {
        return Err(Error::Dimension {
            what: "input coordinates",
            expected: config.input_dim,
            got: rows,
        });
    }
    if z.dim() != config.latent_dim {
        return Err(Error::Dimension {
            what: "latent vector",
            expected: config.latent_dim,
            got: z.dim(),
        });
    }
    Ok(())
}

/// Encoded inputs for a batch of coordinates (`input_dim x n`).
pub fn encode(config: &NetworkConfig, coords: ArrayView2<f64>) -> Tensor {
    match config.input_encoding {
        InputEncoding::Identity => coords.to_owned(),
        InputEncoding::PeriodicX => {
            let n = coords.ncols();
            let mut out = Tensor::zeros((config.input_dim + 1, n));
            for j in 0..n {
                let (s, c) = (2.0 * PI * coords[[0, j]].rem_euclid(1.0)).sin_cos();
                out[[0, j]] = c;
                out[[1, j]] = s;
            }
            out.slice_mut(s![2.., ..]).assign(&coords.slice(s![1.., ..]));
            out
        }
    }
}

/// First and second derivatives of the encoding along coordinate `axis`.
fn encode_derivatives(config: &NetworkConfig, coords: ArrayView2<f64>, axis: usize) -> (Tensor, Tensor) {
    let n = coords.ncols();
    let enc_dim = config.encoded_dim();
    let mut d1 = Tensor::zeros((enc_dim, n));
    let mut d2 = Tensor::zeros((enc_dim, n));
    match config.input_encoding {
        InputEncoding::Identity => d1.row_mut(axis).fill(1.0),
        InputEncoding::PeriodicX if axis == 0 => {
            let w = 2.0 * PI;
            for j in 0..n {
                let (s, c) = (w * coords[[0, j]].rem_euclid(1.0)).sin_cos();
                d1[[0, j]] = -w * s;
                d1[[1, j]] = w * c;
                d2[[0, j]] = -w * w * c;
                d2[[1, j]] = -w * w * s;
            }
        }
        InputEncoding::PeriodicX => d1.row_mut(axis + 1).fill(1.0),
    }
    (d1, d2)
}

fn activate(config: &NetworkConfig, x: &mut Tensor) {
    match config.activation {
        Activation::Sine => x.mapv_inplace(f64::sin),
        Activation::Tanh => x.mapv_inplace(f64::tanh),
    }
}

/// Plain (untaped) evaluation on a batch; returns `output_dim x n`.
pub fn forward_batch(
    params: &ModelParams,
    config: &NetworkConfig,
    coords: ArrayView2<f64>,
    z: &LatentVector,
) -> Result<Tensor> {
    check_inputs(config, params, coords.nrows(), z)?;
    let layers = params.layers(config);
    let enc = encode(config, coords);
    let enc_dim = config.encoded_dim();

    let (w0, b0) = &layers[0];
    let mut bias = b0.to_owned();
    if config.latent_dim > 0 {
        bias += &w0.slice(s![.., enc_dim..]).dot(&ArrayView1::from(&z.0));
    }
    let mut h = w0.slice(s![.., ..enc_dim]).dot(&enc);
    h += &bias.insert_axis(ndarray::Axis(1));
    activate(config, &mut h);

    let last = layers.len() - 1;
    for (i, (w, b)) in layers.iter().enumerate().skip(1) {
        let mut next = w.dot(&h);
        next += &b.view().insert_axis(ndarray::Axis(1));
        if i < last {
            activate(config, &mut next);
        }
        h = next;
    }
    if config.output_scale != 1.0 {
        h *= config.output_scale;
    }
    Ok(h)
}

/// Single-point evaluation.
pub fn forward(params: &ModelParams, config: &NetworkConfig, x: &[f64], z: &LatentVector) -> Result<Vec<f64>> {
    let coords = ArrayView2::from_shape((x.len(), 1), x).expect("column");
    Ok(forward_batch(params, config, coords, z)?.column(0).to_vec())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum JetOrder {
    First,
    Second,
}

/// Coordinate direction for a jet pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Direction {
    pub axis: usize,
    pub order: JetOrder,
}

impl Direction {
    pub fn first(axis: usize) -> Self {
        Self {
            axis,
            order: JetOrder::First,
        }
    }

    pub fn second(axis: usize) -> Self {
        Self {
            axis,
            order: JetOrder::Second,
        }
    }
}

/// Which inputs of the network are differentiable leaves on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Trainable {
    pub params: bool,
    pub latent: bool,
}

impl Trainable {
    pub const ALL: Trainable = Trainable {
        params: true,
        latent: true,
    };
    pub const LATENT_ONLY: Trainable = Trainable {
        params: false,
        latent: true,
    };
    pub const PARAMS_ONLY: Trainable = Trainable {
        params: true,
        latent: false,
    };
}

/// Network weights and latent registered on a tape.
pub struct TapedModel {
    pub config: NetworkConfig,
    /// Effective layer weights; the output layer includes `output_scale`.
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
    pub latent: Option<Var>,
    /// Registered parameter nodes, weight and bias interleaved.
    leaves: Vec<Var>,
}

impl TapedModel {
    pub fn register(
        tape: &mut Tape,
        config: &NetworkConfig,
        params: &ModelParams,
        z: &LatentVector,
        trainable: Trainable,
    ) -> Result<Self> {
        check_inputs(config, params, config.input_dim, z)?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (w, b) in params.layers(config) {
            let b = b.to_owned().insert_axis(ndarray::Axis(1));
            if trainable.params {
                weights.push(tape.leaf(w.to_owned()));
                biases.push(tape.leaf(b));
            } else {
                weights.push(tape.constant(w.to_owned()));
                biases.push(tape.constant(b));
            }
        }
        let leaves = weights.iter().zip(&biases).flat_map(|(&w, &b)| [w, b]).collect();
        if config.output_scale != 1.0 {
            let last = weights.len() - 1;
            weights[last] = tape.scale(weights[last], config.output_scale);
            biases[last] = tape.scale(biases[last], config.output_scale);
        }
        let latent = (config.latent_dim > 0).then(|| {
            if trainable.latent {
                tape.leaf(z.column())
            } else {
                tape.constant(z.column())
            }
        });
        Ok(Self {
            config: config.clone(),
            weights,
            biases,
            latent,
            leaves,
        })
    }

    /// Flatten per-layer gradients back into the [`ModelParams`] layout.
    pub fn flatten_param_grads(&self, grads: &[Tensor]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.config.param_count());
        for pair in grads.chunks(2) {
            out.extend(pair[0].iter());
            out.extend(pair[1].iter());
        }
        out
    }

    /// Weight and bias vars interleaved in flat-layout order.
    pub fn param_vars(&self) -> Vec<Var> {
        self.leaves.clone()
    }

    /// Pre-activation of the input layer (value channel) and the input-layer
    /// weight block acting on the encoded coordinates.
    fn input_layer(&self, tape: &mut Tape, enc: Tensor) -> (Var, Var) {
        let enc_dim = self.config.encoded_dim();
        let w0 = self.weights[0];
        let wx = if self.config.latent_dim > 0 {
            tape.slice_cols(w0, 0, enc_dim)
        } else {
            w0
        };
        let bias = match self.latent {
            Some(z) => {
                let total = enc_dim + self.config.latent_dim;
                let wz = tape.slice_cols(w0, enc_dim, total);
                let wzz = tape.matmul(wz, z);
                tape.add(self.biases[0], wzz)
            }
            None => self.biases[0],
        };
        let enc = tape.constant(enc);
        let pre = tape.matmul(wx, enc);
        (tape.add_bias(pre, bias), wx)
    }

    fn activation_op(&self) -> JetOp {
        match self.config.activation {
            Activation::Sine => JetOp::Sin,
            Activation::Tanh => JetOp::Tanh,
        }
    }

    /// Output values only (`1 x n` per output).
    pub fn forward_value(&self, tape: &mut Tape, coords: ArrayView2<f64>) -> Result<Vec<Var>> {
        self.check_coords(coords)?;
        let enc = encode(&self.config, coords);
        let (mut h, _) = self.input_layer(tape, enc);
        let last = self.weights.len() - 1;
        for i in 1..=last {
            h = match self.config.activation {
                Activation::Sine => tape.sin(h),
                Activation::Tanh => tape.tanh(h),
            };
            let wh = tape.matmul(self.weights[i], h);
            h = tape.add_bias(wh, self.biases[i]);
        }
        Ok(self.split_outputs(tape, h))
    }

    /// Output jets along each requested coordinate direction. All directions
    /// share the value channel.
    pub fn forward_jets(
        &self,
        tape: &mut Tape,
        coords: ArrayView2<f64>,
        directions: &[Direction],
    ) -> Result<Vec<OutputJets>> {
        self.check_coords(coords)?;
        for d in directions {
            if d.axis >= self.config.input_dim {
                return Err(Error::Dimension {
                    what: "jet direction axis",
                    expected: self.config.input_dim,
                    got: d.axis,
                });
            }
        }
        if directions.is_empty() {
            let values = self.forward_value(tape, coords)?;
            return Ok(values
                .into_iter()
                .map(|value| OutputJets {
                    value,
                    jets: Vec::new(),
                })
                .collect());
        }

        let enc = encode(&self.config, coords);
        let (pre, wx) = self.input_layer(tape, enc);
        let mut jets: Vec<Jet2> = directions
            .iter()
            .map(|d| {
                let (e1, e2) = encode_derivatives(&self.config, coords, d.axis);
                let e1 = tape.constant(e1);
                let d1 = tape.matmul(wx, e1);
                let d2 = (d.order == JetOrder::Second).then(|| {
                    let e2 = tape.constant(e2);
                    tape.matmul(wx, e2)
                });
                Jet2 { value: pre, d1, d2 }
            })
            .collect();

        let act = self.activation_op();
        for i in 1..self.weights.len() {
            jets = tape.jet_unary_shared(act, &jets)?;
            jets = tape.jet_affine_shared(self.weights[i], Some(self.biases[i]), &jets);
        }

        let value = jets[0].value;
        let out_dim = self.config.output_dim;
        let mut outputs = Vec::with_capacity(out_dim);
        for o in 0..out_dim {
            let pick = |tape: &mut Tape, v: Var| if out_dim == 1 { v } else { tape.row(v, o) };
            let v = pick(tape, value);
            let per_dir = directions
                .iter()
                .zip(&jets)
                .map(|(d, j)| {
                    let d1 = pick(tape, j.d1);
                    let d2 = j.d2.map(|x| pick(tape, x));
                    (*d, Jet2 { value: v, d1, d2 })
                })
                .collect();
            outputs.push(OutputJets {
                value: v,
                jets: per_dir,
            });
        }
        Ok(outputs)
    }

    fn split_outputs(&self, tape: &mut Tape, h: Var) -> Vec<Var> {
        if self.config.output_dim == 1 {
            vec![h]
        } else {
            (0..self.config.output_dim).map(|o| tape.row(h, o)).collect()
        }
    }

    fn check_coords(&self, coords: ArrayView2<f64>) -> Result<()> {
        if coords.nrows() != self.config.input_dim {
            return Err(Error::Dimension {
                what: "input coordinates",
                expected: self.config.input_dim,
                got: coords.nrows(),
            });
        }
        Ok(())
    }
}

/// Jets of one network output (`1 x n` nodes) along each requested direction.
#[derive(Clone, Debug)]
pub struct OutputJets {
    pub value: Var,
    pub jets: Vec<(Direction, Jet2)>,
}

impl OutputJets {
    fn find(&self, axis: usize) -> Option<&Jet2> {
        self.jets.iter().find(|(d, _)| d.axis == axis).map(|(_, j)| j)
    }

    pub fn d1(&self, axis: usize) -> Result<Var> {
        self.find(axis)
            .map(|j| j.d1)
            .ok_or_else(|| Error::MissingDerivative(format!("first derivative along axis {axis}")))
    }

    pub fn d2(&self, axis: usize) -> Result<Var> {
        self.find(axis)
            .and_then(|j| j.d2)
            .ok_or_else(|| Error::MissingDerivative(format!("second derivative along axis {axis}")))
    }
}

/// Convenience: output jets at a single point as `(value, d1, d2)` triples per
/// direction, for the first output.
pub fn point_jets(
    params: &ModelParams,
    config: &NetworkConfig,
    x: &[f64],
    z: &LatentVector,
    directions: &[Direction],
) -> Result<Vec<(f64, f64, f64)>> {
    let mut tape = Tape::new();
    let model = TapedModel::register(&mut tape, config, params, z, Trainable { params: false, latent: false })?;
    let coords = ArrayView2::from_shape((x.len(), 1), x).expect("column");
    let out = model.forward_jets(&mut tape, coords, directions)?;
    Ok(out[0]
        .jets
        .iter()
        .map(|(_, j)| {
            (
                tape.scalar(j.value),
                tape.scalar(j.d1),
                j.d2.map_or(0.0, |d| tape.scalar(d)),
            )
        })
        .collect())
}

/// Wrap a coordinate matrix (`input_dim x n`) from point lists.
pub fn coords_from_points(points: &[Vec<f64>]) -> Array2<f64> {
    let dim = points.first().map_or(0, |p| p.len());
    Array2::from_shape_fn((dim, points.len()), |(r, c)| points[c][r])
}
