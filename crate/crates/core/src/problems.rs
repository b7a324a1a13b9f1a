//! Parametric PDE families: residuals, boundary data and collocation sampling.
//!
//! | variant            | domain                   | residual                  | boundary set            |
//! |--------------------|--------------------------|---------------------------|-------------------------|
//! | `ode_shift`        | `x ∈ [-π, π]`            | `u_x - φ_η(x)`            | both endpoints          |
//! | `burgers1d`        | `(x, t) ∈ [0,1) x (0,1]` | `u_t + u u_x - ν u_xx`    | `t = 0` slice           |
//! | `laplace_triangle` | triangle in unit disk    | `u_xx + u_yy`             | triangle edges          |

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Var};
use crate::error::{Error, Result};
use crate::grf::{sample_grf, GrfSample, GrfSpec};
use crate::network::{Direction, OutputJets};
use crate::oracles;

pub const ODE_LEFT: f64 = -PI;
pub const ODE_RIGHT: f64 = PI;
pub const MIN_ANGULAR_GAP: f64 = 1e-3;
const BOUNDARY_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", content = "parameters", rename_all = "snake_case")]
pub enum TaskVariant {
    OdeShift {
        eta: f64,
    },
    Burgers1d {
        u0: GrfSample,
        nu: f64,
    },
    LaplaceTriangle {
        vertex_angles: [f64; 3],
        boundary_field: GrfSample,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: u64,
    #[serde(flatten)]
    pub variant: TaskVariant,
}

impl TaskSpec {
    pub fn ode(id: u64, eta: f64) -> Self {
        Self {
            id,
            variant: TaskVariant::OdeShift { eta },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.variant {
            TaskVariant::OdeShift { eta } => {
                if !eta.is_finite() {
                    return Err(Error::Task(format!("task {}: η must be finite", self.id)));
                }
            }
            TaskVariant::Burgers1d { u0, nu } => {
                if !(*nu > 0.0) {
                    return Err(Error::Task(format!("task {}: ν must be positive, got {nu}", self.id)));
                }
                u0.validate()?;
            }
            TaskVariant::LaplaceTriangle {
                vertex_angles,
                boundary_field,
            } => {
                boundary_field.validate()?;
                triangle(vertex_angles)?;
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> &'static str {
        match self.variant {
            TaskVariant::OdeShift { .. } => "ode_shift",
            TaskVariant::Burgers1d { .. } => "burgers1d",
            TaskVariant::LaplaceTriangle { .. } => "laplace_triangle",
        }
    }

    pub fn input_dim(&self) -> usize {
        match self.variant {
            TaskVariant::OdeShift { .. } => 1,
            _ => 2,
        }
    }

    /// Jet directions the residual needs.
    pub fn directions(&self) -> Vec<Direction> {
        match self.variant {
            TaskVariant::OdeShift { .. } => vec![Direction::first(0)],
            TaskVariant::Burgers1d { .. } => vec![Direction::second(0), Direction::first(1)],
            TaskVariant::LaplaceTriangle { .. } => vec![Direction::second(0), Direction::second(1)],
        }
    }
}

/// Source term of the shifted ODE, `φ_η(x) = 2(x - η) cos((x - η)²)`.
pub fn ode_source(eta: f64, x: f64) -> f64 {
    let s = x - eta;
    2.0 * s * (s * s).cos()
}

/// Pointwise PDE residual on the tape, `1 x n` for `coords` of `input_dim x n`.
pub fn residual(tape: &mut Tape, task: &TaskSpec, coords: ArrayView2<f64>, u: &OutputJets) -> Result<Var> {
    match &task.variant {
        TaskVariant::OdeShift { eta } => {
            let ux = u.d1(0)?;
            let phi = coords.row(0).mapv(|x| ode_source(*eta, x)).insert_axis(ndarray::Axis(0));
            let phi = tape.constant(phi);
            Ok(tape.sub(ux, phi))
        }
        TaskVariant::Burgers1d { nu, .. } => {
            let ux = u.d1(0)?;
            let uxx = u.d2(0)?;
            let ut = u.d1(1)?;
            let adv = tape.mul(u.value, ux);
            let visc = tape.scale(uxx, *nu);
            let lhs = tape.add(ut, adv);
            Ok(tape.sub(lhs, visc))
        }
        TaskVariant::LaplaceTriangle { .. } => {
            let uxx = u.d2(0)?;
            let uyy = u.d2(1)?;
            Ok(tape.add(uxx, uyy))
        }
    }
}

/// Boundary target `g(point)`; errors if `point` is not on the boundary set.
pub fn boundary_target(task: &TaskSpec, point: &[f64]) -> Result<f64> {
    if point.len() != task.input_dim() {
        return Err(Error::Dimension {
            what: "boundary point",
            expected: task.input_dim(),
            got: point.len(),
        });
    }
    let off = || Error::OffBoundary { point: point.to_vec() };
    match &task.variant {
        TaskVariant::OdeShift { eta } => {
            let x = point[0];
            if (x - ODE_LEFT).abs() > BOUNDARY_TOL && (x - ODE_RIGHT).abs() > BOUNDARY_TOL {
                return Err(off());
            }
            Ok(oracles::ode_exact(*eta, x))
        }
        TaskVariant::Burgers1d { u0, .. } => {
            if point[1].abs() > BOUNDARY_TOL {
                return Err(off());
            }
            Ok(u0.evaluate_at(point[0]))
        }
        TaskVariant::LaplaceTriangle {
            vertex_angles,
            boundary_field,
        } => {
            let tri = triangle(vertex_angles)?;
            if tri.distance_to_boundary(point[0], point[1]) > BOUNDARY_TOL {
                return Err(off());
            }
            oracles::laplace_disk_at(boundary_field, point[0], point[1])
        }
    }
}

/// `u_value - g(point)`.
pub fn boundary_residual(task: &TaskSpec, u_value: f64, point: &[f64]) -> Result<f64> {
    Ok(u_value - boundary_target(task, point)?)
}

/// Triangle inscribed in the unit circle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Triangle {
    pub vertices: [[f64; 2]; 3],
}

pub fn triangle(angles: &[f64; 3]) -> Result<Triangle> {
    if angles.iter().any(|a| !a.is_finite()) {
        return Err(Error::DegenerateTriangle("non-finite vertex angle".into()));
    }
    for i in 0..3 {
        for j in i + 1..3 {
            let d = (angles[i] - angles[j]).rem_euclid(2.0 * PI);
            let gap = d.min(2.0 * PI - d);
            if gap < MIN_ANGULAR_GAP {
                return Err(Error::DegenerateTriangle(format!(
                    "vertices {i} and {j} are {gap:.2e} rad apart"
                )));
            }
        }
    }
    Ok(Triangle {
        vertices: angles.map(|a| [a.cos(), a.sin()]),
    })
}

impl Triangle {
    pub fn area(&self) -> f64 {
        let [a, b, c] = self.vertices;
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])).abs()
    }

    pub fn barycentric(&self, x: f64, y: f64) -> [f64; 3] {
        let [a, b, c] = self.vertices;
        let det = (b[1] - c[1]) * (a[0] - c[0]) + (c[0] - b[0]) * (a[1] - c[1]);
        let l0 = ((b[1] - c[1]) * (x - c[0]) + (c[0] - b[0]) * (y - c[1])) / det;
        let l1 = ((c[1] - a[1]) * (x - c[0]) + (a[0] - c[0]) * (y - c[1])) / det;
        [l0, l1, 1.0 - l0 - l1]
    }

    pub fn edge_lengths(&self) -> [f64; 3] {
        let v = self.vertices;
        [0, 1, 2].map(|i| {
            let (p, q) = (v[i], v[(i + 1) % 3]);
            (q[0] - p[0]).hypot(q[1] - p[1])
        })
    }

    pub fn distance_to_boundary(&self, x: f64, y: f64) -> f64 {
        let v = self.vertices;
        (0..3)
            .map(|i| {
                let (p, q) = (v[i], v[(i + 1) % 3]);
                let (dx, dy) = (q[0] - p[0], q[1] - p[1]);
                let s = (((x - p[0]) * dx + (y - p[1]) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
                (x - p[0] - s * dx).hypot(y - p[1] - s * dy)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Uniform point with strictly positive barycentric coordinates.
    pub fn sample_interior<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        loop {
            let r1 = rng.random::<f64>().sqrt();
            let r2 = rng.random::<f64>();
            let l = [1.0 - r1, r1 * (1.0 - r2), r1 * r2];
            if l.iter().all(|&w| w > 0.0) {
                let v = self.vertices;
                return [0, 1].map(|d| l[0] * v[0][d] + l[1] * v[1][d] + l[2] * v[2][d]);
            }
        }
    }

    /// Uniform by arc length over the three edges.
    pub fn sample_boundary<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let len = self.edge_lengths();
        let total: f64 = len.iter().sum();
        let mut s = rng.random::<f64>() * total;
        let mut edge = 2;
        for (i, &l) in len.iter().enumerate() {
            if s < l {
                edge = i;
                break;
            }
            s -= l;
        }
        let frac = (s / len[edge]).clamp(0.0, 1.0);
        let (p, q) = (self.vertices[edge], self.vertices[(edge + 1) % 3]);
        [p[0] + frac * (q[0] - p[0]), p[1] + frac * (q[1] - p[1])]
    }
}

/// Collocation sets for one loss evaluation; coordinates are columns.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    pub interior: Array2<f64>,
    pub boundary: Array2<f64>,
    pub boundary_targets: Vec<f64>,
}

impl SampleBatch {
    pub fn validate(&self) -> Result<()> {
        if self.interior.ncols() == 0 || self.boundary.ncols() == 0 {
            return Err(Error::Task("empty collocation batch".into()));
        }
        if self.boundary.ncols() != self.boundary_targets.len() {
            return Err(Error::Dimension {
                what: "boundary targets",
                expected: self.boundary.ncols(),
                got: self.boundary_targets.len(),
            });
        }
        Ok(())
    }
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n)
            .map(|i| if i + 1 == n { b } else { a + (b - a) * i as f64 / (n - 1) as f64 })
            .collect(),
    }
}

pub fn sample_batch<R: Rng + ?Sized>(task: &TaskSpec, m_r: usize, m_bc: usize, rng: &mut R) -> Result<SampleBatch> {
    if m_r == 0 || m_bc == 0 {
        return Err(Error::Config(format!("batch sizes must be >= 1 (got {m_r}, {m_bc})")));
    }
    let batch = match &task.variant {
        TaskVariant::OdeShift { eta } => {
            let xs = linspace(ODE_LEFT, ODE_RIGHT, m_r);
            SampleBatch {
                interior: Array2::from_shape_vec((1, m_r), xs).expect("shape"),
                boundary: Array2::from_shape_vec((1, 2), vec![ODE_LEFT, ODE_RIGHT]).expect("shape"),
                boundary_targets: vec![oracles::ode_exact(*eta, ODE_LEFT), oracles::ode_exact(*eta, ODE_RIGHT)],
            }
        }
        TaskVariant::Burgers1d { u0, .. } => {
            let mut interior = Array2::zeros((2, m_r));
            for j in 0..m_r {
                interior[[0, j]] = rng.random::<f64>();
                interior[[1, j]] = 1.0 - rng.random::<f64>();
            }
            let xs: Vec<f64> = (0..m_bc).map(|_| rng.random::<f64>()).collect();
            let targets = xs.iter().map(|&x| u0.evaluate_at(x)).collect();
            let mut boundary = Array2::zeros((2, m_bc));
            for (j, &x) in xs.iter().enumerate() {
                boundary[[0, j]] = x;
            }
            SampleBatch {
                interior,
                boundary,
                boundary_targets: targets,
            }
        }
        TaskVariant::LaplaceTriangle {
            vertex_angles,
            boundary_field,
        } => {
            let tri = triangle(vertex_angles)?;
            let mut interior = Array2::zeros((2, m_r));
            for j in 0..m_r {
                let p = tri.sample_interior(rng);
                interior[[0, j]] = p[0];
                interior[[1, j]] = p[1];
            }
            let mut boundary = Array2::zeros((2, m_bc));
            let mut targets = Vec::with_capacity(m_bc);
            for j in 0..m_bc {
                let p = tri.sample_boundary(rng);
                boundary[[0, j]] = p[0];
                boundary[[1, j]] = p[1];
                targets.push(oracles::laplace_disk_at(boundary_field, p[0], p[1])?);
            }
            SampleBatch {
                interior,
                boundary,
                boundary_targets: targets,
            }
        }
    };
    Ok(batch)
}

/// Recipe for generating a task family and its S1/S2 split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilyConfig {
    /// `n_tasks` equidistant shifts in `[eta_min, eta_max]`.
    OdeShift {
        n_tasks: usize,
        n_train: usize,
        eta_min: f64,
        eta_max: f64,
    },
    Burgers1d {
        n_tasks: usize,
        n_train: usize,
        nu: f64,
        grf: GrfSpec,
    },
    LaplaceTriangle {
        n_tasks: usize,
        n_train: usize,
        grf: GrfSpec,
    },
}

impl FamilyConfig {
    pub fn counts(&self) -> (usize, usize) {
        match *self {
            FamilyConfig::OdeShift { n_tasks, n_train, .. }
            | FamilyConfig::Burgers1d { n_tasks, n_train, .. }
            | FamilyConfig::LaplaceTriangle { n_tasks, n_train, .. } => (n_tasks, n_train),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSets {
    pub s1: Vec<TaskSpec>,
    pub s2: Vec<TaskSpec>,
}

/// Generate the family (ids `0..n_tasks` in draw order) and split it at
/// random into `n_train` pre-training tasks and the rest.
pub fn generate_tasks(cfg: &FamilyConfig, seed: u64) -> Result<TaskSets> {
    let (n, n_train) = cfg.counts();
    if n == 0 || n_train > n {
        return Err(Error::Config(format!("need 0 < n_train <= n_tasks (got {n_train}, {n})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tasks = Vec::with_capacity(n);
    for (i, id) in (0..n as u64).enumerate() {
        let variant = match cfg {
            FamilyConfig::OdeShift { eta_min, eta_max, .. } => TaskVariant::OdeShift {
                eta: linspace(*eta_min, *eta_max, n)[i],
            },
            FamilyConfig::Burgers1d { nu, grf, .. } => TaskVariant::Burgers1d {
                u0: sample_grf(grf, &mut rng)?,
                nu: *nu,
            },
            FamilyConfig::LaplaceTriangle { grf, .. } => {
                let vertex_angles = loop {
                    let a = [0; 3].map(|_| rng.random::<f64>() * 2.0 * PI);
                    if triangle(&a).is_ok() {
                        break a;
                    }
                };
                TaskVariant::LaplaceTriangle {
                    vertex_angles,
                    boundary_field: sample_grf(grf, &mut rng)?,
                }
            }
        };
        let task = TaskSpec { id, variant };
        task.validate()?;
        tasks.push(task);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut s1: Vec<TaskSpec> = order[..n_train].iter().map(|&i| tasks[i].clone()).collect();
    let mut s2: Vec<TaskSpec> = order[n_train..].iter().map(|&i| tasks[i].clone()).collect();
    s1.sort_by_key(|t| t.id);
    s2.sort_by_key(|t| t.id);
    Ok(TaskSets { s1, s2 })
}

pub fn save_tasks(path: &Path, tasks: &[TaskSpec]) -> Result<()> {
    let mut json = serde_json::to_vec_pretty(tasks)?;
    json.push(b'\n');
    crate::binio::write_atomic(path, &json)
}

pub fn load_tasks(path: &Path) -> Result<Vec<TaskSpec>> {
    let tasks: Vec<TaskSpec> = serde_json::from_slice(&std::fs::read(path)?)?;
    for t in &tasks {
        t.validate()?;
    }
    Ok(tasks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Jet2;
    use crate::grf::GrfDomain;

    fn jets(tape: &mut Tape, dirs: &[(Direction, f64, f64)], value: f64) -> OutputJets {
        let v = tape.constant_scalar(value);
        let jets = dirs
            .iter()
            .map(|&(d, d1, d2)| {
                let d1 = tape.constant_scalar(d1);
                let d2 = Some(tape.constant_scalar(d2));
                (d, Jet2 { value: v, d1, d2 })
            })
            .collect();
        OutputJets { value: v, jets }
    }

    fn laplace_task() -> TaskSpec {
        let mut h = GrfSample::zeros(4, GrfDomain::UnitCircle);
        h.cos[1] = 1.0;
        TaskSpec {
            id: 3,
            variant: TaskVariant::LaplaceTriangle {
                vertex_angles: [0.1, 2.0, 4.0],
                boundary_field: h,
            },
        }
    }

    #[test]
    fn ode_exact_solution_has_zero_residual() {
        let task = TaskSpec::ode(0, 0.0);
        for &x in &[-3.0f64, -0.5, 0.0, 1.2, 3.1] {
            let mut tape = Tape::new();
            let u = jets(&mut tape, &[(Direction::first(0), 2.0 * x * (x * x).cos(), 0.0)], (x * x).sin());
            let c = Array2::from_elem((1, 1), x);
            let r = residual(&mut tape, &task, c.view(), &u).unwrap();
            assert!(tape.scalar(r).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_field_is_harmonic_and_constant_solves_burgers() {
        let c = Array2::from_elem((2, 1), 0.2);
        let mut tape = Tape::new();
        let u = jets(&mut tape, &[(Direction::second(0), 1.0, 0.0), (Direction::second(1), 0.0, 0.0)], 0.2);
        let r = residual(&mut tape, &laplace_task(), c.view(), &u).unwrap();
        assert_eq!(tape.scalar(r), 0.0);

        let burgers = TaskSpec {
            id: 1,
            variant: TaskVariant::Burgers1d {
                u0: GrfSample::zeros(2, GrfDomain::UnitIntervalPeriodic),
                nu: 0.01,
            },
        };
        let u = jets(&mut tape, &[(Direction::second(0), 0.0, 0.0), (Direction::first(1), 0.0, 0.0)], 3.7);
        let r = residual(&mut tape, &burgers, c.view(), &u).unwrap();
        assert_eq!(tape.scalar(r), 0.0);
    }

    #[test]
    fn missing_direction_is_an_error() {
        let mut tape = Tape::new();
        let u = jets(&mut tape, &[(Direction::second(0), 0.0, 0.0)], 0.0);
        let c = Array2::zeros((2, 1));
        assert!(matches!(
            residual(&mut tape, &laplace_task(), c.view(), &u),
            Err(Error::MissingDerivative(_))
        ));
    }

    #[test]
    fn boundary_residual_cases() {
        let ode = TaskSpec::ode(0, 0.0);
        assert_eq!(boundary_residual(&ode, (PI * PI).sin(), &[-PI]).unwrap(), 0.0);
        assert!(matches!(boundary_residual(&ode, 0.0, &[0.3]), Err(Error::OffBoundary { .. })));

        let mut u0 = GrfSample::zeros(2, GrfDomain::UnitIntervalPeriodic);
        u0.sin[0] = 0.5;
        let b = TaskSpec {
            id: 0,
            variant: TaskVariant::Burgers1d { u0: u0.clone(), nu: 0.01 },
        };
        assert_eq!(boundary_residual(&b, u0.evaluate_at(0.3), &[0.3, 0.0]).unwrap(), 0.0);
        assert!(boundary_residual(&b, 0.0, &[0.3, 0.5]).is_err());

        let lt = laplace_task();
        let tri = triangle(&[0.1, 2.0, 4.0]).unwrap();
        let [p, q, _] = tri.vertices;
        let m = [0.3 * p[0] + 0.7 * q[0], 0.3 * p[1] + 0.7 * q[1]];
        // h = cos θ extends to u = x
        assert!(boundary_residual(&lt, m[0], &m).unwrap().abs() < 1e-15);
        assert!(boundary_residual(&lt, 0.0, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn ode_grid_is_equidistant() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = sample_batch(&TaskSpec::ode(0, 0.5), 128, 2, &mut rng).unwrap();
        let x = b.interior.row(0);
        assert_eq!(x[0], -PI);
        assert_eq!(x[127], PI);
        for w in x.to_vec().windows(2) {
            assert!((w[1] - w[0] - 2.0 * PI / 127.0).abs() < 1e-14);
        }
        assert_eq!(b.boundary.ncols(), 2);
    }

    #[test]
    fn laplace_samples_lie_inside_and_on_edges() {
        let task = laplace_task();
        let tri = triangle(&[0.1, 2.0, 4.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = sample_batch(&task, 500, 100, &mut rng).unwrap();
        for c in b.interior.columns() {
            assert!(tri.barycentric(c[0], c[1]).iter().all(|&l| l > 0.0));
        }
        for (c, &g) in b.boundary.columns().into_iter().zip(&b.boundary_targets) {
            assert!(tri.distance_to_boundary(c[0], c[1]) < 1e-12);
            assert!((g - c[0]).abs() < 1e-14);
        }
    }

    #[test]
    fn burgers_batch_ranges() {
        let task = TaskSpec {
            id: 0,
            variant: TaskVariant::Burgers1d {
                u0: GrfSample::zeros(2, GrfDomain::UnitIntervalPeriodic),
                nu: 0.01,
            },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = sample_batch(&task, 1000, 10, &mut rng).unwrap();
        assert!(b.interior.row(0).iter().all(|&x| (0.0..1.0).contains(&x)));
        assert!(b.interior.row(1).iter().all(|&t| t > 0.0 && t <= 1.0));
        assert!(b.boundary.row(1).iter().all(|&t| t == 0.0));
    }

    #[test]
    fn batches_are_deterministic() {
        let task = laplace_task();
        let a = sample_batch(&task, 32, 8, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_batch(&task, 32, 8, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_triangle_rejected() {
        assert!(matches!(triangle(&[0.0, 1e-4, 2.0]), Err(Error::DegenerateTriangle(_))));
        assert!(triangle(&[0.0, 2.0 * PI - 1e-4, 2.0]).is_err());
        let mut t = laplace_task();
        if let TaskVariant::LaplaceTriangle { vertex_angles, .. } = &mut t.variant {
            *vertex_angles = [1.0, 1.0, 3.0];
        }
        assert!(sample_batch(&t, 4, 4, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn interior_sampler_covers_area_evenly() {
        // split by the median from vertex 0: each half has equal area
        let tri = triangle(&[0.3, 2.5, 4.4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 10_000;
        let mut left = 0;
        for _ in 0..n {
            let p = tri.sample_interior(&mut rng);
            let l = tri.barycentric(p[0], p[1]);
            if l[1] > l[2] {
                left += 1;
            }
        }
        let frac = left as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.05 * 0.5, "fraction {frac}");
    }

    #[test]
    fn family_generation_and_json_roundtrip() {
        let cfg = FamilyConfig::OdeShift {
            n_tasks: 20,
            n_train: 19,
            eta_min: 0.0,
            eta_max: 2.0,
        };
        let sets = generate_tasks(&cfg, 3).unwrap();
        assert_eq!((sets.s1.len(), sets.s2.len()), (19, 1));
        assert_eq!(sets, generate_tasks(&cfg, 3).unwrap());

        let cfg = FamilyConfig::Burgers1d {
            n_tasks: 150,
            n_train: 100,
            nu: 0.01,
            grf: GrfSpec::burgers(),
        };
        let sets = generate_tasks(&cfg, 7).unwrap();
        assert_eq!((sets.s1.len(), sets.s2.len()), (100, 50));
        assert!(sets.s1.iter().all(|a| sets.s2.iter().all(|b| a.id != b.id)));

        let lt = laplace_task();
        let json = serde_json::to_string(&lt).unwrap();
        assert!(json.contains("\"variant\":\"laplace_triangle\""));
        assert_eq!(serde_json::from_str::<TaskSpec>(&json).unwrap(), lt);
    }
}
