//! Reference solutions and error metrics.

use std::f64::consts::PI;
use std::path::Path;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{Error, Result};
use crate::grf::GrfSample;

/// `u(x) = sin((x - η)²)`, the exact solution of the shifted ODE family.
pub fn ode_exact(eta: f64, x: f64) -> f64 {
    ((x - eta) * (x - eta)).sin()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub name: String,
    pub points: Vec<f64>,
}

/// Values on a tensor-product grid, row-major over `axes` in order.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceField {
    pub task_id: u64,
    pub axes: Vec<GridAxis>,
    pub values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct FieldHeader {
    task_id: u64,
    axes: Vec<GridAxis>,
}

const FIELD_MAGIC: &[u8; 8] = b"MADREF01";

impl ReferenceField {
    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.points.len()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n: usize = self.shape().iter().product();
        if n != self.values.len() {
            return Err(Error::Dimension {
                what: "reference field values",
                expected: n,
                got: self.values.len(),
            });
        }
        for axis in &self.axes {
            if axis.points.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Config(format!("axis `{}` is not strictly increasing", axis.name)));
            }
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("reference field has non-finite values".into()));
        }
        Ok(())
    }

    /// Grid points as coordinate columns, in the same order as `values`.
    pub fn coordinates(&self) -> Vec<Vec<f64>> {
        let shape = self.shape();
        let n: usize = shape.iter().product();
        (0..n)
            .map(|flat| {
                let mut rem = flat;
                let mut idx = vec![0; shape.len()];
                for d in (0..shape.len()).rev() {
                    idx[d] = rem % shape[d];
                    rem /= shape[d];
                }
                idx.iter()
                    .zip(&self.axes)
                    .map(|(&i, a)| a.points[i])
                    .collect()
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = FieldHeader {
            task_id: self.task_id,
            axes: self.axes.clone(),
        };
        binio::encode(FIELD_MAGIC, &header, &[("values", &self.values)])
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, mut blocks): (FieldHeader, _) = binio::decode(FIELD_MAGIC, bytes)?;
        let field = Self {
            task_id: h.task_id,
            axes: h.axes,
            values: binio::take_block(&mut blocks, "values")?,
        };
        field.validate()?;
        Ok(field)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn burgers_grid(nx: usize, nt: usize, task_id: u64) -> Vec<GridAxis> {
    let _ = task_id;
    vec![
        GridAxis {
            name: "x".into(),
            points: (0..nx).map(|j| j as f64 / nx as f64).collect(),
        },
        GridAxis {
            name: "t".into(),
            points: (0..=nt).map(|n| n as f64 / nt as f64).collect(),
        },
    ]
}

const MAX_SUBSTEPS: usize = 2_000_000;

/// Periodic viscous Burgers `u_t + u u_x = ν u_xx` on `[0,1) x [0,1]`.
///
/// Fourier pseudo-spectral in space with 2/3-rule dealiasing of the flux,
/// classical RK4 in time with `dt <= 0.25 min(dx / max|u|, dx² / 2ν)`.
/// Returns `u` on `nx` points in `x` by `nt + 1` snapshots in `t` (axes `x`, `t`).
pub fn burgers_solve(u0: &GrfSample, nu: f64, nx: usize, nt: usize) -> Result<ReferenceField> {
    if !(nu > 0.0) {
        return Err(Error::Config(format!("viscosity must be positive, got {nu}")));
    }
    if !nx.is_power_of_two() || nx < 8 || nt == 0 {
        return Err(Error::Config(format!(
            "burgers_solve needs nx a power of two >= 8 and nt >= 1 (got {nx}, {nt})"
        )));
    }
    let axes = burgers_grid(nx, nt, 0);
    let u_init: Vec<f64> = axes[0].points.iter().map(|&x| u0.evaluate_at(x)).collect();

    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(nx);
    let inv = planner.plan_fft_inverse(nx);
    let norm = 1.0 / nx as f64;
    let kmax = nx / 3;
    let wavenumber: Vec<f64> = (0..nx)
        .map(|j| {
            let k = if j <= nx / 2 { j as f64 } else { j as f64 - nx as f64 };
            2.0 * PI * k
        })
        .collect();
    let keep: Vec<bool> = (0..nx)
        .map(|j| {
            let k = if j <= nx / 2 { j } else { nx - j };
            k <= kmax
        })
        .collect();

    let to_physical = |hat: &[Complex64]| -> Vec<f64> {
        let mut buf = hat.to_vec();
        inv.process(&mut buf);
        buf.iter().map(|c| c.re * norm).collect()
    };
    let rhs = |hat: &[Complex64]| -> Vec<Complex64> {
        let u = to_physical(hat);
        let mut flux: Vec<Complex64> = u.iter().map(|&v| Complex64::new(0.5 * v * v, 0.0)).collect();
        fwd.process(&mut flux);
        (0..nx)
            .map(|j| {
                let k = wavenumber[j];
                let adv = if keep[j] {
                    -Complex64::new(0.0, k) * flux[j]
                } else {
                    Complex64::new(0.0, 0.0)
                };
                adv - nu * k * k * hat[j]
            })
            .collect()
    };

    let mut hat: Vec<Complex64> = u_init.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fwd.process(&mut hat);

    let dx = 1.0 / nx as f64;
    let interval = 1.0 / nt as f64;
    let mut snapshots = vec![u_init];
    for step in 0..nt {
        let u = to_physical(&hat);
        let umax = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut dt_max = dx * dx / (2.0 * nu);
        if umax > 0.0 {
            dt_max = dt_max.min(dx / umax);
        }
        dt_max *= 0.25;
        let sub = (interval / dt_max).ceil() as usize;
        if sub > MAX_SUBSTEPS {
            return Err(Error::Cfl(format!(
                "needs {sub} substeps in output interval {step} (max |u| = {umax})"
            )));
        }
        let dt = interval / sub as f64;
        for _ in 0..sub {
            let k1 = rhs(&hat);
            let s1: Vec<_> = hat.iter().zip(&k1).map(|(h, k)| h + 0.5 * dt * k).collect();
            let k2 = rhs(&s1);
            let s2: Vec<_> = hat.iter().zip(&k2).map(|(h, k)| h + 0.5 * dt * k).collect();
            let k3 = rhs(&s2);
            let s3: Vec<_> = hat.iter().zip(&k3).map(|(h, k)| h + dt * k).collect();
            let k4 = rhs(&s3);
            for j in 0..nx {
                hat[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
        }
        let u = to_physical(&hat);
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Cfl(format!("solution blew up in output interval {step}")));
        }
        snapshots.push(u);
    }
    Ok(ReferenceField {
        task_id: 0,
        values: x_major(&snapshots, nx),
        axes,
    })
}

fn x_major(snapshots: &[Vec<f64>], nx: usize) -> Vec<f64> {
    let nt1 = snapshots.len();
    let mut values = vec![0.0; nx * nt1];
    for (n, snap) in snapshots.iter().enumerate() {
        for (j, &v) in snap.iter().enumerate() {
            values[j * nt1 + n] = v;
        }
    }
    values
}

/// Independent cross-check for [`burgers_solve`]: conservative central
/// differences in space, Crank–Nicolson in time with Newton iterations on
/// the periodic tridiagonal system.
pub fn burgers_crank_nicolson(u0: &GrfSample, nu: f64, nx: usize, nt: usize, max_dt: f64) -> Result<ReferenceField> {
    if !(nu > 0.0) || nx < 8 || nt == 0 {
        return Err(Error::Config("burgers_crank_nicolson: bad arguments".into()));
    }
    let axes = burgers_grid(nx, nt, 0);
    let dx = 1.0 / nx as f64;
    let mut u: Vec<f64> = axes[0].points.iter().map(|&x| u0.evaluate_at(x)).collect();
    let idx = |j: isize| -> usize { j.rem_euclid(nx as isize) as usize };
    let operator = |v: &[f64]| -> Vec<f64> {
        (0..nx as isize)
            .map(|j| {
                let (l, c, r) = (v[idx(j - 1)], v[idx(j)], v[idx(j + 1)]);
                -(r * r - l * l) / (4.0 * dx) + nu * (r - 2.0 * c + l) / (dx * dx)
            })
            .collect()
    };

    let interval = 1.0 / nt as f64;
    let mut snapshots = vec![u.clone()];
    for step in 0..nt {
        let umax = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut dt_cap = max_dt;
        if umax > 0.0 {
            dt_cap = dt_cap.min(0.5 * dx / umax);
        }
        let sub = (interval / dt_cap).ceil() as usize;
        let dt = interval / sub as f64;
        for _ in 0..sub {
            let f_old = operator(&u);
            let rhs: Vec<f64> = u.iter().zip(&f_old).map(|(a, f)| a + 0.5 * dt * f).collect();
            let mut v = u.clone();
            let mut converged = false;
            for _ in 0..50 {
                let f = operator(&v);
                let residual: Vec<f64> = (0..nx).map(|j| v[j] - 0.5 * dt * f[j] - rhs[j]).collect();
                // Jacobian of v - dt/2 F(v)
                let mut sub_d = vec![0.0; nx];
                let mut diag = vec![0.0; nx];
                let mut sup_d = vec![0.0; nx];
                for j in 0..nx as isize {
                    let ju = j as usize;
                    let (l, r) = (v[idx(j - 1)], v[idx(j + 1)]);
                    sub_d[ju] = -0.5 * dt * (l / (2.0 * dx) + nu / (dx * dx));
                    sup_d[ju] = -0.5 * dt * (-r / (2.0 * dx) + nu / (dx * dx));
                    diag[ju] = 1.0 + 0.5 * dt * 2.0 * nu / (dx * dx);
                }
                let delta = solve_periodic_tridiagonal(&sub_d, &diag, &sup_d, &residual);
                let mut change = 0.0f64;
                for j in 0..nx {
                    v[j] -= delta[j];
                    change = change.max(delta[j].abs());
                }
                if change < 1e-14 * (1.0 + umax) {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::Cfl(format!("Newton iteration stalled in interval {step}")));
            }
            u = v;
        }
        snapshots.push(u.clone());
    }
    Ok(ReferenceField {
        task_id: 0,
        values: x_major(&snapshots, nx),
        axes,
    })
}

/// Solve `A x = d` for a periodic tridiagonal `A` with `A[j][j-1] = a[j]`,
/// `A[j][j] = b[j]`, `A[j][j+1] = c[j]` (indices mod n), via Sherman–Morrison.
fn solve_periodic_tridiagonal(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Vec<f64> {
    let n = b.len();
    let gamma = -b[0];
    let mut bb = b.to_vec();
    bb[0] -= gamma;
    bb[n - 1] -= c[n - 1] * a[0] / gamma;
    let x = thomas(a, &bb, c, d);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = c[n - 1];
    let z = thomas(a, &bb, c, &u);
    let fact = (x[0] + a[0] * x[n - 1] / gamma) / (1.0 + z[0] + a[0] * z[n - 1] / gamma);
    x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect()
}

fn thomas(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    cp[0] = c[0] / b[0];
    dp[0] = d[0] / b[0];
    for i in 1..n {
        let m = b[i] - a[i] * cp[i - 1];
        cp[i] = c[i] / m;
        dp[i] = (d[i] - a[i] * dp[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = dp[i] - cp[i] * x[i + 1];
    }
    x
}

/// Harmonic extension of boundary data `h(θ)` into the unit disk,
/// truncated at `k_max` Fourier modes.
pub fn laplace_disk_solution(h: &GrfSample, r: f64, theta: f64, k_max: usize) -> Result<f64> {
    if !(0.0..=1.0 + 1e-12).contains(&r) {
        return Err(Error::Config(format!("radius {r} outside the unit disk")));
    }
    let r = r.min(1.0);
    let k_max = k_max.min(h.n_modes());
    let mut acc = h.cos[0];
    let mut rk = 1.0;
    for k in 1..=k_max {
        rk *= r;
        let (s, c) = (k as f64 * theta).sin_cos();
        acc += rk * (h.cos[k] * c + h.sin[k - 1] * s);
    }
    Ok(acc)
}

/// [`laplace_disk_solution`] at a Cartesian point.
pub fn laplace_disk_at(h: &GrfSample, x: f64, y: f64) -> Result<f64> {
    laplace_disk_solution(h, x.hypot(y), y.atan2(x), h.n_modes())
}

/// `‖pred - reference‖₂ / ‖reference‖₂`.
pub fn relative_l2(pred: &[f64], reference: &[f64]) -> Result<f64> {
    if pred.len() != reference.len() {
        return Err(Error::Dimension {
            what: "relative_l2 operands",
            expected: reference.len(),
            got: pred.len(),
        });
    }
    let den = reference.iter().map(|r| r * r).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let num = pred
        .iter()
        .zip(reference)
        .map(|(p, r)| (p - r) * (p - r))
        .sum::<f64>()
        .sqrt();
    Ok(num / den)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Mean with a normal-approximation 95% interval, `mean ± 1.96 sd / sqrt(n)`.
pub fn mean_ci(errors: &[f64]) -> Result<MeanCi> {
    let n = errors.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let mean = errors.iter().sum::<f64>() / n as f64;
    let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let half = 1.96 * var.sqrt() / (n as f64).sqrt();
    Ok(MeanCi {
        mean,
        lo: mean - half,
        hi: mean + half,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grf::{sample_grf, GrfDomain, GrfSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn ode_exact_values() {
        assert_eq!(ode_exact(0.7, 0.7), 0.0);
        assert!((ode_exact(0.0, (PI / 2.0).sqrt()) - 1.0).abs() < 1e-15);
        assert!((ode_exact(0.0, PI) - (PI * PI).sin()).abs() < 1e-15);
        assert!((ode_exact(0.0, PI) + 0.4303).abs() < 1e-4);
    }

    #[test]
    fn relative_l2_cases() {
        let r = [1.0, -2.0, 2.0];
        assert_eq!(relative_l2(&r, &r).unwrap(), 0.0);
        let twice: Vec<f64> = r.iter().map(|x| 2.0 * x).collect();
        assert!((relative_l2(&twice, &r).unwrap() - 1.0).abs() < 1e-15);
        let eps = 1e-3;
        let pert = [r[0] + eps, r[1], r[2]];
        assert!((relative_l2(&pert, &r).unwrap() - eps / 3.0).abs() < 1e-15);
        assert!(matches!(relative_l2(&r, &[0.0; 3]), Err(Error::ZeroNorm)));
        assert!(relative_l2(&r, &[1.0]).is_err());
    }

    #[test]
    fn mean_ci_cases() {
        let c = mean_ci(&[0.01, 0.01, 0.01]).unwrap();
        assert!((c.mean - 0.01).abs() < 1e-18 && (c.hi - c.lo).abs() < 1e-18);
        assert_eq!(mean_ci(&[0.0, 2.0]).unwrap().mean, 1.0);
        assert!(mean_ci(&[1.0]).is_err());
    }

    #[test]
    fn mean_ci_coverage() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let trials = 400;
        let mut covered = 0;
        for _ in 0..trials {
            let xs: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect();
            let ci = mean_ci(&xs).unwrap();
            if ci.lo <= 0.0 && 0.0 <= ci.hi {
                covered += 1;
            }
        }
        let rate = covered as f64 / trials as f64;
        // binomial sd at p = 0.95, n = 400 is about 0.011
        assert!((rate - 0.95).abs() < 0.035, "coverage {rate}");
    }

    #[test]
    fn disk_solution_special_cases() {
        let mut h = GrfSample::zeros(4, GrfDomain::UnitCircle);
        h.cos[0] = 1.0;
        assert_eq!(laplace_disk_solution(&h, 0.5, 1.0, 4).unwrap(), 1.0);
        let mut h = GrfSample::zeros(4, GrfDomain::UnitCircle);
        h.cos[1] = 1.0;
        let (x, y) = (0.3, -0.4);
        assert!((laplace_disk_at(&h, x, y).unwrap() - x).abs() < 1e-15);
        assert!(laplace_disk_solution(&h, 1.5, 0.0, 4).is_err());
    }

    #[test]
    fn disk_solution_is_discretely_harmonic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = sample_grf(&GrfSpec::laplace(), &mut rng).unwrap();
        let step = 1e-3;
        let u = |x: f64, y: f64| laplace_disk_at(&h, x, y).unwrap();
        for &(x, y) in &[(0.1, 0.2), (-0.5, 0.3), (0.0, -0.7), (0.6, 0.6)] {
            let lap = (u(x + step, y) + u(x - step, y) + u(x, y + step) + u(x, y - step) - 4.0 * u(x, y))
                / (step * step);
            assert!(lap.abs() <= 1e-3, "laplacian {lap} at ({x},{y})");
        }
    }

    #[test]
    fn burgers_zero_stays_zero_and_matches_initial_slice() {
        let z = GrfSample::zeros(8, GrfDomain::UnitIntervalPeriodic);
        let f = burgers_solve(&z, 0.01, 64, 5).unwrap();
        assert!(f.values.iter().all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let u0 = sample_grf(&GrfSpec::burgers(), &mut rng).unwrap();
        let f = burgers_solve(&u0, 0.01, 128, 4).unwrap();
        assert_eq!(f.shape(), vec![128, 5]);
        for (j, &x) in f.axes[0].points.iter().enumerate() {
            assert_eq!(f.values[j * 5], u0.evaluate_at(x));
        }
    }

    #[test]
    fn burgers_conserves_mean() {
        let mut spec = GrfSpec::burgers();
        spec.include_constant = false;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let u0 = sample_grf(&spec, &mut rng).unwrap();
        let f = burgers_solve(&u0, 0.01, 128, 10).unwrap();
        let nt1 = 11;
        let rms0 = (f.values.iter().step_by(nt1).map(|v| v * v).sum::<f64>() / 128.0).sqrt();
        for n in 0..nt1 {
            let mean = (0..128).map(|j| f.values[j * nt1 + n]).sum::<f64>() / 128.0;
            assert!(mean.abs() <= 1e-6 * rms0, "mean {mean} at snapshot {n}");
        }
    }

    #[test]
    fn burgers_rejects_bad_grid() {
        let z = GrfSample::zeros(8, GrfDomain::UnitIntervalPeriodic);
        assert!(burgers_solve(&z, 0.01, 100, 5).is_err());
        assert!(burgers_solve(&z, 0.0, 64, 5).is_err());
    }

    #[test]
    fn periodic_tridiagonal_solver() {
        let n = 7;
        let a: Vec<f64> = (0..n).map(|i| 0.3 + 0.01 * i as f64).collect();
        let b: Vec<f64> = (0..n).map(|i| 3.0 + 0.1 * i as f64).collect();
        let c: Vec<f64> = (0..n).map(|i| -0.7 + 0.05 * i as f64).collect();
        let d: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = solve_periodic_tridiagonal(&a, &b, &c, &d);
        for i in 0..n {
            let l = x[(i + n - 1) % n];
            let r = x[(i + 1) % n];
            let lhs = a[i] * l + b[i] * x[i] + c[i] * r;
            assert!((lhs - d[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn field_roundtrip() {
        let f = ReferenceField {
            task_id: 4,
            axes: burgers_grid(4, 2, 0),
            values: (0..12).map(|i| i as f64 * 0.1).collect(),
        };
        let back = ReferenceField::from_bytes(&f.to_bytes().unwrap()).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.coordinates()[1], vec![0.0, 0.5]);
    }
}
