//! Convergence records, aggregation across tasks, and PCA projection of
//! solution snapshots.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracles::{mean_ci, MeanCi};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub iteration: u64,
    pub rel_l2: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub task_id: u64,
    pub method: String,
    pub seed: u64,
    pub series: Vec<SeriesPoint>,
}

impl ConvergenceRecord {
    pub fn new(task_id: u64, method: &str, seed: u64) -> Self {
        Self {
            task_id,
            method: method.to_string(),
            seed,
            series: Vec::new(),
        }
    }

    pub fn push(&mut self, point: SeriesPoint) -> Result<()> {
        if let Some(last) = self.series.last() {
            if point.iteration <= last.iteration {
                return Err(Error::Series(format!(
                    "iteration {} does not follow {}",
                    point.iteration, last.iteration
                )));
            }
        }
        if !point.rel_l2.is_finite() || !point.loss.is_finite() {
            return Err(Error::Series(format!("non-finite value at iteration {}", point.iteration)));
        }
        self.series.push(point);
        Ok(())
    }

    pub fn initial(&self) -> Option<&SeriesPoint> {
        self.series.first()
    }

    pub fn last(&self) -> Option<&SeriesPoint> {
        self.series.last()
    }

    /// First recorded iteration with `rel_l2 <= threshold`.
    pub fn first_reaching(&self, threshold: f64) -> Option<u64> {
        self.series.iter().find(|p| p.rel_l2 <= threshold).map(|p| p.iteration)
    }
}

/// Cross-task statistics at one evaluation iteration. `lo`/`hi` are `None`
/// when fewer than two records contribute.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregatePoint {
    pub iteration: u64,
    pub n: usize,
    pub mean: f64,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

pub fn aggregate(records: &[ConvergenceRecord]) -> Result<Vec<AggregatePoint>> {
    let first = records
        .first()
        .ok_or(Error::TooFewSamples { needed: 1, got: 0 })?;
    let grid: Vec<u64> = first.series.iter().map(|p| p.iteration).collect();
    for r in records {
        let g: Vec<u64> = r.series.iter().map(|p| p.iteration).collect();
        if g != grid {
            return Err(Error::Series(format!(
                "record for task {} ({}) has a different iteration grid",
                r.task_id, r.method
            )));
        }
    }
    grid.iter()
        .enumerate()
        .map(|(i, &iteration)| {
            let vals: Vec<f64> = records.iter().map(|r| r.series[i].rel_l2).collect();
            if vals.len() >= 2 {
                let MeanCi { mean, lo, hi } = mean_ci(&vals)?;
                Ok(AggregatePoint {
                    iteration,
                    n: vals.len(),
                    mean,
                    lo: Some(lo),
                    hi: Some(hi),
                })
            } else {
                Ok(AggregatePoint {
                    iteration,
                    n: 1,
                    mean: vals[0],
                    lo: None,
                    hi: None,
                })
            }
        })
        .collect()
}

pub fn write_convergence_csv(path: &Path, records: &[ConvergenceRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "task_id", "seed", "iteration", "rel_l2", "loss"])?;
    for r in records {
        for p in &r.series {
            w.write_record([
                r.method.clone(),
                r.task_id.to_string(),
                r.seed.to_string(),
                p.iteration.to_string(),
                format!("{:e}", p.rel_l2),
                format!("{:e}", p.loss),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    crate::binio::write_atomic(path, &bytes)
}

pub fn read_convergence_csv(path: &Path) -> Result<Vec<ConvergenceRecord>> {
    #[derive(Deserialize)]
    struct Row {
        method: String,
        task_id: u64,
        seed: u64,
        iteration: u64,
        rel_l2: f64,
        loss: f64,
    }
    let mut out: Vec<ConvergenceRecord> = Vec::new();
    for row in csv::Reader::from_path(path)?.deserialize() {
        let row: Row = row?;
        let same = out
            .last()
            .is_some_and(|r| r.method == row.method && r.task_id == row.task_id && r.seed == row.seed);
        if !same {
            out.push(ConvergenceRecord::new(row.task_id, &row.method, row.seed));
        }
        out.last_mut().expect("pushed").push(SeriesPoint {
            iteration: row.iteration,
            rel_l2: row.rel_l2,
            loss: row.loss,
        })?;
    }
    Ok(out)
}

/// Per-method summary of final errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub n_tasks: usize,
    pub final_iteration: u64,
    pub mean: f64,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub curve: Vec<AggregatePoint>,
}

pub fn summarize(records: &[ConvergenceRecord]) -> Result<Vec<MethodSummary>> {
    let mut methods: Vec<&str> = records.iter().map(|r| r.method.as_str()).collect();
    methods.sort();
    methods.dedup();
    methods
        .into_iter()
        .map(|m| {
            let group: Vec<ConvergenceRecord> = records.iter().filter(|r| r.method == m).cloned().collect();
            let curve = aggregate(&group)?;
            let end = *curve.last().ok_or_else(|| Error::Series(format!("empty series for {m}")))?;
            Ok(MethodSummary {
                method: m.to_string(),
                n_tasks: group.len(),
                final_iteration: end.iteration,
                mean: end.mean,
                ci_lo: end.lo,
                ci_hi: end.hi,
                curve,
            })
        })
        .collect()
}

/// Two-component PCA basis for fixed-length function evaluations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaProjection {
    pub center: Vec<f64>,
    /// Two orthonormal rows of length `center.len()`.
    pub basis: [Vec<f64>; 2],
    /// Fraction of total variance carried by each component.
    pub explained: [f64; 2],
}

pub fn pca_fit(functions: &[Vec<f64>]) -> Result<PcaProjection> {
    let n = functions.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let d = functions[0].len();
    if let Some(bad) = functions.iter().find(|f| f.len() != d) {
        return Err(Error::Dimension {
            what: "PCA sample length",
            expected: d,
            got: bad.len(),
        });
    }
    let center: Vec<f64> = (0..d)
        .map(|j| functions.iter().map(|f| f[j]).sum::<f64>() / n as f64)
        .collect();
    let data = DMatrix::from_fn(n, d, |i, j| functions[i][j] - center[j]);
    // eigenvectors of the n x n Gram matrix map back to principal directions
    let gram = &data * data.transpose();
    let eig = nalgebra::SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0)).sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(Error::Config("PCA data has rank zero".into()));
    }
    let pick = |k: usize| -> (Vec<f64>, f64) {
        let i = order[k];
        let lambda = eig.eigenvalues[i];
        if lambda <= total * 1e-24 {
            return (vec![0.0; d], 0.0);
        }
        let dir = data.transpose() * eig.eigenvectors.column(i);
        let norm = dir.norm();
        let mut row: Vec<f64> = dir.iter().map(|x| x / norm).collect();
        let lead = row
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(0.0);
        if lead < 0.0 {
            row.iter_mut().for_each(|x| *x = -*x);
        }
        (row, lambda / total)
    };
    let (b0, e0) = pick(0);
    let (b1, e1) = pick(1);
    Ok(PcaProjection {
        center,
        basis: [b0, b1],
        explained: [e0, e1],
    })
}

impl PcaProjection {
    pub fn project(&self, v: &[f64]) -> Result<[f64; 2]> {
        if v.len() != self.center.len() {
            return Err(Error::Dimension {
                what: "snapshot length",
                expected: self.center.len(),
                got: v.len(),
            });
        }
        Ok([0, 1].map(|k| {
            self.basis[k]
                .iter()
                .zip(v.iter().zip(&self.center))
                .map(|(b, (x, c))| b * (x - c))
                .sum()
        }))
    }

    pub fn reconstruct(&self, p: [f64; 2]) -> Vec<f64> {
        (0..self.center.len())
            .map(|j| self.center[j] + p[0] * self.basis[0][j] + p[1] * self.basis[1][j])
            .collect()
    }
}

pub fn project_trajectory(proj: &PcaProjection, snapshots: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    snapshots.iter().map(|s| proj.project(s)).collect()
}

/// One row of `manifold.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldPoint {
    pub label: String,
    pub step: u64,
    pub pc1: f64,
    pub pc2: f64,
}

pub fn write_manifold_csv(path: &Path, points: &[ManifoldPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in points {
        w.serialize(p)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    crate::binio::write_atomic(path, &bytes)
}
