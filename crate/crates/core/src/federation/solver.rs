//! Penalized simplex program for the federated weights:
//! minimize `w'Gw - 2b'w + c + sum_k pen_k w_k` over `(w_0, ..., w_K)` on the
//! probability simplex, where `G`, `b` and the penalty involve only the
//! source weights and `w_0` is slack mass on the target estimate.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::rng_for;

/// Quadratic form of the weighting loss over the `K` source weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticLoss {
    pub k: usize,
    /// Row-major `K x K`.
    pub g: Vec<f64>,
    pub b: Vec<f64>,
    pub c: f64,
}

impl QuadraticLoss {
    pub fn new(g: Vec<f64>, b: Vec<f64>, c: f64) -> Result<Self> {
        let k = b.len();
        if g.len() != k * k {
            return Err(Error::Config(format!("G has {} entries for {k} sources", g.len())));
        }
        Ok(Self { k, g, b, c })
    }

    pub fn gij(&self, i: usize, j: usize) -> f64 {
        self.g[i * self.k + j]
    }

    /// Unpenalized loss at the full weight vector (`w[0]` is the target).
    pub fn value(&self, w: &[f64]) -> f64 {
        let ws = &w[1..];
        let mut quad = 0.0;
        for i in 0..self.k {
            let mut row = 0.0;
            for j in 0..self.k {
                row += self.gij(i, j) * ws[j];
            }
            quad += ws[i] * row;
        }
        quad - 2.0 * self.b.iter().zip(ws).map(|(b, w)| b * w).sum::<f64>() + self.c
    }

    pub fn min_eigenvalue(&self) -> f64 {
        if self.k == 0 {
            return 0.0;
        }
        let m = DMatrix::from_row_slice(self.k, self.k, &self.g);
        let sym = (&m + m.transpose()) * 0.5;
        SymmetricEigen::new(sym).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub restarts: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { restarts: 10, tol: 1e-8, max_iter: 10_000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederatedWeights {
    /// Weights aligned with `sites`; `w[0]` belongs to the target.
    pub w: Vec<f64>,
    pub sites: Vec<usize>,
    pub lambda_n: f64,
    pub objective_value: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl FederatedWeights {
    /// All mass on the target.
    pub fn target_only(sites: &[usize]) -> Self {
        let mut w = vec![0.0; sites.len()];
        w[0] = 1.0;
        Self { w, sites: sites.to_vec(), lambda_n: f64::INFINITY, objective_value: 0.0, converged: true, iterations: 0 }
    }

    pub fn weight_of(&self, site: usize) -> Option<f64> {
        self.sites.iter().position(|&k| k == site).map(|j| self.w[j])
    }
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

fn penalized(loss: &QuadraticLoss, pen: &[f64], w: &[f64]) -> f64 {
    loss.value(w) + pen.iter().zip(&w[1..]).map(|(p, w)| p * w).sum::<f64>()
}

fn gradient(loss: &QuadraticLoss, pen: &[f64], w: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; w.len()];
    for i in 0..loss.k {
        let mut row = 0.0;
        for j in 0..loss.k {
            row += loss.gij(i, j) * w[1 + j];
        }
        g[1 + i] = 2.0 * row - 2.0 * loss.b[i] + pen[i];
    }
    g
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

struct Run {
    w: Vec<f64>,
    value: f64,
    converged: bool,
    iterations: usize,
}

/// Projected gradient with backtracking on the sufficient-decrease condition
/// `f(w+) <= f(w) + g'(w+ - w) + |w+ - w|^2 / (2t)`, so iterates never
/// increase the objective.
fn descend(loss: &QuadraticLoss, pen: &[f64], start: Vec<f64>, cfg: &SolverConfig) -> Run {
    let mut w = project_simplex(&start);
    let mut f = penalized(loss, pen, &w);
    let scale = loss.g.iter().fold(0.0f64, |m, v| m.max(v.abs())) * loss.k as f64;
    let mut t = if scale > 0.0 { 0.5 / scale } else { 1.0 };
    for it in 0..cfg.max_iter {
        let g = gradient(loss, pen, &w);
        let mapped = project_simplex(&w.iter().zip(&g).map(|(w, g)| w - g).collect::<Vec<_>>());
        if norm(mapped.iter().zip(&w).map(|(a, b)| a - b)) < cfg.tol {
            return Run { w, value: f, converged: true, iterations: it };
        }
        t *= 2.0;
        loop {
            let cand = project_simplex(&w.iter().zip(&g).map(|(w, g)| w - t * g).collect::<Vec<_>>());
            let d: Vec<f64> = cand.iter().zip(&w).map(|(a, b)| a - b).collect();
            let fc = penalized(loss, pen, &cand);
            let bound = f + g.iter().zip(&d).map(|(g, d)| g * d).sum::<f64>() + norm(d.iter().copied()).powi(2) / (2.0 * t);
            if fc <= bound || t < 1e-30 {
                if fc <= f {
                    w = cand;
                    f = fc;
                }
                break;
            }
            t *= 0.5;
        }
        if t < 1e-30 {
            return Run { w, value: f, converged: false, iterations: it + 1 };
        }
    }
    Run { w, value: f, converged: false, iterations: cfg.max_iter }
}

/// Solves the penalized program with `pen_k = lambda * deltas_sq[k]`.
pub fn solve_weights(
    loss: &QuadraticLoss,
    deltas_sq: &[f64],
    lambda: f64,
    sites: &[usize],
    cfg: &SolverConfig,
) -> Result<FederatedWeights> {
    let k = loss.k;
    if deltas_sq.len() != k || sites.len() != k + 1 {
        return Err(Error::Config("weight problem dimensions disagree".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be non-negative, got {lambda}")));
    }
    if lambda.is_infinite() || k == 0 {
        let mut fw = FederatedWeights::target_only(sites);
        fw.lambda_n = lambda;
        fw.objective_value = loss.c;
        return Ok(fw);
    }
    let scale = loss.g.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if loss.min_eigenvalue() < -1e-10 * scale {
        return Err(Error::Config("Gram matrix is not positive semidefinite".into()));
    }
    let pen: Vec<f64> = deltas_sq.iter().map(|d| lambda * d).collect();
    let mut rng = rng_for(cfg.seed, &[k as u64]);
    let mut starts = vec![{
        let mut e0 = vec![0.0; k + 1];
        e0[0] = 1.0;
        e0
    }];
    starts.push(vec![1.0 / (k + 1) as f64; k + 1]);
    while starts.len() < cfg.restarts.max(1) {
        let raw: Vec<f64> = (0..=k).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
        let total: f64 = raw.iter().sum();
        starts.push(raw.into_iter().map(|v| v / total).collect());
    }
    starts.truncate(cfg.restarts.max(1));
    let mut best: Option<Run> = None;
    let mut iterations = 0;
    for s in starts {
        let run = descend(loss, &pen, s, cfg);
        iterations += run.iterations;
        if best.as_ref().map_or(true, |b| run.value < b.value) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one start");
    Ok(FederatedWeights {
        w: best.w,
        sites: sites.to_vec(),
        lambda_n: lambda,
        objective_value: best.value,
        converged: best.converged,
        iterations,
    })
}
