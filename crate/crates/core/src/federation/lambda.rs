//! Cross-validated choice of the penalty level.

use serde::{Deserialize, Serialize};

use super::gram::GramSums;
use super::solver::{solve_weights, SolverConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LambdaRule {
    /// The grid value with the smallest mean held-out loss.
    MinCv,
    /// The largest grid value whose mean held-out loss is within one
    /// standard error of the minimum.
    #[default]
    OneSe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSelection {
    pub grid: Vec<f64>,
    pub cv_loss: Vec<f64>,
    pub cv_se: Vec<f64>,
    pub lambda: f64,
    pub rule: LambdaRule,
}

/// `{0, n^0.3, n^0.4, n^0.45}`: inside the window where the penalty grows
/// but slower than `sqrt(n)`.
pub fn default_lambda_grid(n: usize) -> Vec<f64> {
    let n = n as f64;
    vec![0.0, n.powf(0.3), n.powf(0.4), n.powf(0.45)]
}

/// For each fold, fits the weights on the other folds with each `lambda`
/// and scores the unpenalized loss on the held-out fold.
pub fn select_lambda(
    sums: &GramSums,
    deltas_sq: &[f64],
    sites: &[usize],
    grid: &[f64],
    rule: LambdaRule,
    solver: &SolverConfig,
) -> Result<LambdaSelection> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if grid.iter().any(|l| !(*l >= 0.0)) {
        return Err(Error::Config("lambda grid values must be non-negative".into()));
    }
    if grid.len() == 1 || deltas_sq.is_empty() {
        return Ok(LambdaSelection {
            grid: grid.to_vec(),
            cv_loss: vec![f64::NAN; grid.len()],
            cv_se: vec![f64::NAN; grid.len()],
            lambda: grid[0],
            rule,
        });
    }
    let folds: Vec<usize> = (0..sums.folds).filter(|&f| sums.rows[f] > 0.0).collect();
    if folds.len() < 2 {
        return Err(Error::Config("cross-validation needs at least two non-empty folds".into()));
    }
    let mut cv_loss = Vec::with_capacity(grid.len());
    let mut cv_se = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let mut scores = Vec::with_capacity(folds.len());
        for &f in &folds {
            let train = sums.loss(&sums.moments(|g| g != f))?;
            let held = sums.loss(&sums.moments(|g| g == f))?;
            let w = solve_weights(&train, deltas_sq, lambda, sites, solver)?;
            scores.push(held.value(&w.w));
        }
        let m = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / m;
        let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (m - 1.0);
        cv_loss.push(mean);
        cv_se.push((var / m).sqrt());
    }
    let best = (0..grid.len())
        .min_by(|&a, &b| cv_loss[a].total_cmp(&cv_loss[b]))
        .expect("non-empty grid");
    let lambda = match rule {
        LambdaRule::MinCv => grid[best],
        LambdaRule::OneSe => {
            let bound = cv_loss[best] + cv_se[best];
            (0..grid.len())
                .filter(|&i| cv_loss[i] <= bound)
                .map(|i| grid[i])
                .fold(grid[best], f64::max)
        }
    };
    Ok(LambdaSelection { grid: grid.to_vec(), cv_loss, cv_se, lambda, rule })
}
