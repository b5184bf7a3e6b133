//! Pairwise estimates, the weighting loss and the federated weighted
//! estimator.

use serde::{Deserialize, Serialize};

use super::gram::GramSums;
use super::lambda::{default_lambda_grid, select_lambda, LambdaRule, LambdaSelection};
use super::solver::{solve_weights, FederatedWeights, QuadraticLoss, SolverConfig};
use crate::access::SiteAccess;
use crate::error::{Error, Result};
use crate::estimators::{fit_plan, plan_totals, solve_plan, EstimatorConfig};
use crate::measure::CausalMeasure;
use crate::nuisance::fit::describe;
use crate::report::{EstimateReport, Method};
use crate::site_ops::{EifPlan, GramPlan};

/// Whether each pairwise estimator refits its nuisances on `{0, k}` or reuses
/// one bundle fitted on every site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PairFits {
    #[default]
    RefitPerPair,
    Shared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FederationConfig {
    pub estimator: EstimatorConfig,
    /// Penalty candidates; `None` uses [`default_lambda_grid`].
    pub lambda_grid: Option<Vec<f64>>,
    pub lambda_rule: LambdaRule,
    pub folds: usize,
    pub solver: SolverConfig,
    pub pair_fits: PairFits,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            estimator: EstimatorConfig::default(),
            lambda_grid: None,
            lambda_rule: LambdaRule::default(),
            folds: 5,
            solver: SolverConfig::default(),
            pair_fits: PairFits::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseEstimate {
    pub k: usize,
    /// Treated-mean estimate from sites `{0, k}` (target-only for `k = 0`).
    pub psi1_pair: f64,
    /// Row `k` of the influence Gram matrix over `(target, pairs...)`.
    pub eif_gram_row: Vec<f64>,
    /// `|psi1_pair - psi1_target|`.
    pub delta_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederatedFit {
    pub sites: Vec<usize>,
    pub n: usize,
    pub n0: usize,
    /// Target-only estimator.
    pub target: EstimateReport,
    pub pairwise: Vec<PairwiseEstimate>,
    pub loss: QuadraticLoss,
    pub lambda: LambdaSelection,
    pub weights: FederatedWeights,
    pub gram: GramSums,
}

impl FederatedFit {
    pub fn deltas_sq(&self) -> Vec<f64> {
        self.pairwise.iter().skip(1).map(|p| p.delta_hat * p.delta_hat).collect()
    }
}

fn pair_plans(
    access: &mut dyn SiteAccess,
    sites: &[usize],
    measure: CausalMeasure,
    cfg: &FederationConfig,
) -> Result<Vec<EifPlan>> {
    match cfg.pair_fits {
        PairFits::RefitPerPair => sites[1..]
            .iter()
            .map(|&k| fit_plan(access, &[0, k], Method::Mr1, measure, &cfg.estimator))
            .collect(),
        PairFits::Shared => {
            let full = fit_plan(access, sites, Method::Mr1, measure, &cfg.estimator)?;
            Ok(sites[1..]
                .iter()
                .map(|&k| EifPlan { method: Method::Mr1, sites: vec![0, k], bundle: full.bundle.clone() })
                .collect())
        }
    }
}

/// Target-only and pairwise estimates, the weighting loss, the penalty level
/// and the weights.
pub fn fit_federated(
    access: &mut dyn SiteAccess,
    sites: &[usize],
    measure: CausalMeasure,
    cfg: &FederationConfig,
) -> Result<FederatedFit> {
    if sites.first() != Some(&0) {
        return Err(Error::MissingTargetSite);
    }
    if measure != CausalMeasure::RiskRatio {
        return Err(Error::UnsupportedMeasureForMode {
            measure: measure.to_string(),
            method: "federated weighting".into(),
        });
    }
    let summaries = describe(access, sites)?;
    let n: usize = summaries.iter().map(|s| s.n).sum();
    let n0 = summaries[0].n;

    let target_plan = fit_plan(access, &[0], Method::DrT, measure, &cfg.estimator)?;
    let target = solve_plan(access, &target_plan)?;
    let plans = pair_plans(access, sites, measure, cfg)?;
    let mut psi1 = vec![target.psi1_hat];
    for plan in &plans {
        psi1.push(plan_totals(access, plan)?.psi1);
    }

    let gram_plan = GramPlan {
        target: target_plan,
        pairs: plans,
        psi_ref: target.psi1_hat,
        psi0_ref: target.psi0_hat,
        folds: cfg.folds.max(1),
    };
    let p0 = n0 as f64 / n as f64;
    let gram = GramSums::collect(access, sites, &gram_plan, p0)?;
    let total = gram.total();
    let loss = gram.loss(&total)?;

    let d = gram.dim;
    let scale = 1.0 / (total.rows * p0 * p0);
    let pairwise: Vec<PairwiseEstimate> = sites
        .iter()
        .enumerate()
        .map(|(j, &k)| PairwiseEstimate {
            k,
            psi1_pair: psi1[j],
            eif_gram_row: (0..sites.len()).map(|i| total.second[j * d + i] * scale).collect(),
            delta_hat: (psi1[j] - psi1[0]).abs(),
        })
        .collect();
    let deltas_sq: Vec<f64> = pairwise.iter().skip(1).map(|p| p.delta_hat * p.delta_hat).collect();
    let grid = cfg.lambda_grid.clone().unwrap_or_else(|| default_lambda_grid(n));
    let lambda = select_lambda(&gram, &deltas_sq, sites, &grid, cfg.lambda_rule, &cfg.solver)?;
    let weights = solve_weights(&loss, &deltas_sq, lambda.lambda, sites, &cfg.solver)?;
    Ok(FederatedFit { sites: sites.to_vec(), n, n0, target, pairwise, loss, lambda, weights, gram })
}

/// Weighted combination `m(psi0_target, sum_k w_k psi1_k)` with a plug-in
/// standard error that treats the weights as fixed.
pub fn estimate_fw(fit: &FederatedFit, measure: CausalMeasure) -> Result<EstimateReport> {
    let w = &fit.weights.w;
    let psi0 = fit.target.psi0_hat;
    let psi1: f64 = w.iter().zip(&fit.pairwise).map(|(w, p)| w * p.psi1_pair).sum();
    let psi = measure.apply(psi0, psi1)?;
    let (d0, d1) = measure.gradient(psi0, psi1)?;
    let total = fit.gram.total();
    let cov = total.covariance(fit.gram.p0);
    let d = fit.gram.dim;
    let mut v = vec![0.0; d];
    for (j, wj) in w.iter().enumerate() {
        v[j] = d1 * wj;
    }
    v[d - 1] = d0;
    let mut var = 0.0;
    for i in 0..d {
        for j in 0..d {
            var += v[i] * cov[i * d + j] * v[j];
        }
    }
    let se = (var.max(0.0) / fit.n as f64).sqrt();
    let selected: Vec<usize> = fit
        .sites
        .iter()
        .zip(w)
        .filter(|(k, w)| **k == 0 || **w > 0.0)
        .map(|(k, _)| *k)
        .collect();
    let mut report = EstimateReport::wald(Method::Fwmr1, measure, psi0, psi1, psi, se, selected, fit.n);
    report.fallback_rows = fit.target.fallback_rows;
    Ok(report)
}

/// Pairwise estimate for one source on its own: target-only and `{0, k}`
/// fits, and the 2x2 influence Gram row of the pair.
pub fn pairwise_estimate(
    access: &mut dyn SiteAccess,
    k: usize,
    measure: CausalMeasure,
    cfg: &FederationConfig,
) -> Result<PairwiseEstimate> {
    let sites: Vec<usize> = if k == 0 { vec![0] } else { vec![0, k] };
    let single = FederationConfig { lambda_grid: Some(vec![0.0]), ..cfg.clone() };
    let fit = fit_federated(access, &sites, measure, &single)?;
    Ok(fit.pairwise.last().expect("target is always present").clone())
}
