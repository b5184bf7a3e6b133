//! Post-federated-weighting selection: sources whose weight reaches a
//! threshold `e` join the target in the multiply robust estimator, and `e`
//! is chosen by a bootstrap estimate of the mean squared error
//! `MSE(e) = (psi_e - psi_0)^2 + 2 cov(psi_e, psi_0) - V(psi_0)`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::access::{resample_site, SiteAccess};
use crate::data::MultiSiteData;
use crate::error::{Error, Result};
use crate::estimators::{estimate_via, fit_plan, plan_totals, solve_plan, EstimatorConfig};
use crate::federation::{FederatedFit, FederatedWeights};
use crate::measure::CausalMeasure;
use crate::report::{EstimateReport, Method};
use crate::site_ops::Request;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ThresholdGrid {
    e: Vec<f64>,
}

impl ThresholdGrid {
    pub fn new(e: Vec<f64>) -> Result<Self> {
        if e.is_empty() {
            return Err(Error::EmptyGrid);
        }
        if e.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
            return Err(Error::Config("thresholds must lie in (0, 1]".into()));
        }
        if e.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("thresholds must be strictly increasing".into()));
        }
        Ok(Self { e })
    }

    /// `{0.05, 0.10, ..., 1.00}`.
    pub fn default_grid() -> Self {
        Self { e: (1..=20).map(|i| i as f64 / 20.0).collect() }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let e = s
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| t.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad threshold `{t}`"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(e)
    }

    pub fn values(&self) -> &[f64] {
        &self.e
    }
}

impl Default for ThresholdGrid {
    fn default() -> Self {
        Self::default_grid()
    }
}

impl TryFrom<Vec<f64>> for ThresholdGrid {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ThresholdGrid> for Vec<f64> {
    fn from(g: ThresholdGrid) -> Self {
        g.e
    }
}

/// Stratified bootstrap: each site is resampled with replacement on its own,
/// keeping its size; replicate `b` is a pure function of `(seed, b)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapPlan {
    pub b: usize,
    pub seed: u64,
}

impl BootstrapPlan {
    pub fn new(b: usize, seed: u64) -> Result<Self> {
        if b < 2 {
            return Err(Error::Config(format!("at least 2 bootstrap replicates are needed, got {b}")));
        }
        Ok(Self { b, seed })
    }
}

pub fn bootstrap_replicate(data: &MultiSiteData, plan: &BootstrapPlan, b: usize) -> Result<MultiSiteData> {
    if b >= plan.b {
        return Err(Error::Config(format!("replicate {b} is outside 0..{}", plan.b)));
    }
    Ok(MultiSiteData::new(data.sites().map(|s| resample_site(s, plan.seed, b as u64))))
}

/// `{0} ∪ {k : w_k >= e}`.
pub fn selected_sites(weights: &FederatedWeights, e: f64) -> Vec<usize> {
    weights
        .sites
        .iter()
        .zip(&weights.w)
        .filter(|(k, w)| **k == 0 || **w >= e)
        .map(|(k, _)| *k)
        .collect()
}

/// Multiply robust estimator on the sites selected at threshold `e`, with
/// nuisances refitted on that subset.
pub fn psi_at_threshold(
    access: &mut dyn SiteAccess,
    e: f64,
    weights: &FederatedWeights,
    measure: CausalMeasure,
    cfg: &EstimatorConfig,
) -> Result<EstimateReport> {
    if !(e > 0.0 && e <= 1.0) {
        return Err(Error::Config(format!("threshold {e} is outside (0, 1]")));
    }
    estimate_set(access, &selected_sites(weights, e), measure, cfg)
}

/// The target-only set is the target-only estimator itself.
fn set_method(sites: &[usize]) -> Method {
    if sites == [0] {
        Method::DrT
    } else {
        Method::Mr1
    }
}

fn estimate_set(
    access: &mut dyn SiteAccess,
    sites: &[usize],
    measure: CausalMeasure,
    cfg: &EstimatorConfig,
) -> Result<EstimateReport> {
    estimate_via(access, sites, set_method(sites), measure, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseRecord {
    pub e: f64,
    pub selected_sites: Vec<usize>,
    pub psi_e: f64,
    /// Raw value; can be negative.
    pub mse_hat: f64,
    pub cov_hat: f64,
    pub var_target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseCurve {
    pub records: Vec<MseRecord>,
    pub b: usize,
    pub seed: u64,
    /// Bootstrap replicates dropped because some estimator failed on them.
    pub b_failed: usize,
}

impl MseCurve {
    /// `e,selected,psi,mse_hat`; the selected sites are `;`-separated.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("e,selected,psi,mse_hat\n");
        for r in &self.records {
            let sel: Vec<String> = r.selected_sites.iter().map(|k| k.to_string()).collect();
            out.push_str(&format!("{},{},{},{}\n", r.e, sel.join(";"), r.psi_e, r.mse_hat));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }

    /// SHA-256 prefix of the CSV rendering.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(&Sha256::digest(self.to_csv().as_bytes())[..16])
    }
}

/// Sample covariance with `B - 1` denominator. The variance of the target
/// estimate is `covariance(x, x)`, so a threshold that selects no source
/// gets `MSE = V` exactly.
pub fn covariance(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (n - 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PfwsConfig {
    pub grid: ThresholdGrid,
    pub b: usize,
    /// Also bootstrap the weighted estimator with the weights held fixed.
    pub fw_bootstrap_se: bool,
    /// Approximate fast mode: keep the full-data nuisances inside each
    /// replicate instead of refitting them.
    pub fixed_nuisances: bool,
}

impl Default for PfwsConfig {
    fn default() -> Self {
        Self { grid: ThresholdGrid::default_grid(), b: 200, fw_bootstrap_se: false, fixed_nuisances: false }
    }
}

/// Everything computed along the curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRun {
    pub curve: MseCurve,
    /// Distinct selection sets, the target-only set first.
    pub sets: Vec<Vec<usize>>,
    pub reports: Vec<EstimateReport>,
    /// Bootstrap estimates per set over the retained replicates.
    pub boot: Vec<Vec<f64>>,
    pub fw_boot: Option<Vec<f64>>,
}

fn fw_replicate(
    access: &mut dyn SiteAccess,
    weights: &FederatedWeights,
    measure: CausalMeasure,
    cfg: &EstimatorConfig,
    target: &EstimateReport,
) -> Result<f64> {
    let mut psi1 = weights.w[0] * target.psi1_hat;
    for (&k, &w) in weights.sites.iter().zip(&weights.w).skip(1) {
        if w > 0.0 {
            let plan = fit_plan(access, &[0, k], Method::Mr1, measure, cfg)?;
            psi1 += w * plan_totals(access, &plan)?.psi1;
        }
    }
    measure.apply(target.psi0_hat, psi1)
}

/// Bootstrap MSE curve over the thresholds. Selection sets come from the
/// given weights; each distinct set is estimated once per replicate, with
/// nuisances refitted on the replicate unless `pfws.fixed_nuisances`.
pub fn mse_curve(
    access: &mut dyn SiteAccess,
    plan: &BootstrapPlan,
    weights: &FederatedWeights,
    measure: CausalMeasure,
    cfg: &EstimatorConfig,
    pfws: &PfwsConfig,
) -> Result<CurveRun> {
    let grid = &pfws.grid;
    let mut sets: Vec<Vec<usize>> = vec![vec![0]];
    let per_e: Vec<usize> = grid
        .values()
        .iter()
        .map(|&e| {
            let s = selected_sites(weights, e);
            match sets.iter().position(|x| *x == s) {
                Some(i) => i,
                None => {
                    sets.push(s);
                    sets.len() - 1
                }
            }
        })
        .collect();
    let reports = sets
        .iter()
        .map(|s| estimate_set(access, s, measure, cfg))
        .collect::<Result<Vec<_>>>()?;
    let fixed_plans = if pfws.fixed_nuisances {
        Some(sets.iter().map(|s| fit_plan(access, s, set_method(s), measure, cfg)).collect::<Result<Vec<_>>>()?)
    } else {
        None
    };

    let all = access.site_ids();
    let mut boot: Vec<Vec<f64>> = vec![Vec::with_capacity(plan.b); sets.len()];
    let mut fw_boot = pfws.fw_bootstrap_se.then(|| Vec::with_capacity(plan.b));
    let mut failed = 0;
    for b in 0..plan.b {
        access.round(&all, &Request::Resample { seed: plan.seed, replicate: b as u64 })?;
        let replicate: Result<(Vec<f64>, Option<f64>)> = (|| {
            let mut psis = Vec::with_capacity(sets.len());
            let mut target = None;
            for (j, s) in sets.iter().enumerate() {
                let r = match &fixed_plans {
                    Some(plans) => solve_plan(access, &plans[j])?,
                    None => estimate_set(access, s, measure, cfg)?,
                };
                psis.push(r.psi_hat);
                target.get_or_insert(r);
            }
            let fw = match fw_boot {
                Some(_) => Some(fw_replicate(access, weights, measure, cfg, target.as_ref().expect("target set"))?),
                None => None,
            };
            Ok((psis, fw))
        })();
        access.round(&all, &Request::Restore)?;
        match replicate {
            Ok((psis, fw)) if psis.iter().all(|v| v.is_finite()) => {
                for (acc, v) in boot.iter_mut().zip(psis) {
                    acc.push(v);
                }
                if let (Some(acc), Some(v)) = (fw_boot.as_mut(), fw) {
                    acc.push(v);
                }
            }
            _ => failed += 1,
        }
    }
    let kept = plan.b - failed;
    if kept < 2 || failed * 2 > plan.b {
        return Err(Error::NonConvergence(format!("{failed} of {} bootstrap replicates failed", plan.b)));
    }

    let psi_target = reports[0].psi_hat;
    let var_target = covariance(&boot[0], &boot[0]);
    let records = grid
        .values()
        .iter()
        .zip(&per_e)
        .map(|(&e, &i)| {
            let cov_hat = covariance(&boot[i], &boot[0]);
            let psi_e = reports[i].psi_hat;
            let bias = psi_e - psi_target;
            MseRecord {
                e,
                selected_sites: sets[i].clone(),
                psi_e,
                mse_hat: bias * bias + 2.0 * cov_hat - var_target,
                cov_hat,
                var_target,
            }
        })
        .collect();
    Ok(CurveRun {
        curve: MseCurve { records, b: plan.b, seed: plan.seed, b_failed: failed },
        sets,
        reports,
        boot,
        fw_boot,
    })
}

/// Largest threshold among the minimizers of the curve.
pub fn select_threshold(curve: &MseCurve) -> Result<f64> {
    let min = curve
        .records
        .iter()
        .map(|r| r.mse_hat)
        .fold(f64::INFINITY, f64::min);
    curve
        .records
        .iter()
        .filter(|r| r.mse_hat == min)
        .map(|r| r.e)
        .fold(None, |acc: Option<f64>, e| Some(acc.map_or(e, |a| a.max(e))))
        .ok_or(Error::EmptyGrid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsReport {
    pub report: EstimateReport,
    pub e_star: f64,
    pub curve_digest: String,
    #[serde(rename = "B")]
    pub b: usize,
    pub seed: u64,
    pub weights: FederatedWeights,
    pub lambda_n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsOutcome {
    pub fs: FsReport,
    pub run: CurveRun,
}

/// Selective estimator: the multiply robust estimator on the set chosen at
/// `e*`, with its plug-in standard error; the bootstrap standard error of
/// the same set is reported alongside.
pub fn estimate_fs(
    access: &mut dyn SiteAccess,
    fit: &FederatedFit,
    measure: CausalMeasure,
    cfg: &EstimatorConfig,
    pfws: &PfwsConfig,
    seed: u64,
) -> Result<FsOutcome> {
    let plan = BootstrapPlan::new(pfws.b, seed)?;
    let run = mse_curve(access, &plan, &fit.weights, measure, cfg, pfws)?;
    let e_star = select_threshold(&run.curve)?;
    let chosen = selected_sites(&fit.weights, e_star);
    let i = run.sets.iter().position(|s| *s == chosen).expect("every threshold's set is on the curve");
    let mut report = run.reports[i].clone();
    report.method = Method::Fsmr1;
    report.bootstrap_se = Some(covariance(&run.boot[i], &run.boot[i]).sqrt());
    let fs = FsReport {
        report,
        e_star,
        curve_digest: run.curve.digest(),
        b: plan.b,
        seed,
        weights: fit.weights.clone(),
        lambda_n: fit.lambda.lambda,
    };
    Ok(FsOutcome { fs, run })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn weights(w: Vec<f64>) -> FederatedWeights {
        let sites = (0..w.len()).collect();
        FederatedWeights { w, sites, lambda_n: 0.0, objective_value: 0.0, converged: true, iterations: 0 }
    }

    #[test]
    fn grid_validation() {
        assert!(matches!(ThresholdGrid::new(vec![]), Err(Error::EmptyGrid)));
        assert!(ThresholdGrid::new(vec![0.2, 0.1]).is_err());
        assert!(ThresholdGrid::new(vec![0.0, 0.5]).is_err());
        let g = ThresholdGrid::default_grid();
        assert_eq!(g.values().len(), 20);
        assert_eq!(g.values()[0], 0.05);
        assert_eq!(*g.values().last().unwrap(), 1.0);
        assert_eq!(ThresholdGrid::parse("0.1, 0.5,1").unwrap().values(), &[0.1, 0.5, 1.0]);
    }

    #[test]
    fn selection_shrinks_with_threshold() {
        let w = weights(vec![0.2, 0.5, 0.3]);
        assert_eq!(selected_sites(&w, 0.1), vec![0, 1, 2]);
        assert_eq!(selected_sites(&w, 0.3), vec![0, 1, 2]);
        assert_eq!(selected_sites(&w, 0.4), vec![0, 1]);
        assert_eq!(selected_sites(&w, 0.9), vec![0]);
        let mut prev = 3;
        for e in ThresholdGrid::default_grid().values() {
            let n = selected_sites(&w, *e).len();
            assert!(n <= prev);
            prev = n;
        }
    }

    fn curve(values: &[(f64, f64)]) -> MseCurve {
        MseCurve {
            records: values
                .iter()
                .map(|&(e, m)| MseRecord {
                    e,
                    selected_sites: vec![0],
                    psi_e: 0.0,
                    mse_hat: m,
                    cov_hat: 0.0,
                    var_target: 0.0,
                })
                .collect(),
            b: 2,
            seed: 0,
            b_failed: 0,
        }
    }

    #[test]
    fn threshold_is_the_largest_minimizer() {
        assert_eq!(select_threshold(&curve(&[(0.1, 3.0), (0.2, 1.0), (0.3, 2.0)])).unwrap(), 0.2);
        assert_eq!(select_threshold(&curve(&[(0.1, 3.0), (0.2, -1.0), (0.3, -1.0), (0.4, 0.0)])).unwrap(), 0.3);
        assert_eq!(select_threshold(&curve(&[(0.1, 5.0), (0.5, 5.0), (1.0, 5.0)])).unwrap(), 1.0);
        assert!(matches!(select_threshold(&curve(&[])), Err(Error::EmptyGrid)));
    }

    #[test]
    fn covariance_of_a_series_with_itself_is_its_variance() {
        let x = [1.0, 2.5, -0.3, 4.2];
        let m = x.iter().sum::<f64>() / 4.0;
        let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 3.0;
        assert_eq!(covariance(&x, &x), v);
        assert_eq!(2.0 * v - v, v);
    }

    #[test]
    fn csv_has_the_documented_columns() {
        let c = curve(&[(0.5, 1.25)]);
        assert_eq!(c.to_csv(), "e,selected,psi,mse_hat\n0.5,0,0,1.25\n");
        assert_eq!(c.digest().len(), 32);
    }
}
