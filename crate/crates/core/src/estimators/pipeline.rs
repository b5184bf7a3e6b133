//! Closed-form estimators and their influence-function variance, computed
//! from per-site sums.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::terms::RowEvaluator;
use crate::access::{LocalAccess, SiteAccess};
use crate::data::MultiSiteData;
use crate::error::{Error, Result};
use crate::measure::CausalMeasure;
use crate::nuisance::{apply_misspec, fit_bundle, MisspecSpec, NuisanceBundle, NuisanceConfig};
use crate::report::{EstimateReport, Method};
use crate::site_ops::{EifPlan, EifStage, Request};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiComponent {
    Psi0,
    Psi1,
    Measure,
}

/// Per-row influence values over the participating rows, ordered by site and
/// then by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceSample {
    pub values: Vec<f64>,
    pub psi_component: PsiComponent,
}

impl InfluenceSample {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn sd(&self) -> f64 {
        let m = self.mean();
        let n = self.values.len() as f64;
        (self.values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    }

    /// Single-column CSV (`phi`).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "phi")?;
        for v in &self.values {
            writeln!(f, "{v}")?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Estimator settings shared by every closed-form method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct EstimatorConfig {
    pub nuisance: NuisanceConfig,
    pub misspec: MisspecSpec,
}

impl EstimatorConfig {
    pub fn for_measure(measure: CausalMeasure) -> Self {
        Self { nuisance: NuisanceConfig::for_measure(measure), misspec: MisspecSpec::none() }
    }
}

/// Estimating-equation solution of a plan before inference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanTotals {
    pub psi0: f64,
    pub psi1: f64,
    pub n: u64,
    pub n0: u64,
    pub fallback_rows: u64,
}

/// First round of [`solve_plan`]: `psi1 = sum t1 / n0`, `psi0 = sum t0 / n0`.
pub fn plan_totals(access: &mut dyn SiteAccess, plan: &EifPlan) -> Result<PlanTotals> {
    let totals = access.round(&plan.sites, &Request::EifSums { plan: plan.clone(), stage: EifStage::Totals })?;
    let (mut s1, mut s0, mut fallback) = (0.0, 0.0, 0.0);
    let (mut n, mut n0) = (0u64, 0u64);
    for (k, r) in plan.sites.iter().zip(totals) {
        let a = r.into_aggregate()?;
        s1 += a.get("sum_t1")?;
        s0 += a.get("sum_t0")?;
        fallback += a.get("fallback_rows")?;
        let count = a.entries.first().map(|e| e.count).unwrap_or(0);
        n += count;
        if *k == 0 {
            n0 = count;
        }
    }
    if n0 == 0 {
        return Err(Error::NoTargetRows);
    }
    Ok(PlanTotals { psi0: s0 / n0 as f64, psi1: s1 / n0 as f64, n, n0, fallback_rows: fallback as u64 })
}

/// Solves the estimating equations of `plan` and attaches plug-in inference.
pub fn solve_plan(access: &mut dyn SiteAccess, plan: &EifPlan) -> Result<EstimateReport> {
    let measure = plan.bundle.measure;
    let sites = &plan.sites;
    let PlanTotals { psi0, psi1, n, n0, fallback_rows } = plan_totals(access, plan)?;
    let psi = measure.apply(psi0, psi1)?;
    let moments = access.round(
        sites,
        &Request::EifSums { plan: plan.clone(), stage: EifStage::Moments { psi0, psi1 } },
    )?;
    let (mut s11, mut s00, mut s01) = (0.0, 0.0, 0.0);
    for r in moments {
        let a = r.into_aggregate()?;
        s11 += a.get("s11")?;
        s00 += a.get("s00")?;
        s01 += a.get("s01")?;
    }
    let (d0, d1) = measure.gradient(psi0, psi1)?;
    let p0 = n0 as f64 / n as f64;
    let sum_phi2 = (d1 * d1 * s11 + 2.0 * d0 * d1 * s01 + d0 * d0 * s00) / (p0 * p0);
    let v_hat = sum_phi2 / n as f64;
    let se = (v_hat / n as f64).sqrt();
    let mut report = EstimateReport::wald(plan.method, measure, psi0, psi1, psi, se, sites.clone(), n as usize);
    report.fallback_rows = fallback_rows as usize;
    Ok(report)
}

fn check_method(method: Method, measure: CausalMeasure) -> Result<()> {
    match method {
        Method::Mr1 if measure != CausalMeasure::RiskRatio => Err(Error::UnsupportedMeasureForMode {
            measure: measure.to_string(),
            method: method.to_string(),
        }),
        Method::Mr1 | Method::Mr2 | Method::DrT => Ok(()),
        other => Err(Error::Config(format!("{other} is not a single-model estimator"))),
    }
}

/// Fits the nuisances one closed-form estimator needs on `sites`, with the
/// configured misspecification applied.
pub fn fit_plan(
    access: &mut dyn SiteAccess,
    sites: &[usize],
    method: Method,
    measure: CausalMeasure,
    cfg: &EstimatorConfig,
) -> Result<EifPlan> {
    check_method(method, measure)?;
    let sites: Vec<usize> = if method == Method::DrT { vec![0] } else { sites.to_vec() };
    let bundle = fit_bundle(access, &sites, method, measure, &cfg.nuisance)?;
    let spec = cfg.misspec.for_method(method, &sites);
    let bundle = apply_misspec(access, &bundle, &spec, &cfg.nuisance)?;
    Ok(EifPlan { method, sites, bundle })
}

/// Fits nuisances and solves one closed-form estimator on `sites`.
pub fn estimate_via(
    access: &mut dyn SiteAccess,
    sites: &[usize],
    method: Method,
    measure: CausalMeasure,
    cfg: &EstimatorConfig,
) -> Result<EstimateReport> {
    let plan = fit_plan(access, sites, method, measure, cfg)?;
    solve_plan(access, &plan)
}

/// Convenience over in-memory data using every site present.
pub fn estimate(data: &MultiSiteData, method: Method, measure: CausalMeasure, cfg: &EstimatorConfig) -> Result<EstimateReport> {
    let mut access = LocalAccess::new(data);
    let sites = data.site_ids();
    estimate_via(&mut access, &sites, method, measure, cfg)
}

/// Target-only augmented estimator for both arms.
pub fn estimate_dr_t(data: &MultiSiteData, measure: CausalMeasure, cfg: &EstimatorConfig) -> Result<EstimateReport> {
    let mut access = LocalAccess::new(data);
    estimate_via(&mut access, &[0], Method::DrT, measure, cfg)
}

/// Estimator with a given, already fitted bundle.
pub fn estimate_measure(
    data: &MultiSiteData,
    bundle: &NuisanceBundle,
    sites: &[usize],
    method: Method,
    measure: CausalMeasure,
) -> Result<EstimateReport> {
    check_method(method, measure)?;
    if bundle.measure != measure {
        return Err(Error::Config("bundle was fitted for a different measure".into()));
    }
    let mut access = LocalAccess::new(data);
    solve_plan(&mut access, &EifPlan { method, sites: sites.to_vec(), bundle: bundle.clone() })
}

fn participating_rows<'a>(data: &'a MultiSiteData, sites: &'a [usize]) -> impl Iterator<Item = &'a crate::data::Individual> {
    sites.iter().filter_map(move |k| data.site(*k)).flat_map(|s| s.rows().iter())
}

fn counts(data: &MultiSiteData, sites: &[usize]) -> Result<(f64, f64)> {
    let n0 = data.target().ok_or(Error::NoTargetRows)?.n() as f64;
    let n: usize = sites.iter().filter_map(|k| data.site(*k)).map(|s| s.n()).sum();
    Ok((n as f64, n0))
}

/// Treated-mean estimate and its per-row influence values.
pub fn estimate_psi1(
    data: &MultiSiteData,
    bundle: &NuisanceBundle,
    sites: &[usize],
    method: Method,
) -> Result<(f64, InfluenceSample)> {
    let eval = RowEvaluator::new(bundle, method, sites)?;
    let (n, n0) = counts(data, sites)?;
    let terms: Vec<_> = participating_rows(data, sites).map(|r| eval.terms(r).map(|t| (r.s, t))).collect::<Result<_>>()?;
    let psi1 = terms.iter().map(|(_, t)| t.t1).sum::<f64>() / n0;
    let p0 = n0 / n;
    let values = terms.iter().map(|(s, t)| t.centred(*s == 0, 0.0, psi1).1 / p0).collect();
    Ok((psi1, InfluenceSample { values, psi_component: PsiComponent::Psi1 }))
}

/// Target-only control-mean estimate and its per-row influence values over
/// the same participating rows.
pub fn estimate_psi0_target(
    data: &MultiSiteData,
    bundle: &NuisanceBundle,
    sites: &[usize],
) -> Result<(f64, InfluenceSample)> {
    let eval = RowEvaluator::new(bundle, Method::DrT, &[0])?;
    let (n, n0) = counts(data, sites)?;
    let terms: Vec<_> = participating_rows(data, sites).map(|r| eval.terms(r).map(|t| (r.s, t))).collect::<Result<_>>()?;
    let psi0 = terms.iter().map(|(_, t)| t.t0).sum::<f64>() / n0;
    let p0 = n0 / n;
    let values = terms.iter().map(|(s, t)| t.centred(*s == 0, psi0, 0.0).0 / p0).collect();
    Ok((psi0, InfluenceSample { values, psi_component: PsiComponent::Psi0 }))
}

/// Influence values of the measure at given `(psi0, psi1)` (for instance the
/// truth, with oracle nuisances).
pub fn influence_values(
    data: &MultiSiteData,
    bundle: &NuisanceBundle,
    sites: &[usize],
    method: Method,
    psi0: f64,
    psi1: f64,
) -> Result<InfluenceSample> {
    let eval = RowEvaluator::new(bundle, method, sites)?;
    let (n, n0) = counts(data, sites)?;
    let p0 = n0 / n;
    let (d0, d1) = bundle.measure.gradient(psi0, psi1)?;
    let values = participating_rows(data, sites)
        .map(|r| {
            let (u0, u1) = eval.terms(r)?.centred(r.s == 0, psi0, psi1);
            Ok((d1 * u1 + d0 * u0) / p0)
        })
        .collect::<Result<_>>()?;
    Ok(InfluenceSample { values, psi_component: PsiComponent::Measure })
}
