//! The site-side request vocabulary. Every cross-site computation is phrased
//! as a request that a site answers from its own rows with model parameters
//! or fixed-size aggregates; no response carries row-level values.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{Individual, SiteDataset};
use crate::error::{Error, Result};
use crate::estimators::terms::RowEvaluator;
use crate::measure::CausalMeasure;
use crate::nuisance::glm::{LinearStats, LogisticStats};
use crate::nuisance::models::{fit_local, LocalFitSpec, LocalModels};
use crate::nuisance::{Basis, GlmModel, NuisanceBundle};
use crate::report::Method;

/// Site-keyed maps travel as `[site, value]` pairs: JSON object keys are
/// strings, which do not decode back into integers inside tagged enums.
pub(crate) mod site_map {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<T: Serialize, S: Serializer>(map: &BTreeMap<usize, T>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(map.iter())
    }

    pub fn deserialize<'de, T: Deserialize<'de>, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<usize, T>, D::Error> {
        Ok(Vec::<(usize, T)>::deserialize(d)?.into_iter().collect())
    }
}

/// Which rows and response a pooled least-squares fit uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "design", rename_all = "snake_case")]
pub enum LinearDesign {
    /// `y` on `basis(x)` over rows with `a = arm`.
    Outcome { arm: u8, basis: Basis },
    /// Effect function by product regression over treated rows, using each
    /// site's own control-mean model.
    TauProduct {
        measure: CausalMeasure,
        basis: Basis,
        #[serde(with = "site_map")]
        mu0: BTreeMap<usize, GlmModel>,
    },
    /// Effect function by pseudo-response regression over all rows.
    TauPseudo {
        measure: CausalMeasure,
        basis: Basis,
        #[serde(with = "site_map")]
        mu0: BTreeMap<usize, GlmModel>,
        #[serde(with = "site_map")]
        mu1: BTreeMap<usize, GlmModel>,
    },
}

/// Estimator whose row contributions a site sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EifPlan {
    pub method: Method,
    pub sites: Vec<usize>,
    pub bundle: NuisanceBundle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum EifStage {
    /// Sums of the uncentred contributions.
    Totals,
    /// Second moments of the contributions centred at the solved means.
    Moments { psi0: f64, psi1: f64 },
}

/// Influence contributions of the target-only and pairwise treated-mean
/// estimators, all centred at the target-only estimate `psi_ref`, followed by
/// the target-only control-mean contribution centred at `psi0_ref`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramPlan {
    pub target: EifPlan,
    pub pairs: Vec<EifPlan>,
    pub psi_ref: f64,
    pub psi0_ref: f64,
    pub folds: usize,
}

impl GramPlan {
    /// Number of contribution columns: target, one per pair, control.
    pub fn dim(&self) -> usize {
        self.pairs.len() + 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Request {
    Describe,
    FitLocal { spec: LocalFitSpec },
    /// Membership-model statistics; label is 1 on `target_site`.
    LogisticStats { target_site: usize, coef: Vec<f64>, basis: Basis },
    LinearStats { design: LinearDesign },
    EifSums { plan: EifPlan, stage: EifStage },
    GramSums { plan: GramPlan },
    /// Switch to a with-replacement resample of the local rows.
    Resample { seed: u64, replicate: u64 },
    /// Switch back to the original rows.
    Restore,
}

impl Request {
    pub fn kind(&self) -> &'static str {
        match self {
            Request::Describe => "describe",
            Request::FitLocal { .. } => "fit_local",
            Request::LogisticStats { .. } => "logistic_stats",
            Request::LinearStats { .. } => "linear_stats",
            Request::EifSums { .. } => "eif_sums",
            Request::GramSums { .. } => "gram_sums",
            Request::Resample { .. } => "resample",
            Request::Restore => "restore",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteSummary {
    pub site: usize,
    pub n: usize,
    pub n_control: usize,
    pub n_treated: usize,
    pub p: usize,
}

/// A named scalar with the number of rows that contributed to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateEntry {
    pub name: String,
    pub value: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Aggregate {
    pub site: usize,
    pub entries: Vec<AggregateEntry>,
}

impl Aggregate {
    pub fn new(site: usize) -> Self {
        Self { site, entries: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, value: f64, count: u64) {
        self.entries.push(AggregateEntry { name: name.into(), value, count });
    }

    pub fn push_slice(&mut self, prefix: &str, values: &[f64], count: u64) {
        for (i, v) in values.iter().enumerate() {
            self.push(format!("{prefix}[{i}]"), *v, count);
        }
    }

    pub fn get(&self, name: &str) -> Result<f64> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| e.value)
            .ok_or_else(|| Error::ProtocolViolation(format!("aggregate from site {} lacks `{name}`", self.site)))
    }

    pub fn get_slice(&self, prefix: &str, len: usize) -> Result<Vec<f64>> {
        let start = format!("{prefix}[");
        let values: Vec<f64> = self
            .entries
            .iter()
            .filter(|e| e.name.starts_with(&start))
            .map(|e| e.value)
            .collect();
        if values.len() != len {
            return Err(Error::ProtocolViolation(format!(
                "aggregate from site {} has {} `{prefix}` entries, expected {len}",
                self.site,
                values.len()
            )));
        }
        Ok(values)
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|e| e.value.is_finite())
    }

    pub fn from_logistic(site: usize, s: &LogisticStats) -> Self {
        let n = s.n as u64;
        let mut a = Aggregate::new(site);
        a.push("n", s.n, n);
        a.push("positives", s.positives, n);
        a.push("loglik", s.loglik, n);
        a.push("max_abs_eta", s.max_abs_eta, n);
        a.push_slice("grad", &s.grad, n);
        a.push_slice("hess", &s.hess, n);
        a
    }

    pub fn to_logistic(&self, d: usize) -> Result<LogisticStats> {
        Ok(LogisticStats {
            n: self.get("n")?,
            positives: self.get("positives")?,
            loglik: self.get("loglik")?,
            max_abs_eta: self.get("max_abs_eta")?,
            grad: self.get_slice("grad", d)?,
            hess: self.get_slice("hess", d * d)?,
        })
    }

    pub fn from_linear(site: usize, s: &LinearStats) -> Self {
        let n = s.n as u64;
        let mut a = Aggregate::new(site);
        a.push("n", s.n, n);
        a.push_slice("xtx", &s.xtx, n);
        a.push_slice("xty", &s.xty, n);
        a
    }

    pub fn to_linear(&self, d: usize) -> Result<LinearStats> {
        Ok(LinearStats { n: self.get("n")?, xtx: self.get_slice("xtx", d * d)?, xty: self.get_slice("xty", d)? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Response {
    Summary(SiteSummary),
    Models(LocalModels),
    Aggregate(Aggregate),
    Ack { site: usize },
}

impl Response {
    pub fn kind(&self) -> &'static str {
        match self {
            Response::Summary(_) => "summary",
            Response::Models(_) => "models",
            Response::Aggregate(_) => "aggregate",
            Response::Ack { .. } => "ack",
        }
    }

    pub fn into_summary(self) -> Result<SiteSummary> {
        match self {
            Response::Summary(s) => Ok(s),
            other => Err(unexpected("summary", &other)),
        }
    }

    pub fn into_models(self) -> Result<LocalModels> {
        match self {
            Response::Models(m) => Ok(m),
            other => Err(unexpected("models", &other)),
        }
    }

    pub fn into_aggregate(self) -> Result<Aggregate> {
        match self {
            Response::Aggregate(a) => Ok(a),
            other => Err(unexpected("aggregate", &other)),
        }
    }
}

fn unexpected(expected: &str, got: &Response) -> Error {
    Error::ProtocolViolation(format!("expected a {expected} response, got {}", got.kind()))
}

/// Row `i` belongs to fold `i mod folds` within its site.
pub fn fold_of(i: usize, folds: usize) -> usize {
    i % folds.max(1)
}

/// Answers a request from one site's rows.
pub fn handle(site: &SiteDataset, req: &Request) -> Result<Response> {
    let k = site.site_id();
    match req {
        Request::Describe => {
            let (c, t) = site.arm_counts();
            Ok(Response::Summary(SiteSummary { site: k, n: site.n(), n_control: c, n_treated: t, p: site.p() }))
        }
        Request::FitLocal { spec } => Ok(Response::Models(fit_local(site, spec)?)),
        Request::LogisticStats { target_site, coef, basis } => {
            let label = if k == *target_site { 1.0 } else { 0.0 };
            let mut s = LogisticStats::zeros(coef.len());
            let mut f = Vec::with_capacity(coef.len());
            for r in site.rows() {
                basis.features_into(&r.x, &mut f);
                if f.len() != coef.len() {
                    return Err(Error::ProtocolViolation("coefficient length does not match basis".into()));
                }
                s.push(&f, label, coef);
            }
            Ok(Response::Aggregate(Aggregate::from_logistic(k, &s)))
        }
        Request::LinearStats { design } => Ok(Response::Aggregate(Aggregate::from_linear(k, &linear_stats(site, design)?))),
        Request::EifSums { plan, stage } => eif_sums(site, plan, stage).map(Response::Aggregate),
        Request::GramSums { plan } => gram_sums(site, plan).map(Response::Aggregate),
        Request::Resample { .. } | Request::Restore => Err(Error::ProtocolViolation(
            "resampling is handled by the site holder, not the row handler".into(),
        )),
    }
}

fn own_model<'a>(models: &'a BTreeMap<usize, GlmModel>, site: &SiteDataset) -> Result<&'a GlmModel> {
    models
        .get(&site.site_id())
        .ok_or_else(|| Error::ProtocolViolation(format!("no model sent for site {}", site.site_id())))
}

fn linear_stats(site: &SiteDataset, design: &LinearDesign) -> Result<LinearStats> {
    let p = site.p();
    let mut f = Vec::new();
    match design {
        LinearDesign::Outcome { arm, basis } => {
            let mut s = LinearStats::zeros(basis.dim(p));
            for r in site.arm(*arm) {
                basis.features_into(&r.x, &mut f);
                s.push(&f, r.y);
            }
            Ok(s)
        }
        LinearDesign::TauProduct { measure, basis, mu0 } => {
            let mu0 = own_model(mu0, site)?;
            let mut s = LinearStats::zeros(basis.dim(p));
            for r in site.arm(1) {
                basis.features_into(&r.x, &mut f);
                let m0 = mu0.predict(&r.x);
                match measure {
                    CausalMeasure::RiskRatio => {
                        for v in f.iter_mut() {
                            *v *= m0;
                        }
                        s.push(&f, r.y);
                    }
                    CausalMeasure::RiskDifference => s.push(&f, r.y - m0),
                }
            }
            Ok(s)
        }
        LinearDesign::TauPseudo { measure, basis, mu0, mu1 } => {
            let (mu0, mu1) = (own_model(mu0, site)?, own_model(mu1, site)?);
            let mut s = LinearStats::zeros(basis.dim(p));
            for r in site.rows() {
                basis.features_into(&r.x, &mut f);
                let tau = measure.g(mu0.predict(&r.x), mu1.predict(&r.x))?;
                s.push(&f, tau);
            }
            Ok(s)
        }
    }
}

fn in_plan(plan: &EifPlan, s: usize) -> bool {
    plan.sites.contains(&s)
}

fn eif_sums(site: &SiteDataset, plan: &EifPlan, stage: &EifStage) -> Result<Aggregate> {
    let k = site.site_id();
    let mut agg = Aggregate::new(k);
    if !in_plan(plan, k) {
        return Err(Error::ProtocolViolation(format!("site {k} is not part of the estimator's site set")));
    }
    let eval = RowEvaluator::new(&plan.bundle, plan.method, &plan.sites)?;
    let n = site.n() as u64;
    match *stage {
        EifStage::Totals => {
            let (mut s1, mut s0, mut fb) = (0.0, 0.0, 0.0);
            for r in site.rows() {
                let t = eval.terms(r)?;
                s1 += t.t1;
                s0 += t.t0;
                fb += t.fallback as u8 as f64;
            }
            agg.push("sum_t1", s1, n);
            agg.push("sum_t0", s0, n);
            agg.push("fallback_rows", fb, n);
        }
        EifStage::Moments { psi0, psi1 } => {
            let (mut s11, mut s00, mut s01) = (0.0, 0.0, 0.0);
            for r in site.rows() {
                let (u0, u1) = eval.terms(r)?.centred(k == 0, psi0, psi1);
                s11 += u1 * u1;
                s00 += u0 * u0;
                s01 += u0 * u1;
            }
            agg.push("s11", s11, n);
            agg.push("s00", s00, n);
            agg.push("s01", s01, n);
        }
    }
    if !agg.is_finite() {
        return Err(Error::NonConvergence(format!("non-finite estimating-equation sums at site {k}")));
    }
    Ok(agg)
}

/// Centred treated-mean contribution of `row` under `plan`, or zero if the
/// row's site is outside the plan.
fn gram_value(eval: &RowEvaluator<'_>, plan: &EifPlan, row: &Individual, psi_ref: f64) -> Result<f64> {
    if !in_plan(plan, row.s) {
        return Ok(0.0);
    }
    let t = eval.terms(row)?;
    Ok(if row.s == 0 { t.t1 - psi_ref } else { t.t1 })
}

fn gram_sums(site: &SiteDataset, plan: &GramPlan) -> Result<Aggregate> {
    let k = site.site_id();
    let m = plan.dim();
    let folds = plan.folds.max(1);
    let mut plans = Vec::with_capacity(m - 1);
    plans.push(&plan.target);
    plans.extend(plan.pairs.iter());
    let evals = plans
        .iter()
        .map(|p| RowEvaluator::new(&p.bundle, p.method, &p.sites))
        .collect::<Result<Vec<_>>>()?;
    let mut first = vec![0.0; folds * m];
    let mut second = vec![0.0; folds * m * m];
    let mut counts = vec![0u64; folds];
    let mut u = vec![0.0; m];
    for (i, r) in site.rows().iter().enumerate() {
        for j in 0..m - 1 {
            u[j] = gram_value(&evals[j], plans[j], r, plan.psi_ref)?;
        }
        u[m - 1] = if r.s == 0 { evals[0].terms(r)?.t0 - plan.psi0_ref } else { 0.0 };
        let f = fold_of(i, folds);
        counts[f] += 1;
        let mean = &mut first[f * m..(f + 1) * m];
        for a in 0..m {
            mean[a] += u[a];
        }
        let block = &mut second[f * m * m..(f + 1) * m * m];
        for a in 0..m {
            for b in 0..m {
                block[a * m + b] += u[a] * u[b];
            }
        }
    }
    let mut agg = Aggregate::new(k);
    for f in 0..folds {
        agg.push(format!("rows[{f}]"), counts[f] as f64, counts[f]);
        agg.push_slice(&format!("sum{f}"), &first[f * m..(f + 1) * m], counts[f]);
        agg.push_slice(&format!("prod{f}"), &second[f * m * m..(f + 1) * m * m], counts[f]);
    }
    if !agg.is_finite() {
        return Err(Error::NonConvergence(format!("non-finite Gram sums at site {k}")));
    }
    Ok(agg)
}
