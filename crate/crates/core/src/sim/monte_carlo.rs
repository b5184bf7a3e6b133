//! Replicated simulation runs. Replicate `r` draws its data from the stream
//! `(seed, r)` and its bootstrap from `(seed, r, 1)`, so results do not depend
//! on scheduling; a replicate whose estimator fails is recorded, excluded
//! from the metrics and counted.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{generate, true_psi};
use super::scenario::ScenarioSpec;
use super::table::{MetricsRow, MetricsTable};
use crate::access::LocalAccess;
use crate::data::MultiSiteData;
use crate::error::{Error, Result};
use crate::estimators::{estimate, EstimatorConfig};
use crate::federation::{estimate_fw, fit_federated, FederationConfig};
use crate::nuisance::MisspecType;
use crate::pfws::estimate_fs;
use crate::report::{EstimateReport, Method};
use crate::seeds::{derive_seed, with_pool};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub estimator: Method,
    pub misspec: MisspecType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<EstimateReport>,
    /// Federated weights, for the weighted and selective estimators.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_star: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McOutcome {
    pub scenario: String,
    pub truth: f64,
    pub m: usize,
    pub seed: u64,
    pub records: Vec<ReplicateRecord>,
    pub table: MetricsTable,
    pub attempted: usize,
    pub failed: usize,
}

impl McOutcome {
    pub fn failure_rate(&self) -> f64 {
        if self.attempted == 0 {
            0.0
        } else {
            self.failed as f64 / self.attempted as f64
        }
    }

    pub fn reports(&self, estimator: Method, misspec: MisspecType) -> impl Iterator<Item = &EstimateReport> {
        self.records
            .iter()
            .filter(move |r| r.estimator == estimator && r.misspec == misspec)
            .filter_map(|r| r.report.as_ref())
    }
}

pub fn replicate_seed(seed: u64, r: usize) -> u64 {
    derive_seed(seed, &[r as u64])
}

fn record(r: usize, estimator: Method, misspec: MisspecType, out: Result<EstimateReport>) -> ReplicateRecord {
    let (report, error) = match out {
        Ok(rep) if rep.psi_hat.is_finite() && rep.se.is_finite() => (Some(rep), None),
        Ok(rep) => (None, Some(format!("non-finite estimate {} (se {})", rep.psi_hat, rep.se))),
        Err(e) => (None, Some(e.to_string())),
    };
    ReplicateRecord { replicate: r, estimator, misspec, report, weights: None, e_star: None, error }
}

fn federated_records(
    spec: &ScenarioSpec,
    data: &MultiSiteData,
    r: usize,
    misspec: MisspecType,
    cfg: &EstimatorConfig,
    seed: u64,
) -> Vec<ReplicateRecord> {
    let want_fw = spec.estimators.contains(&Method::Fwmr1);
    let want_fs = spec.estimators.contains(&Method::Fsmr1);
    let mut access = LocalAccess::new(data);
    let fed_cfg = FederationConfig { estimator: cfg.clone(), ..spec.federation.clone() };
    let fit = match fit_federated(&mut access, &data.site_ids(), spec.measure, &fed_cfg) {
        Ok(f) => f,
        Err(e) => {
            let msg = e.to_string();
            return [(want_fw, Method::Fwmr1), (want_fs, Method::Fsmr1)]
                .into_iter()
                .filter(|(w, _)| *w)
                .map(|(_, m)| record(r, m, misspec, Err(Error::NonConvergence(msg.clone()))))
                .collect();
        }
    };
    let mut out = Vec::new();
    if want_fw {
        let mut rec = record(r, Method::Fwmr1, misspec, estimate_fw(&fit, spec.measure));
        rec.weights = Some(fit.weights.w.clone());
        out.push(rec);
    }
    if want_fs {
        let fs = estimate_fs(&mut access, &fit, spec.measure, cfg, &spec.pfws, derive_seed(seed, &[r as u64, 1]));
        let e_star = fs.as_ref().ok().map(|o| o.fs.e_star);
        let mut rec = record(r, Method::Fsmr1, misspec, fs.map(|o| o.fs.report));
        rec.weights = Some(fit.weights.w.clone());
        rec.e_star = e_star;
        out.push(rec);
    }
    out
}

/// All estimator × misspecification records of one replicate.
pub fn run_replicate(spec: &ScenarioSpec, r: usize, seed: u64) -> Vec<ReplicateRecord> {
    let data = generate(&spec.dgp, replicate_seed(seed, r));
    let mut out = Vec::new();
    for &misspec in &spec.misspec {
        let data = match &data {
            Ok(d) => d,
            Err(e) => {
                for &m in &spec.estimators {
                    out.push(record(r, m, misspec, Err(Error::Config(e.to_string()))));
                }
                continue;
            }
        };
        let cfg = EstimatorConfig { nuisance: spec.nuisance.clone(), misspec: misspec.spec(spec.distortion) };
        for &m in &spec.estimators {
            if matches!(m, Method::Mr1 | Method::Mr2 | Method::DrT) {
                out.push(record(r, m, misspec, estimate(data, m, spec.measure, &cfg)));
            }
        }
        if spec.estimators.iter().any(|m| matches!(m, Method::Fwmr1 | Method::Fsmr1)) {
            out.extend(federated_records(spec, data, r, misspec, &cfg, seed));
        }
    }
    out
}

/// Aggregates records into one row per (estimator, misspecification) in the
/// scenario's order.
pub fn summarize(spec: &ScenarioSpec, truth: f64, records: &[ReplicateRecord]) -> MetricsTable {
    let mut rows = Vec::new();
    for &misspec in &spec.misspec {
        for &m in &spec.estimators {
            let runs: Vec<(f64, f64, f64, f64)> = records
                .iter()
                .filter(|r| r.estimator == m && r.misspec == misspec)
                .filter_map(|r| r.report.as_ref())
                .map(|p| (p.psi_hat, p.se, p.ci_lower, p.ci_upper))
                .collect();
            rows.push(MetricsRow::from_estimates(&spec.id, m.name(), misspec.label(), truth, &runs));
        }
    }
    MetricsTable { rows }
}

pub fn run_monte_carlo(spec: &ScenarioSpec, m: usize, seed: u64) -> Result<McOutcome> {
    if m < 2 {
        return Err(Error::Config(format!("at least 2 replicates are needed, got {m}")));
    }
    spec.validate()?;
    let truth = true_psi(&spec.dgp)?.psi(spec.measure)?;
    let records: Vec<ReplicateRecord> =
        with_pool(|| (0..m).into_par_iter().map(|r| run_replicate(spec, r, seed)).collect::<Vec<_>>())
            .into_iter()
            .flatten()
            .collect();
    let failed = records.iter().filter(|r| r.report.is_none()).count();
    let table = summarize(spec, truth, &records);
    Ok(McOutcome {
        scenario: spec.id.clone(),
        truth,
        m,
        seed,
        attempted: records.len(),
        failed,
        records,
        table,
    })
}
