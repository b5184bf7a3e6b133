//! Browser bindings: simulate a built-in scenario and estimate on it, solve a
//! weight program, and trace the selective estimator's MSE curve. Each
//! operation has a plain Rust form returning JSON and a `wasm_bindgen`
//! wrapper that turns errors into strings.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use fedcausal::access::LocalAccess;
use fedcausal::cli::run_estimators;
use fedcausal::estimators::EstimatorConfig;
use fedcausal::federation::{fit_federated, solve_weights, FederationConfig, QuadraticLoss, SolverConfig};
use fedcausal::pfws::{estimate_fs, PfwsConfig};
use fedcausal::sim::{generate, true_psi, ScenarioSpec};
use fedcausal::{CausalMeasure, EstimateReport, Method, MultiSiteData, Result};

#[derive(Serialize)]
struct SiteCount {
    site: usize,
    n: usize,
    treated: usize,
}

#[derive(Serialize)]
struct EstimateView {
    scenario: String,
    truth: f64,
    sites: Vec<SiteCount>,
    reports: Vec<EstimateReport>,
    weights: Option<Vec<f64>>,
    lambda_n: Option<f64>,
}

#[derive(Serialize)]
struct CurvePoint {
    e: f64,
    selected: Vec<usize>,
    psi: f64,
    mse_hat: f64,
}

#[derive(Serialize)]
struct CurveView {
    weights: Vec<f64>,
    e_star: f64,
    chosen: Vec<usize>,
    psi_hat: f64,
    points: Vec<CurvePoint>,
}

fn scenario_data(scenario: &str, n: usize, seed: u64) -> Result<(ScenarioSpec, MultiSiteData)> {
    let mut spec = ScenarioSpec::builtin(scenario)?;
    spec.dgp.n_total = n;
    let data = generate(&spec.dgp, seed)?;
    Ok((spec, data))
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string(v)?)
}

/// Draws one data set from a built-in scenario and runs DR-t, MR1, FWMR1.
pub fn estimate_scenario_json(scenario: &str, n: usize, seed: u64) -> Result<String> {
    let (spec, data) = scenario_data(scenario, n, seed)?;
    let measure = CausalMeasure::RiskRatio;
    let cfg = EstimatorConfig::for_measure(measure);
    let federation = FederationConfig { estimator: cfg.clone(), ..FederationConfig::default() };
    let out = run_estimators(
        &mut LocalAccess::new(&data),
        &data.site_ids(),
        measure,
        &[Method::Mr1, Method::Fwmr1],
        &cfg,
        &federation,
        &PfwsConfig::default(),
        seed,
    )?;
    let sites = data
        .sites()
        .map(|s| SiteCount { site: s.site_id(), n: s.n(), treated: s.arm_counts().1 })
        .collect();
    to_json(&EstimateView {
        scenario: spec.id.clone(),
        truth: true_psi(&spec.dgp)?.psi(measure)?,
        sites,
        weights: out.fit.as_ref().map(|f| f.weights.w.clone()),
        lambda_n: out.fit.as_ref().map(|f| f.weights.lambda_n),
        reports: out.reports,
    })
}

/// Minimizes `w'Gw - 2b'w + c + lambda * sum delta_k^2 w_k` over the simplex;
/// `g` is row-major `K x K`.
pub fn solve_weights_json(g: &[f64], b: &[f64], c: f64, deltas_sq: &[f64], lambda: f64) -> Result<String> {
    let loss = QuadraticLoss::new(g.to_vec(), b.to_vec(), c)?;
    let sites: Vec<usize> = (0..=b.len()).collect();
    to_json(&solve_weights(&loss, deltas_sq, lambda, &sites, &SolverConfig::default())?)
}

/// Bootstrap MSE curve of the selective estimator, with nuisances held at
/// their full-data fits inside the bootstrap so it runs in a browser tab.
pub fn mse_curve_json(scenario: &str, n: usize, seed: u64, b: usize) -> Result<String> {
    let (_, data) = scenario_data(scenario, n, seed)?;
    let measure = CausalMeasure::RiskRatio;
    let cfg = EstimatorConfig::for_measure(measure);
    let federation = FederationConfig { estimator: cfg.clone(), ..FederationConfig::default() };
    let mut access = LocalAccess::new(&data);
    let fit = fit_federated(&mut access, &data.site_ids(), measure, &federation)?;
    let pfws = PfwsConfig { b, fixed_nuisances: true, ..PfwsConfig::default() };
    let out = estimate_fs(&mut access, &fit, measure, &cfg, &pfws, seed)?;
    to_json(&CurveView {
        weights: fit.weights.w.clone(),
        e_star: out.fs.e_star,
        chosen: out.fs.report.selected_sites.clone(),
        psi_hat: out.fs.report.psi_hat,
        points: out
            .run
            .curve
            .records
            .iter()
            .map(|r| CurvePoint { e: r.e, selected: r.selected_sites.clone(), psi: r.psi_e, mse_hat: r.mse_hat })
            .collect(),
    })
}

fn js<T>(r: Result<T>) -> std::result::Result<T, JsValue> {
    r.map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen]
pub fn estimate_scenario(scenario: &str, n: u32, seed: u32) -> std::result::Result<String, JsValue> {
    js(estimate_scenario_json(scenario, n as usize, u64::from(seed)))
}

#[wasm_bindgen]
pub fn solve_simplex_weights(
    g: Vec<f64>,
    b: Vec<f64>,
    c: f64,
    deltas_sq: Vec<f64>,
    lambda: f64,
) -> std::result::Result<String, JsValue> {
    js(solve_weights_json(&g, &b, c, &deltas_sq, lambda))
}

#[wasm_bindgen]
pub fn mse_curve(scenario: &str, n: u32, seed: u32, b: u32) -> std::result::Result<String, JsValue> {
    js(mse_curve_json(scenario, n as usize, u64::from(seed), b as usize))
}
