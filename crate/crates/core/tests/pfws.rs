use fedcausal::access::LocalAccess;
use fedcausal::estimators::{estimate, EstimatorConfig};
use fedcausal::federation::{fit_federated, FederatedWeights, FederationConfig};
use fedcausal::pfws::{
    bootstrap_replicate, estimate_fs, mse_curve, select_threshold, selected_sites, BootstrapPlan, PfwsConfig,
    ThresholdGrid,
};
use fedcausal::sim::{generate, ScenarioSpec};
use fedcausal::{CausalMeasure, Method, MultiSiteData};

const RR: CausalMeasure = CausalMeasure::RiskRatio;

fn data(id: &str, n: usize, seed: u64) -> MultiSiteData {
    generate(&ScenarioSpec::builtin(id).unwrap().dgp.with_n(n), seed).unwrap()
}

fn weights(w: &[f64]) -> FederatedWeights {
    FederatedWeights {
        w: w.to_vec(),
        sites: (0..w.len()).collect(),
        lambda_n: 0.0,
        objective_value: 0.0,
        converged: true,
        iterations: 0,
    }
}

fn fast(b: usize, grid: &[f64]) -> PfwsConfig {
    PfwsConfig { b, grid: ThresholdGrid::new(grid.to_vec()).unwrap(), fixed_nuisances: true, ..PfwsConfig::default() }
}

#[test]
fn selection_sets_shrink_as_the_threshold_rises() {
    let w = weights(&[0.3, 0.45, 0.05, 0.2]);
    let grid = ThresholdGrid::default_grid();
    let mut prev = selected_sites(&w, grid.values()[0]);
    assert_eq!(prev, vec![0, 1, 2, 3]);
    for &e in &grid.values()[1..] {
        let cur = selected_sites(&w, e);
        assert!(cur.iter().all(|k| prev.contains(k)) && cur.contains(&0));
        prev = cur;
    }
    assert_eq!(prev, vec![0]);
}

#[test]
fn grid_validation() {
    assert!(ThresholdGrid::new(vec![]).is_err());
    assert!(ThresholdGrid::new(vec![0.0, 0.5]).is_err());
    assert!(ThresholdGrid::new(vec![0.5, 0.2]).is_err());
    assert!(ThresholdGrid::new(vec![0.5, 1.2]).is_err());
    assert_eq!(ThresholdGrid::parse("0.1, 0.5,1").unwrap().values(), &[0.1, 0.5, 1.0]);
}

#[test]
fn bootstrap_keeps_site_sizes_and_is_seeded() {
    let d = data("2.2", 700, 1);
    let plan = BootstrapPlan::new(5, 42).unwrap();
    let a = bootstrap_replicate(&d, &plan, 3).unwrap();
    for (orig, boot) in d.sites().zip(a.sites()) {
        assert_eq!(orig.n(), boot.n());
    }
    assert_eq!(a, bootstrap_replicate(&d, &plan, 3).unwrap());
    assert_ne!(a, bootstrap_replicate(&d, &plan, 4).unwrap());
    assert!(bootstrap_replicate(&d, &plan, 5).is_err());
}

#[test]
fn no_source_threshold_has_mse_equal_to_variance() {
    let d = data("2.2", 800, 2);
    let plan = BootstrapPlan::new(20, 7).unwrap();
    let run = mse_curve(
        &mut LocalAccess::new(&d),
        &plan,
        &weights(&[0.5, 0.4, 0.1]),
        RR,
        &EstimatorConfig::default(),
        &fast(20, &[0.05, 0.3, 0.6]),
    )
    .unwrap();
    let last = run.curve.records.last().unwrap();
    assert_eq!(last.selected_sites, vec![0]);
    assert_eq!(last.mse_hat, last.var_target);
    assert_eq!(run.sets[0], vec![0]);
}

#[test]
fn target_only_weights_select_the_target_estimate() {
    let d = data("2.3", 800, 3);
    let cfg = EstimatorConfig::default();
    let mut fit = fit_federated(&mut LocalAccess::new(&d), &d.site_ids(), RR, &FederationConfig::default()).unwrap();
    fit.weights = FederatedWeights::target_only(&fit.weights.sites);
    let out = estimate_fs(&mut LocalAccess::new(&d), &fit, RR, &cfg, &fast(10, &[0.5, 1.0]), 5).unwrap();
    assert_eq!(out.fs.report.selected_sites, vec![0]);
    assert_eq!(out.fs.report.method, Method::Fsmr1);
    let drt = estimate(&d, Method::DrT, RR, &cfg).unwrap();
    assert_eq!(out.fs.report.psi_hat, drt.psi_hat);
    assert!(out.fs.report.bootstrap_se.unwrap() > 0.0);
}

#[test]
fn selective_estimate_is_reproducible_from_its_seed() {
    let d = data("2.2", 700, 4);
    let cfg = EstimatorConfig::default();
    let fit = fit_federated(&mut LocalAccess::new(&d), &d.site_ids(), RR, &FederationConfig::default()).unwrap();
    let pfws = PfwsConfig { b: 8, ..PfwsConfig::default() };
    let a = estimate_fs(&mut LocalAccess::new(&d), &fit, RR, &cfg, &pfws, 9).unwrap();
    let b = estimate_fs(&mut LocalAccess::new(&d), &fit, RR, &cfg, &pfws, 9).unwrap();
    let c = estimate_fs(&mut LocalAccess::new(&d), &fit, RR, &cfg, &pfws, 10).unwrap();
    assert_eq!(a.fs, b.fs);
    assert_ne!(a.fs.curve_digest, c.fs.curve_digest);
    assert_eq!(select_threshold(&a.run.curve).unwrap(), a.fs.e_star);
}

#[test]
fn chosen_threshold_minimizes_the_curve() {
    let d = data("2.1", 800, 5);
    let fit = fit_federated(&mut LocalAccess::new(&d), &d.site_ids(), RR, &FederationConfig::default()).unwrap();
    let out =
        estimate_fs(&mut LocalAccess::new(&d), &fit, RR, &EstimatorConfig::default(), &fast(15, &[0.1, 0.4, 0.7, 1.0]), 3)
            .unwrap();
    let best = out.run.curve.records.iter().map(|r| r.mse_hat).fold(f64::INFINITY, f64::min);
    let at_star = out.run.curve.records.iter().find(|r| r.e == out.fs.e_star).unwrap();
    assert_eq!(at_star.mse_hat, best);
}
