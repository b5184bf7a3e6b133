use fedcausal::estimators::{estimate, influence_values, EstimatorConfig};
use fedcausal::nuisance::{FeatureTransform, MisspecType};
use fedcausal::seeds::derive_seed;
use fedcausal::sim::{generate, oracle_bundle, true_psi, DgpParams, ScenarioSpec};
use fedcausal::{CausalMeasure, Error, Method, MultiSiteData};

const RR: CausalMeasure = CausalMeasure::RiskRatio;
const RD: CausalMeasure = CausalMeasure::RiskDifference;

fn params(id: &str, n: usize) -> DgpParams {
    ScenarioSpec::builtin(id).unwrap().dgp.with_n(n)
}

fn data(id: &str, n: usize, seed: u64) -> MultiSiteData {
    generate(&params(id, n), seed).unwrap()
}

#[test]
fn target_only_mr1_reduces_to_dr_t() {
    let cfg = EstimatorConfig::default();
    for seed in 0..10 {
        let d = data("1.1", 2000, seed).subset(&[0]);
        let mr1 = estimate(&d, Method::Mr1, RR, &cfg).unwrap();
        let drt = estimate(&d, Method::DrT, RR, &cfg).unwrap();
        assert!((mr1.psi_hat - drt.psi_hat).abs() < 1e-12, "{} vs {}", mr1.psi_hat, drt.psi_hat);
    }
}

#[test]
fn estimators_land_near_the_truth() {
    let cfg = EstimatorConfig::default();
    for (id, methods) in [("1.1", &[Method::Mr1, Method::Mr2, Method::DrT][..]), ("1.2", &[Method::Mr1, Method::DrT][..])] {
        let d = data(id, 6000, 11);
        for &m in methods {
            let r = estimate(&d, m, RR, &cfg).unwrap();
            assert!((r.psi_hat - 2.5).abs() < 4.0 * r.se, "{id} {m}: {} (se {})", r.psi_hat, r.se);
            assert!(r.ci_lower < r.psi_hat && r.psi_hat < r.ci_upper);
        }
    }
}

#[test]
fn mr2_is_biased_when_control_means_differ_across_sites() {
    let d = data("1.2", 6000, 11);
    let r = estimate(&d, Method::Mr2, RR, &EstimatorConfig::default()).unwrap();
    assert!((r.psi_hat - 2.5).abs() > 10.0 * r.se, "{} (se {})", r.psi_hat, r.se);
}

#[test]
fn mr1_is_refused_for_the_risk_difference() {
    let d = data("1.1", 800, 1);
    let err = estimate(&d, Method::Mr1, RD, &EstimatorConfig::for_measure(RD)).unwrap_err();
    assert!(matches!(err, Error::UnsupportedMeasureForMode { .. }), "{err}");
}

#[test]
fn risk_difference_is_invariant_to_an_outcome_shift() {
    let d = data("1.1", 3000, 2);
    let shifted = d.map_outcomes(|y| y + 7.0);
    let cfg = EstimatorConfig::for_measure(RD);
    for m in [Method::Mr2, Method::DrT] {
        let a = estimate(&d, m, RD, &cfg).unwrap();
        let b = estimate(&shifted, m, RD, &cfg).unwrap();
        assert!((a.psi_hat - b.psi_hat).abs() < 1e-8, "{m}: {} vs {}", a.psi_hat, b.psi_hat);
    }
}

#[test]
fn risk_ratio_is_invariant_to_an_outcome_rescaling() {
    let d = data("1.1", 3000, 3);
    let scaled = d.map_outcomes(|y| 3.0 * y);
    let cfg = EstimatorConfig::default();
    for m in [Method::Mr1, Method::DrT] {
        let a = estimate(&d, m, RR, &cfg).unwrap();
        let b = estimate(&scaled, m, RR, &cfg).unwrap();
        assert!((a.psi_hat - b.psi_hat).abs() < 1e-8 * a.psi_hat.abs(), "{m}");
    }
}

#[test]
fn oracle_influence_function_is_centred_at_the_truth() {
    let p = params("1.2", 8000);
    let truth = true_psi(&p).unwrap();
    let bundle = oracle_bundle(&p, &[0, 1, 2]).unwrap();
    let mut ok = 0;
    for r in 0..20 {
        let d = generate(&p, derive_seed(3, &[r])).unwrap();
        let phi = influence_values(&d, &bundle, &[0, 1, 2], Method::Mr1, truth.psi0, truth.psi1).unwrap();
        let n = phi.values.len() as f64;
        if phi.mean().abs() <= 3.0 * phi.sd() / n.sqrt() {
            ok += 1;
        }
    }
    assert!(ok >= 18, "{ok} of 20");
}

#[test]
fn mr1_survives_each_single_misspecification() {
    let spec = ScenarioSpec::builtin("1.2").unwrap();
    let d = generate(&spec.dgp.clone().with_n(6000), 21).unwrap();
    for misspec in [MisspecType::II, MisspecType::III, MisspecType::IV] {
        let cfg = EstimatorConfig { misspec: misspec.spec(FeatureTransform::DropLast), ..EstimatorConfig::default() };
        let r = estimate(&d, Method::Mr1, RR, &cfg).unwrap();
        assert!((r.psi_hat - 2.5).abs() < 4.0 * r.se, "({}) {} se {}", misspec.label(), r.psi_hat, r.se);
    }
}

#[test]
fn estimates_are_deterministic() {
    let d = data("2.2", 1000, 4);
    let cfg = EstimatorConfig::default();
    let a = estimate(&d, Method::Mr1, RR, &cfg).unwrap();
    let b = estimate(&d, Method::Mr1, RR, &cfg).unwrap();
    assert_eq!(a, b);
}
