use fedcausal::access::LocalAccess;
use fedcausal::estimators::{estimate_via, fit_plan, EstimatorConfig};
use fedcausal::federation::{
    audit_outbox, audit_transcript, estimate_fw, fit_federated, solve_weights, FederatedAccess, FederationConfig,
    FileTransport, MemoryTransport, Message, Payload, QuadraticLoss, SolverConfig,
};
use fedcausal::site_ops::{EifStage, Request};
use fedcausal::sim::{generate, ScenarioSpec};
use fedcausal::{CausalMeasure, Method, MultiSiteData};

const RR: CausalMeasure = CausalMeasure::RiskRatio;

fn data(id: &str, n: usize, seed: u64) -> MultiSiteData {
    generate(&ScenarioSpec::builtin(id).unwrap().dgp.with_n(n), seed).unwrap()
}

#[test]
fn plan_with_fitted_bundle_survives_the_wire() {
    let d = data("2.2", 800, 1);
    let plan = fit_plan(&mut LocalAccess::new(&d), &[0, 1, 2], Method::Mr1, RR, &EstimatorConfig::default()).unwrap();
    let request = Request::EifSums { plan, stage: EifStage::Totals };
    let msg = Message::new(3, "coordinator", "eif_sums", Payload::Request { sites: vec![0, 1, 2], request });
    let back = Message::decode(&msg.encode().unwrap()).unwrap();
    assert_eq!(back, msg);
}

#[test]
fn memory_transport_matches_in_process_bit_for_bit() {
    let d = data("2.2", 900, 2);
    let cfg = FederationConfig::default();
    let local = fit_federated(&mut LocalAccess::new(&d), &d.site_ids(), RR, &cfg).unwrap();
    let mut fed = FederatedAccess::new(&d, MemoryTransport::new());
    let remote = fit_federated(&mut fed, &d.site_ids(), RR, &cfg).unwrap();
    assert_eq!(local.weights.w, remote.weights.w);
    assert_eq!(local.target.psi_hat.to_bits(), remote.target.psi_hat.to_bits());
    assert_eq!(estimate_fw(&local, RR).unwrap(), estimate_fw(&remote, RR).unwrap());
    let audit = audit_transcript(&fed.transcript().unwrap());
    assert!(audit.passed(), "{:?}", audit.violations);
    assert!(audit.requests > 0 && audit.responses >= audit.requests);
}

#[test]
fn file_transport_matches_and_its_outbox_audits_clean() {
    let d = data("2.1", 700, 3);
    let tmp = tempfile::tempdir().unwrap();
    let cfg = EstimatorConfig::default();
    let local = estimate_via(&mut LocalAccess::new(&d), &d.site_ids(), Method::Mr1, RR, &cfg).unwrap();
    let mut fed = FederatedAccess::new(&d, FileTransport::new(tmp.path()).unwrap());
    let remote = estimate_via(&mut fed, &d.site_ids(), Method::Mr1, RR, &cfg).unwrap();
    assert_eq!(local, remote);
    let audit = audit_outbox(fed.transport().outbox()).unwrap();
    assert!(audit.passed(), "{:?}", audit.violations);
    assert_eq!(audit.messages, std::fs::read_dir(fed.transport().outbox()).unwrap().count());
}

#[test]
fn every_site_log_shows_only_aggregate_replies() {
    let d = data("2.1", 600, 4);
    let mut fed = FederatedAccess::new(&d, MemoryTransport::new());
    fit_federated(&mut fed, &d.site_ids(), RR, &FederationConfig::default()).unwrap();
    for k in d.site_ids() {
        let log = fed.node(k).unwrap().log();
        assert!(!log.is_empty());
    }
    let rows = d.n();
    for m in fed.transcript().unwrap() {
        assert!(m.encode().unwrap().matches(',').count() < rows, "message {} is row-sized", m.kind);
    }
}

fn loss_2(g: [f64; 4], b: [f64; 2], c: f64) -> QuadraticLoss {
    QuadraticLoss::new(g.to_vec(), b.to_vec(), c).unwrap()
}

#[test]
fn infinite_penalty_puts_all_mass_on_the_target() {
    let loss = loss_2([2.0, 0.3, 0.3, 1.0], [1.0, 0.5], 1.0);
    let w = solve_weights(&loss, &[0.2, 0.4], f64::INFINITY, &[0, 1, 2], &SolverConfig::default()).unwrap();
    assert_eq!(w.w, vec![1.0, 0.0, 0.0]);
}

#[test]
fn perfect_replication_moves_all_mass_to_the_source() {
    // phi<1> = phi<0>: G = b = c = Pn(phi0^2).
    let v = 1.7;
    let loss = QuadraticLoss::new(vec![v], vec![v], v).unwrap();
    let w = solve_weights(&loss, &[0.0], 0.0, &[0, 1], &SolverConfig::default()).unwrap();
    assert!((w.w[1] - 1.0).abs() < 1e-6 && w.w[0].abs() < 1e-6, "{:?}", w.w);
    assert!(loss.value(&w.w).abs() < 1e-10);
}

#[test]
fn large_penalty_on_one_source_zeroes_it() {
    let loss = loss_2([1.0, 0.2, 0.2, 1.0], [0.9, 0.9], 1.0);
    let w = solve_weights(&loss, &[0.0, 10.0], 1.0, &[0, 1, 2], &SolverConfig::default()).unwrap();
    assert_eq!(w.w[2], 0.0);
    assert!(w.w[1] > 0.5);
    assert!((w.w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn indefinite_quadratic_is_rejected() {
    let loss = loss_2([1.0, 3.0, 3.0, 1.0], [0.0, 0.0], 0.0);
    assert!(solve_weights(&loss, &[0.0, 0.0], 0.0, &[0, 1, 2], &SolverConfig::default()).is_err());
}

#[test]
fn transportable_sources_get_borrowed_from() {
    let d = data("2.1", 4000, 5);
    let fit = fit_federated(&mut LocalAccess::new(&d), &d.site_ids(), RR, &FederationConfig::default()).unwrap();
    assert!(fit.weights.w[1..].iter().sum::<f64>() > 0.5, "{:?}", fit.weights.w);
    assert!(fit.pairwise[1].delta_hat < 0.1, "{}", fit.pairwise[1].delta_hat);
}
