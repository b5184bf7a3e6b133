use fedcausal_demo::{estimate_scenario_json, mse_curve_json, solve_weights_json};
use serde_json::Value;

fn parse(s: &str) -> Value {
    serde_json::from_str(s).expect("valid JSON")
}

#[test]
fn estimate_reports_every_method_and_the_truth() {
    let v = parse(&estimate_scenario_json("2.2", 800, 3).unwrap());
    assert_eq!(v["truth"].as_f64(), Some(2.5));
    let methods: Vec<&str> = v["reports"].as_array().unwrap().iter().map(|r| r["method"].as_str().unwrap()).collect();
    assert_eq!(methods, ["DR-t", "MR1", "FWMR1"]);
    let w: Vec<f64> = v["weights"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(w.len(), 3);
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert_eq!(v["sites"].as_array().unwrap().len(), 3);
}

#[test]
fn unknown_scenario_is_an_error_naming_the_choices() {
    let e = estimate_scenario_json("7.7", 800, 1).unwrap_err().to_string();
    assert!(e.contains("2.3"), "{e}");
}

#[test]
fn weight_solver_answers_on_the_simplex() {
    let v = parse(&solve_weights_json(&[2.0, 0.5, 0.5, 1.0], &[1.0, 0.4], 1.0, &[0.01, 0.5], 0.5).unwrap());
    let w: Vec<f64> = v["w"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(w.len(), 3);
    assert!(w.iter().all(|x| *x >= 0.0));
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn weight_solver_rejects_mismatched_shapes() {
    assert!(solve_weights_json(&[1.0, 0.0, 0.0], &[1.0, 0.4], 1.0, &[0.0, 0.0], 0.5).is_err());
}

#[test]
fn curve_covers_the_default_grid_and_marks_its_minimum() {
    let v = parse(&mse_curve_json("2.2", 600, 2, 10).unwrap());
    let points = v["points"].as_array().unwrap();
    assert_eq!(points.len(), 20);
    let e_star = v["e_star"].as_f64().unwrap();
    let min = points.iter().map(|p| p["mse_hat"].as_f64().unwrap()).fold(f64::INFINITY, f64::min);
    let at = points.iter().find(|p| p["e"].as_f64() == Some(e_star)).unwrap();
    assert_eq!(at["mse_hat"].as_f64(), Some(min));
    assert_eq!(v["chosen"][0].as_u64(), Some(0));
}
