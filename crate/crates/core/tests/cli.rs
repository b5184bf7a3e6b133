use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fedcausal::data::write_site_csv;
use fedcausal::sim::{generate, ScenarioSpec, BUILTIN_IDS};
use fedcausal::EstimateReport;

fn fedcausal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedcausal")).args(args).output().expect("binary runs")
}

fn fedcausal_env(args: &[&str], threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedcausal"))
        .args(args)
        .env("FEDCAUSAL_THREADS", threads)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Writes scenario 2.2 data as `site<k>/data.csv` and returns the directories.
fn site_dirs(root: &Path, n: usize, seed: u64) -> Vec<PathBuf> {
    let data = generate(&ScenarioSpec::builtin("2.2").unwrap().dgp.with_n(n), seed).unwrap();
    data.sites()
        .map(|site| {
            let dir = root.join(format!("site{}", site.site_id()));
            std::fs::create_dir_all(&dir).unwrap();
            write_site_csv(&dir.join("data.csv"), site).unwrap();
            dir
        })
        .collect()
}

fn reports(dir: &Path) -> Vec<EstimateReport> {
    serde_json::from_str(&std::fs::read_to_string(dir.join("reports.json")).unwrap()).unwrap()
}

#[test]
fn unknown_scenario_exits_64_and_lists_valid_ids() {
    let o = fedcausal(&["simulate", "--scenario", "9.9", "--M", "2"]);
    assert_eq!(o.status.code(), Some(64));
    let err = stderr(&o);
    for id in BUILTIN_IDS {
        assert!(err.contains(id), "{err}");
    }
}

#[test]
fn unknown_flag_exits_64() {
    let o = fedcausal(&["simulate", "--scenario", "1.1", "--bogus", "3"]);
    assert_eq!(o.status.code(), Some(64));
}

#[test]
fn help_exits_0() {
    assert_eq!(fedcausal(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_header_exits_65_and_names_the_column() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("target.csv");
    std::fs::write(&path, "y,treat,x1\n1.0,0,0.5\n2.0,1,0.1\n").unwrap();
    let o = fedcausal(&["estimate", "--target", s(&path), "--out", s(&tmp.path().join("out"))]);
    assert_eq!(o.status.code(), Some(65));
    assert!(stderr(&o).contains("treat"), "{}", stderr(&o));
}

#[test]
fn non_binary_treatment_exits_65() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("target.csv");
    std::fs::write(&path, "y,a,x1\n1.0,0,0.5\n2.0,2,0.1\n").unwrap();
    let o = fedcausal(&["estimate", "--target", s(&path)]);
    assert_eq!(o.status.code(), Some(65));
    assert!(stderr(&o).contains('a'));
}

#[test]
fn missing_input_file_exits_74() {
    let tmp = tempfile::tempdir().unwrap();
    let o = fedcausal(&["estimate", "--target", s(&tmp.path().join("nope.csv"))]);
    assert_eq!(o.status.code(), Some(74));
}

#[test]
fn missing_site_directory_exits_70() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs = site_dirs(tmp.path(), 400, 1);
    let missing = tmp.path().join("site9");
    let o = fedcausal(&["fed-run", "--target", s(&dirs[0]), "--sources", s(&missing), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(70), "{}", stderr(&o));
}

#[test]
fn risk_difference_with_mr1_exits_64() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs = site_dirs(tmp.path(), 400, 2);
    let o = fedcausal(&[
        "estimate",
        "--target",
        s(&dirs[0].join("data.csv")),
        "--measure",
        "rd",
        "--estimators",
        "MR1",
        "--out",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(64), "{}", stderr(&o));
}

#[test]
fn target_only_mr1_matches_dr_t() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs = site_dirs(tmp.path(), 3000, 3);
    let out = tmp.path().join("o");
    let o = fedcausal(&["estimate", "--target", s(&dirs[0].join("data.csv")), "--estimators", "MR1", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = reports(&out);
    let (drt, mr1) = (&r[0], &r[1]);
    assert_eq!(drt.method.name(), "DR-t");
    assert!((drt.psi_hat - mr1.psi_hat).abs() < 1e-12);
    assert!(out.join("forest.csv").exists() && out.join("influence_MR1.csv").exists());
}

#[test]
fn estimate_reads_a_directory_of_site_files() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generate(&ScenarioSpec::builtin("2.1").unwrap().dgp.with_n(600), 4).unwrap();
    let dir = tmp.path().join("sites");
    std::fs::create_dir_all(&dir).unwrap();
    for site in data.sites() {
        write_site_csv(&dir.join(format!("site_{}.csv", site.site_id())), site).unwrap();
    }
    let out = tmp.path().join("o");
    let o = fedcausal(&["estimate", "--target", s(&dir), "--estimators", "MR1,FWMR1", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = reports(&out);
    assert_eq!(r.len(), 3);
    assert_eq!(r[1].selected_sites, vec![0, 1, 2]);
    assert!(out.join("weights.json").exists());
}

#[test]
fn mse_curve_writes_the_curve() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs = site_dirs(tmp.path(), 600, 5);
    let out = tmp.path().join("o");
    let sources = format!("{},{}", s(&dirs[1].join("data.csv")), s(&dirs[2].join("data.csv")));
    let o = fedcausal(&[
        "mse-curve",
        "--target",
        s(&dirs[0].join("data.csv")),
        "--sources",
        &sources,
        "--B",
        "10",
        "--grid",
        "0.1,0.5,1",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("mse_curve.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("e,selected,psi,mse_hat"));
    assert_eq!(lines.count(), 3);
    assert!(out.join("fsmr1.json").exists());
}

fn small_scenario(dir: &Path) -> PathBuf {
    let mut spec = ScenarioSpec::builtin("1.1").unwrap();
    spec.id = "small".into();
    spec.dgp.n_total = 400;
    spec.estimators = vec![fedcausal::Method::DrT, fedcausal::Method::Mr1];
    spec.misspec = vec![fedcausal::nuisance::MisspecType::I];
    let path = dir.join("small.toml");
    std::fs::write(&path, spec.to_toml().unwrap()).unwrap();
    path
}

#[test]
fn simulate_is_reproducible_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = small_scenario(tmp.path());
    let digest = |threads: &str, out: &str| {
        let out = tmp.path().join(out);
        let o = fedcausal_env(&["simulate", "--scenario", s(&scenario), "--M", "6", "--seed", "9", "--out", s(&out)], threads);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("small/summary.json")).unwrap()).unwrap();
        assert_eq!(summary["M"], 6);
        summary["table_sha256"].as_str().unwrap().to_string()
    };
    let a = digest("1", "a");
    let b = digest("3", "b");
    assert_eq!(a, b);
    assert!(tmp.path().join("a/small/table.md").exists());
    assert!(tmp.path().join("a/small/replicates.json").exists());
}

#[test]
fn simulate_rejects_a_single_replicate() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = small_scenario(tmp.path());
    let o = fedcausal(&["simulate", "--scenario", s(&scenario), "--M", "1", "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(64));
}
