use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{CommonArgs, EstimateArgs, FedRunArgs, SimulateArgs, TransportArg, EXIT_OK, EXIT_PARTIAL};
use crate::access::{LocalAccess, SiteAccess};
use crate::data::{read_site_csv, read_site_dir, Individual, MultiSiteData, SiteDataset};
use crate::error::{Error, Result};
use crate::estimators::{estimate_via, fit_plan, influence_values, EstimatorConfig};
use crate::federation::{
    audit_outbox, audit_transcript, estimate_fw, fit_federated, AuditReport, FederatedAccess, FederatedFit,
    FederationConfig, FileTransport, MemoryTransport, SiteNode, Transport,
};
use crate::measure::CausalMeasure;
use crate::pfws::{estimate_fs, FsReport, MseCurve, PfwsConfig, ThresholdGrid};
use crate::report::{EstimateReport, Method};
use crate::sim::{emit_table, run_monte_carlo, ScenarioSpec, TableFormat};

/// Reports of one estimation run, DR-t first.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub reports: Vec<EstimateReport>,
    pub fit: Option<FederatedFit>,
    pub fs: Option<FsReport>,
    pub curve: Option<MseCurve>,
    /// Requested estimators that could not run, with the reason.
    pub skipped: Vec<(Method, String)>,
}

impl RunOutput {
    pub fn report(&self, m: Method) -> Option<&EstimateReport> {
        self.reports.iter().find(|r| r.method == m)
    }
}

struct Settings {
    measure: CausalMeasure,
    methods: Vec<Method>,
    estimator: EstimatorConfig,
    federation: FederationConfig,
    pfws: PfwsConfig,
    seed: u64,
}

fn parse_floats(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| Error::Config(format!("{what}: `{}` is not a non-negative number", t.trim())))
        })
        .collect()
}

fn default_methods(measure: CausalMeasure) -> Vec<Method> {
    match measure {
        CausalMeasure::RiskRatio => vec![Method::Mr1, Method::Fwmr1, Method::Fsmr1],
        CausalMeasure::RiskDifference => vec![Method::Mr2],
    }
}

fn settings(c: &CommonArgs) -> Result<Settings> {
    let measure: CausalMeasure = c.measure.map(Into::into).unwrap_or(CausalMeasure::RiskRatio);
    let methods = match &c.estimators {
        Some(s) => Method::parse_list(s)?,
        None => default_methods(measure),
    };
    let estimator = EstimatorConfig::for_measure(measure);
    let mut federation = FederationConfig { estimator: estimator.clone(), ..FederationConfig::default() };
    if let Some(g) = &c.lambda_grid {
        federation.lambda_grid = Some(parse_floats(g, "--lambda-grid")?);
    }
    let mut pfws = PfwsConfig::default();
    if let Some(g) = &c.grid {
        pfws.grid = ThresholdGrid::parse(g)?;
    }
    if let Some(b) = c.b {
        if b < 2 {
            return Err(Error::Config(format!("--B must be at least 2, got {b}")));
        }
        pfws.b = b;
    }
    Ok(Settings { measure, methods, estimator, federation, pfws, seed: c.seed })
}

/// Runs DR-t and then each requested estimator through `access`. The
/// weighted and selective estimators share one federated fit.
#[allow(clippy::too_many_arguments)]
pub fn run_estimators(
    access: &mut dyn SiteAccess,
    sites: &[usize],
    measure: CausalMeasure,
    methods: &[Method],
    cfg: &EstimatorConfig,
    federation: &FederationConfig,
    pfws: &PfwsConfig,
    seed: u64,
) -> Result<RunOutput> {
    let mut out = RunOutput {
        reports: vec![estimate_via(access, &[0], Method::DrT, measure, cfg)?],
        fit: None,
        fs: None,
        curve: None,
        skipped: Vec::new(),
    };
    let mut seen = vec![Method::DrT];
    for &m in methods {
        if seen.contains(&m) {
            continue;
        }
        seen.push(m);
        match m {
            Method::DrT => {}
            Method::Mr1 | Method::Mr2 => out.reports.push(estimate_via(access, sites, m, measure, cfg)?),
            Method::Fwmr1 | Method::Fsmr1 => {
                if sites.len() < 2 {
                    out.skipped.push((m, "needs at least one source site".into()));
                    continue;
                }
                if out.fit.is_none() {
                    out.fit = Some(fit_federated(access, sites, measure, federation)?);
                }
                let fit = out.fit.as_ref().expect("fitted above");
                if m == Method::Fwmr1 {
                    out.reports.push(estimate_fw(fit, measure)?);
                } else {
                    let fs = estimate_fs(access, fit, measure, cfg, pfws, seed)?;
                    out.reports.push(fs.fs.report.clone());
                    out.curve = Some(fs.run.curve);
                    out.fs = Some(fs.fs);
                }
            }
        }
    }
    Ok(out)
}

/// Target CSV plus source CSVs (ids 1.. in order), or a directory of
/// `site_<k>.csv` files when no sources are given.
pub fn site_inputs(target: &Path, sources: &[PathBuf]) -> Result<MultiSiteData> {
    if target.is_dir() && sources.is_empty() {
        let data = read_site_dir(target)?;
        if data.target().is_none() {
            return Err(Error::MissingTargetSite);
        }
        return Ok(data);
    }
    let mut sites = vec![read_site_csv(target, 0)?];
    for (i, p) in sources.iter().enumerate() {
        sites.push(read_site_csv(p, i + 1)?);
    }
    check_dimensions(&sites)?;
    Ok(MultiSiteData::new(sites))
}

fn check_dimensions(sites: &[SiteDataset]) -> Result<()> {
    let p = sites[0].p();
    match sites.iter().find(|s| s.p() != p) {
        Some(s) => Err(Error::DimensionMismatch { site: s.site_id(), expected: p, found: s.p() }),
        None => Ok(()),
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_run(dir: &Path, run: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("reports.json"), &run.reports)?;
    for r in &run.reports {
        r.write_json(&dir.join(format!("report_{}.json", r.method.name())))?;
    }
    if let Some(fit) = &run.fit {
        write_json(&dir.join("weights.json"), &serde_json::json!({
            "sites": fit.weights.sites,
            "w": fit.weights.w,
            "lambda_n": fit.weights.lambda_n,
            "lambda_selection": fit.lambda,
            "pairwise": fit.pairwise,
        }))?;
    }
    if let Some(fs) = &run.fs {
        write_json(&dir.join("fsmr1.json"), fs)?;
    }
    if let Some(curve) = &run.curve {
        curve.write_csv(&dir.join("mse_curve.csv"))?;
    }
    for (m, why) in &run.skipped {
        eprintln!("note: {m} skipped: {why}");
    }
    Ok(())
}

/// One line of the per-site summary: each site's own target-only estimate,
/// then the combined estimators.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForestRow {
    pub label: String,
    pub site: Option<usize>,
    pub method: String,
    pub psi: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub n: usize,
}

impl ForestRow {
    fn new(label: String, site: Option<usize>, r: &EstimateReport) -> Self {
        Self {
            label,
            site,
            method: r.method.name().to_string(),
            psi: r.psi_hat,
            se: r.se,
            ci_lower: r.ci_lower,
            ci_upper: r.ci_upper,
            n: r.n_used,
        }
    }
}

fn as_target(site: &SiteDataset) -> Result<MultiSiteData> {
    let rows = site.rows().iter().map(|r| Individual { s: 0, ..r.clone() }).collect();
    Ok(MultiSiteData::new([SiteDataset::new(0, rows)?]))
}

fn forest_rows(data: &MultiSiteData, run: &RunOutput, measure: CausalMeasure, cfg: &EstimatorConfig) -> Vec<ForestRow> {
    let mut rows = Vec::new();
    for site in data.sites() {
        let k = site.site_id();
        let own = as_target(site).and_then(|d| estimate_via(&mut LocalAccess::new(&d), &[0], Method::DrT, measure, cfg));
        match own {
            Ok(r) => rows.push(ForestRow::new(format!("site {k}"), Some(k), &r)),
            Err(e) => eprintln!("note: site {k} has no own estimate: {e}"),
        }
    }
    rows.extend(run.reports.iter().map(|r| ForestRow::new(r.method.name().to_string(), None, r)));
    rows
}

fn forest_markdown(rows: &[ForestRow]) -> String {
    let mut out = String::from("| label | method | psi | 95% CI | n |\n|---|---|---|---|---|\n");
    for r in rows {
        out.push_str(&format!(
            "| {} | {} | {:.4} | [{:.4}, {:.4}] | {} |\n",
            r.label, r.method, r.psi, r.ci_lower, r.ci_upper, r.n
        ));
    }
    out
}

fn write_forest(dir: &Path, rows: &[ForestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join("forest.csv")).map_err(|e| Error::Io(e.into()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    fs::write(dir.join("forest.md"), forest_markdown(rows))?;
    Ok(())
}

fn write_influence(dir: &Path, data: &MultiSiteData, run: &RunOutput, cfg: &EstimatorConfig) -> Result<()> {
    let sites = data.site_ids();
    for r in run.reports.iter().filter(|r| matches!(r.method, Method::Mr1 | Method::Mr2 | Method::DrT)) {
        let plan = fit_plan(&mut LocalAccess::new(data), &sites, r.method, r.measure, cfg)?;
        let phi = influence_values(data, &plan.bundle, &plan.sites, r.method, r.psi0_hat, r.psi1_hat)?;
        phi.write_csv(&dir.join(format!("influence_{}.csv", r.method.name())))?;
    }
    Ok(())
}

fn out_dir(c: &CommonArgs, default: &str) -> PathBuf {
    c.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

/// In-process estimation on CSV inputs; writes reports, influence values and
/// the per-site summary.
pub fn cmd_estimate(a: &EstimateArgs) -> Result<RunOutput> {
    let s = settings(&a.common)?;
    let data = site_inputs(&a.target, &a.sources)?;
    let sites = data.site_ids();
    let run = run_estimators(
        &mut LocalAccess::new(&data),
        &sites,
        s.measure,
        &s.methods,
        &s.estimator,
        &s.federation,
        &s.pfws,
        s.seed,
    )?;
    let dir = out_dir(&a.common, "out");
    write_run(&dir, &run)?;
    write_influence(&dir, &data, &run, &s.estimator)?;
    let forest = forest_rows(&data, &run, s.measure, &s.estimator);
    write_forest(&dir, &forest)?;
    print!("{}", forest_markdown(&forest));
    println!("wrote {}", dir.display());
    Ok(run)
}

/// Bootstrap MSE curve and the selective estimate.
pub fn cmd_mse_curve(a: &EstimateArgs) -> Result<RunOutput> {
    let s = settings(&a.common)?;
    if s.measure != CausalMeasure::RiskRatio {
        return Err(Error::UnsupportedMeasureForMode { measure: s.measure.to_string(), method: "FSMR1".into() });
    }
    let data = site_inputs(&a.target, &a.sources)?;
    let sites = data.site_ids();
    if sites.len() < 2 {
        return Err(Error::Config("the MSE curve needs at least one source site".into()));
    }
    let run = run_estimators(
        &mut LocalAccess::new(&data),
        &sites,
        s.measure,
        &[Method::Fsmr1],
        &s.estimator,
        &s.federation,
        &s.pfws,
        s.seed,
    )?;
    let dir = out_dir(&a.common, "out");
    write_run(&dir, &run)?;
    if let (Some(curve), Some(fs)) = (&run.curve, &run.fs) {
        print!("{}", curve.to_csv());
        println!("e* = {}  (curve {})", fs.e_star, fs.curve_digest);
    }
    println!("wrote {}", dir.display());
    Ok(run)
}

fn site_csv_in(dir: &Path) -> Result<PathBuf> {
    if !dir.is_dir() {
        return Err(Error::ProtocolViolation(format!("site directory {} is missing", dir.display())));
    }
    let mut csvs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    csvs.sort();
    match csvs.len() {
        1 => Ok(csvs.remove(0)),
        0 => Err(Error::Config(format!("no CSV file in site directory {}", dir.display()))),
        _ => Err(Error::Config(format!("more than one CSV file in site directory {}", dir.display()))),
    }
}

fn fed_execute<T: Transport>(access: &mut FederatedAccess<T>, sites: &[usize], s: &Settings) -> Result<RunOutput> {
    run_estimators(access, sites, s.measure, &s.methods, &s.estimator, &s.federation, &s.pfws, s.seed)
}

/// Runs the estimators with every site behind the message transport, then
/// audits the transcript.
pub fn cmd_fed_run(a: &FedRunArgs) -> Result<(RunOutput, AuditReport)> {
    let s = settings(&a.common)?;
    let dirs: Vec<&PathBuf> = std::iter::once(&a.target).chain(&a.sources).collect();
    let files = dirs.iter().map(|d| site_csv_in(d)).collect::<Result<Vec<_>>>()?;
    let sites = files
        .iter()
        .enumerate()
        .map(|(k, p)| read_site_csv(p, k))
        .collect::<Result<Vec<_>>>()?;
    check_dimensions(&sites)?;
    let ids: Vec<usize> = (0..sites.len()).collect();
    let nodes: Vec<SiteNode> = sites.into_iter().map(SiteNode::new).collect();
    let dir = out_dir(&a.common, "out");
    fs::create_dir_all(&dir)?;

    let (run, audit) = match a.transport {
        TransportArg::Files => {
            let mut access = FederatedAccess::from_nodes(nodes, FileTransport::new(&dir)?);
            let run = fed_execute(&mut access, &ids, &s)?;
            let audit = audit_outbox(access.transport().outbox())?;
            (run, audit)
        }
        TransportArg::Memory => {
            let mut access = FederatedAccess::from_nodes(nodes, MemoryTransport::new());
            let run = fed_execute(&mut access, &ids, &s)?;
            let transcript = access.transcript()?;
            let lines = transcript.iter().map(|m| m.encode()).collect::<Result<Vec<_>>>()?;
            fs::write(dir.join("transcript.jsonl"), lines.join("\n") + "\n")?;
            (run, audit_transcript(&transcript))
        }
    };
    write_run(&dir, &run)?;
    write_json(&dir.join("audit.json"), &audit)?;
    if !audit.passed() {
        return Err(Error::ProtocolViolation(format!("transcript audit failed: {}", audit.violations.join("; "))));
    }
    for r in &run.reports {
        println!("{:<6} {:.6} [{:.6}, {:.6}]", r.method.name(), r.psi_hat, r.ci_lower, r.ci_upper);
    }
    println!("{} messages, audit passed; wrote {}", audit.messages, dir.display());
    Ok((run, audit))
}

#[derive(Serialize)]
struct SimulationSummary<'a> {
    scenario: &'a str,
    seed: u64,
    #[serde(rename = "M")]
    m: usize,
    #[serde(rename = "B")]
    b: usize,
    truth: f64,
    attempted: usize,
    failed: usize,
    failure_rate: f64,
    table_sha256: String,
}

/// Monte Carlo study; tables go to `<out>/<scenario id>/`.
pub fn cmd_simulate(a: &SimulateArgs) -> Result<i32> {
    let mut spec = ScenarioSpec::resolve(&a.scenario)?;
    let c = &a.common;
    if let Some(m) = c.measure {
        spec.measure = m.into();
    }
    if let Some(e) = &c.estimators {
        spec.estimators = Method::parse_list(e)?;
    }
    if let Some(g) = &c.lambda_grid {
        spec.federation.lambda_grid = Some(parse_floats(g, "--lambda-grid")?);
    }
    if let Some(g) = &c.grid {
        spec.pfws.grid = ThresholdGrid::parse(g)?;
    }
    if let Some(b) = c.b {
        spec.pfws.b = b;
    }
    let outcome = run_monte_carlo(&spec, a.m, c.seed)?;
    let dir = out_dir(c, "results").join(&spec.id);
    fs::create_dir_all(&dir)?;
    emit_table(&outcome.table, TableFormat::Csv, &dir.join("table.csv"))?;
    emit_table(&outcome.table, TableFormat::Markdown, &dir.join("table.md"))?;
    write_json(&dir.join("replicates.json"), &outcome.records)?;
    let summary = SimulationSummary {
        scenario: &spec.id,
        seed: c.seed,
        m: a.m,
        b: spec.pfws.b,
        truth: outcome.truth,
        attempted: outcome.attempted,
        failed: outcome.failed,
        failure_rate: outcome.failure_rate(),
        table_sha256: sha256_hex(outcome.table.to_csv()?.as_bytes()),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    print!("{}", outcome.table.to_markdown());
    println!("wrote {}", dir.display());
    if outcome.failure_rate() > 0.01 {
        eprintln!("warning: {} of {} estimator runs failed", outcome.failed, outcome.attempted);
        return Ok(EXIT_PARTIAL);
    }
    Ok(EXIT_OK)
}
