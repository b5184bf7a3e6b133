//! Monte Carlo summary tables.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One (scenario, estimator, misspecification) cell. `sd` uses the `M - 1`
/// denominator, so `mse = bias^2 + sd^2 (M - 1) / M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub estimator: String,
    pub misspec: String,
    pub bias: f64,
    pub sd: f64,
    pub mean_se: f64,
    pub mse: f64,
    pub coverage: f64,
    pub ci_len: f64,
    #[serde(rename = "M")]
    pub m: usize,
}

impl MetricsRow {
    /// Summarises estimates, standard errors and interval endpoints of the
    /// successful replicates.
    pub fn from_estimates(
        scenario: &str,
        estimator: &str,
        misspec: &str,
        truth: f64,
        runs: &[(f64, f64, f64, f64)],
    ) -> Self {
        let m = runs.len();
        let mf = m as f64;
        let mean = |f: &dyn Fn(&(f64, f64, f64, f64)) -> f64| runs.iter().map(f).sum::<f64>() / mf;
        let psi_bar = mean(&|r| r.0);
        let sd = if m > 1 {
            (runs.iter().map(|r| (r.0 - psi_bar).powi(2)).sum::<f64>() / (mf - 1.0)).sqrt()
        } else {
            f64::NAN
        };
        Self {
            scenario: scenario.to_string(),
            estimator: estimator.to_string(),
            misspec: misspec.to_string(),
            bias: psi_bar - truth,
            sd,
            mean_se: mean(&|r| r.1),
            mse: mean(&|r| (r.0 - truth).powi(2)),
            coverage: mean(&|r| (r.2 <= truth && truth <= r.3) as u8 as f64),
            ci_len: mean(&|r| r.3 - r.2),
            m,
        }
    }

    /// `|mse - (bias^2 + sd^2 (M-1)/M)|`.
    pub fn mse_identity_gap(&self) -> f64 {
        let mf = self.m as f64;
        (self.mse - (self.bias * self.bias + self.sd * self.sd * (mf - 1.0) / mf)).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    Csv,
    Markdown,
}

impl TableFormat {
    pub fn extension(self) -> &'static str {
        match self {
            TableFormat::Csv => "csv",
            TableFormat::Markdown => "md",
        }
    }
}

pub const COLUMNS: [&str; 10] =
    ["scenario", "estimator", "misspec", "bias", "sd", "mean_se", "mse", "coverage", "ci_len", "M"];

impl MetricsTable {
    pub fn get(&self, estimator: &str, misspec: &str) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.estimator == estimator && r.misspec == misspec)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record(COLUMNS).map_err(csv_err)?;
        for r in &self.rows {
            w.serialize(r).map_err(csv_err)?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Config(e.to_string()))?)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let rows = r.deserialize().collect::<std::result::Result<Vec<MetricsRow>, _>>().map_err(csv_err)?;
        Ok(Self { rows })
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!("| {} |\n|{}\n", COLUMNS.join(" | "), "---|".repeat(COLUMNS.len()));
        for r in &self.rows {
            out.push_str(&format!(
                "| {} | {} | {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.3} | {:.4} | {} |\n",
                r.scenario, r.estimator, r.misspec, r.bias, r.sd, r.mean_se, r.mse, r.coverage, r.ci_len, r.m
            ));
        }
        out
    }

    pub fn render(&self, format: TableFormat) -> Result<String> {
        match format {
            TableFormat::Csv => self.to_csv(),
            TableFormat::Markdown => Ok(self.to_markdown()),
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("table CSV: {e}"))
}

/// Writes the table to `path`.
pub fn emit_table(table: &MetricsTable, format: TableFormat, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, table.render(format)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> MetricsTable {
        let runs = [(2.4, 0.1, 2.2, 2.6), (2.7, 0.12, 2.55, 2.9), (2.55, 0.11, 2.3, 2.8)];
        MetricsTable {
            rows: vec![
                MetricsRow::from_estimates("1.1", "MR1", "i", 2.5, &runs),
                MetricsRow::from_estimates("1.1", "DR-t", "ii", 2.5, &runs[..2]),
            ],
        }
    }

    #[test]
    fn mse_identity_holds() {
        for r in table().rows {
            assert!(r.mse_identity_gap() < 1e-10);
        }
        let r = &table().rows[0];
        assert!((r.coverage - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.m, 3);
    }

    #[test]
    fn csv_round_trips() {
        let t = table();
        let text = t.to_csv().unwrap();
        assert!(text.starts_with("scenario,estimator,misspec,bias,sd,mean_se,mse,coverage,ci_len,M\n"));
        assert_eq!(MetricsTable::from_csv(&text).unwrap(), t);
    }

    #[test]
    fn markdown_has_one_row_per_cell() {
        assert_eq!(table().to_markdown().lines().count(), 4);
    }

    #[test]
    fn empty_table_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        emit_table(&MetricsTable::default(), TableFormat::Csv, &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap().lines().count(), 1);
    }
}
