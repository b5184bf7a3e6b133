//! Estimator identities and the inference report shared by all of them.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::CausalMeasure;

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959964;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    /// Efficient estimator under a shared effect function.
    #[serde(rename = "MR1")]
    Mr1,
    /// Efficient estimator under shared outcome means.
    #[serde(rename = "MR2")]
    Mr2,
    /// Target-only augmented inverse probability weighting.
    #[serde(rename = "DR-t")]
    DrT,
    /// Federated weighted combination of pairwise MR1 estimates.
    #[serde(rename = "FWMR1")]
    Fwmr1,
    /// MR1 on the sites selected by post-federated weighting selection.
    #[serde(rename = "FSMR1")]
    Fsmr1,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Mr1, Method::Mr2, Method::DrT, Method::Fwmr1, Method::Fsmr1];

    pub fn name(self) -> &'static str {
        match self {
            Method::Mr1 => "MR1",
            Method::Mr2 => "MR2",
            Method::DrT => "DR-t",
            Method::Fwmr1 => "FWMR1",
            Method::Fsmr1 => "FSMR1",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        match key.as_str() {
            "mr1" => Some(Method::Mr1),
            "mr2" => Some(Method::Mr2),
            "drt" => Some(Method::DrT),
            "fwmr1" | "fw" => Some(Method::Fwmr1),
            "fsmr1" | "fs" => Some(Method::Fsmr1),
            _ => None,
        }
    }

    /// Parses a comma-separated list.
    pub fn parse_list(s: &str) -> Result<Vec<Method>> {
        s.split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| {
                Method::parse(t.trim()).ok_or_else(|| {
                    Error::Config(format!(
                        "unknown estimator `{}` (valid: MR1, MR2, DR-t, FWMR1, FSMR1)",
                        t.trim()
                    ))
                })
            })
            .collect()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub method: Method,
    pub measure: CausalMeasure,
    pub psi_hat: f64,
    pub psi0_hat: f64,
    pub psi1_hat: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub selected_sites: Vec<usize>,
    pub n_used: usize,
    /// Rows whose site weights fell back to the target-only vector.
    #[serde(default)]
    pub fallback_rows: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap_se: Option<f64>,
}

impl EstimateReport {
    #[allow(clippy::too_many_arguments)]
    pub fn wald(
        method: Method,
        measure: CausalMeasure,
        psi0_hat: f64,
        psi1_hat: f64,
        psi_hat: f64,
        se: f64,
        selected_sites: Vec<usize>,
        n_used: usize,
    ) -> Self {
        Self {
            method,
            measure,
            psi_hat,
            psi0_hat,
            psi1_hat,
            se,
            ci_lower: psi_hat - Z_95 * se,
            ci_upper: psi_hat + Z_95 * se,
            selected_sites,
            n_used,
            fallback_rows: 0,
            bootstrap_se: None,
        }
    }

    pub fn covers(&self, truth: f64) -> bool {
        self.ci_lower <= truth && truth <= self.ci_upper
    }

    pub fn ci_length(&self) -> f64 {
        self.ci_upper - self.ci_lower
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wald_interval_is_symmetric() {
        let r = EstimateReport::wald(Method::DrT, CausalMeasure::RiskRatio, 2.0, 5.0, 2.5, 0.1, vec![0], 100);
        assert!((r.ci_upper - 2.5 - Z_95 * 0.1).abs() < 1e-15);
        assert!((2.5 - r.ci_lower - Z_95 * 0.1).abs() < 1e-15);
        assert!(r.ci_lower <= r.psi_hat && r.psi_hat <= r.ci_upper);
        assert!(r.covers(2.6) && !r.covers(3.0));
    }

    #[test]
    fn json_round_trip() {
        let r = EstimateReport::wald(Method::Fsmr1, CausalMeasure::RiskRatio, 2.0, 5.0, 2.5, 0.1, vec![0, 2], 100);
        let back: EstimateReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn method_names_parse() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()), Some(m));
        }
        assert_eq!(Method::parse_list("mr1, dr-t").unwrap(), vec![Method::Mr1, Method::DrT]);
        assert!(Method::parse_list("mr3").is_err());
    }
}
