//! Simulation scenarios: the built-in shift cases and declarative configs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dgp::DgpParams;
use crate::error::{Error, Result};
use crate::federation::FederationConfig;
use crate::measure::CausalMeasure;
use crate::nuisance::{FeatureTransform, MisspecType, NuisanceConfig};
use crate::pfws::PfwsConfig;
use crate::report::Method;

pub const BUILTIN_IDS: [&str; 5] = ["1.1", "1.2", "2.1", "2.2", "2.3"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub id: String,
    pub dgp: DgpParams,
    pub measure: CausalMeasure,
    /// Misspecification patterns to run; `i` is the correctly specified case.
    pub misspec: Vec<MisspecType>,
    /// How misspecified models see the covariates.
    pub distortion: FeatureTransform,
    pub estimators: Vec<Method>,
    pub nuisance: NuisanceConfig,
    /// Weighting settings; the estimator settings inside are replaced by
    /// `nuisance` and the misspecification of each run.
    pub federation: FederationConfig,
    pub pfws: PfwsConfig,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            id: "custom".into(),
            dgp: DgpParams::default(),
            measure: CausalMeasure::RiskRatio,
            misspec: vec![MisspecType::I],
            distortion: FeatureTransform::DropLast,
            estimators: vec![Method::Mr1, Method::Mr2, Method::DrT],
            nuisance: NuisanceConfig::default(),
            federation: FederationConfig::default(),
            pfws: PfwsConfig::default(),
        }
    }
}

fn unknown(id: &str) -> Error {
    Error::Config(format!("unknown scenario `{id}`; valid ids: {}", BUILTIN_IDS.join(", ")))
}

impl ScenarioSpec {
    /// The shift table: case 1.1 has no shifts; 1.2 and 2.1 shift the
    /// control means of sites 1 and 2 by -10 and 15; 2.2 adds an effect
    /// shift of 5 at site 2, and 2.3 at sites 1 and 2.
    pub fn builtin(id: &str) -> Result<Self> {
        let mu = [0.0, -10.0, 15.0];
        let (b_mu, b_tau, scenario_one) = match id {
            "1.1" => ([0.0; 3], [0.0; 3], true),
            "1.2" => (mu, [0.0; 3], true),
            "2.1" => (mu, [0.0; 3], false),
            "2.2" => (mu, [0.0, 0.0, 5.0], false),
            "2.3" => (mu, [0.0, 5.0, 5.0], false),
            _ => return Err(unknown(id)),
        };
        let base = Self { id: id.to_string(), dgp: DgpParams::with_shifts(b_mu, b_tau), ..Self::default() };
        Ok(if scenario_one {
            Self { misspec: MisspecType::ALL.to_vec(), estimators: vec![Method::Mr1, Method::Mr2, Method::DrT], ..base }
        } else {
            Self {
                misspec: vec![MisspecType::I],
                estimators: vec![Method::Mr1, Method::DrT, Method::Fwmr1, Method::Fsmr1],
                ..base
            }
        })
    }

    /// TOML (`.toml`) or JSON (anything else).
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: Self = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        spec.validate()?;
        Ok(spec)
    }

    /// A built-in id, or a path to a config file.
    pub fn resolve(id_or_path: &str) -> Result<Self> {
        if BUILTIN_IDS.contains(&id_or_path) {
            return Self::builtin(id_or_path);
        }
        let path = Path::new(id_or_path);
        if path.is_file() {
            return Self::from_path(path);
        }
        Err(unknown(id_or_path))
    }

    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        if self.estimators.is_empty() {
            return Err(Error::Config("scenario lists no estimators".into()));
        }
        if self.misspec.is_empty() {
            return Err(Error::Config("scenario lists no misspecification patterns".into()));
        }
        if self.id.is_empty() || self.id.contains(['/', '\\']) {
            return Err(Error::Config(format!("scenario id `{}` cannot name a results directory", self.id)));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_match_the_shift_table() {
        let s = ScenarioSpec::builtin("2.3").unwrap();
        assert_eq!(s.dgp.b_mu, vec![0.0, -10.0, 15.0]);
        assert_eq!(s.dgp.b_tau, vec![0.0, 5.0, 5.0]);
        assert_eq!(ScenarioSpec::builtin("1.1").unwrap().dgp.b_mu, vec![0.0; 3]);
        assert_eq!(ScenarioSpec::builtin("2.2").unwrap().dgp.b_tau, vec![0.0, 0.0, 5.0]);
        assert_eq!(ScenarioSpec::builtin("1.2").unwrap().misspec.len(), 4);
    }

    #[test]
    fn unknown_id_names_the_valid_ones() {
        let e = ScenarioSpec::resolve("3.1").unwrap_err().to_string();
        for id in BUILTIN_IDS {
            assert!(e.contains(id));
        }
    }

    #[test]
    fn toml_and_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for id in BUILTIN_IDS {
            let s = ScenarioSpec::builtin(id).unwrap();
            let t = dir.path().join(format!("s{id}.toml"));
            std::fs::write(&t, s.to_toml().unwrap()).unwrap();
            assert_eq!(ScenarioSpec::from_path(&t).unwrap(), s);
            let j = dir.path().join(format!("s{id}.json"));
            std::fs::write(&j, serde_json::to_string(&s).unwrap()).unwrap();
            assert_eq!(ScenarioSpec::resolve(j.to_str().unwrap()).unwrap(), s);
        }
    }

    #[test]
    fn partial_toml_uses_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("small.toml");
        std::fs::write(&p, "id = \"small\"\nestimators = [\"MR1\", \"DR-t\"]\n[dgp]\nn_total = 300\nb_tau = [0.0, 0.0, 2.0]\n")
            .unwrap();
        let s = ScenarioSpec::from_path(&p).unwrap();
        assert_eq!(s.dgp.n_total, 300);
        assert_eq!(s.dgp.site_probs, vec![0.1, 0.4, 0.5]);
        assert_eq!(s.estimators, vec![Method::Mr1, Method::DrT]);
    }
}
