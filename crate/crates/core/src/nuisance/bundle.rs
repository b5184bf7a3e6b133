//! Fitted nuisance collections and the misspecification vocabulary.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::basis::{Basis, FeatureTransform};
use super::glm::{GlmModel, SolverOptions};
use super::models::{DensityRatioModel, LocalFitSpec, TauModel, TauStrategy, VarianceMode, VarianceModel};
use crate::error::{Error, Result};
use crate::measure::CausalMeasure;
use crate::report::Method;

/// Model forms, clipping constants and solver settings for every nuisance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NuisanceConfig {
    pub propensity: Basis,
    pub mu0: Basis,
    pub mu1: Basis,
    pub tau: Basis,
    pub density_ratio: Basis,
    pub pooled_mu0: Basis,
    pub pooled_mu1: Basis,
    pub tau_strategy: TauStrategy,
    pub propensity_clip: f64,
    pub ratio_clip: (f64, f64),
    pub variance_floor: f64,
    pub variance_mode: VarianceMode,
    pub solver: SolverOptions,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        Self {
            propensity: Basis::linear(),
            mu0: Basis::linear(),
            mu1: Basis::quadratic(),
            tau: Basis::linear(),
            density_ratio: Basis::quadratic(),
            pooled_mu0: Basis::linear(),
            pooled_mu1: Basis::quadratic(),
            tau_strategy: TauStrategy::ProductRegression,
            propensity_clip: 0.01,
            ratio_clip: (1e-3, 1e3),
            variance_floor: 1e-4,
            variance_mode: VarianceMode::Constant,
            solver: SolverOptions::default(),
        }
    }
}

impl NuisanceConfig {
    /// Defaults adjusted to the measure: on the additive scale the effect
    /// function of a multiplicative outcome model is quadratic.
    pub fn for_measure(measure: CausalMeasure) -> Self {
        let mut cfg = Self::default();
        if measure == CausalMeasure::RiskDifference {
            cfg.tau = Basis::quadratic();
        }
        cfg
    }

    pub fn local_spec(&self) -> LocalFitSpec {
        LocalFitSpec {
            propensity: self.propensity,
            mu0: self.mu0,
            mu1: self.mu1,
            propensity_clip: self.propensity_clip,
            variance_mode: self.variance_mode,
            variance_floor: self.variance_floor,
            solver: self.solver,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceBundle {
    pub measure: CausalMeasure,
    /// Participating sites, ascending, always including the target.
    pub sites: Vec<usize>,
    #[serde(with = "crate::site_ops::site_map")]
    pub propensity: BTreeMap<usize, GlmModel>,
    #[serde(with = "crate::site_ops::site_map")]
    pub mu0: BTreeMap<usize, GlmModel>,
    #[serde(with = "crate::site_ops::site_map")]
    pub mu1: BTreeMap<usize, GlmModel>,
    pub tau: TauModel,
    #[serde(with = "crate::site_ops::site_map")]
    pub density_ratio: BTreeMap<usize, DensityRatioModel>,
    #[serde(with = "crate::site_ops::site_map")]
    pub var0: BTreeMap<usize, VarianceModel>,
    #[serde(with = "crate::site_ops::site_map")]
    pub var1: BTreeMap<usize, VarianceModel>,
    #[serde(default)]
    pub pooled_mu0: Option<GlmModel>,
    #[serde(default)]
    pub pooled_mu1: Option<GlmModel>,
}

impl NuisanceBundle {
    pub fn sources(&self) -> impl Iterator<Item = usize> + '_ {
        self.sites.iter().copied().filter(|&k| k != 0)
    }

    pub fn contains(&self, id: &NuisanceId) -> bool {
        match *id {
            NuisanceId::Propensity(k) => self.propensity.contains_key(&k),
            NuisanceId::Mu0(k) => self.mu0.contains_key(&k),
            NuisanceId::Mu1(k) => self.mu1.contains_key(&k),
            NuisanceId::DensityRatio(k) => self.density_ratio.contains_key(&k),
            NuisanceId::Tau => true,
            NuisanceId::PooledMu0 => self.pooled_mu0.is_some(),
            NuisanceId::PooledMu1 => self.pooled_mu1.is_some(),
        }
    }

    /// Compact identity used to label cached work.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).unwrap_or_default();
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

/// Addresses one fitted function inside a bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuisanceId {
    Propensity(usize),
    Mu0(usize),
    Mu1(usize),
    DensityRatio(usize),
    Tau,
    PooledMu0,
    PooledMu1,
}

impl fmt::Display for NuisanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NuisanceId::Propensity(k) => write!(f, "pi{k}"),
            NuisanceId::Mu0(k) => write!(f, "mu0_{k}"),
            NuisanceId::Mu1(k) => write!(f, "mu1_{k}"),
            NuisanceId::DensityRatio(k) => write!(f, "q{k}"),
            NuisanceId::Tau => write!(f, "tau"),
            NuisanceId::PooledMu0 => write!(f, "mu0_pooled"),
            NuisanceId::PooledMu1 => write!(f, "mu1_pooled"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct MisspecSpec {
    pub targets: BTreeSet<NuisanceId>,
    pub distortion: FeatureTransform,
}

impl MisspecSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Rewrites the targets for the nuisances a given estimator actually uses.
    ///
    /// DR-t only touches `pi0`, `mu0_0` and `tau`. MR2 replaces the effect
    /// function by the pooled treated mean and the per-site control means by
    /// the pooled control mean. Targets for sites outside `sites` are dropped.
    pub fn for_method(&self, method: Method, sites: &[usize]) -> MisspecSpec {
        let mut out = BTreeSet::new();
        for &t in &self.targets {
            let mapped = match (method, t) {
                (Method::DrT, NuisanceId::Propensity(0) | NuisanceId::Mu0(0) | NuisanceId::Tau) => Some(t),
                (Method::DrT, _) => None,
                (Method::Mr2, NuisanceId::Tau) => Some(NuisanceId::PooledMu1),
                (Method::Mr2, NuisanceId::Mu0(_)) => Some(NuisanceId::PooledMu0),
                (_, NuisanceId::Propensity(k) | NuisanceId::Mu0(k) | NuisanceId::Mu1(k)) => {
                    sites.contains(&k).then_some(t)
                }
                (_, NuisanceId::DensityRatio(k)) => (k != 0 && sites.contains(&k)).then_some(t),
                _ => Some(t),
            };
            if let Some(m) = mapped {
                out.insert(m);
            }
        }
        MisspecSpec { targets: out, distortion: self.distortion }
    }

    pub fn check_against(&self, bundle: &NuisanceBundle) -> Result<()> {
        for t in &self.targets {
            if !bundle.contains(t) {
                return Err(Error::UnknownTarget(t.to_string()));
            }
        }
        Ok(())
    }
}

/// The four misspecification patterns of the simulation study, written for
/// sites `{0, 1, 2}` (the study labels these sites 1 to 3).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MisspecType {
    #[serde(rename = "i")]
    I,
    #[serde(rename = "ii")]
    II,
    #[serde(rename = "iii")]
    III,
    #[serde(rename = "iv")]
    IV,
}

impl MisspecType {
    pub const ALL: [MisspecType; 4] = [MisspecType::I, MisspecType::II, MisspecType::III, MisspecType::IV];

    pub fn label(self) -> &'static str {
        match self {
            MisspecType::I => "i",
            MisspecType::II => "ii",
            MisspecType::III => "iii",
            MisspecType::IV => "iv",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().trim_matches(|c| c == '(' || c == ')').to_ascii_lowercase().as_str() {
            "i" | "1" | "none" => Some(MisspecType::I),
            "ii" | "2" => Some(MisspecType::II),
            "iii" | "3" => Some(MisspecType::III),
            "iv" | "4" => Some(MisspecType::IV),
            _ => None,
        }
    }

    pub fn targets(self) -> BTreeSet<NuisanceId> {
        use NuisanceId::*;
        match self {
            MisspecType::I => BTreeSet::new(),
            MisspecType::II => [Propensity(0), Propensity(1), Propensity(2), DensityRatio(1), DensityRatio(2)]
                .into_iter()
                .collect(),
            MisspecType::III => [Propensity(2), Mu0(0), Mu0(1), DensityRatio(1), DensityRatio(2)]
                .into_iter()
                .collect(),
            MisspecType::IV => [Tau].into_iter().collect(),
        }
    }

    pub fn spec(self, distortion: FeatureTransform) -> MisspecSpec {
        MisspecSpec { targets: self.targets(), distortion }
    }
}

impl fmt::Display for MisspecType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drt_keeps_only_target_nuisances() {
        let s = MisspecType::III.spec(FeatureTransform::DropLast).for_method(Method::DrT, &[0]);
        assert_eq!(s.targets, [NuisanceId::Mu0(0)].into_iter().collect());
        let s = MisspecType::II.spec(FeatureTransform::DropLast).for_method(Method::DrT, &[0]);
        assert_eq!(s.targets, [NuisanceId::Propensity(0)].into_iter().collect());
    }

    #[test]
    fn mr2_maps_effect_function_to_pooled_treated_mean() {
        let s = MisspecType::IV.spec(FeatureTransform::DropLast).for_method(Method::Mr2, &[0, 1, 2]);
        assert_eq!(s.targets, [NuisanceId::PooledMu1].into_iter().collect());
        let s = MisspecType::III.spec(FeatureTransform::DropLast).for_method(Method::Mr2, &[0, 1, 2]);
        assert!(s.targets.contains(&NuisanceId::PooledMu0));
        assert!(!s.targets.contains(&NuisanceId::Mu0(0)));
    }

    #[test]
    fn absent_sites_are_dropped() {
        let s = MisspecType::II.spec(FeatureTransform::DropLast).for_method(Method::Mr1, &[0, 2]);
        let expected: BTreeSet<_> =
            [NuisanceId::Propensity(0), NuisanceId::Propensity(2), NuisanceId::DensityRatio(2)].into_iter().collect();
        assert_eq!(s.targets, expected);
    }

    #[test]
    fn misspec_type_labels_parse() {
        for t in MisspecType::ALL {
            assert_eq!(MisspecType::parse(t.label()), Some(t));
        }
        assert_eq!(MisspecType::parse("(iv)"), Some(MisspecType::IV));
    }
}
