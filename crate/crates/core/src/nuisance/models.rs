//! Nuisance model types and the purely local (single-site) fits.

use serde::{Deserialize, Serialize};

use super::basis::Basis;
use super::glm::{fit_linear_basis, fit_logistic_basis, Family, GlmModel, SolverOptions};
use crate::data::SiteDataset;
use crate::error::{Error, Result};
use crate::measure::CausalMeasure;

/// Density ratio `q(x) = pr(S=0 | x) / pr(S=k | x)` from a pairwise
/// membership model (label 1 = target).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRatioModel {
    pub k: usize,
    pub logit_model: GlmModel,
    /// Added to the logit before exponentiating. Zero when site sizes are
    /// multinomial draws, because the pooled odds already estimate `q`.
    #[serde(default)]
    pub prior_correction: f64,
    pub clip: (f64, f64),
}

impl DensityRatioModel {
    #[inline]
    pub fn predict(&self, x: &[f64]) -> f64 {
        (self.logit_model.linear_predictor(x) + self.prior_correction)
            .exp()
            .clamp(self.clip.0, self.clip.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TauStrategy {
    /// RR: regress treated outcomes on `mu0_k(x) * basis(x)`; RD: regress
    /// treated `y - mu0_k(x)` on `basis(x)`.
    #[default]
    ProductRegression,
    /// Regress `g_{mu0_k(x)}(mu1_k(x))` on `basis(x)` over all rows.
    PseudoResponse,
}

/// The effect function `tau(x)` shared by the sites it was fitted on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauModel {
    pub measure: CausalMeasure,
    pub strategy: TauStrategy,
    pub model: GlmModel,
    /// Sites whose rows the effect function was fitted on.
    #[serde(default)]
    pub sites: Vec<usize>,
}

impl TauModel {
    /// Constant effect `tau = 1` (RR) or `0` (RD); replaced by every fit.
    pub fn placeholder(measure: CausalMeasure) -> Self {
        let c = match measure {
            CausalMeasure::RiskRatio => 1.0,
            CausalMeasure::RiskDifference => 0.0,
        };
        Self {
            measure,
            strategy: TauStrategy::default(),
            model: GlmModel::new(Family::Linear, vec![c], Basis::new(0)),
            sites: vec![0],
        }
    }

    #[inline]
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.model.linear_predictor(x)
    }

    /// `mu1(x) = g^{-1}_{mu0(x)}(tau(x))`.
    #[inline]
    pub fn treated_mean(&self, mu0: f64, x: &[f64]) -> f64 {
        self.measure.g_inverse_raw(mu0, self.predict(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    /// Mean squared residual of the arm's outcome fit.
    #[default]
    Constant,
    /// Linear regression of squared residuals on the covariates.
    Regression,
    /// A known value (oracle experiments).
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum VarianceModel {
    Constant { value: f64, floor: f64 },
    Regression { model: GlmModel, floor: f64 },
}

impl VarianceModel {
    pub fn constant(value: f64, floor: f64) -> Self {
        VarianceModel::Constant { value, floor }
    }

    #[inline]
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            VarianceModel::Constant { value, floor } => value.max(*floor),
            VarianceModel::Regression { model, floor } => model.predict(x).max(*floor),
        }
    }
}

/// What a site fits on its own rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalFitSpec {
    pub propensity: Basis,
    pub mu0: Basis,
    pub mu1: Basis,
    pub propensity_clip: f64,
    pub variance_mode: VarianceMode,
    pub variance_floor: f64,
    pub solver: SolverOptions,
}

/// Models fitted by one site on its own rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalModels {
    pub site: usize,
    pub propensity: GlmModel,
    pub mu0: GlmModel,
    pub mu1: GlmModel,
    pub var0: VarianceModel,
    pub var1: VarianceModel,
}

fn check_arms(site: &SiteDataset) -> Result<()> {
    let (c, t) = site.arm_counts();
    if c == 0 {
        return Err(Error::EmptyTreatmentArm { site: site.site_id(), arm: 0 });
    }
    if t == 0 {
        return Err(Error::EmptyTreatmentArm { site: site.site_id(), arm: 1 });
    }
    Ok(())
}

/// Logistic model of `A` on `X` within one site, clipped to `[eta, 1-eta]`.
pub fn fit_site_propensity(
    site: &SiteDataset,
    basis: Basis,
    clip: f64,
    solver: &SolverOptions,
) -> Result<GlmModel> {
    check_arms(site)?;
    let labels: Vec<u8> = site.rows().iter().map(|r| r.a).collect();
    let model = fit_logistic_basis(site.rows().iter().map(|r| r.x.as_slice()), &labels, basis, solver)?;
    Ok(model.with_clip(clip, 1.0 - clip))
}

/// Linear regression of `Y` on `X` within `(site, arm)`.
pub fn fit_site_outcome(site: &SiteDataset, arm: u8, basis: Basis) -> Result<GlmModel> {
    let rows: Vec<_> = site.arm(arm).collect();
    if rows.is_empty() {
        return Err(Error::EmptyTreatmentArm { site: site.site_id(), arm });
    }
    let y: Vec<f64> = rows.iter().map(|r| r.y).collect();
    fit_linear_basis(rows.iter().map(|r| r.x.as_slice()), &y, basis)
}

/// Conditional variance of `Y` in `(site, arm)` around `outcome`.
pub fn fit_site_variance(
    site: &SiteDataset,
    arm: u8,
    outcome: &GlmModel,
    mode: VarianceMode,
    floor: f64,
) -> Result<VarianceModel> {
    let rows: Vec<_> = site.arm(arm).collect();
    if rows.is_empty() {
        return Err(Error::EmptyTreatmentArm { site: site.site_id(), arm });
    }
    match mode {
        VarianceMode::Fixed(v) => Ok(VarianceModel::constant(v, floor)),
        VarianceMode::Constant => {
            let ss: f64 = rows.iter().map(|r| (r.y - outcome.predict(&r.x)).powi(2)).sum();
            Ok(VarianceModel::constant((ss / rows.len() as f64).max(floor), floor))
        }
        VarianceMode::Regression => {
            let r2: Vec<f64> = rows.iter().map(|r| (r.y - outcome.predict(&r.x)).powi(2)).collect();
            let mut model = fit_linear_basis(rows.iter().map(|r| r.x.as_slice()), &r2, Basis::linear())?;
            model.family = Family::Linear;
            Ok(VarianceModel::Regression { model, floor })
        }
    }
}

pub fn fit_local(site: &SiteDataset, spec: &LocalFitSpec) -> Result<LocalModels> {
    let propensity = fit_site_propensity(site, spec.propensity, spec.propensity_clip, &spec.solver)?;
    let mu0 = fit_site_outcome(site, 0, spec.mu0)?;
    let mu1 = fit_site_outcome(site, 1, spec.mu1)?;
    let var0 = fit_site_variance(site, 0, &mu0, spec.variance_mode, spec.variance_floor)?;
    let var1 = fit_site_variance(site, 1, &mu1, spec.variance_mode, spec.variance_floor)?;
    Ok(LocalModels { site: site.site_id(), propensity, mu0, mu1, var0, var1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Individual;
    use crate::nuisance::basis::FeatureTransform;

    fn site_from(points: &[(f64, f64, u8)]) -> SiteDataset {
        let rows = points
            .iter()
            .map(|&(y, x, a)| Individual::new(y, vec![x], a, 0).unwrap())
            .collect();
        SiteDataset::new(0, rows).unwrap()
    }

    #[test]
    fn propensity_predictions_are_clipped() {
        let pts: Vec<(f64, f64, u8)> =
            (0..40).map(|i| (0.0, i as f64 / 4.0 - 5.0, ((i * 7) % 3 == 0) as u8)).collect();
        let site = site_from(&pts);
        let m = fit_site_propensity(&site, Basis::linear(), 0.01, &SolverOptions::default()).unwrap();
        let mut extreme = m.clone();
        extreme.coef = vec![-50.0, 0.0];
        assert_eq!(extreme.predict(&[0.0]), 0.01);
        extreme.coef = vec![50.0, 0.0];
        assert_eq!(extreme.predict(&[0.0]), 0.99);
        for x in [-100.0, 0.0, 100.0] {
            let p = m.predict(&[x]);
            assert!((0.01..=0.99).contains(&p));
        }
    }

    #[test]
    fn constant_treatment_is_rejected() {
        let site = site_from(&[(1.0, 0.0, 1), (2.0, 1.0, 1)]);
        assert!(matches!(
            fit_site_propensity(&site, Basis::linear(), 0.01, &SolverOptions::default()),
            Err(Error::EmptyTreatmentArm { site: 0, arm: 0 })
        ));
        assert!(matches!(fit_site_outcome(&site, 0, Basis::linear()), Err(Error::EmptyTreatmentArm { .. })));
    }

    #[test]
    fn zero_residuals_hit_the_variance_floor() {
        let site = site_from(&[(1.0, 1.0, 0), (2.0, 2.0, 0), (3.0, 3.0, 0), (0.0, 0.0, 1)]);
        let mu0 = fit_site_outcome(&site, 0, Basis::linear()).unwrap();
        let v = fit_site_variance(&site, 0, &mu0, VarianceMode::Constant, 1e-4).unwrap();
        assert_eq!(v.predict(&[0.5]), 1e-4);
        let v = fit_site_variance(&site, 0, &mu0, VarianceMode::Regression, 1e-4).unwrap();
        assert_eq!(v.predict(&[0.5]), 1e-4);
    }

    #[test]
    fn density_ratio_prediction_is_clipped_odds() {
        let m = DensityRatioModel {
            k: 1,
            logit_model: GlmModel::new(Family::Logistic, vec![0.5, 0.0], Basis::linear()),
            prior_correction: 0.0,
            clip: (1e-3, 1e3),
        };
        assert!((m.predict(&[3.0]) - 0.5f64.exp()).abs() < 1e-15);
        let mut big = m.clone();
        big.logit_model.coef = vec![20.0, 0.0];
        assert_eq!(big.predict(&[0.0]), 1e3);
        let mut mis = m;
        mis.logit_model.basis = Basis::linear().with_transform(FeatureTransform::DropLast);
        mis.logit_model.coef = vec![-20.0];
        assert_eq!(mis.predict(&[0.0]), 1e-3);
    }
}
