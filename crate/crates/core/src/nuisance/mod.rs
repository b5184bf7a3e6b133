//! Nuisance functions: propensities, outcome regressions, density ratios, the
//! shared effect function and conditional variances.

pub mod basis;
pub mod bundle;
pub mod fit;
pub mod glm;
pub mod models;

pub use basis::{Basis, FeatureTransform};
pub use bundle::{MisspecSpec, MisspecType, NuisanceBundle, NuisanceConfig, NuisanceId};
pub use fit::{
    apply_misspec, fit_bundle, fit_cond_variance, fit_density_ratio, fit_outcome_models, fit_propensity, fit_tau,
};
pub use glm::{fit_linear, fit_logistic, Family, GlmModel, SolverOptions};
pub use models::{DensityRatioModel, TauModel, TauStrategy, VarianceMode, VarianceModel};
