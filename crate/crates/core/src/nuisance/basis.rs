//! Feature maps shared by every parametric nuisance model.

use serde::{Deserialize, Serialize};

/// Covariate distortion used to misspecify a model on purpose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureTransform {
    #[default]
    Identity,
    /// Drops the last covariate; with a single covariate the model becomes
    /// intercept-only.
    DropLast,
    /// Elementwise `exp`.
    Exponentiate,
}

impl FeatureTransform {
    pub fn apply(self, x: &[f64]) -> Vec<f64> {
        match self {
            FeatureTransform::Identity => x.to_vec(),
            FeatureTransform::DropLast => x[..x.len().saturating_sub(1)].to_vec(),
            FeatureTransform::Exponentiate => x.iter().map(|v| v.exp()).collect(),
        }
    }

    pub fn output_dim(self, p: usize) -> usize {
        match self {
            FeatureTransform::DropLast => p.saturating_sub(1),
            _ => p,
        }
    }
}

/// Polynomial basis `[1, t, t^2]` (squares only, no interactions) over the
/// transformed covariates `t = T(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Basis {
    pub degree: u8,
    #[serde(default)]
    pub transform: FeatureTransform,
}

impl Default for Basis {
    fn default() -> Self {
        Self::linear()
    }
}

impl Basis {
    pub const fn new(degree: u8) -> Self {
        Self { degree, transform: FeatureTransform::Identity }
    }

    pub const fn linear() -> Self {
        Self::new(1)
    }

    pub const fn quadratic() -> Self {
        Self::new(2)
    }

    pub fn with_transform(self, transform: FeatureTransform) -> Self {
        Self { transform, ..self }
    }

    /// Number of columns including the intercept.
    pub fn dim(&self, p: usize) -> usize {
        1 + self.transform.output_dim(p) * self.degree as usize
    }

    pub fn features_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.push(1.0);
        let t = self.transform.apply(x);
        for power in 1..=self.degree as i32 {
            out.extend(t.iter().map(|v| v.powi(power)));
        }
    }

    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim(x.len()));
        self.features_into(x, &mut out);
        out
    }

    /// `coef . features(x)` without allocating.
    pub fn linear_predictor(&self, coef: &[f64], x: &[f64]) -> f64 {
        let mut eta = coef[0];
        let mut j = 1;
        for power in 1..=self.degree as i32 {
            match self.transform {
                FeatureTransform::Identity => {
                    for v in x {
                        eta += coef[j] * v.powi(power);
                        j += 1;
                    }
                }
                FeatureTransform::DropLast => {
                    for v in &x[..x.len().saturating_sub(1)] {
                        eta += coef[j] * v.powi(power);
                        j += 1;
                    }
                }
                FeatureTransform::Exponentiate => {
                    for v in x {
                        eta += coef[j] * v.exp().powi(power);
                        j += 1;
                    }
                }
            }
        }
        eta
    }
}
