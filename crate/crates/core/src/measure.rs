//! Causal measures `m(psi0, psi1)` and their baseline/modification split.
//!
//! Every supported measure is written as `m(z, z') = g_z(z')` with `g_z`
//! injective, so the treated mean is recovered from the control mean and the
//! effect function through `g_z^{-1}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible `|psi0|` for the risk ratio.
pub const RR_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CausalMeasure {
    RiskRatio,
    RiskDifference,
}

impl CausalMeasure {
    pub fn name(self) -> &'static str {
        match self {
            CausalMeasure::RiskRatio => "rr",
            CausalMeasure::RiskDifference => "rd",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rr" | "risk_ratio" => Some(CausalMeasure::RiskRatio),
            "rd" | "risk_difference" => Some(CausalMeasure::RiskDifference),
            _ => None,
        }
    }

    fn check_base(self, z: f64) -> Result<()> {
        if !z.is_finite() {
            return Err(Error::DomainViolation(format!("non-finite base value {z}")));
        }
        if self == CausalMeasure::RiskRatio && z.abs() < RR_FLOOR {
            return Err(Error::DomainViolation(format!(
                "risk ratio base {z} is below the floor {RR_FLOOR}"
            )));
        }
        Ok(())
    }

    /// `m(psi0, psi1)`.
    pub fn apply(self, psi0: f64, psi1: f64) -> Result<f64> {
        self.check_base(psi0)?;
        Ok(match self {
            CausalMeasure::RiskRatio => psi1 / psi0,
            CausalMeasure::RiskDifference => psi1 - psi0,
        })
    }

    /// `g_{mu0}(mu1)`, the conditional effect implied by a pair of means.
    pub fn g(self, mu0: f64, mu1: f64) -> Result<f64> {
        self.apply(mu0, mu1)
    }

    /// `g_{mu0}^{-1}(tau)`, the treated mean implied by a baseline and an effect.
    pub fn g_inverse(self, mu0: f64, tau: f64) -> Result<f64> {
        self.check_base(mu0)?;
        Ok(match self {
            CausalMeasure::RiskRatio => tau * mu0,
            CausalMeasure::RiskDifference => tau + mu0,
        })
    }

    /// Unchecked `g^{-1}`; the caller guarantees the base is admissible.
    #[inline]
    pub(crate) fn g_inverse_raw(self, mu0: f64, tau: f64) -> f64 {
        match self {
            CausalMeasure::RiskRatio => tau * mu0,
            CausalMeasure::RiskDifference => tau + mu0,
        }
    }

    /// Partial derivatives of `m` at `(psi0, psi1)`.
    pub fn gradient(self, psi0: f64, psi1: f64) -> Result<(f64, f64)> {
        self.check_base(psi0)?;
        Ok(match self {
            CausalMeasure::RiskRatio => (-psi1 / (psi0 * psi0), 1.0 / psi0),
            CausalMeasure::RiskDifference => (-1.0, 1.0),
        })
    }

    /// Influence value of `m(psi0, psi1)` from the influence values of its
    /// two arguments (delta method).
    pub fn eif_combine(self, psi0: f64, psi1: f64, phi0: f64, phi1: f64) -> Result<f64> {
        let (d0, d1) = self.gradient(psi0, psi1)?;
        Ok(d1 * phi1 + d0 * phi0)
    }
}

impl std::fmt::Display for CausalMeasure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const RR: CausalMeasure = CausalMeasure::RiskRatio;
    const RD: CausalMeasure = CausalMeasure::RiskDifference;

    #[test]
    fn apply_examples() {
        assert_eq!(RR.apply(2.0, 5.0).unwrap(), 2.5);
        assert_eq!(RD.apply(2.0, 5.0).unwrap(), 3.0);
        assert!(matches!(RR.apply(0.0, 5.0), Err(Error::DomainViolation(_))));
        assert!(matches!(RR.apply(1e-12, 5.0), Err(Error::DomainViolation(_))));
        assert_eq!(RD.apply(0.0, 5.0).unwrap(), 5.0);
    }

    #[test]
    fn g_inverse_examples() {
        assert_eq!(RR.g_inverse(2.0, 2.5).unwrap(), 5.0);
        assert_eq!(RD.g_inverse(2.0, 3.0).unwrap(), 5.0);
        assert_eq!(RR.g_inverse(1.0, 0.731).unwrap(), 0.731);
        assert!(RR.g_inverse(0.0, 1.0).is_err());
    }

    #[test]
    fn eif_combine_examples() {
        assert!((RR.eif_combine(2.0, 5.0, 0.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(RD.eif_combine(3.0, 7.0, 1.0, 1.0).unwrap(), 0.0);
        assert_eq!(RR.eif_combine(1.0, 1.0, 0.3, 0.3).unwrap(), 0.0);
        assert!(RR.eif_combine(0.0, 1.0, 0.3, 0.3).is_err());
    }

    // Central finite difference of m along the path (psi0 + t*phi0, psi1 + t*phi1).
    fn fd_path_derivative(m: CausalMeasure, psi0: f64, psi1: f64, phi0: f64, phi1: f64) -> f64 {
        let h = 1e-5;
        let up = m.apply(psi0 + h * phi0, psi1 + h * phi1).unwrap();
        let dn = m.apply(psi0 - h * phi0, psi1 - h * phi1).unwrap();
        (up - dn) / (2.0 * h)
    }

    #[test]
    fn eif_combine_matches_finite_difference_at_example() {
        let fd = fd_path_derivative(RR, 2.0, 5.0, 0.0, 1.0);
        assert!((fd - 0.5).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn g_inverse_round_trips(psi0 in prop_oneof![-50.0..-0.1f64, 0.1..50.0f64], tau in -20.0..20.0f64) {
            for m in [RR, RD] {
                let mu1 = m.g_inverse(psi0, tau).unwrap();
                let back = m.apply(psi0, mu1).unwrap();
                prop_assert!((back - tau).abs() <= 1e-12 * (1.0 + tau.abs()));
            }
        }

        #[test]
        fn eif_combine_agrees_with_finite_difference(
            psi0 in 0.5..10.0f64, psi1 in -10.0..10.0f64,
            phi0 in -3.0..3.0f64, phi1 in -3.0..3.0f64,
        ) {
            for m in [RR, RD] {
                let analytic = m.eif_combine(psi0, psi1, phi0, phi1).unwrap();
                let fd = fd_path_derivative(m, psi0, psi1, phi0, phi1);
                let scale = analytic.abs().max(1e-3);
                prop_assert!((analytic - fd).abs() / scale < 1e-6, "{analytic} vs {fd}");
            }
        }
    }
}
