//! Per-row augmentation terms and the estimating-equation contributions built
//! from them. Everything here is evaluated where the row lives.

use super::weights::{c1_weights, c2_weights_arm};
use crate::data::Individual;
use crate::error::{Error, Result};
use crate::measure::RR_FLOOR;
use crate::nuisance::NuisanceBundle;
use crate::report::Method;

fn get<'a, T>(map: &'a std::collections::BTreeMap<usize, T>, k: usize) -> Result<&'a T> {
    map.get(&k).ok_or(Error::UnknownSite(k))
}

fn site_position(sites: &[usize], s: usize) -> Option<usize> {
    sites.iter().position(|&k| k == s)
}

/// Augmentation terms `H_1^{(k)}(v)` of the shared-effect-function estimator,
/// one per participating site (risk ratio form for sources).
pub fn h1_terms(v: &Individual, bundle: &NuisanceBundle, sites: &[usize]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; sites.len()];
    let in_target = v.s == 0;
    let own = site_position(sites, v.s);
    if !in_target && own.is_none() {
        return Ok(out);
    }
    let x = v.x.as_slice();
    let mu00 = get(&bundle.mu0, 0)?.predict(x);
    let tau = bundle.tau.predict(x);
    let mu10 = bundle.tau.treated_mean(mu00, x);
    if in_target {
        let pi0 = get(&bundle.propensity, 0)?.predict(x);
        if v.treated() {
            out[0] = (v.y - mu10) / pi0;
        } else if sites.len() > 1 {
            // mu1k / mu0k = tau under a shared effect function.
            let t = (v.y - mu00) * tau / (1.0 - pi0);
            for o in out.iter_mut().skip(1) {
                *o = t;
            }
        }
        return Ok(out);
    }
    let j = own.expect("checked above");
    let k = v.s;
    let pik = get(&bundle.propensity, k)?.predict(x);
    let mu0k = get(&bundle.mu0, k)?.predict(x);
    if mu0k.abs() < RR_FLOOR {
        return Err(Error::DomainViolation(format!("site {k} control mean {mu0k}")));
    }
    let q = get(&bundle.density_ratio, k)?.predict(x);
    out[j] = if v.treated() {
        let mu1k = tau * mu0k;
        q / pik * (v.y - mu1k) * mu00 / mu0k
    } else {
        -q / (1.0 - pik) * (v.y - mu0k) * mu10 / mu0k
    };
    Ok(out)
}

/// Augmentation terms `H_2^{(k)}(v)` of the shared-outcome-mean estimator for
/// arm `a` (`a = 1` gives the treated-mean terms).
pub fn h2_terms_arm(v: &Individual, bundle: &NuisanceBundle, sites: &[usize], arm: u8) -> Result<Vec<f64>> {
    let mut out = vec![0.0; sites.len()];
    let Some(j) = site_position(sites, v.s) else {
        return Ok(out);
    };
    if v.a != arm {
        return Ok(out);
    }
    let x = v.x.as_slice();
    let pooled = if arm == 1 { &bundle.pooled_mu1 } else { &bundle.pooled_mu0 };
    let mu = pooled
        .as_ref()
        .ok_or_else(|| Error::UnknownTarget(format!("pooled outcome model for arm {arm}")))?
        .predict(x);
    let pi = get(&bundle.propensity, v.s)?.predict(x);
    let arm_prob = if arm == 1 { pi } else { 1.0 - pi };
    let q = if v.s == 0 { 1.0 } else { get(&bundle.density_ratio, v.s)?.predict(x) };
    out[j] = q * (v.y - mu) / arm_prob;
    Ok(out)
}

pub fn h2_terms(v: &Individual, bundle: &NuisanceBundle, sites: &[usize]) -> Result<Vec<f64>> {
    h2_terms_arm(v, bundle, sites, 1)
}

/// Uncentred estimating-equation contributions of one row: the closed-form
/// estimators are `sum t1 / n0` and `sum t0 / n0`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RowTerms {
    pub t1: f64,
    pub t0: f64,
    pub fallback: bool,
}

impl RowTerms {
    /// Centred contributions `u = t - I(S=0) psi`.
    pub fn centred(&self, in_target: bool, psi0: f64, psi1: f64) -> (f64, f64) {
        if in_target {
            (self.t0 - psi0, self.t1 - psi1)
        } else {
            (self.t0, self.t1)
        }
    }
}

/// Evaluates row contributions for one estimator over a fixed site set.
#[derive(Debug, Clone, Copy)]
pub struct RowEvaluator<'a> {
    pub bundle: &'a NuisanceBundle,
    pub method: Method,
    pub sites: &'a [usize],
}

impl<'a> RowEvaluator<'a> {
    pub fn new(bundle: &'a NuisanceBundle, method: Method, sites: &'a [usize]) -> Result<Self> {
        match method {
            Method::Mr1 | Method::Mr2 | Method::DrT => {}
            other => {
                return Err(Error::Config(format!("{other} has no single-model row evaluator")));
            }
        }
        if sites.first() != Some(&0) {
            return Err(Error::MissingTargetSite);
        }
        Ok(Self { bundle, method, sites })
    }

    pub fn terms(&self, v: &Individual) -> Result<RowTerms> {
        match self.method {
            Method::Mr2 => self.terms_mr2(v),
            _ => self.terms_mr1(v),
        }
    }

    /// Target-only augmented estimator of the control mean.
    fn target_control(&self, v: &Individual) -> Result<f64> {
        if v.s != 0 {
            return Ok(0.0);
        }
        let x = v.x.as_slice();
        let mu00 = get(&self.bundle.mu0, 0)?.predict(x);
        let pi0 = get(&self.bundle.propensity, 0)?.predict(x);
        Ok(if v.treated() { mu00 } else { mu00 + (v.y - mu00) / (1.0 - pi0) })
    }

    fn terms_mr1(&self, v: &Individual) -> Result<RowTerms> {
        let t0 = self.target_control(v)?;
        if v.s != 0 && !self.sites.contains(&v.s) {
            return Ok(RowTerms { t1: 0.0, t0, fallback: false });
        }
        let x = v.x.as_slice();
        let (weights, fallback) = match c1_weights(x, self.bundle, self.sites) {
            Ok(w) => (w, false),
            Err(Error::NonFiniteWeight(_) | Error::DomainViolation(_)) => {
                let mut w = vec![0.0; self.sites.len()];
                w[0] = 1.0;
                (w, true)
            }
            Err(e) => return Err(e),
        };
        let mut t1 = 0.0;
        if v.s == 0 {
            let mu00 = get(&self.bundle.mu0, 0)?.predict(x);
            t1 += self.bundle.tau.treated_mean(mu00, x);
        }
        let own = site_position(self.sites, v.s);
        // A fallen-back row carries no source weight, so its source terms are
        // never evaluated (they may be undefined at that x).
        if v.s != 0 && weights[own.expect("participating")] == 0.0 {
            return Ok(RowTerms { t1, t0, fallback });
        }
        let h = if fallback {
            let mut h = vec![0.0; self.sites.len()];
            if v.s == 0 && v.treated() {
                let mu00 = get(&self.bundle.mu0, 0)?.predict(x);
                let pi0 = get(&self.bundle.propensity, 0)?.predict(x);
                h[0] = (v.y - self.bundle.tau.treated_mean(mu00, x)) / pi0;
            }
            h
        } else {
            h1_terms(v, self.bundle, self.sites)?
        };
        t1 += weights.iter().zip(&h).map(|(w, h)| w * h).sum::<f64>();
        Ok(RowTerms { t1, t0, fallback })
    }

    fn terms_mr2(&self, v: &Individual) -> Result<RowTerms> {
        let mut out = RowTerms::default();
        let Some(j) = site_position(self.sites, v.s) else {
            return Ok(out);
        };
        let x = v.x.as_slice();
        if v.s == 0 {
            out.t1 += self.bundle.pooled_mu1.as_ref().ok_or(Error::UnknownTarget("mu1_pooled".into()))?.predict(x);
            out.t0 += self.bundle.pooled_mu0.as_ref().ok_or(Error::UnknownTarget("mu0_pooled".into()))?.predict(x);
        }
        let arm = v.a;
        let weights = match c2_weights_arm(x, self.bundle, self.sites, arm) {
            Ok(w) => w,
            Err(Error::NonFiniteWeight(_)) => {
                out.fallback = true;
                let mut w = vec![0.0; self.sites.len()];
                w[0] = 1.0;
                w
            }
            Err(e) => return Err(e),
        };
        if weights[j] != 0.0 {
            let h = h2_terms_arm(v, self.bundle, self.sites, arm)?;
            let contribution = weights[j] * h[j];
            if arm == 1 {
                out.t1 += contribution;
            } else {
                out.t0 += contribution;
            }
        }
        Ok(out)
    }
}
