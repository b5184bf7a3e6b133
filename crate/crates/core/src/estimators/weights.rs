//! Covariate-dependent site weights `R_k(x)` that minimize the conditional
//! variance of the combined augmentation terms.

use crate::error::{Error, Result};
use crate::measure::{CausalMeasure, RR_FLOOR};
use crate::nuisance::NuisanceBundle;

/// Site membership probabilities `pr(S=k | x)` over the participating sites,
/// reconstructed from the pairwise density ratios.
pub fn site_probabilities(x: &[f64], bundle: &NuisanceBundle, sites: &[usize]) -> Result<Vec<f64>> {
    let mut inv = Vec::with_capacity(sites.len());
    for &k in sites {
        if k == 0 {
            inv.push(1.0);
        } else {
            let q = bundle
                .density_ratio
                .get(&k)
                .ok_or(Error::UnknownSite(k))?
                .predict(x);
            inv.push(1.0 / q);
        }
    }
    let total: f64 = inv.iter().sum();
    let p0 = 1.0 / total;
    Ok(inv.iter().map(|v| p0 * v).collect())
}

fn normalize(ratios: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    // ratios[0] is unused (the target's own ratio is 1).
    if ratios[1..].iter().any(|r| !r.is_finite() || *r <= 0.0) {
        return Err(Error::NonFiniteWeight(x.to_vec()));
    }
    let r0 = 1.0 / (1.0 + ratios[1..].iter().map(|r| 1.0 / r).sum::<f64>());
    let mut w = Vec::with_capacity(ratios.len());
    w.push(r0);
    w.extend(ratios[1..].iter().map(|r| r0 / r));
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteWeight(x.to_vec()));
    }
    Ok(w)
}

fn model<'a, T>(map: &'a std::collections::BTreeMap<usize, T>, k: usize) -> Result<&'a T> {
    map.get(&k).ok_or(Error::UnknownSite(k))
}

fn check_sites(sites: &[usize]) -> Result<()> {
    if sites.first() != Some(&0) {
        return Err(Error::MissingTargetSite);
    }
    Ok(())
}

/// Weights for the shared-effect-function estimator (risk ratio only).
///
/// With `A_k = s1k/pi_k + s0k tau^2/(1-pi_k)` and
/// `g_k = A_k / (pr(S=k|x) mu0k^2)`, the ratio of the target weight to the
/// weight of source `k` is
/// `q_k pi_0/s10 (mu00/mu0k)^2 A_k + pi_0 s00 tau^2/((1-pi_0) s10) sum_l g_k/g_l`.
pub fn c1_weights(x: &[f64], bundle: &NuisanceBundle, sites: &[usize]) -> Result<Vec<f64>> {
    check_sites(sites)?;
    if sites.len() == 1 {
        return Ok(vec![1.0]);
    }
    if bundle.measure != CausalMeasure::RiskRatio {
        return Err(Error::UnsupportedMeasureForMode {
            measure: bundle.measure.to_string(),
            method: "MR1 site weights".into(),
        });
    }
    let probs = site_probabilities(x, bundle, sites)?;
    let pi0 = model(&bundle.propensity, 0)?.predict(x);
    let s10 = model(&bundle.var1, 0)?.predict(x);
    let s00 = model(&bundle.var0, 0)?.predict(x);
    let mu00 = model(&bundle.mu0, 0)?.predict(x);
    let tau = bundle.tau.predict(x);
    if mu00.abs() < RR_FLOOR {
        return Err(Error::DomainViolation(format!("target control mean {mu00} at x = {x:?}")));
    }

    let m = sites.len();
    let mut a = vec![0.0; m];
    let mut g = vec![0.0; m];
    let mut q = vec![0.0; m];
    let mut mu0 = vec![0.0; m];
    for (j, &k) in sites.iter().enumerate().skip(1) {
        let pik = model(&bundle.propensity, k)?.predict(x);
        let s1k = model(&bundle.var1, k)?.predict(x);
        let s0k = model(&bundle.var0, k)?.predict(x);
        let mu0k = model(&bundle.mu0, k)?.predict(x);
        if mu0k.abs() < RR_FLOOR {
            return Err(Error::DomainViolation(format!("site {k} control mean {mu0k} at x = {x:?}")));
        }
        a[j] = s1k / pik + s0k * tau * tau / (1.0 - pik);
        g[j] = a[j] / (probs[j] * mu0k * mu0k);
        q[j] = model(&bundle.density_ratio, k)?.predict(x);
        mu0[j] = mu0k;
    }
    let inv_g_sum: f64 = g[1..].iter().map(|v| 1.0 / v).sum();
    let common = pi0 * s00 * tau * tau / ((1.0 - pi0) * s10);
    let mut ratios = vec![1.0; m];
    for j in 1..m {
        let scale = mu00 / mu0[j];
        ratios[j] = q[j] * pi0 / s10 * scale * scale * a[j] + common * g[j] * inv_g_sum;
    }
    normalize(&ratios, x)
}

/// Weights for the shared-outcome-mean estimator of the treated mean:
/// target-to-source ratio `q_k pi_0 s1k / (pi_k s10)`.
pub fn c2_weights(x: &[f64], bundle: &NuisanceBundle, sites: &[usize]) -> Result<Vec<f64>> {
    c2_weights_arm(x, bundle, sites, 1)
}

/// Arm-generic form: `arm = 0` mirrors the treated formula with control
/// variances and `1 - pi`.
pub fn c2_weights_arm(x: &[f64], bundle: &NuisanceBundle, sites: &[usize], arm: u8) -> Result<Vec<f64>> {
    check_sites(sites)?;
    if sites.len() == 1 {
        return Ok(vec![1.0]);
    }
    let arm_prob = |p: f64| if arm == 1 { p } else { 1.0 - p };
    let vars = if arm == 1 { &bundle.var1 } else { &bundle.var0 };
    let pi0 = arm_prob(model(&bundle.propensity, 0)?.predict(x));
    let s0 = model(vars, 0)?.predict(x);
    let mut ratios = vec![1.0; sites.len()];
    for (j, &k) in sites.iter().enumerate().skip(1) {
        let pik = arm_prob(model(&bundle.propensity, k)?.predict(x));
        let sk = model(vars, k)?.predict(x);
        let q = model(&bundle.density_ratio, k)?.predict(x);
        ratios[j] = q * pi0 * sk / (pik * s0);
    }
    normalize(&ratios, x)
}
