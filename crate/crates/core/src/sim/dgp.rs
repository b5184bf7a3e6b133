//! The three-site simulation design: normal covariates per site, logistic
//! treatment assignment, control means `x + b_mu` and effect function
//! `x + b_tau` on the risk-ratio scale.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Normal, WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::data::{Individual, MultiSiteData, SiteDataset};
use crate::error::{Error, Result};
use crate::measure::CausalMeasure;
use crate::nuisance::models::{DensityRatioModel, TauModel, TauStrategy, VarianceModel};
use crate::nuisance::{Basis, Family, GlmModel, NuisanceBundle};
use crate::seeds::rng_for;

/// Normal covariate law of one site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiteLaw {
    pub mean: f64,
    pub var: f64,
}

impl SiteLaw {
    pub const fn new(mean: f64, var: f64) -> Self {
        Self { mean, var }
    }

    fn log_density(&self, x: f64) -> f64 {
        -0.5 * (2.0 * std::f64::consts::PI * self.var).ln() - (x - self.mean).powi(2) / (2.0 * self.var)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SiteSampling {
    /// Each row's site is a categorical draw.
    #[default]
    Multinomial,
    /// Site sizes are `round(n * prob)` with the remainder on the last site.
    FixedQuota,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpParams {
    pub site_probs: Vec<f64>,
    pub laws: Vec<SiteLaw>,
    /// Propensity `1 / (1 + exp(-(intercept + slope_k x)))`.
    pub propensity_intercept: f64,
    pub propensity_slope: Vec<f64>,
    pub b_mu: Vec<f64>,
    pub b_tau: Vec<f64>,
    pub n_total: usize,
    pub noise_sd: f64,
    pub sampling: SiteSampling,
}

impl Default for DgpParams {
    fn default() -> Self {
        Self {
            site_probs: vec![0.1, 0.4, 0.5],
            laws: vec![SiteLaw::new(2.0, 1.0), SiteLaw::new(1.0, 4.0), SiteLaw::new(2.0, 4.0)],
            propensity_intercept: -1.0,
            propensity_slope: vec![0.5, 0.8, 0.3],
            b_mu: vec![0.0; 3],
            b_tau: vec![0.0; 3],
            n_total: 1000,
            noise_sd: 1.0,
            sampling: SiteSampling::Multinomial,
        }
    }
}

impl DgpParams {
    pub fn with_shifts(b_mu: [f64; 3], b_tau: [f64; 3]) -> Self {
        Self { b_mu: b_mu.to_vec(), b_tau: b_tau.to_vec(), ..Self::default() }
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n_total = n;
        self
    }

    pub fn n_sites(&self) -> usize {
        self.site_probs.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.site_probs.len();
        if k == 0 {
            return Err(Error::Config("at least one site is required".into()));
        }
        for (name, len) in [
            ("laws", self.laws.len()),
            ("propensity_slope", self.propensity_slope.len()),
            ("b_mu", self.b_mu.len()),
            ("b_tau", self.b_tau.len()),
        ] {
            if len != k {
                return Err(Error::Config(format!("{name} has {len} entries for {k} sites")));
            }
        }
        if self.site_probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Config("site probabilities must be non-negative".into()));
        }
        let total: f64 = self.site_probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("site probabilities sum to {total}, not 1")));
        }
        if self.laws.iter().any(|l| !(l.var > 0.0 && l.var.is_finite() && l.mean.is_finite())) {
            return Err(Error::Config("covariate variances must be positive".into()));
        }
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config("outcome noise sd must be positive".into()));
        }
        if self.n_total == 0 {
            return Err(Error::Config("n_total must be positive".into()));
        }
        Ok(())
    }

    pub fn propensity(&self, k: usize, x: f64) -> f64 {
        1.0 / (1.0 + (-(self.propensity_intercept + self.propensity_slope[k] * x)).exp())
    }

    pub fn mu0(&self, k: usize, x: f64) -> f64 {
        x + self.b_mu[k]
    }

    pub fn tau(&self, k: usize, x: f64) -> f64 {
        x + self.b_tau[k]
    }

    pub fn mu1(&self, k: usize, x: f64) -> f64 {
        self.mu0(k, x) * self.tau(k, x)
    }

    fn site_sizes(&self, rng: &mut impl Rng) -> Vec<usize> {
        let k = self.n_sites();
        let mut sizes = vec![0; k];
        match self.sampling {
            SiteSampling::Multinomial => {
                let dist = WeightedIndex::new(&self.site_probs).expect("validated probabilities");
                for _ in 0..self.n_total {
                    sizes[dist.sample(rng)] += 1;
                }
            }
            SiteSampling::FixedQuota => {
                let mut used = 0;
                for (j, p) in self.site_probs.iter().enumerate().take(k - 1) {
                    sizes[j] = (self.n_total as f64 * p).round() as usize;
                    used += sizes[j];
                }
                sizes[k - 1] = self.n_total.saturating_sub(used);
            }
        }
        sizes
    }
}

/// Draws one dataset. Site sizes come first, then each site's rows in site
/// order, so the result is a pure function of `(params, seed)`.
pub fn generate(params: &DgpParams, seed: u64) -> Result<MultiSiteData> {
    params.validate()?;
    let mut rng = rng_for(seed, &[0]);
    let sizes = params.site_sizes(&mut rng);
    let noise = Normal::new(0.0, params.noise_sd).expect("validated sd");
    let mut sites = Vec::with_capacity(sizes.len());
    for (k, &n_k) in sizes.iter().enumerate() {
        if n_k == 0 {
            continue;
        }
        let law = params.laws[k];
        let xdist = Normal::new(law.mean, law.var.sqrt()).expect("validated law");
        let mut rows = Vec::with_capacity(n_k);
        for _ in 0..n_k {
            let x = xdist.sample(&mut rng);
            let a = rng.gen_bool(params.propensity(k, x)) as u8;
            let y1 = params.mu1(k, x) + noise.sample(&mut rng);
            let y0 = params.mu0(k, x) + noise.sample(&mut rng);
            let y = if a == 1 { y1 } else { y0 };
            rows.push(Individual::new(y, vec![x], a, k)?);
        }
        sites.push(SiteDataset::new(k, rows)?);
    }
    Ok(MultiSiteData::new(sites))
}

/// Target-site control and treated means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruePsi {
    pub psi0: f64,
    pub psi1: f64,
}

impl TruePsi {
    pub fn psi(&self, measure: CausalMeasure) -> Result<f64> {
        measure.apply(self.psi0, self.psi1)
    }
}

/// Closed-form target means from the normal moments:
/// `psi0 = m + b_mu`, `psi1 = v + m^2 + (b_mu + b_tau) m + b_mu b_tau`.
/// A zero covariate variance is allowed here (point mass).
pub fn true_psi(params: &DgpParams) -> Result<TruePsi> {
    let law = params.laws.first().ok_or(Error::MissingTargetSite)?;
    if !(law.var >= 0.0) {
        return Err(Error::Config("target covariate variance must be non-negative".into()));
    }
    let (m, v) = (law.mean, law.var);
    let (bm, bt) = (params.b_mu[0], params.b_tau[0]);
    Ok(TruePsi { psi0: m + bm, psi1: v + m * m + (bm + bt) * m + bm * bt })
}

/// Nodes and weights of `n`-point Gauss–Hermite quadrature for the standard
/// normal law (Golub–Welsch).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        let b = (i as f64).sqrt();
        j[(i, i - 1)] = b;
        j[(i - 1, i)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Target means by quadrature of the model functions against the target
/// covariate law.
pub fn true_psi_numeric(params: &DgpParams, nodes: usize) -> Result<TruePsi> {
    let law = params.laws.first().ok_or(Error::MissingTargetSite)?;
    if !(law.var >= 0.0) {
        return Err(Error::UnsupportedDgpForm("target covariate law needs a non-negative variance".into()));
    }
    let (z, w) = gauss_hermite(nodes.max(1));
    let sd = law.var.sqrt();
    let (mut psi0, mut psi1) = (0.0, 0.0);
    for (z, w) in z.iter().zip(&w) {
        let x = law.mean + sd * z;
        psi0 += w * params.mu0(0, x);
        psi1 += w * params.mu1(0, x);
    }
    Ok(TruePsi { psi0, psi1 })
}

/// The true nuisance functions as a bundle, with the target's effect
/// function as the shared one and the target's outcome means as the pooled
/// ones (correct when the outcome means are transportable).
pub fn oracle_bundle(params: &DgpParams, sites: &[usize]) -> Result<NuisanceBundle> {
    params.validate()?;
    if sites.first() != Some(&0) {
        return Err(Error::MissingTargetSite);
    }
    if let Some(&k) = sites.iter().find(|&&k| k >= params.n_sites()) {
        return Err(Error::UnknownSite(k));
    }
    let lin = Basis::linear();
    let quad = Basis::quadratic();
    let sigma2 = params.noise_sd * params.noise_sd;
    let mut propensity = BTreeMap::new();
    let mut mu0 = BTreeMap::new();
    let mut mu1 = BTreeMap::new();
    let mut var0 = BTreeMap::new();
    let mut var1 = BTreeMap::new();
    let mut density_ratio = BTreeMap::new();
    let outcome = |k: usize| {
        let (bm, bt) = (params.b_mu[k], params.b_tau[k]);
        (
            GlmModel::new(Family::Linear, vec![bm, 1.0], lin),
            GlmModel::new(Family::Linear, vec![bm * bt, bm + bt, 1.0], quad),
        )
    };
    for &k in sites {
        propensity.insert(
            k,
            GlmModel::new(Family::Logistic, vec![params.propensity_intercept, params.propensity_slope[k]], lin),
        );
        let (m0, m1) = outcome(k);
        mu0.insert(k, m0);
        mu1.insert(k, m1);
        var0.insert(k, VarianceModel::constant(sigma2, 0.0));
        var1.insert(k, VarianceModel::constant(sigma2, 0.0));
        if k != 0 {
            // log q = log(p0/pk) + log f0(x) - log fk(x), a quadratic in x.
            let (l0, lk) = (params.laws[0], params.laws[k]);
            let c0 = (params.site_probs[0] / params.site_probs[k]).ln() + l0.log_density(0.0) - lk.log_density(0.0);
            let c1 = l0.mean / l0.var - lk.mean / lk.var;
            let c2 = -0.5 / l0.var + 0.5 / lk.var;
            density_ratio.insert(
                k,
                DensityRatioModel {
                    k,
                    logit_model: GlmModel::new(Family::Logistic, vec![c0, c1, c2], quad),
                    prior_correction: 0.0,
                    clip: (0.0, f64::MAX),
                },
            );
        }
    }
    let (pooled_mu0, pooled_mu1) = outcome(0);
    Ok(NuisanceBundle {
        measure: CausalMeasure::RiskRatio,
        sites: sites.to_vec(),
        propensity,
        mu0,
        mu1,
        tau: TauModel {
            measure: CausalMeasure::RiskRatio,
            strategy: TauStrategy::ProductRegression,
            model: GlmModel::new(Family::Linear, vec![params.b_tau[0], 1.0], lin),
            sites: sites.to_vec(),
        },
        density_ratio,
        var0,
        var1,
        pooled_mu0: Some(pooled_mu0),
        pooled_mu1: Some(pooled_mu1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_truth_is_five_halves() {
        let t = true_psi(&DgpParams::default()).unwrap();
        assert_eq!(t.psi(CausalMeasure::RiskRatio).unwrap(), 2.5);
        assert_eq!(t.psi(CausalMeasure::RiskDifference).unwrap(), 3.0);
    }

    #[test]
    fn point_mass_target() {
        let mut p = DgpParams::default();
        p.laws[0] = SiteLaw::new(1.0, 0.0);
        assert_eq!(true_psi(&p).unwrap().psi(CausalMeasure::RiskRatio).unwrap(), 1.0);
        assert!((true_psi_numeric(&p, 20).unwrap().psi(CausalMeasure::RiskRatio).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quadrature_matches_closed_form_with_shifts() {
        let p = DgpParams::with_shifts([1.5, -10.0, 15.0], [0.7, 0.0, 5.0]);
        let a = true_psi(&p).unwrap();
        let b = true_psi_numeric(&p, 30).unwrap();
        assert!((a.psi0 - b.psi0).abs() < 1e-8);
        assert!((a.psi1 - b.psi1).abs() < 1e-8);
    }

    #[test]
    fn hermite_weights_integrate_moments() {
        let (z, w) = gauss_hermite(12);
        let m = |k: i32| z.iter().zip(&w).map(|(z, w)| w * z.powi(k)).sum::<f64>();
        assert!((m(0) - 1.0).abs() < 1e-13);
        assert!(m(1).abs() < 1e-13);
        assert!((m(2) - 1.0).abs() < 1e-12);
        assert!((m(4) - 3.0).abs() < 1e-11);
    }

    #[test]
    fn generation_is_deterministic_and_labelled() {
        let p = DgpParams::default().with_n(500);
        let a = generate(&p, 11).unwrap();
        let b = generate(&p, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate(&p, 12).unwrap());
        assert_eq!(a.n(), 500);
        for s in a.sites() {
            assert!(s.rows().iter().all(|r| r.s == s.site_id() && r.x.len() == 1));
        }
    }

    #[test]
    fn fixed_quota_sizes() {
        let p = DgpParams { sampling: SiteSampling::FixedQuota, ..DgpParams::default() }.with_n(1001);
        let d = generate(&p, 1).unwrap();
        let sizes: Vec<usize> = d.sites().map(|s| s.n()).collect();
        assert_eq!(sizes, vec![100, 400, 501]);
    }

    #[test]
    fn invalid_params_are_config_errors() {
        let mut p = DgpParams::default();
        p.site_probs = vec![0.5, 0.4, 0.5];
        assert!(matches!(generate(&p, 0), Err(Error::Config(_))));
        let mut p = DgpParams::default();
        p.laws[1].var = 0.0;
        assert!(matches!(generate(&p, 0), Err(Error::Config(_))));
    }

    #[test]
    fn oracle_density_ratio_matches_membership_odds() {
        let p = DgpParams::default();
        let b = oracle_bundle(&p, &[0, 1, 2]).unwrap();
        for x in [-1.0, 0.5, 2.0, 4.0] {
            let f = |k: usize| p.site_probs[k] * p.laws[k].log_density(x).exp();
            let want = f(0) / f(2);
            let got = b.density_ratio[&2].predict(&[x]);
            assert!((got / want - 1.0).abs() < 1e-12);
        }
        assert_eq!(b.mu1[&0].predict(&[3.0]), 9.0);
    }
}
