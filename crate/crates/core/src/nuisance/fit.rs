//! Nuisance fitting through [`SiteAccess`]: local models are fitted where the
//! rows live, cross-site models from per-site sufficient statistics combined
//! in ascending site order.

use std::collections::BTreeMap;

use super::basis::Basis;
use super::bundle::{MisspecSpec, NuisanceBundle, NuisanceConfig, NuisanceId};
use super::glm::{newton_logistic, Family, GlmModel, LinearStats, LogisticStats};
use super::models::{DensityRatioModel, LocalModels, TauModel, TauStrategy, VarianceMode, VarianceModel};
use crate::access::{LocalAccess, SiteAccess};
use crate::data::MultiSiteData;
use crate::error::{Error, Result};
use crate::measure::CausalMeasure;
use crate::report::Method;
use crate::site_ops::{LinearDesign, Request, SiteSummary};

pub fn describe(access: &mut dyn SiteAccess, sites: &[usize]) -> Result<Vec<SiteSummary>> {
    access
        .round(sites, &Request::Describe)?
        .into_iter()
        .map(|r| r.into_summary())
        .collect()
}

pub fn fit_local_models(
    access: &mut dyn SiteAccess,
    sites: &[usize],
    cfg: &NuisanceConfig,
) -> Result<BTreeMap<usize, LocalModels>> {
    let responses = access.round(sites, &Request::FitLocal { spec: cfg.local_spec() })?;
    sites
        .iter()
        .zip(responses)
        .map(|(&k, r)| {
            let m = r.into_models()?;
            if m.site != k {
                return Err(Error::ProtocolViolation(format!("site {k} answered as site {}", m.site)));
            }
            Ok((k, m))
        })
        .collect()
}

/// Pairwise membership model of the target against source `k`, fitted by
/// federated Newton iterations.
pub fn fit_density_ratio_via(
    access: &mut dyn SiteAccess,
    k: usize,
    p: usize,
    basis: Basis,
    cfg: &NuisanceConfig,
) -> Result<DensityRatioModel> {
    if k == 0 {
        return Err(Error::Config("the density ratio of the target against itself is 1".into()));
    }
    let d = basis.dim(p);
    let pair = [0, k];
    let fit = newton_logistic(
        d,
        |coef| {
            let req = Request::LogisticStats { target_site: 0, coef: coef.to_vec(), basis };
            let mut total = LogisticStats::zeros(d);
            for r in access.round(&pair, &req)? {
                total.merge(&r.into_aggregate()?.to_logistic(d)?);
            }
            Ok(total)
        },
        &cfg.solver,
    )?;
    Ok(DensityRatioModel {
        k,
        logit_model: GlmModel {
            family: Family::Logistic,
            coef: fit.coef,
            basis,
            clip: None,
            converged_via_ridge: fit.converged_via_ridge,
        },
        prior_correction: 0.0,
        clip: cfg.ratio_clip,
    })
}

fn solve_pooled(access: &mut dyn SiteAccess, sites: &[usize], design: LinearDesign, d: usize) -> Result<Vec<f64>> {
    let mut total = LinearStats::zeros(d);
    for r in access.round(sites, &Request::LinearStats { design })? {
        total.merge(&r.into_aggregate()?.to_linear(d)?);
    }
    total.solve()
}

/// Outcome regression of arm `arm` pooled over `sites`.
pub fn fit_pooled_outcome_via(
    access: &mut dyn SiteAccess,
    sites: &[usize],
    p: usize,
    arm: u8,
    basis: Basis,
) -> Result<GlmModel> {
    let coef = solve_pooled(access, sites, LinearDesign::Outcome { arm, basis }, basis.dim(p))?;
    Ok(GlmModel::new(Family::Linear, coef, basis))
}

/// Shared effect function over `sites`.
#[allow(clippy::too_many_arguments)]
pub fn fit_tau_via(
    access: &mut dyn SiteAccess,
    sites: &[usize],
    p: usize,
    measure: CausalMeasure,
    strategy: TauStrategy,
    basis: Basis,
    mu0: &BTreeMap<usize, GlmModel>,
    mu1: &BTreeMap<usize, GlmModel>,
) -> Result<TauModel> {
    let pick = |m: &BTreeMap<usize, GlmModel>| -> Result<BTreeMap<usize, GlmModel>> {
        sites
            .iter()
            .map(|k| m.get(k).cloned().map(|v| (*k, v)).ok_or(Error::UnknownSite(*k)))
            .collect()
    };
    let design = match strategy {
        TauStrategy::ProductRegression => LinearDesign::TauProduct { measure, basis, mu0: pick(mu0)? },
        TauStrategy::PseudoResponse => LinearDesign::TauPseudo { measure, basis, mu0: pick(mu0)?, mu1: pick(mu1)? },
    };
    let coef = solve_pooled(access, sites, design, basis.dim(p))?;
    Ok(TauModel {
        measure,
        strategy,
        model: GlmModel::new(Family::Linear, coef, basis),
        sites: sites.to_vec(),
    })
}

fn covariate_dim(access: &mut dyn SiteAccess, sites: &[usize]) -> Result<usize> {
    let summaries = describe(access, sites)?;
    let p = summaries.first().map(|s| s.p).ok_or(Error::MissingTargetSite)?;
    for s in &summaries {
        if s.p != p {
            return Err(Error::DimensionMismatch { site: s.site, expected: p, found: s.p });
        }
        if s.n_control == 0 {
            return Err(Error::EmptyTreatmentArm { site: s.site, arm: 0 });
        }
        if s.n_treated == 0 {
            return Err(Error::EmptyTreatmentArm { site: s.site, arm: 1 });
        }
    }
    Ok(p)
}

/// Fits every nuisance `method` needs on `sites` (target first).
pub fn fit_bundle(
    access: &mut dyn SiteAccess,
    sites: &[usize],
    method: Method,
    measure: CausalMeasure,
    cfg: &NuisanceConfig,
) -> Result<NuisanceBundle> {
    if sites.first() != Some(&0) {
        return Err(Error::MissingTargetSite);
    }
    let p = covariate_dim(access, sites)?;
    let locals = fit_local_models(access, sites, cfg)?;
    let mut bundle = NuisanceBundle {
        measure,
        sites: sites.to_vec(),
        propensity: BTreeMap::new(),
        mu0: BTreeMap::new(),
        mu1: BTreeMap::new(),
        tau: TauModel::placeholder(measure),
        density_ratio: BTreeMap::new(),
        var0: BTreeMap::new(),
        var1: BTreeMap::new(),
        pooled_mu0: None,
        pooled_mu1: None,
    };
    for (k, m) in locals {
        bundle.propensity.insert(k, m.propensity);
        bundle.mu0.insert(k, m.mu0);
        bundle.mu1.insert(k, m.mu1);
        bundle.var0.insert(k, m.var0);
        bundle.var1.insert(k, m.var1);
    }
    let tau_sites: Vec<usize> = if method == Method::Mr1 { sites.to_vec() } else { vec![0] };
    bundle.tau = fit_tau_via(access, &tau_sites, p, measure, cfg.tau_strategy, cfg.tau, &bundle.mu0, &bundle.mu1)?;
    if method != Method::DrT {
        for &k in &sites[1..] {
            let q = fit_density_ratio_via(access, k, p, cfg.density_ratio, cfg)?;
            bundle.density_ratio.insert(k, q);
        }
    }
    if method == Method::Mr2 {
        bundle.pooled_mu0 = Some(fit_pooled_outcome_via(access, sites, p, 0, cfg.pooled_mu0)?);
        bundle.pooled_mu1 = Some(fit_pooled_outcome_via(access, sites, p, 1, cfg.pooled_mu1)?);
    }
    Ok(bundle)
}

/// Refits exactly the targeted models on distorted covariates; everything
/// else is carried over unchanged.
pub fn apply_misspec(
    access: &mut dyn SiteAccess,
    bundle: &NuisanceBundle,
    spec: &MisspecSpec,
    cfg: &NuisanceConfig,
) -> Result<NuisanceBundle> {
    spec.check_against(bundle)?;
    if spec.is_empty() {
        return Ok(bundle.clone());
    }
    let t = spec.distortion;
    let p = covariate_dim(access, &bundle.sites)?;
    let mut out = bundle.clone();

    let mut local_targets: BTreeMap<usize, Vec<NuisanceId>> = BTreeMap::new();
    for id in &spec.targets {
        match *id {
            NuisanceId::Propensity(k) | NuisanceId::Mu0(k) | NuisanceId::Mu1(k) => {
                local_targets.entry(k).or_default().push(*id)
            }
            _ => {}
        }
    }
    for (k, ids) in local_targets {
        let mut local_cfg = cfg.clone();
        for id in &ids {
            match id {
                NuisanceId::Propensity(_) => local_cfg.propensity = cfg.propensity.with_transform(t),
                NuisanceId::Mu0(_) => local_cfg.mu0 = cfg.mu0.with_transform(t),
                NuisanceId::Mu1(_) => local_cfg.mu1 = cfg.mu1.with_transform(t),
                _ => unreachable!(),
            }
        }
        let refit = fit_local_models(access, &[k], &local_cfg)?.remove(&k).expect("requested site");
        for id in &ids {
            match id {
                NuisanceId::Propensity(_) => {
                    out.propensity.insert(k, refit.propensity.clone());
                }
                NuisanceId::Mu0(_) => {
                    out.mu0.insert(k, refit.mu0.clone());
                }
                NuisanceId::Mu1(_) => {
                    out.mu1.insert(k, refit.mu1.clone());
                }
                _ => unreachable!(),
            }
        }
    }
    for id in &spec.targets {
        match *id {
            NuisanceId::DensityRatio(k) => {
                let basis = cfg.density_ratio.with_transform(t);
                out.density_ratio.insert(k, fit_density_ratio_via(access, k, p, basis, cfg)?);
            }
            NuisanceId::Tau => {
                // Fitted against the untouched outcome models.
                let tm = &bundle.tau;
                out.tau = fit_tau_via(
                    access,
                    &tm.sites,
                    p,
                    tm.measure,
                    tm.strategy,
                    tm.model.basis.with_transform(t),
                    &bundle.mu0,
                    &bundle.mu1,
                )?;
            }
            NuisanceId::PooledMu0 => {
                out.pooled_mu0 = Some(fit_pooled_outcome_via(access, &bundle.sites, p, 0, cfg.pooled_mu0.with_transform(t))?);
            }
            NuisanceId::PooledMu1 => {
                out.pooled_mu1 = Some(fit_pooled_outcome_via(access, &bundle.sites, p, 1, cfg.pooled_mu1.with_transform(t))?);
            }
            _ => {}
        }
    }
    Ok(out)
}

// In-memory conveniences over a full dataset.

pub fn fit_propensity(data: &MultiSiteData, k: usize, cfg: &NuisanceConfig) -> Result<GlmModel> {
    let site = data.site(k).ok_or(Error::UnknownSite(k))?;
    super::models::fit_site_propensity(site, cfg.propensity, cfg.propensity_clip, &cfg.solver)
}

pub fn fit_density_ratio(data: &MultiSiteData, k: usize, cfg: &NuisanceConfig) -> Result<DensityRatioModel> {
    for s in [0, k] {
        if data.site(s).is_none() {
            return Err(if s == 0 { Error::MissingTargetSite } else { Error::UnknownSite(s) });
        }
    }
    let mut access = LocalAccess::new(data);
    fit_density_ratio_via(&mut access, k, data.p(), cfg.density_ratio, cfg)
}

/// Control and treated outcome models for site `k`; with `pooled_treated`
/// the treated model is fitted on the treated rows of every site.
pub fn fit_outcome_models(
    data: &MultiSiteData,
    k: usize,
    pooled_treated: bool,
    cfg: &NuisanceConfig,
) -> Result<(GlmModel, GlmModel)> {
    let site = data.site(k).ok_or(Error::UnknownSite(k))?;
    let mu0 = super::models::fit_site_outcome(site, 0, cfg.mu0)?;
    let mu1 = if pooled_treated {
        let mut access = LocalAccess::new(data);
        fit_pooled_outcome_via(&mut access, &data.site_ids(), data.p(), 1, cfg.mu1)?
    } else {
        super::models::fit_site_outcome(site, 1, cfg.mu1)?
    };
    Ok((mu0, mu1))
}

pub fn fit_tau(data: &MultiSiteData, sites: &[usize], measure: CausalMeasure, cfg: &NuisanceConfig) -> Result<TauModel> {
    let mut access = LocalAccess::new(data);
    covariate_dim(&mut access, sites)?;
    let locals = fit_local_models(&mut access, sites, cfg)?;
    let mu0 = locals.iter().map(|(k, m)| (*k, m.mu0.clone())).collect();
    let mu1 = locals.iter().map(|(k, m)| (*k, m.mu1.clone())).collect();
    fit_tau_via(&mut access, sites, data.p(), measure, cfg.tau_strategy, cfg.tau, &mu0, &mu1)
}

pub fn fit_cond_variance(
    data: &MultiSiteData,
    a: u8,
    k: usize,
    mode: VarianceMode,
    cfg: &NuisanceConfig,
) -> Result<VarianceModel> {
    let site = data.site(k).ok_or(Error::UnknownSite(k))?;
    let basis = if a == 1 { cfg.mu1 } else { cfg.mu0 };
    let outcome = super::models::fit_site_outcome(site, a, basis)?;
    super::models::fit_site_variance(site, a, &outcome, mode, cfg.variance_floor)
}
