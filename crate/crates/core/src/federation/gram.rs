//! Per-fold Gram sums of the influence contributions and the quadratic loss
//! built from them.

use serde::{Deserialize, Serialize};

use super::solver::QuadraticLoss;
use crate::access::SiteAccess;
use crate::error::{Error, Result};
use crate::site_ops::{GramPlan, Request};

/// Fold-wise sums over all rows of the federation. Columns are: target-only
/// treated mean, one per source pair, target-only control mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramSums {
    pub dim: usize,
    pub folds: usize,
    pub rows: Vec<f64>,
    /// `folds x dim`.
    pub first: Vec<f64>,
    /// `folds x dim x dim`.
    pub second: Vec<f64>,
    /// Target share `n0 / n` used to scale contributions into influence values.
    pub p0: f64,
}

/// Totals over a set of folds.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub dim: usize,
    pub rows: f64,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl GramSums {
    /// One round: every site returns its fold sums; sites are added in the
    /// order they are listed.
    pub fn collect(access: &mut dyn SiteAccess, sites: &[usize], plan: &GramPlan, p0: f64) -> Result<Self> {
        let dim = plan.dim();
        let folds = plan.folds.max(1);
        let mut out = GramSums {
            dim,
            folds,
            rows: vec![0.0; folds],
            first: vec![0.0; folds * dim],
            second: vec![0.0; folds * dim * dim],
            p0,
        };
        for r in access.round(sites, &Request::GramSums { plan: plan.clone() })? {
            let a = r.into_aggregate()?;
            let rows = a.get_slice("rows", folds)?;
            for f in 0..folds {
                out.rows[f] += rows[f];
                for (acc, v) in out.first[f * dim..(f + 1) * dim].iter_mut().zip(a.get_slice(&format!("sum{f}"), dim)?) {
                    *acc += v;
                }
                for (acc, v) in out.second[f * dim * dim..(f + 1) * dim * dim]
                    .iter_mut()
                    .zip(a.get_slice(&format!("prod{f}"), dim * dim)?)
                {
                    *acc += v;
                }
            }
        }
        if out.rows.iter().sum::<f64>() == 0.0 {
            return Err(Error::NoTargetRows);
        }
        Ok(out)
    }

    /// Sums over the folds for which `keep(f)` holds.
    pub fn moments(&self, keep: impl Fn(usize) -> bool) -> Moments {
        let d = self.dim;
        let mut m = Moments { dim: d, rows: 0.0, first: vec![0.0; d], second: vec![0.0; d * d] };
        for f in (0..self.folds).filter(|&f| keep(f)) {
            m.rows += self.rows[f];
            for i in 0..d {
                m.first[i] += self.first[f * d + i];
            }
            for i in 0..d * d {
                m.second[i] += self.second[f * d * d + i];
            }
        }
        m
    }

    pub fn total(&self) -> Moments {
        self.moments(|_| true)
    }

    /// Influence-scale loss `P_n (phi_0 - sum_k w_k phi_k)^2` over the given
    /// moments, with `phi = u / p0`.
    pub fn loss(&self, m: &Moments) -> Result<QuadraticLoss> {
        if m.rows <= 0.0 {
            return Err(Error::Config("no rows in the selected folds".into()));
        }
        let d = m.dim;
        let k = d - 2;
        let scale = 1.0 / (m.rows * self.p0 * self.p0);
        let mut g = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                g[i * k + j] = m.second[(1 + i) * d + 1 + j] * scale;
            }
        }
        let b = (0..k).map(|i| m.second[1 + i] * scale).collect();
        QuadraticLoss::new(g, b, m.second[0] * scale)
    }
}

impl Moments {
    /// Covariance of the influence values `u / p0`.
    pub fn covariance(&self, p0: f64) -> Vec<f64> {
        let d = self.dim;
        let mut c = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let mi = self.first[i] / self.rows;
                let mj = self.first[j] / self.rows;
                c[i * d + j] = (self.second[i * d + j] / self.rows - mi * mj) / (p0 * p0);
            }
        }
        c
    }
}
