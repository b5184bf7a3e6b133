//! Generalized linear models: Newton/IRLS logistic regression driven by a
//! sufficient-statistics oracle (so the same solver runs on one site or across
//! a federation) and QR least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::basis::Basis;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Logistic,
    Linear,
}

/// A fitted parametric model: `h(coef . basis(x))`, optionally clipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmModel {
    pub family: Family,
    /// Intercept first.
    pub coef: Vec<f64>,
    pub basis: Basis,
    #[serde(default)]
    pub clip: Option<(f64, f64)>,
    #[serde(default)]
    pub converged_via_ridge: bool,
}

impl GlmModel {
    pub fn new(family: Family, coef: Vec<f64>, basis: Basis) -> Self {
        Self { family, coef, basis, clip: None, converged_via_ridge: false }
    }

    pub fn with_clip(mut self, lo: f64, hi: f64) -> Self {
        self.clip = Some((lo, hi));
        self
    }

    #[inline]
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.basis.linear_predictor(&self.coef, x)
    }

    #[inline]
    pub fn predict(&self, x: &[f64]) -> f64 {
        let eta = self.linear_predictor(x);
        let v = match self.family {
            Family::Logistic => sigmoid(eta),
            Family::Linear => eta,
        };
        match self.clip {
            Some((lo, hi)) => v.clamp(lo, hi),
            None => v,
        }
    }
}

#[inline]
pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(eta))` without overflow.
#[inline]
fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

/// Bernoulli log-likelihood sufficient statistics at a coefficient vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticStats {
    pub n: f64,
    pub positives: f64,
    pub loglik: f64,
    pub max_abs_eta: f64,
    pub grad: Vec<f64>,
    /// `X^T W X`, row-major `d x d`.
    pub hess: Vec<f64>,
}

impl LogisticStats {
    pub fn zeros(d: usize) -> Self {
        Self {
            n: 0.0,
            positives: 0.0,
            loglik: 0.0,
            max_abs_eta: 0.0,
            grad: vec![0.0; d],
            hess: vec![0.0; d * d],
        }
    }

    #[inline]
    pub fn push(&mut self, f: &[f64], label: f64, coef: &[f64]) {
        let d = f.len();
        let eta: f64 = f.iter().zip(coef).map(|(a, b)| a * b).sum();
        let p = sigmoid(eta);
        self.n += 1.0;
        self.positives += label;
        self.loglik += label * eta - softplus(eta);
        self.max_abs_eta = self.max_abs_eta.max(eta.abs());
        let r = label - p;
        let w = p * (1.0 - p);
        for j in 0..d {
            self.grad[j] += r * f[j];
            let wf = w * f[j];
            for l in 0..d {
                self.hess[j * d + l] += wf * f[l];
            }
        }
    }

    /// Adds another partial sum (used to combine sites in a fixed order).
    pub fn merge(&mut self, other: &LogisticStats) {
        self.n += other.n;
        self.positives += other.positives;
        self.loglik += other.loglik;
        self.max_abs_eta = self.max_abs_eta.max(other.max_abs_eta);
        for (a, b) in self.grad.iter_mut().zip(&other.grad) {
            *a += b;
        }
        for (a, b) in self.hess.iter_mut().zip(&other.hess) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Tolerance on the sup-norm of the mean-scale gradient.
    pub tol: f64,
    /// Ridge penalty used after separation is detected.
    pub ridge: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_iter: 100, tol: 1e-10, ridge: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub coef: Vec<f64>,
    pub converged_via_ridge: bool,
    pub iterations: usize,
}

enum Attempt {
    Converged(Vec<f64>, usize),
    Separated,
}

/// Maximizes the Bernoulli log-likelihood with damped Newton steps, querying
/// `oracle` for sufficient statistics. On separation or failure the fit is
/// retried with a ridge penalty on the non-intercept coefficients.
pub fn newton_logistic<F>(d: usize, mut oracle: F, opts: &SolverOptions) -> Result<LogisticFit>
where
    F: FnMut(&[f64]) -> Result<LogisticStats>,
{
    if opts.max_iter == 0 {
        return Err(Error::Config("max_iter must be at least 1".into()));
    }
    match newton_attempt(d, &mut oracle, opts, 0.0)? {
        Attempt::Converged(coef, iterations) => {
            Ok(LogisticFit { coef, converged_via_ridge: false, iterations })
        }
        Attempt::Separated => match newton_attempt(d, &mut oracle, opts, opts.ridge)? {
            Attempt::Converged(coef, iterations) => {
                Ok(LogisticFit { coef, converged_via_ridge: true, iterations })
            }
            Attempt::Separated => Err(Error::NonConvergence(
                "logistic regression failed even with ridge fallback".into(),
            )),
        },
    }
}

fn penalized(stats: &LogisticStats, coef: &[f64], ridge: f64) -> f64 {
    let pen: f64 = coef[1..].iter().map(|b| b * b).sum();
    stats.loglik / stats.n - 0.5 * ridge * pen
}

fn newton_attempt<F>(d: usize, oracle: &mut F, opts: &SolverOptions, ridge: f64) -> Result<Attempt>
where
    F: FnMut(&[f64]) -> Result<LogisticStats>,
{
    let mut coef = vec![0.0; d];
    let mut stats = oracle(&coef)?;
    if stats.n == 0.0 {
        return Err(Error::NoTargetRows);
    }
    if stats.positives == 0.0 || stats.positives == stats.n {
        return Err(Error::SingleClassLabels);
    }
    let mut obj = penalized(&stats, &coef, ridge);
    for iter in 0..opts.max_iter {
        let n = stats.n;
        let mut g = DVector::from_iterator(d, stats.grad.iter().map(|v| v / n));
        let mut h = DMatrix::from_row_slice(d, d, &stats.hess) / n;
        for j in 1..d {
            g[j] -= ridge * coef[j];
            h[(j, j)] += ridge;
        }
        let Some(chol) = h.cholesky() else {
            return Ok(Attempt::Separated);
        };
        let step = chol.solve(&g);
        // Newton decrement: twice the predicted gain of a full step. Below
        // 1e-20 the gradient sits at its rounding floor.
        let slope = g.dot(&step);
        if g.amax() < opts.tol || slope < 1e-20 {
            if ridge == 0.0 && (obj > -1e-6 || stats.max_abs_eta > 500.0) {
                return Ok(Attempt::Separated);
            }
            return Ok(Attempt::Converged(coef, iter));
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = coef.iter().zip(step.iter()).map(|(c, s)| c + t * s).collect();
            let trial_stats = oracle(&trial)?;
            let trial_obj = penalized(&trial_stats, &trial, ridge);
            // A full step whose change is pure rounding is taken as is.
            let flat = t == 1.0 && (trial_obj - obj).abs() <= 1e-12 * obj.abs().max(1.0);
            if trial_obj.is_finite() && (trial_obj >= obj + 1e-4 * t * slope || flat) {
                coef = trial;
                stats = trial_stats;
                obj = trial_obj;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // No ascent possible at machine precision: accept if the gradient
            // is already negligible, otherwise treat as a failed attempt.
            if g.amax() < opts.tol.sqrt() {
                return Ok(Attempt::Converged(coef, iter));
            }
            return Ok(Attempt::Separated);
        }
    }
    Ok(Attempt::Separated)
}

/// Flattened design matrix for local fits.
pub(crate) struct Design {
    pub d: usize,
    pub rows: Vec<f64>,
}

impl Design {
    pub fn build<'a>(basis: &Basis, xs: impl Iterator<Item = &'a [f64]>) -> Self {
        let mut rows = Vec::new();
        let mut buf = Vec::new();
        let mut d = 0;
        for x in xs {
            basis.features_into(x, &mut buf);
            d = buf.len();
            rows.extend_from_slice(&buf);
        }
        Self { d, rows }
    }

    pub fn n(&self) -> usize {
        if self.d == 0 {
            0
        } else {
            self.rows.len() / self.d
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.d..(i + 1) * self.d]
    }

    pub fn logistic_stats(&self, labels: &[f64], coef: &[f64]) -> LogisticStats {
        let mut s = LogisticStats::zeros(self.d);
        for (i, &y) in labels.iter().enumerate() {
            s.push(self.row(i), y, coef);
        }
        s
    }
}

/// Logistic regression of `labels` on `basis(x)`.
pub fn fit_logistic_basis<'a>(
    xs: impl Iterator<Item = &'a [f64]>,
    labels: &[u8],
    basis: Basis,
    opts: &SolverOptions,
) -> Result<GlmModel> {
    let design = Design::build(&basis, xs);
    if design.n() == 0 {
        return Err(Error::NoTargetRows);
    }
    let y: Vec<f64> = labels.iter().map(|&v| v as f64).collect();
    let fit = newton_logistic(design.d, |c| Ok(design.logistic_stats(&y, c)), opts)?;
    Ok(GlmModel {
        family: Family::Logistic,
        coef: fit.coef,
        basis,
        clip: None,
        converged_via_ridge: fit.converged_via_ridge,
    })
}

/// Logistic regression with an intercept appended to raw features.
pub fn fit_logistic(
    features: &[Vec<f64>],
    labels: &[u8],
    max_iter: usize,
    tol: f64,
) -> Result<GlmModel> {
    if features.len() != labels.len() {
        return Err(Error::Config("features and labels differ in length".into()));
    }
    let opts = SolverOptions { max_iter, tol, ..SolverOptions::default() };
    fit_logistic_basis(features.iter().map(|v| v.as_slice()), labels, Basis::linear(), &opts)
}

/// Least squares on a prepared design via Householder QR with a rank check.
pub(crate) fn least_squares(design: &Design, y: &[f64]) -> Result<Vec<f64>> {
    let n = design.n();
    let d = design.d;
    if n < d {
        return Err(Error::RankDeficient);
    }
    let x = DMatrix::from_row_slice(n, d, &design.rows);
    let qr = x.qr();
    let r = qr.r();
    let max_diag = (0..d).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    if max_diag == 0.0 || (0..d).any(|j| r[(j, j)].abs() <= 1e-10 * max_diag) {
        return Err(Error::RankDeficient);
    }
    let mut qty = DVector::from_column_slice(y);
    qr.q_tr_mul(&mut qty);
    let rhs = qty.rows(0, d).into_owned();
    let beta = r
        .solve_upper_triangular(&rhs)
        .ok_or(Error::RankDeficient)?;
    Ok(beta.iter().copied().collect())
}

pub fn fit_linear_basis<'a>(
    xs: impl Iterator<Item = &'a [f64]>,
    y: &[f64],
    basis: Basis,
) -> Result<GlmModel> {
    let design = Design::build(&basis, xs);
    let coef = least_squares(&design, y)?;
    Ok(GlmModel::new(Family::Linear, coef, basis))
}

/// Ordinary least squares with an intercept appended to raw features.
pub fn fit_linear(features: &[Vec<f64>], responses: &[f64]) -> Result<GlmModel> {
    if features.len() != responses.len() {
        return Err(Error::Config("features and responses differ in length".into()));
    }
    fit_linear_basis(features.iter().map(|v| v.as_slice()), responses, Basis::linear())
}

/// Cross-products `X^T X` and `X^T y` accumulated row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearStats {
    pub n: f64,
    pub xtx: Vec<f64>,
    pub xty: Vec<f64>,
}

impl LinearStats {
    pub fn zeros(d: usize) -> Self {
        Self { n: 0.0, xtx: vec![0.0; d * d], xty: vec![0.0; d] }
    }

    pub fn dim(&self) -> usize {
        self.xty.len()
    }

    #[inline]
    pub fn push(&mut self, f: &[f64], y: f64) {
        let d = f.len();
        self.n += 1.0;
        for j in 0..d {
            self.xty[j] += f[j] * y;
            for l in 0..d {
                self.xtx[j * d + l] += f[j] * f[l];
            }
        }
    }

    pub fn merge(&mut self, other: &LinearStats) {
        self.n += other.n;
        for (a, b) in self.xtx.iter_mut().zip(&other.xtx) {
            *a += b;
        }
        for (a, b) in self.xty.iter_mut().zip(&other.xty) {
            *a += b;
        }
    }

    /// Solves the normal equations by Cholesky.
    pub fn solve(&self) -> Result<Vec<f64>> {
        let d = self.dim();
        if d == 0 || self.n < d as f64 {
            return Err(Error::RankDeficient);
        }
        let a = DMatrix::from_row_slice(d, d, &self.xtx);
        let max_diag = (0..d).map(|j| a[(j, j)]).fold(0.0, f64::max);
        let chol = a.cholesky().ok_or(Error::RankDeficient)?;
        let l = chol.l();
        if (0..d).any(|j| l[(j, j)] * l[(j, j)] <= 1e-13 * max_diag) {
            return Err(Error::RankDeficient);
        }
        let b = DVector::from_column_slice(&self.xty);
        Ok(chol.solve(&b).iter().copied().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn intercept_only_logistic_is_logit_of_mean() {
        let n = 400;
        let labels: Vec<u8> = (0..n).map(|i| (i % 4 == 0) as u8).collect();
        let xs: Vec<Vec<f64>> = vec![vec![0.0]; n];
        let m = fit_logistic_basis(
            xs.iter().map(|v| v.as_slice()),
            &labels,
            Basis::new(0),
            &SolverOptions::default(),
        )
        .unwrap();
        assert!((m.coef[0] - (0.25f64 / 0.75).ln()).abs() < 1e-10);
        assert!((m.coef[0] + 1.0986).abs() < 1e-4);
    }

    #[test]
    fn separated_data_falls_back_to_ridge() {
        let xs = vec![vec![-2.0], vec![-1.0], vec![1.0], vec![2.0]];
        let labels = [0, 0, 1, 1];
        let m = fit_logistic(&xs, &labels, 100, 1e-10).unwrap();
        assert!(m.converged_via_ridge);
        assert!(m.coef.iter().all(|c| c.is_finite()));
        assert!(m.coef[1] > 0.0);
    }

    #[test]
    fn single_class_is_rejected() {
        let xs = vec![vec![0.0], vec![1.0]];
        assert!(matches!(fit_logistic(&xs, &[1, 1], 50, 1e-10), Err(Error::SingleClassLabels)));
    }

    // Independent dense Newton iteration written directly against the
    // likelihood, with no line search.
    fn reference_newton(x: &[Vec<f64>], y: &[u8]) -> Vec<f64> {
        let d = x[0].len() + 1;
        let mut b = DVector::<f64>::zeros(d);
        for _ in 0..100 {
            let mut g = DVector::<f64>::zeros(d);
            let mut h = DMatrix::<f64>::zeros(d, d);
            for (xi, &yi) in x.iter().zip(y) {
                let mut f = vec![1.0];
                f.extend_from_slice(xi);
                let f = DVector::from_vec(f);
                let p = 1.0 / (1.0 + (-f.dot(&b)).exp());
                g += &f * (yi as f64 - p);
                h += &f * f.transpose() * (p * (1.0 - p));
            }
            b += h.lu().solve(&g).unwrap();
        }
        b.iter().copied().collect()
    }

    #[test]
    fn logistic_matches_reference_newton_on_fixture() {
        let x: Vec<Vec<f64>> = vec![
            vec![0.1, 1.2],
            vec![-0.7, 0.3],
            vec![1.5, -0.4],
            vec![0.9, 0.8],
            vec![-1.2, -1.1],
            vec![0.4, 0.0],
            vec![2.1, 0.5],
            vec![-0.3, 1.7],
            vec![0.0, -0.9],
            vec![1.1, 1.4],
        ];
        let y = [1, 1, 1, 1, 0, 0, 0, 0, 0, 1];
        let m = fit_logistic(&x, &y, 100, 1e-12).unwrap();
        let r = reference_newton(&x, &y);
        assert!(!m.converged_via_ridge);
        for (a, b) in m.coef.iter().zip(&r) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn logistic_is_invariant_to_replication() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<Vec<f64>> = (0..60).map(|_| vec![rng.gen_range(-2.0..2.0)]).collect();
        let y: Vec<u8> = x.iter().map(|v| (v[0] + rng.gen_range(-1.5..1.5) > 0.0) as u8).collect();
        let a = fit_logistic(&x, &y, 100, 1e-12).unwrap();
        let x2: Vec<Vec<f64>> = x.iter().chain(x.iter()).cloned().collect();
        let y2: Vec<u8> = y.iter().chain(y.iter()).copied().collect();
        let b = fit_logistic(&x2, &y2, 100, 1e-12).unwrap();
        for (u, v) in a.coef.iter().zip(&b.coef) {
            assert!((u - v).abs() < 1e-9, "{u} vs {v} ({} {})", a.converged_via_ridge, b.converged_via_ridge);
        }
    }

    #[test]
    fn linear_exact_interpolation_and_constant() {
        let x = vec![vec![1.0], vec![2.0], vec![3.0]];
        let m = fit_linear(&x, &[2.0, 4.0, 6.0]).unwrap();
        assert!(m.coef[0].abs() < 1e-12 && (m.coef[1] - 2.0).abs() < 1e-12);
        let x = vec![vec![1.0, 0.5], vec![2.0, -1.0], vec![3.0, 4.0], vec![0.0, 1.0]];
        let m = fit_linear(&x, &[3.5; 4]).unwrap();
        assert!((m.coef[0] - 3.5).abs() < 1e-12);
        assert!(m.coef[1..].iter().all(|c| c.abs() < 1e-12));
    }

    #[test]
    fn linear_matches_explicit_normal_equations_and_residuals_are_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<Vec<f64>> = (0..20).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let y: Vec<f64> = (0..20).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let m = fit_linear(&x, &y).unwrap();

        let xm = DMatrix::from_fn(20, 4, |i, j| if j == 0 { 1.0 } else { x[i][j - 1] });
        let yv = DVector::from_vec(y.clone());
        let xtx = xm.transpose() * &xm;
        let beta = xtx.try_inverse().unwrap() * xm.transpose() * &yv;
        for (a, b) in m.coef.iter().zip(beta.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        let fitted: Vec<f64> = x.iter().map(|xi| m.predict(xi)).collect();
        let r = DVector::from_iterator(20, y.iter().zip(&fitted).map(|(a, b)| a - b));
        let xtr = xm.transpose() * r;
        assert!(xtr.amax() < 1e-8 * (1.0 + yv.amax()));
    }

    #[test]
    fn rank_deficient_design_is_rejected() {
        let x = vec![vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0], vec![4.0, 8.0]];
        assert!(matches!(fit_linear(&x, &[1.0, 2.0, 3.0, 4.0]), Err(Error::RankDeficient)));
        let mut s = LinearStats::zeros(3);
        for xi in &x {
            s.push(&[1.0, xi[0], xi[1]], 1.0);
        }
        assert!(matches!(s.solve(), Err(Error::RankDeficient)));
    }

    #[test]
    fn normal_equations_agree_with_qr() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<Vec<f64>> = (0..50).map(|_| vec![rng.gen_range(-2.0..2.0)]).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 + 2.0 * v[0] + rng.gen_range(-0.5..0.5)).collect();
        let qr = fit_linear(&x, &y).unwrap();
        let mut s = LinearStats::zeros(2);
        for (xi, yi) in x.iter().zip(&y) {
            s.push(&[1.0, xi[0]], *yi);
        }
        let ne = s.solve().unwrap();
        for (a, b) in qr.coef.iter().zip(&ne) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
