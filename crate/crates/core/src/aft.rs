//! Parametric accelerated failure time regression.
//!
//! The model is `log T = mu + beta'x + sigma W` with W drawn from a fixed
//! error law. A positive coefficient lengthens survival: `exp(beta)` is the
//! factor by which survival time is multiplied. Fits maximize the censored
//! log-likelihood
//!
//! ```text
//! l = sum_events [log f_W(z) - log sigma - log t] + sum_censored log S_W(z),
//! z = (log t - mu - beta'x) / sigma
//! ```
//!
//! by Newton-Raphson on `(mu, beta, log sigma)` with analytic derivatives.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::design::{fingerprint, Design, DesignSpec, InputValue, TermKind};
use crate::error::{Error, Result};
use crate::linalg::{damped_solve, spd_inverse};
use crate::stats::{chi_square_sf, inverse_mills, log_normal_sf, normal_sf, two_sided_normal_p};

const MAX_ITER: usize = 100;
const REL_TOL: f64 = 1e-9;
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Standardized error distribution of `W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorLaw {
    /// Minimum extreme value: S(z) = exp(-e^z).
    ExtremeValue,
    Logistic,
    Normal,
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn logistic_cdf(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl ErrorLaw {
    /// Survival function S_W(z).
    pub fn survival(self, z: f64) -> f64 {
        match self {
            ErrorLaw::ExtremeValue => (-z.exp()).exp(),
            ErrorLaw::Logistic => 1.0 - logistic_cdf(z),
            ErrorLaw::Normal => normal_sf(z),
        }
    }

    /// Inverse of the distribution function, for sampling.
    pub fn quantile(self, u: f64) -> f64 {
        match self {
            ErrorLaw::ExtremeValue => (-(-u).ln_1p()).ln(),
            ErrorLaw::Logistic => (u / (1.0 - u)).ln(),
            ErrorLaw::Normal => {
                use statrs::distribution::{ContinuousCDF, Normal};
                Normal::standard().inverse_cdf(u)
            }
        }
    }

    /// log-contribution and its first two z-derivatives, for an observed
    /// event (`log f_W`) or a censoring (`log S_W`).
    fn terms(self, z: f64, event: bool) -> (f64, f64, f64) {
        match (self, event) {
            (ErrorLaw::ExtremeValue, true) => {
                let ez = z.exp();
                (z - ez, 1.0 - ez, -ez)
            }
            (ErrorLaw::ExtremeValue, false) => {
                let ez = z.exp();
                (-ez, -ez, -ez)
            }
            (ErrorLaw::Logistic, true) => {
                let p = logistic_cdf(z);
                (z - 2.0 * softplus(z), 1.0 - 2.0 * p, -2.0 * p * (1.0 - p))
            }
            (ErrorLaw::Logistic, false) => {
                let p = logistic_cdf(z);
                (-softplus(z), -p, -p * (1.0 - p))
            }
            (ErrorLaw::Normal, true) => (-0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln(), -z, -1.0),
            (ErrorLaw::Normal, false) => {
                let lambda = inverse_mills(z);
                (log_normal_sf(z), -lambda, -lambda * (lambda - z))
            }
        }
    }

    fn mean(self) -> f64 {
        match self {
            ErrorLaw::ExtremeValue => -EULER_GAMMA,
            ErrorLaw::Logistic | ErrorLaw::Normal => 0.0,
        }
    }

    fn sd(self) -> f64 {
        use std::f64::consts::PI;
        match self {
            ErrorLaw::ExtremeValue => PI / 6f64.sqrt(),
            ErrorLaw::Logistic => PI / 3f64.sqrt(),
            ErrorLaw::Normal => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AftDistribution {
    Exponential,
    Weibull,
    Rayleigh,
    LogNormal,
    LogLogistic,
}

impl AftDistribution {
    pub const ALL: [AftDistribution; 5] = [
        AftDistribution::Exponential,
        AftDistribution::Weibull,
        AftDistribution::LogNormal,
        AftDistribution::Rayleigh,
        AftDistribution::LogLogistic,
    ];

    pub fn error_law(self) -> ErrorLaw {
        match self {
            AftDistribution::Exponential | AftDistribution::Weibull | AftDistribution::Rayleigh => {
                ErrorLaw::ExtremeValue
            }
            AftDistribution::LogNormal => ErrorLaw::Normal,
            AftDistribution::LogLogistic => ErrorLaw::Logistic,
        }
    }

    /// Scale held fixed by the distribution, if any.
    pub fn fixed_scale(self) -> Option<f64> {
        match self {
            AftDistribution::Exponential => Some(1.0),
            AftDistribution::Rayleigh => Some(0.5),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            AftDistribution::Exponential => "Exponential",
            AftDistribution::Weibull => "Weibull",
            AftDistribution::Rayleigh => "Rayleigh",
            AftDistribution::LogNormal => "Log-normal",
            AftDistribution::LogLogistic => "Log-logistic",
        }
    }
}

impl fmt::Display for AftDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AftDistribution::Exponential => "exponential",
            AftDistribution::Weibull => "weibull",
            AftDistribution::Rayleigh => "rayleigh",
            AftDistribution::LogNormal => "lognormal",
            AftDistribution::LogLogistic => "loglogistic",
        })
    }
}

impl FromStr for AftDistribution {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        match key.as_str() {
            "exponential" | "exp" => Ok(AftDistribution::Exponential),
            "weibull" => Ok(AftDistribution::Weibull),
            "rayleigh" => Ok(AftDistribution::Rayleigh),
            "lognormal" => Ok(AftDistribution::LogNormal),
            "loglogistic" => Ok(AftDistribution::LogLogistic),
            _ => Err(Error::usage(format!("unknown distribution '{s}'"))),
        }
    }
}

/// Censored log-likelihood of an AFT model on a fixed design, exposed for
/// derivative checks. Parameters are `(mu, beta..., log sigma)`, the last
/// entry omitted when the scale is fixed.
#[derive(Debug, Clone)]
pub struct AftProblem {
    log_t: Vec<f64>,
    events: Vec<bool>,
    /// Design with a leading intercept column.
    a: DMatrix<f64>,
    law: ErrorLaw,
    fixed_log_scale: Option<f64>,
}

struct Eval {
    loglik: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

impl AftProblem {
    fn from_parts(log_t: Vec<f64>, events: Vec<bool>, x: &DMatrix<f64>, law: ErrorLaw, fixed: Option<f64>) -> Self {
        let n = x.nrows();
        let mut a = DMatrix::from_element(n, x.ncols() + 1, 1.0);
        a.columns_mut(1, x.ncols()).copy_from(x);
        AftProblem {
            log_t,
            events,
            a,
            law,
            fixed_log_scale: fixed.map(f64::ln),
        }
    }

    pub fn new(cohort: &Cohort, variables: &[String], dist: AftDistribution) -> Result<Self> {
        let (log_t, events) = log_outcomes(cohort)?;
        let design = Design::build(cohort, variables)?;
        Ok(Self::from_parts(log_t, events, &design.x, dist.error_law(), dist.fixed_scale()))
    }

    pub fn n_params(&self) -> usize {
        self.a.ncols() + usize::from(self.fixed_log_scale.is_none())
    }

    pub fn log_likelihood(&self, theta: &[f64]) -> f64 {
        self.eval(&DVector::from_column_slice(theta), false).loglik
    }

    pub fn score(&self, theta: &[f64]) -> Vec<f64> {
        self.eval(&DVector::from_column_slice(theta), true).grad.iter().copied().collect()
    }

    pub fn hessian(&self, theta: &[f64]) -> Vec<Vec<f64>> {
        let h = self.eval(&DVector::from_column_slice(theta), true).hess;
        (0..h.nrows()).map(|i| h.row(i).iter().copied().collect()).collect()
    }

    fn eval(&self, theta: &DVector<f64>, derivatives: bool) -> Eval {
        let q = self.a.ncols();
        let free_scale = self.fixed_log_scale.is_none();
        let tau = self.fixed_log_scale.unwrap_or_else(|| theta[q]);
        let sigma = tau.exp();
        let b = theta.rows(0, q);
        let eta = &self.a * b;
        let m = self.n_params();
        let mut loglik = 0.0;
        let mut grad = DVector::zeros(m);
        let mut hess = DMatrix::zeros(m, m);
        for i in 0..self.log_t.len() {
            let z = (self.log_t[i] - eta[i]) / sigma;
            let event = self.events[i];
            let (g, g1, g2) = self.law.terms(z, event);
            let ev = if event { 1.0 } else { 0.0 };
            loglik += g - ev * (tau + self.log_t[i]);
            if !derivatives {
                continue;
            }
            let row = self.a.row(i);
            let d_eta = -g1 / sigma;
            let d_eta2 = g2 / (sigma * sigma);
            for r in 0..q {
                grad[r] += d_eta * row[r];
                for c in 0..=r {
                    hess[(r, c)] += d_eta2 * row[r] * row[c];
                }
            }
            if free_scale {
                grad[q] += -z * g1 - ev;
                let cross = (g2 * z + g1) / sigma;
                for r in 0..q {
                    hess[(q, r)] += cross * row[r];
                }
                hess[(q, q)] += z * g1 + z * z * g2;
            }
        }
        if derivatives {
            for r in 0..m {
                for c in 0..r {
                    hess[(c, r)] = hess[(r, c)];
                }
            }
        }
        Eval { loglik, grad, hess }
    }
}

fn log_outcomes(cohort: &Cohort) -> Result<(Vec<f64>, Vec<bool>)> {
    if cohort.is_empty() {
        return Err(Error::data("AFT fit needs at least one record"));
    }
    if let Some((i, r)) = cohort.records().iter().enumerate().find(|(_, r)| !(r.duration > 0.0)) {
        return Err(Error::data(format!(
            "record {} has duration {}; log-time models need durations > 0",
            i + 1,
            r.duration
        )));
    }
    if cohort.event_count() == 0 {
        return Err(Error::data("AFT fit needs at least one event"));
    }
    Ok((cohort.records().iter().map(|r| r.duration.ln()).collect(), cohort.events()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AftFit {
    pub distribution: AftDistribution,
    pub spec: DesignSpec,
    pub column_names: Vec<String>,
    pub intercept: f64,
    pub intercept_se: f64,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub scale: f64,
    pub scale_fixed: bool,
    /// Standard error of log(scale); `None` when the scale is fixed.
    pub log_scale_se: Option<f64>,
    /// Covariance of (mu, beta..., [log sigma]) on the original scale.
    pub covariance: Vec<Vec<f64>>,
    pub loglik: f64,
    pub loglik_start: f64,
    pub loglik_trace: Vec<f64>,
    /// Free parameter count.
    pub k: usize,
    pub aic: f64,
    pub n: usize,
    pub events: usize,
    pub iterations: usize,
    #[serde(skip)]
    data_fingerprint: u64,
}

impl AftFit {
    pub fn p_values(&self) -> Vec<f64> {
        self.coefficients
            .iter()
            .zip(&self.std_errors)
            .map(|(b, s)| two_sided_normal_p(b / s))
            .collect()
    }

    pub fn intercept_p(&self) -> f64 {
        two_sided_normal_p(self.intercept / self.intercept_se)
    }

    /// Linear predictor `mu + beta'x` for caller-supplied covariates.
    pub fn linear_predictor(&self, x: &HashMap<String, InputValue>) -> Result<f64> {
        let row = self.spec.encode_input(x)?;
        Ok(self.intercept + row.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum::<f64>())
    }
}

pub fn aft_fit(cohort: &Cohort, variables: &[String], dist: AftDistribution) -> Result<AftFit> {
    fit_impl(cohort, variables, dist, dist.fixed_scale())
}

/// Fit with the scale held at `sigma` regardless of the distribution's
/// usual scale treatment.
pub fn aft_fit_fixed_scale(
    cohort: &Cohort,
    variables: &[String],
    dist: AftDistribution,
    sigma: f64,
) -> Result<AftFit> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::usage(format!("fixed scale {sigma} must be positive")));
    }
    fit_impl(cohort, variables, dist, Some(sigma))
}

fn fit_impl(cohort: &Cohort, variables: &[String], dist: AftDistribution, fixed: Option<f64>) -> Result<AftFit> {
    let (log_t, events) = log_outcomes(cohort)?;
    let design = Design::build(cohort, variables)?;
    let std = design.standardization()?;
    let z = design.standardized(&std);
    let law = dist.error_law();
    let problem = AftProblem::from_parts(log_t, events, &z, law, fixed);
    let q = z.ncols() + 1;
    let m = problem.n_params();

    // moment start on log durations, beta = 0
    let n = problem.log_t.len() as f64;
    let mean_y = problem.log_t.iter().sum::<f64>() / n;
    let var_y = problem.log_t.iter().map(|y| (y - mean_y).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let sigma0 = fixed.unwrap_or_else(|| {
        let s = var_y.sqrt() / law.sd();
        if s > 1e-8 && s.is_finite() {
            s
        } else {
            1.0
        }
    });
    let mut theta = DVector::zeros(m);
    theta[0] = mean_y - law.mean() * sigma0;
    if fixed.is_none() {
        theta[q] = sigma0.ln();
    }

    let mut current = problem.eval(&theta, true);
    let loglik_start = current.loglik;
    let mut trace = vec![current.loglik];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITER {
        iterations += 1;
        let neg_h = -&current.hess;
        let (step, _) = damped_solve(&neg_h, &current.grad);
        if step.iter().any(|v| !v.is_finite()) {
            break;
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let cand = &theta + &step * t;
            let ll = problem.eval(&cand, false).loglik;
            if ll.is_finite() && ll >= current.loglik {
                accepted = Some(cand);
                break;
            }
            t *= 0.5;
        }
        let small_step = (&step * t).amax() < 1e-6;
        match accepted {
            Some(cand) => {
                let next = problem.eval(&cand, true);
                let change = (next.loglik - current.loglik).abs();
                theta = cand;
                current = next;
                trace.push(current.loglik);
                if change <= REL_TOL * current.loglik.abs().max(1e-300) && small_step {
                    converged = true;
                    break;
                }
            }
            None => {
                converged = step.amax() < 1e-4;
                break;
            }
        }
    }
    if !converged {
        return Err(Error::convergence(format!(
            "{dist} fit did not converge in {iterations} iterations (loglik {:.6}, |score| {:.3e})",
            current.loglik,
            current.grad.norm()
        )));
    }

    let info = -&current.hess;
    let cov_std = spd_inverse(&info)
        .ok_or_else(|| Error::model("observed information is not positive definite at the estimate"))?;

    // back to the original covariate scale: theta_orig = M theta_std
    let p = z.ncols();
    let mut map = DMatrix::identity(m, m);
    for j in 0..p {
        map[(0, j + 1)] = -std.center[j] / std.scale[j];
        map[(j + 1, j + 1)] = 1.0 / std.scale[j];
    }
    let theta_orig = &map * &theta;
    let cov = &map * cov_std * map.transpose();
    let se = |i: usize| cov[(i, i)].max(0.0).sqrt();

    let k = m;
    let scale = fixed.unwrap_or_else(|| theta[q].exp());
    Ok(AftFit {
        distribution: dist,
        column_names: design.spec.column_names(),
        data_fingerprint: fingerprint(cohort, &design),
        spec: design.spec,
        intercept: theta_orig[0],
        intercept_se: se(0),
        coefficients: (1..q).map(|i| theta_orig[i]).collect(),
        std_errors: (1..q).map(se).collect(),
        scale,
        scale_fixed: fixed.is_some(),
        log_scale_se: fixed.is_none().then(|| se(q)),
        covariance: (0..m).map(|i| (0..m).map(|j| cov[(i, j)]).collect()).collect(),
        loglik: current.loglik,
        loglik_start,
        loglik_trace: trace,
        k,
        aic: -2.0 * current.loglik + 2.0 * k as f64,
        n: cohort.len(),
        events: cohort.event_count(),
        iterations,
    })
}

/// `exp(beta)` per design column, in column order.
pub fn acceleration_factors(fit: &AftFit) -> Vec<(String, f64)> {
    fit.column_names
        .iter()
        .zip(&fit.coefficients)
        .map(|(n, b)| (n.clone(), b.exp()))
        .collect()
}

/// Model survival probability `S_W((log t - mu - beta'x) / sigma)`.
pub fn predict_survival(fit: &AftFit, x: &HashMap<String, InputValue>, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::usage(format!("time {t} must be non-negative")));
    }
    let eta = fit.linear_predictor(x)?;
    if t == 0.0 {
        return Ok(1.0);
    }
    let z = (t.ln() - eta) / fit.scale;
    Ok(fit.distribution.error_law().survival(z).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AicRow {
    pub distribution: AftDistribution,
    pub loglik: f64,
    pub k: usize,
    pub aic: f64,
    pub delta_aic: f64,
}

/// Rank fits by AIC, best first. All fits must share the same data and design.
pub fn compare_aic(fits: &[AftFit]) -> Result<Vec<AicRow>> {
    let first = fits.first().ok_or_else(|| Error::usage("no fits to compare"))?;
    for f in &fits[1..] {
        if f.data_fingerprint != first.data_fingerprint || f.column_names != first.column_names {
            return Err(Error::usage(format!(
                "{} fit was estimated on a different cohort or design than {}",
                f.distribution, first.distribution
            )));
        }
    }
    let mut rows: Vec<AicRow> = fits
        .iter()
        .map(|f| AicRow {
            distribution: f.distribution,
            loglik: f.loglik,
            k: f.k,
            aic: f.aic,
            delta_aic: 0.0,
        })
        .collect();
    rows.sort_by(|a, b| a.aic.total_cmp(&b.aic));
    let best = rows[0].aic;
    for r in &mut rows {
        r.delta_aic = r.aic - best;
    }
    Ok(rows)
}

/// Fit every distribution on the same design, in [`AftDistribution::ALL`] order.
pub fn fit_all(cohort: &Cohort, variables: &[String]) -> Vec<Result<AftFit>> {
    AftDistribution::ALL
        .par_iter()
        .map(|&d| aft_fit(cohort, variables, d))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScreenColumn {
    pub name: String,
    pub beta: f64,
    pub se: f64,
    pub p: f64,
}

/// One single-variable fit with per-column Wald tests and a likelihood-ratio
/// test against the intercept-only model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScreenEntry {
    pub variable: String,
    pub categorical: bool,
    pub columns: Vec<ScreenColumn>,
    pub lr_chi_square: f64,
    pub lr_df: usize,
    pub lr_p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreenRow {
    pub variable: String,
    pub result: Result<ScreenEntry>,
}

pub fn univariable_screen(cohort: &Cohort, variables: &[String], dist: AftDistribution) -> Result<Vec<ScreenRow>> {
    let null = aft_fit(cohort, &[], dist)?;
    Ok(variables
        .par_iter()
        .map(|v| {
            let result = aft_fit(cohort, std::slice::from_ref(v), dist).map(|fit| {
                let lr = (2.0 * (fit.loglik - null.loglik)).max(0.0);
                let df = fit.coefficients.len();
                ScreenEntry {
                    variable: v.clone(),
                    categorical: matches!(fit.spec.terms[0].kind, TermKind::Categorical { .. }),
                    columns: fit
                        .column_names
                        .iter()
                        .zip(&fit.coefficients)
                        .zip(&fit.std_errors)
                        .zip(fit.p_values())
                        .map(|(((name, &beta), &se), p)| ScreenColumn {
                            name: name.clone(),
                            beta,
                            se,
                            p,
                        })
                        .collect(),
                    lr_chi_square: lr,
                    lr_df: df,
                    lr_p: chi_square_sf(lr, df),
                }
            });
            ScreenRow {
                variable: v.clone(),
                result,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{Covariate, CovariateSchema, CovariateValue, SurvivalRecord};

    fn plain(d: &[f64], e: &[bool]) -> Cohort {
        Cohort::from_durations(d, e).unwrap()
    }

    fn xcohort(rows: &[(f64, bool, f64, usize)]) -> Cohort {
        let schema = CovariateSchema::new(vec![
            Covariate::continuous("x"),
            Covariate::categorical("g", ["a", "b"]),
        ])
        .unwrap();
        let recs = rows
            .iter()
            .map(|&(t, e, x, g)| {
                SurvivalRecord::with_covariates(t, e, vec![CovariateValue::Number(x), CovariateValue::Level(g)])
            })
            .collect();
        Cohort::new(schema, recs).unwrap()
    }

    fn sample() -> Cohort {
        xcohort(&[
            (1.2, true, 0.5, 0),
            (0.4, true, -1.0, 0),
            (3.1, false, 1.5, 1),
            (2.2, true, 0.1, 1),
            (0.9, true, -0.3, 0),
            (5.0, false, 2.0, 1),
            (1.7, true, 0.7, 1),
            (0.6, true, -0.8, 0),
            (2.8, true, 1.1, 1),
            (1.1, false, 0.0, 0),
        ])
    }

    fn vars() -> Vec<String> {
        vec!["x".into(), "g".into()]
    }

    #[test]
    fn exponential_closed_form() {
        let fit = aft_fit(&plain(&[1.0, 2.0, 3.0], &[true; 3]), &[], AftDistribution::Exponential).unwrap();
        assert!((fit.intercept - 2f64.ln()).abs() < 1e-8);
        assert!((fit.loglik - (3.0 * 0.5f64.ln() - 3.0)).abs() < 1e-10);
        assert_eq!(fit.k, 1);
        assert!((fit.aic - 12.158883).abs() < 1e-5);
        assert_eq!(fit.scale, 1.0);
    }

    #[test]
    fn rayleigh_scale_is_fixed() {
        let fit = aft_fit(&sample(), &vars(), AftDistribution::Rayleigh).unwrap();
        assert_eq!(fit.scale, 0.5);
        assert!(fit.scale_fixed);
        assert_eq!(fit.k, 3);
        assert!(fit.log_scale_se.is_none());
        let w = aft_fit(&sample(), &vars(), AftDistribution::Weibull).unwrap();
        assert_eq!(w.k, 4);
        assert!(w.loglik >= fit.loglik - 1e-9);
    }

    #[test]
    fn aic_identity_and_monotone_trace() {
        for d in AftDistribution::ALL {
            let fit = aft_fit(&sample(), &vars(), d).unwrap();
            assert!((fit.aic + 2.0 * fit.loglik - 2.0 * fit.k as f64).abs() < 1e-9);
            assert!(fit.loglik >= fit.loglik_start);
            for w in fit.loglik_trace.windows(2) {
                assert!(w[1] >= w[0]);
            }
            assert!(fit.std_errors.iter().all(|s| *s >= 0.0));
        }
    }

    #[test]
    fn finite_difference_gradient() {
        let c = sample();
        for d in AftDistribution::ALL {
            let prob = AftProblem::new(&c, &vars(), d).unwrap();
            let m = prob.n_params();
            let theta: Vec<f64> = (0..m).map(|i| 0.2 - 0.15 * i as f64).collect();
            let g = prob.score(&theta);
            let h = prob.hessian(&theta);
            for j in 0..m {
                let eps = 1e-5;
                let mut up = theta.clone();
                let mut dn = theta.clone();
                up[j] += eps;
                dn[j] -= eps;
                let fd = (prob.log_likelihood(&up) - prob.log_likelihood(&dn)) / (2.0 * eps);
                assert!((fd - g[j]).abs() <= 1e-6 * (1.0 + g[j].abs()), "{d} grad {j}: {fd} vs {}", g[j]);
                let gu = prob.score(&up);
                let gd = prob.score(&dn);
                for k in 0..m {
                    let fd2 = (gu[k] - gd[k]) / (2.0 * eps);
                    assert!((fd2 - h[k][j]).abs() <= 1e-5 * (1.0 + h[k][j].abs()), "{d} hess {k},{j}");
                }
            }
        }
    }

    #[test]
    fn nonpositive_durations_rejected() {
        let c = plain(&[0.0, 1.0], &[true, true]);
        assert!(matches!(aft_fit(&c, &[], AftDistribution::Weibull), Err(Error::Data(_))));
        let c = plain(&[1.0, 2.0], &[false, false]);
        assert!(matches!(aft_fit(&c, &[], AftDistribution::Weibull), Err(Error::Data(_))));
    }

    #[test]
    fn rank_deficiency_is_model_error() {
        let c = xcohort(&[(1.0, true, 1.0, 0), (2.0, true, 1.0, 1), (3.0, false, 1.0, 0)]);
        assert!(matches!(aft_fit(&c, &["x".into()], AftDistribution::Weibull), Err(Error::Model(_))));
    }

    #[test]
    fn acceleration_factor_arithmetic() {
        assert!((1.090f64.exp() - 2.97).abs() < 0.01);
        assert!(((-0.511f64).exp() - 0.600).abs() < 0.001);
        let fit = aft_fit(&sample(), &vars(), AftDistribution::LogLogistic).unwrap();
        let af = acceleration_factors(&fit);
        assert_eq!(af.len(), 2);
        assert_eq!(af[1].0, "g=b");
        assert!((af[1].1 - fit.coefficients[1].exp()).abs() < 1e-15);
    }

    fn at_reference() -> HashMap<String, InputValue> {
        let mut x = HashMap::new();
        x.insert("x".to_string(), InputValue::Number(0.0));
        x.insert("g".to_string(), InputValue::Level("a".into()));
        x
    }

    #[test]
    fn prediction_examples() {
        let mut fit = aft_fit(&sample(), &vars(), AftDistribution::LogLogistic).unwrap();
        fit.intercept = 0.0;
        fit.scale = 1.0;
        assert!((predict_survival(&fit, &at_reference(), 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(predict_survival(&fit, &at_reference(), 0.0).unwrap(), 1.0);
        assert!(matches!(predict_survival(&fit, &at_reference(), -1.0), Err(Error::Usage(_))));
        let mut bad = at_reference();
        bad.insert("g".into(), InputValue::Level("zzz".into()));
        assert!(matches!(predict_survival(&fit, &bad, 1.0), Err(Error::Usage(_))));

        let mut exp = aft_fit(&plain(&[1.0, 2.0, 3.0], &[true; 3]), &[], AftDistribution::Exponential).unwrap();
        exp.intercept = 2f64.ln();
        let s = predict_survival(&exp, &HashMap::new(), 2.0).unwrap();
        assert!((s - (-1.0f64).exp()).abs() < 1e-12);

        let fit = aft_fit(&sample(), &vars(), AftDistribution::LogNormal).unwrap();
        let mut prev = 1.0;
        for t in [0.1, 0.5, 1.0, 2.0, 8.0, 100.0] {
            let s = predict_survival(&fit, &at_reference(), t).unwrap();
            assert!(s <= prev && (0.0..=1.0).contains(&s));
            prev = s;
        }
    }

    #[test]
    fn time_scaling_equivariance() {
        let c = sample();
        for d in [AftDistribution::Weibull, AftDistribution::LogLogistic, AftDistribution::LogNormal] {
            let a = aft_fit(&c, &vars(), d).unwrap();
            let b = aft_fit(&c.mapped_durations(|t| t * 7.5), &vars(), d).unwrap();
            assert!((b.intercept - a.intercept - 7.5f64.ln()).abs() < 1e-6);
            for (x, y) in a.coefficients.iter().zip(&b.coefficients) {
                assert!((x - y).abs() < 1e-6);
            }
            assert!((a.scale - b.scale).abs() < 1e-6);
        }
    }

    #[test]
    fn weibull_with_unit_scale_is_exponential() {
        let c = sample();
        let e = aft_fit(&c, &vars(), AftDistribution::Exponential).unwrap();
        let w = aft_fit_fixed_scale(&c, &vars(), AftDistribution::Weibull, 1.0).unwrap();
        assert!((e.loglik - w.loglik).abs() < 1e-8);
        assert!((e.intercept - w.intercept).abs() < 1e-8);
    }

    #[test]
    fn compare_orders_and_checks_cohort() {
        let c = sample();
        let fits: Vec<AftFit> = fit_all(&c, &vars()).into_iter().map(|r| r.unwrap()).collect();
        let table = compare_aic(&fits).unwrap();
        assert_eq!(table.len(), 5);
        assert_eq!(table[0].delta_aic, 0.0);
        assert!(table.windows(2).all(|w| w[0].aic <= w[1].aic));

        let one = compare_aic(&fits[..1]).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].delta_aic, 0.0);

        let other = aft_fit(&c.mapped_durations(|t| t + 1.0), &vars(), AftDistribution::Weibull).unwrap();
        assert!(matches!(compare_aic(&[fits[0].clone(), other]), Err(Error::Usage(_))));
        assert!(matches!(compare_aic(&[]), Err(Error::Usage(_))));
    }

    #[test]
    fn screening_matches_single_fit() {
        let c = sample();
        let rows = univariable_screen(&c, &["x".into(), "g".into()], AftDistribution::Weibull).unwrap();
        let single = aft_fit(&c, &["x".into()], AftDistribution::Weibull).unwrap();
        let entry = rows[0].result.as_ref().unwrap();
        assert_eq!(entry.columns[0].beta, single.coefficients[0]);
        assert_eq!(entry.columns[0].p, single.p_values()[0]);
        assert!(rows[1].result.as_ref().unwrap().categorical);
    }

    #[test]
    fn parse_distribution_names() {
        assert_eq!("log-logistic".parse::<AftDistribution>().unwrap(), AftDistribution::LogLogistic);
        assert_eq!("LogNormal".parse::<AftDistribution>().unwrap(), AftDistribution::LogNormal);
        assert!("gamma".parse::<AftDistribution>().is_err());
    }

    #[test]
    fn quantile_inverts_survival() {
        for law in [ErrorLaw::ExtremeValue, ErrorLaw::Logistic, ErrorLaw::Normal] {
            for u in [0.01, 0.3, 0.5, 0.9] {
                let z = law.quantile(u);
                assert!((1.0 - law.survival(z) - u).abs() < 1e-9);
            }
        }
    }
}
