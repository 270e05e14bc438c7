//! Cox partial-likelihood regression and the Grambsch-Therneau test of
//! proportional hazards on scaled Schoenfeld residuals.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::cohort::Cohort;
use crate::design::{Design, Standardizer};
use crate::error::{Error, Result};
use crate::km::{km_from_slices, BandKind};
use crate::linalg::{damped_solve, spd_inverse};
use crate::stats::{chi_square_sf, two_sided_normal_p};

const MAX_ITER: usize = 100;
const REL_TOL: f64 = 1e-9;
const MAX_STEP: f64 = 1e3;
/// Standardized coefficient beyond which the likelihood is taken as monotone.
const DIVERGED: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Ties {
    #[default]
    Efron,
    Breslow,
}

impl fmt::Display for Ties {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ties::Efron => "efron",
            Ties::Breslow => "breslow",
        })
    }
}

impl FromStr for Ties {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "efron" => Ok(Ties::Efron),
            "breslow" => Ok(Ties::Breslow),
            _ => Err(Error::usage(format!("unknown ties method '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoxFit {
    pub variables: Vec<String>,
    pub column_names: Vec<String>,
    pub coefficients: Vec<f64>,
    /// Observed information at the estimate, original covariate scale.
    pub information: Vec<Vec<f64>>,
    pub std_errors: Vec<f64>,
    pub loglik: f64,
    pub loglik_null: f64,
    /// Log partial likelihood after each accepted Newton step, starting at 0.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub ties: Ties,
    pub n: usize,
    pub events: usize,
    standardizer: Standardizer,
    beta_std: Vec<f64>,
    var_std: DMatrix<f64>,
}

impl CoxFit {
    pub fn z_scores(&self) -> Vec<f64> {
        self.coefficients.iter().zip(&self.std_errors).map(|(b, s)| b / s).collect()
    }

    pub fn p_values(&self) -> Vec<f64> {
        self.z_scores().into_iter().map(two_sided_normal_p).collect()
    }
}

/// Outcome data sorted by descending time, grouped into tied blocks.
struct RiskSets {
    /// Indices in descending time order.
    order: Vec<usize>,
    /// (start, end) ranges into `order` sharing one time.
    blocks: Vec<(usize, usize)>,
}

impl RiskSets {
    fn new(times: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
        let mut blocks = Vec::new();
        let mut i = 0;
        while i < order.len() {
            let t = times[order[i]];
            let start = i;
            while i < order.len() && times[order[i]] == t {
                i += 1;
            }
            blocks.push((start, i));
        }
        RiskSets { order, blocks }
    }
}

struct Evaluation {
    loglik: f64,
    score: DVector<f64>,
    /// Negative Hessian.
    information: DMatrix<f64>,
}

/// Log partial likelihood, score and information at `beta` for design `z`.
fn evaluate(
    sets: &RiskSets,
    events: &[bool],
    z: &DMatrix<f64>,
    beta: &DVector<f64>,
    ties: Ties,
    with_derivatives: bool,
) -> Evaluation {
    let p = z.ncols();
    let eta = z * beta;
    let shift = eta.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let shift = if shift.is_finite() { shift } else { 0.0 };
    let mut s0 = 0.0;
    let mut s1 = DVector::zeros(p);
    let mut s2 = DMatrix::zeros(p, p);
    let mut loglik = 0.0;
    let mut score = DVector::zeros(p);
    let mut info = DMatrix::zeros(p, p);

    for &(start, end) in &sets.blocks {
        let mut d0 = 0.0;
        let mut d1 = DVector::zeros(p);
        let mut d2 = DMatrix::zeros(p, p);
        let mut deaths = 0usize;
        for &i in &sets.order[start..end] {
            let w = (eta[i] - shift).exp();
            let xi = z.row(i).transpose();
            s0 += w;
            if with_derivatives {
                s1.axpy(w, &xi, 1.0);
                s2.ger(w, &xi, &xi, 1.0);
            }
            if events[i] {
                deaths += 1;
                loglik += eta[i];
                d0 += w;
                if with_derivatives {
                    score += &xi;
                    d1.axpy(w, &xi, 1.0);
                    d2.ger(w, &xi, &xi, 1.0);
                }
            }
        }
        for l in 0..deaths {
            let a = match ties {
                Ties::Efron => l as f64 / deaths as f64,
                Ties::Breslow => 0.0,
            };
            let den = s0 - a * d0;
            loglik -= den.ln() + shift;
            if with_derivatives {
                let mean = (&s1 - &d1 * a) / den;
                score -= &mean;
                info += (&s2 - &d2 * a) / den - &mean * mean.transpose();
            }
        }
    }
    Evaluation {
        loglik,
        score,
        information: info,
    }
}

/// Fit a Cox model by Newton-Raphson with step halving.
pub fn cox_fit(cohort: &Cohort, variables: &[String], ties: Ties) -> Result<CoxFit> {
    if variables.is_empty() {
        return Err(Error::usage("Cox model needs at least one covariate"));
    }
    let events = cohort.events();
    let n_events = events.iter().filter(|&&e| e).count();
    if n_events == 0 {
        return Err(Error::data("Cox model needs at least one event"));
    }
    let design = Design::build(cohort, variables)?;
    let standardizer = design.standardization()?;
    let z = design.standardized(&standardizer);
    let names = design.spec.column_names();
    let sets = RiskSets::new(&cohort.durations());
    let p = z.ncols();

    let mut beta = DVector::zeros(p);
    let mut current = evaluate(&sets, &events, &z, &beta, ties, true);
    let loglik_null = current.loglik;
    let mut trace = vec![current.loglik];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITER {
        iterations += 1;
        let (step, _) = damped_solve(&current.information, &current.score);
        let step_norm = step.norm();
        if !(step_norm <= MAX_STEP) {
            let worst = step.iamax();
            return Err(Error::convergence(format!(
                "Newton step of norm {step_norm:.3e} for column '{}': likelihood is monotone, coefficient diverges",
                names[worst]
            )));
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand = &beta + &step * t;
            let ll = evaluate(&sets, &events, &z, &cand, ties, false).loglik;
            if ll >= current.loglik {
                accepted = Some(cand);
                break;
            }
            t *= 0.5;
        }
        let small_step = (&step * t).amax() < 1e-6;
        match accepted {
            Some(cand) => {
                let next = evaluate(&sets, &events, &z, &cand, ties, true);
                let change = (next.loglik - current.loglik).abs();
                beta = cand;
                current = next;
                trace.push(current.loglik);
                if beta.amax() > DIVERGED {
                    break;
                }
                if change <= REL_TOL * current.loglik.abs().max(1e-300) && small_step {
                    converged = true;
                    break;
                }
            }
            None => {
                // no improving step at machine precision: at the optimum if the step is tiny
                converged = step.amax() < 1e-4;
                break;
            }
        }
    }

    check_divergence(&beta, &current.information, &names, n_events)?;
    if !converged {
        return Err(Error::convergence(format!(
            "Cox fit did not converge in {iterations} iterations (loglik {:.6}, |score| {:.3e})",
            current.loglik,
            current.score.norm()
        )));
    }

    let var_std = spd_inverse(&current.information)
        .ok_or_else(|| Error::model("information matrix is singular at the estimate"))?;
    let s = &standardizer.scale;
    let coefficients: Vec<f64> = (0..p).map(|j| beta[j] / s[j]).collect();
    let information: Vec<Vec<f64>> = (0..p)
        .map(|i| (0..p).map(|j| current.information[(i, j)] / (s[i] * s[j])).collect())
        .collect();
    let std_errors = (0..p).map(|j| var_std[(j, j)].sqrt() / s[j]).collect();

    Ok(CoxFit {
        variables: variables.to_vec(),
        column_names: names,
        coefficients,
        information,
        std_errors,
        loglik: current.loglik,
        loglik_null,
        loglik_trace: trace,
        iterations,
        ties,
        n: cohort.len(),
        events: n_events,
        standardizer,
        beta_std: beta.iter().copied().collect(),
        var_std,
    })
}

fn check_divergence(beta: &DVector<f64>, info: &DMatrix<f64>, names: &[String], events: usize) -> Result<()> {
    for j in 0..beta.len() {
        if beta[j].abs() > DIVERGED || info[(j, j)] < 1e-8 * events as f64 {
            return Err(Error::convergence(format!(
                "coefficient for '{}' diverges (monotone likelihood, standardized estimate {:.3})",
                names[j], beta[j]
            )));
        }
    }
    Ok(())
}

/// Schoenfeld residuals, one row per event in ascending time order.
#[derive(Debug, Clone, PartialEq)]
pub struct Schoenfeld {
    pub times: Vec<f64>,
    /// Original covariate scale, one vector per event.
    pub residuals: Vec<Vec<f64>>,
}

fn schoenfeld_std(
    fit: &CoxFit,
    cohort: &Cohort,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let design = Design::build(cohort, &fit.variables)?;
    if design.spec.column_names() != fit.column_names {
        return Err(Error::usage("cohort design does not match the fitted model"));
    }
    let z = design.standardized(&fit.standardizer);
    let times = cohort.durations();
    let events = cohort.events();
    let sets = RiskSets::new(&times);
    let p = z.ncols();
    let beta = DVector::from_column_slice(&fit.beta_std);
    let eta = &z * &beta;
    let shift = eta.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));

    let mut s0 = 0.0;
    let mut s1 = DVector::zeros(p);
    let mut rows: Vec<(f64, DVector<f64>)> = Vec::new();
    for &(start, end) in &sets.blocks {
        let mut d0 = 0.0;
        let mut d1 = DVector::zeros(p);
        let mut dead = Vec::new();
        for &i in &sets.order[start..end] {
            let w = (eta[i] - shift).exp();
            let xi = z.row(i).transpose();
            s0 += w;
            s1.axpy(w, &xi, 1.0);
            if events[i] {
                d0 += w;
                d1.axpy(w, &xi, 1.0);
                dead.push(i);
            }
        }
        if dead.is_empty() {
            continue;
        }
        let d = dead.len();
        let mut mean = DVector::zeros(p);
        for l in 0..d {
            let a = match fit.ties {
                Ties::Efron => l as f64 / d as f64,
                Ties::Breslow => 0.0,
            };
            mean += (&s1 - &d1 * a) / (s0 - a * d0);
        }
        mean /= d as f64;
        for &i in &dead {
            rows.push((times[i], z.row(i).transpose() - &mean));
        }
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut r = DMatrix::zeros(rows.len(), p);
    for (k, (_, v)) in rows.iter().enumerate() {
        r.set_row(k, &v.transpose());
    }
    Ok((rows.into_iter().map(|(t, _)| t).collect(), r))
}

pub fn schoenfeld_residuals(fit: &CoxFit, cohort: &Cohort) -> Result<Schoenfeld> {
    let (times, r) = schoenfeld_std(fit, cohort)?;
    let s = &fit.standardizer.scale;
    let residuals = (0..r.nrows())
        .map(|k| (0..r.ncols()).map(|j| r[(k, j)] * s[j]).collect())
        .collect();
    Ok(Schoenfeld { times, residuals })
}

/// Time scale against which residuals are correlated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeTransform {
    /// One minus the left-continuous pooled Kaplan-Meier survival.
    #[default]
    Km,
    Identity,
    Rank,
    Log,
}

impl fmt::Display for TimeTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TimeTransform::Km => "km",
            TimeTransform::Identity => "identity",
            TimeTransform::Rank => "rank",
            TimeTransform::Log => "log",
        })
    }
}

impl FromStr for TimeTransform {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "km" => Ok(TimeTransform::Km),
            "identity" => Ok(TimeTransform::Identity),
            "rank" => Ok(TimeTransform::Rank),
            "log" => Ok(TimeTransform::Log),
            _ => Err(Error::usage(format!("unknown time transform '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhColumn {
    pub name: String,
    #[serde(rename = "chisq")]
    pub chi_square: f64,
    pub df: usize,
    #[serde(rename = "p")]
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhTestResult {
    pub columns: Vec<PhColumn>,
    pub global: PhColumn,
    pub transform: TimeTransform,
}

fn transformed_times(times: &[f64], cohort: &Cohort, transform: TimeTransform) -> Result<Vec<f64>> {
    Ok(match transform {
        TimeTransform::Identity => times.to_vec(),
        TimeTransform::Log => {
            if times.iter().any(|&t| t <= 0.0) {
                return Err(Error::data("log transform needs positive event times"));
            }
            times.iter().map(|t| t.ln()).collect()
        }
        TimeTransform::Rank => {
            // average ranks for ties; times arrive sorted
            let mut ranks = vec![0.0; times.len()];
            let mut i = 0;
            while i < times.len() {
                let mut j = i;
                while j < times.len() && times[j] == times[i] {
                    j += 1;
                }
                let avg = (i + 1 + j) as f64 / 2.0;
                ranks[i..j].iter_mut().for_each(|r| *r = avg);
                i = j;
            }
            ranks
        }
        TimeTransform::Km => {
            let curve = km_from_slices(&cohort.durations(), &cohort.events(), BandKind::LogLog);
            times
                .iter()
                .map(|&t| {
                    let k = curve.steps.partition_point(|s| s.time < t);
                    let left = if k == 0 { 1.0 } else { curve.steps[k - 1].survival };
                    1.0 - left
                })
                .collect()
        }
    })
}

/// Grambsch-Therneau test: per-column and global chi-squares from the
/// correlation of scaled Schoenfeld residuals with transformed time.
pub fn ph_test(fit: &CoxFit, cohort: &Cohort, transform: TimeTransform) -> Result<PhTestResult> {
    if cohort.event_count() == 0 {
        return Err(Error::data("proportional-hazards test needs events"));
    }
    let (times, r) = schoenfeld_std(fit, cohort)?;
    let d = r.nrows() as f64;
    let g = transformed_times(&times, cohort, transform)?;
    let g_mean = g.iter().sum::<f64>() / d;
    let xx = DVector::from_iterator(g.len(), g.iter().map(|v| v - g_mean));
    let ss = xx.norm_squared();
    if !(ss > 1e-14 * d) {
        return Err(Error::model("transformed event times have no spread; residual covariance is singular"));
    }
    let v = &fit.var_std;
    let p = r.ncols();

    // u = sum_k xx_k r_k
    let u = r.transpose() * &xx;
    let scaled = (v * &u) * d;
    let mut columns = Vec::with_capacity(p);
    for j in 0..p {
        let denom = v[(j, j)] * d * ss;
        let chi = scaled[j] * scaled[j] / denom;
        columns.push(PhColumn {
            name: fit.column_names[j].clone(),
            chi_square: chi,
            df: 1,
            p_value: chi_square_sf(chi, 1),
        });
    }
    let global_chi = (u.transpose() * v * &u)[(0, 0)] * d / ss;
    Ok(PhTestResult {
        columns,
        global: PhColumn {
            name: "GLOBAL".into(),
            chi_square: global_chi,
            df: p,
            p_value: chi_square_sf(global_chi, p),
        },
        transform,
    })
}
