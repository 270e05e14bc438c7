//! Product-limit survival estimation with Greenwood variance.
//!
//! Censorings tied with an event time stay in that time's risk set. Each
//! step of the curve is an event time; censorings between event times are
//! attributed to the step that closes the interval they fall in.

use serde::Serialize;

use crate::cohort::{split_by_level, Cohort};
use crate::error::{Error, Result};

/// 97.5% standard normal quantile.
const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandKind {
    /// Complementary log-log transformed Greenwood interval.
    #[default]
    LogLog,
    /// Plain Greenwood interval, clipped to [0, 1].
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveStep {
    pub time: f64,
    pub n_risk: usize,
    pub n_event: usize,
    /// Censorings in [time, next event time).
    pub n_censor: usize,
    pub survival: f64,
    /// Greenwood variance of the survival estimate.
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl CurveStep {
    pub fn std_err(&self) -> f64 {
        self.variance.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurvivalCurve {
    pub steps: Vec<CurveStep>,
    pub n: usize,
    pub events: usize,
    /// Censorings before the first event time.
    pub censored_before_first: usize,
    /// Largest observed duration, event or censored.
    pub max_time: f64,
    pub band: BandKind,
}

/// Survival value together with whether the evaluation time lies beyond the
/// observed follow-up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub beyond_follow_up: bool,
}

pub fn km_fit(cohort: &Cohort) -> Result<SurvivalCurve> {
    km_fit_with_band(cohort, BandKind::LogLog)
}

pub fn km_fit_with_band(cohort: &Cohort, band: BandKind) -> Result<SurvivalCurve> {
    if cohort.is_empty() {
        return Err(Error::data("Kaplan-Meier fit needs at least one record"));
    }
    Ok(km_from_slices(&cohort.durations(), &cohort.events(), band))
}

/// Product-limit estimate from raw slices; callers guarantee non-empty input
/// of equal length.
pub(crate) fn km_from_slices(durations: &[f64], events: &[bool], band: BandKind) -> SurvivalCurve {
    let mut order: Vec<usize> = (0..durations.len()).collect();
    order.sort_by(|&a, &b| durations[a].total_cmp(&durations[b]));

    let n = durations.len();
    let mut at_risk = n;
    let mut survival = 1.0;
    let mut greenwood_sum = 0.0;
    let mut steps: Vec<CurveStep> = Vec::new();
    let mut censored_before_first = 0;
    // before any censoring the product telescopes to a plain ratio, which
    // keeps the uncensored case exactly equal to the empirical survivor
    let mut uncensored = true;

    let mut i = 0;
    while i < n {
        let t = durations[order[i]];
        let mut d = 0;
        let mut c = 0;
        while i < n && durations[order[i]] == t {
            if events[order[i]] {
                d += 1;
            } else {
                c += 1;
            }
            i += 1;
        }
        if d > 0 {
            survival = if uncensored {
                (at_risk - d) as f64 / n as f64
            } else {
                survival * (1.0 - d as f64 / at_risk as f64)
            };
            let variance = if d == at_risk {
                survival = 0.0;
                0.0
            } else {
                greenwood_sum += d as f64 / (at_risk as f64 * (at_risk - d) as f64);
                survival * survival * greenwood_sum
            };
            let (ci_low, ci_high) = band_at(survival, greenwood_sum, variance, band);
            steps.push(CurveStep {
                time: t,
                n_risk: at_risk,
                n_event: d,
                n_censor: c,
                survival,
                variance,
                ci_low,
                ci_high,
            });
        } else if let Some(last) = steps.last_mut() {
            last.n_censor += c;
        } else {
            censored_before_first += c;
        }
        at_risk -= d + c;
        uncensored &= c == 0;
    }

    SurvivalCurve {
        steps,
        n,
        events: events.iter().filter(|&&e| e).count(),
        censored_before_first,
        max_time: durations.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        band,
    }
}

fn band_at(survival: f64, greenwood_sum: f64, variance: f64, band: BandKind) -> (f64, f64) {
    if survival <= 0.0 {
        return (0.0, 0.0);
    }
    match band {
        BandKind::Linear => {
            let half = Z_95 * variance.sqrt();
            ((survival - half).max(0.0), (survival + half).min(1.0))
        }
        BandKind::LogLog => {
            let log_s = survival.ln();
            if log_s == 0.0 {
                return (1.0, 1.0);
            }
            let theta = greenwood_sum.sqrt() / log_s.abs();
            let low = survival.powf((Z_95 * theta).exp());
            let high = survival.powf((-Z_95 * theta).exp());
            (low.clamp(0.0, 1.0), high.clamp(0.0, 1.0))
        }
    }
}

impl SurvivalCurve {
    /// Right-continuous evaluation of the step function.
    pub fn survival_at(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::usage(format!("evaluation time {t} must be non-negative")));
        }
        let k = self.steps.partition_point(|s| s.time <= t);
        Ok(if k == 0 { 1.0 } else { self.steps[k - 1].survival })
    }

    /// Like [`survival_at`](Self::survival_at) but flags times past the
    /// largest observed duration.
    pub fn estimate_at(&self, t: f64) -> Result<Estimate> {
        Ok(Estimate {
            value: self.survival_at(t)?,
            beyond_follow_up: t > self.max_time,
        })
    }

    /// Smallest event time with survival at or below `1 - q`.
    pub fn quantile(&self, q: f64) -> Result<Option<f64>> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::usage(format!("quantile level {q} outside (0, 1)")));
        }
        let threshold = 1.0 - q;
        // small slack so that e.g. S = 0.5 computed as 0.5000000000000001 counts
        Ok(self
            .steps
            .iter()
            .find(|s| s.survival <= threshold + 1e-12)
            .map(|s| s.time))
    }

    pub fn median(&self) -> Option<f64> {
        self.quantile(0.5).expect("0.5 is a valid level")
    }

    /// Area under the curve on [0, tau].
    pub fn restricted_mean(&self, tau: f64) -> f64 {
        let mut area = 0.0;
        let mut prev_t = 0.0;
        let mut prev_s = 1.0;
        for s in &self.steps {
            if s.time >= tau {
                break;
            }
            area += prev_s * (s.time - prev_t);
            prev_t = s.time;
            prev_s = s.survival;
        }
        area + prev_s * (tau - prev_t).max(0.0)
    }

    pub fn last_event_time(&self) -> Option<f64> {
        self.steps.last().map(|s| s.time)
    }
}

/// One curve per level of a categorical variable, in schema level order.
pub fn km_stratified(cohort: &Cohort, variable: &str) -> Result<Vec<(String, SurvivalCurve)>> {
    km_stratified_with_band(cohort, variable, BandKind::LogLog)
}

pub fn km_stratified_with_band(
    cohort: &Cohort,
    variable: &str,
    band: BandKind,
) -> Result<Vec<(String, SurvivalCurve)>> {
    split_by_level(cohort, variable)?
        .into_iter()
        .map(|(level, sub)| {
            if sub.is_empty() {
                return Err(Error::data(format!("level '{level}' of '{variable}' has no records")));
            }
            let curve = km_fit_with_band(&sub, band)?;
            Ok((level, curve))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{Covariate, CovariateSchema, CovariateValue, SurvivalRecord};

    fn cohort(d: &[f64], e: &[bool]) -> Cohort {
        Cohort::from_durations(d, e).unwrap()
    }

    fn example() -> SurvivalCurve {
        // (2e, 2e, 4c, 5e, 6c)
        km_fit(&cohort(&[2.0, 2.0, 4.0, 5.0, 6.0], &[true, true, false, true, false])).unwrap()
    }

    #[test]
    fn hand_computed_products() {
        let c = km_fit(&cohort(&[1.0, 2.0, 3.0], &[true, false, true])).unwrap();
        assert_eq!(c.steps.len(), 2);
        assert!((c.steps[0].survival - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.steps[1].survival, 0.0);

        let c = example();
        assert!((c.survival_at(2.0).unwrap() - 0.6).abs() < 1e-15);
        assert!((c.survival_at(5.0).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(c.steps[0].n_censor, 1);
        assert_eq!(c.steps[1].n_risk, 2);
    }

    #[test]
    fn single_event_record() {
        let c = km_fit(&cohort(&[5.0], &[true])).unwrap();
        assert_eq!(c.steps.len(), 1);
        assert_eq!(c.steps[0].survival, 0.0);
        assert_eq!(c.steps[0].variance, 0.0);
    }

    #[test]
    fn empty_cohort_is_a_data_error() {
        assert!(matches!(km_fit(&cohort(&[], &[])), Err(Error::Data(_))));
    }

    #[test]
    fn step_evaluation() {
        let c = example();
        assert!((c.survival_at(3.0).unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(c.survival_at(0.0).unwrap(), 1.0);
        assert_eq!(c.survival_at(1.999).unwrap(), 1.0);
        // last observation censored: the curve stays above zero
        assert!((c.survival_at(100.0).unwrap() - 0.3).abs() < 1e-15);
        assert!(c.estimate_at(100.0).unwrap().beyond_follow_up);
        assert!(!c.estimate_at(6.0).unwrap().beyond_follow_up);
        assert!(matches!(c.survival_at(-1.0), Err(Error::Usage(_))));
    }

    #[test]
    fn quantiles() {
        let c = example();
        assert_eq!(c.quantile(0.5).unwrap(), Some(5.0));
        assert_eq!(c.median(), Some(5.0));
        let censored = km_fit(&cohort(&[1.0, 2.0], &[false, false])).unwrap();
        assert_eq!(censored.median(), None);
        assert!(censored.steps.is_empty());
        assert_eq!(censored.censored_before_first, 2);
        assert!(matches!(c.quantile(0.0), Err(Error::Usage(_))));
        assert!(matches!(c.quantile(1.0), Err(Error::Usage(_))));
    }

    #[test]
    fn greenwood_matches_hand_value() {
        let c = example();
        // at t=2: n=5, d=2 -> sum = 2/(5*3)
        let v0 = 0.36 * (2.0 / 15.0);
        assert!((c.steps[0].variance - v0).abs() < 1e-15);
        // at t=5: n=2, d=1 -> sum += 1/(2*1)
        let v1 = 0.09 * (2.0 / 15.0 + 0.5);
        assert!((c.steps[1].variance - v1).abs() < 1e-15);
    }

    #[test]
    fn bands_are_ordered_and_in_range() {
        for band in [BandKind::LogLog, BandKind::Linear] {
            let c = km_fit_with_band(&cohort(&[1.0, 2.0, 2.0, 3.0, 4.0, 5.0], &[true; 6]), band).unwrap();
            for s in &c.steps {
                assert!(0.0 <= s.ci_low && s.ci_low <= s.survival + 1e-15);
                assert!(s.survival <= s.ci_high + 1e-15 && s.ci_high <= 1.0);
            }
        }
    }

    #[test]
    fn zero_duration_event_is_a_step_at_zero() {
        let c = km_fit(&cohort(&[0.0, 1.0], &[true, true])).unwrap();
        assert_eq!(c.steps[0].time, 0.0);
        assert_eq!(c.survival_at(0.0).unwrap(), 0.5);
    }

    #[test]
    fn restricted_mean_of_hand_curve() {
        let c = example();
        // 1*2 + 0.6*3 + 0.3*1
        assert!((c.restricted_mean(6.0) - (2.0 + 1.8 + 0.3)).abs() < 1e-12);
        assert!((c.restricted_mean(1.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stratified_curves() {
        let schema = CovariateSchema::new(vec![Covariate::categorical("g", ["a", "b", "c"])]).unwrap();
        let mut recs = Vec::new();
        for (i, t) in [1.0, 2.0, 3.0, 4.0].iter().enumerate() {
            for lvl in 0..2 {
                recs.push(SurvivalRecord::with_covariates(*t, i != 2, vec![CovariateValue::Level(lvl)]));
            }
        }
        let c = Cohort::new(schema.clone(), recs.clone()).unwrap();
        // level c empty
        assert!(matches!(km_stratified(&c, "g"), Err(Error::Data(_))));

        recs.push(SurvivalRecord::with_covariates(9.0, true, vec![CovariateValue::Level(2)]));
        let c = Cohort::new(schema, recs).unwrap();
        let curves = km_stratified(&c, "g").unwrap();
        assert_eq!(curves.len(), 3);
        assert_eq!(curves[0].1, curves[1].1);
    }
}
