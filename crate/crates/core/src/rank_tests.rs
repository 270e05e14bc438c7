//! k-sample weighted log-rank tests and Benjamini-Hochberg adjusted pairwise
//! comparisons.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::linalg::quadratic_form_pinv;
use crate::stats::chi_square_sf;

/// Weight applied to the observed-minus-expected term at each event time.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum WeightSpec {
    /// w = 1
    #[default]
    LogRank,
    /// w = pooled number at risk (Gehan-Breslow).
    Gehan,
    /// w = left-continuous pooled Peto-Peto survival, prod (1 - d/(n+1)).
    PetoPeto,
    /// w = S(t-)^rho (1 - S(t-))^gamma with the pooled Kaplan-Meier S.
    FlemingHarrington { rho: f64, gamma: f64 },
}

impl WeightSpec {
    pub fn validate(&self) -> Result<()> {
        if let WeightSpec::FlemingHarrington { rho, gamma } = *self {
            if !(rho.is_finite() && gamma.is_finite() && rho >= 0.0 && gamma >= 0.0) {
                return Err(Error::usage(format!(
                    "Fleming-Harrington parameters must be finite and non-negative, got ({rho}, {gamma})"
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for WeightSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightSpec::LogRank => f.write_str("logrank"),
            WeightSpec::Gehan => f.write_str("gehan"),
            WeightSpec::PetoPeto => f.write_str("peto"),
            WeightSpec::FlemingHarrington { rho, gamma } => write!(f, "fh({rho},{gamma})"),
        }
    }
}

impl FromStr for WeightSpec {
    type Err = Error;

    /// Accepts `logrank`, `gehan`, `peto`, and `fh(rho,gamma)` or `fh:rho,gamma`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let spec = match lower.as_str() {
            "logrank" | "log-rank" => WeightSpec::LogRank,
            "gehan" | "wilcoxon" | "gehan-wilcoxon" => WeightSpec::Gehan,
            "peto" | "petopeto" | "peto-peto" => WeightSpec::PetoPeto,
            other => {
                let args = other
                    .strip_prefix("fh(")
                    .and_then(|r| r.strip_suffix(')'))
                    .or_else(|| other.strip_prefix("fh:"))
                    .ok_or_else(|| Error::usage(format!("unknown weight '{s}'")))?;
                let parts: Vec<&str> = args.split(',').map(str::trim).collect();
                let parse = |p: &str| {
                    p.parse::<f64>()
                        .map_err(|_| Error::usage(format!("bad Fleming-Harrington parameter '{p}'")))
                };
                match parts.as_slice() {
                    [r, g] => WeightSpec::FlemingHarrington {
                        rho: parse(r)?,
                        gamma: parse(g)?,
                    },
                    _ => return Err(Error::usage(format!("fh weight needs two parameters, got '{s}'"))),
                }
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl Serialize for WeightSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupTotals {
    pub level: String,
    pub n: usize,
    pub observed: f64,
    pub expected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankTestResult {
    #[serde(rename = "statistic")]
    pub chi_square: f64,
    pub df: usize,
    #[serde(rename = "p")]
    pub p_value: f64,
    pub weight: WeightSpec,
    /// Non-empty groups only, in level order.
    pub groups: Vec<GroupTotals>,
    /// Weighted observed-minus-expected per group.
    #[serde(skip)]
    pub score: Vec<f64>,
    /// Covariance of `score`, row-major k x k.
    #[serde(skip)]
    pub covariance: Vec<Vec<f64>>,
}

/// Weighted log-rank test over the levels of a categorical variable.
pub fn weighted_logrank(cohort: &Cohort, variable: &str, weight: WeightSpec) -> Result<RankTestResult> {
    let (codes, levels) = cohort.level_indices(variable)?;
    weighted_logrank_groups(&cohort.durations(), &cohort.events(), &codes, &levels, weight)
}

/// Weighted log-rank test on raw slices. `groups[i]` indexes `labels`.
pub fn weighted_logrank_groups(
    durations: &[f64],
    events: &[bool],
    groups: &[usize],
    labels: &[String],
    weight: WeightSpec,
) -> Result<RankTestResult> {
    weight.validate()?;
    if durations.len() != events.len() || durations.len() != groups.len() {
        return Err(Error::usage("durations, events and groups differ in length"));
    }
    let mut sizes = vec![0usize; labels.len()];
    for &g in groups {
        if g >= labels.len() {
            return Err(Error::usage(format!("group index {g} out of range")));
        }
        sizes[g] += 1;
    }
    // compact indices over non-empty groups
    let present: Vec<usize> = (0..labels.len()).filter(|&g| sizes[g] > 0).collect();
    let k = present.len();
    if k < 2 {
        return Err(Error::usage(format!("need at least two non-empty groups, found {k}")));
    }
    if !events.iter().any(|&e| e) {
        return Err(Error::data("no events: the test is undefined"));
    }
    let mut slot = vec![usize::MAX; labels.len()];
    for (j, &g) in present.iter().enumerate() {
        slot[g] = j;
    }

    let mut order: Vec<usize> = (0..durations.len()).collect();
    order.sort_by(|&a, &b| durations[a].total_cmp(&durations[b]));

    let mut at_risk: Vec<f64> = present.iter().map(|&g| sizes[g] as f64).collect();
    let mut observed = vec![0.0; k];
    let mut expected = vec![0.0; k];
    let mut score = vec![0.0; k];
    let mut cov = vec![vec![0.0; k]; k];
    let mut km = 1.0;
    let mut peto = 1.0;
    let mut d_g = vec![0.0; k];
    let mut c_g = vec![0.0; k];

    let mut i = 0;
    while i < order.len() {
        let t = durations[order[i]];
        d_g.iter_mut().for_each(|v| *v = 0.0);
        c_g.iter_mut().for_each(|v| *v = 0.0);
        while i < order.len() && durations[order[i]] == t {
            let j = slot[groups[order[i]]];
            if events[order[i]] {
                d_g[j] += 1.0;
            } else {
                c_g[j] += 1.0;
            }
            i += 1;
        }
        let d: f64 = d_g.iter().sum();
        let n: f64 = at_risk.iter().sum();
        if d > 0.0 {
            let w = match weight {
                WeightSpec::LogRank => 1.0,
                WeightSpec::Gehan => n,
                WeightSpec::PetoPeto => peto,
                WeightSpec::FlemingHarrington { rho, gamma } => fh_weight(km, rho, gamma),
            };
            for g in 0..k {
                let e = at_risk[g] * d / n;
                observed[g] += d_g[g];
                expected[g] += e;
                score[g] += w * (d_g[g] - e);
            }
            if n > 1.0 {
                let factor = w * w * d * (n - d) / (n - 1.0);
                for g in 0..k {
                    let pg = at_risk[g] / n;
                    for h in 0..k {
                        let delta = if g == h { 1.0 } else { 0.0 };
                        cov[g][h] += factor * pg * (delta - at_risk[h] / n);
                    }
                }
            }
            km *= 1.0 - d / n;
            peto *= 1.0 - d / (n + 1.0);
        }
        for g in 0..k {
            at_risk[g] -= d_g[g] + c_g[g];
        }
    }

    let chi_square = reduced_quadratic_form(&score, &cov);
    let df = k - 1;
    Ok(RankTestResult {
        chi_square,
        df,
        p_value: chi_square_sf(chi_square, df),
        weight,
        groups: present
            .iter()
            .enumerate()
            .map(|(j, &g)| GroupTotals {
                level: labels[g].clone(),
                n: sizes[g],
                observed: observed[j],
                expected: expected[j],
            })
            .collect(),
        score,
        covariance: cov,
    })
}

// 0^0 = 1, so FH(0, 0) is exactly log-rank.
fn fh_weight(s: f64, rho: f64, gamma: f64) -> f64 {
    let pow = |base: f64, e: f64| if e == 0.0 { 1.0 } else { base.powf(e) };
    pow(s, rho) * pow(1.0 - s, gamma)
}

/// v' V⁻ v after dropping the last group; falls back to the pseudo-inverse
/// when the reduced covariance is singular.
fn reduced_quadratic_form(score: &[f64], cov: &[Vec<f64>]) -> f64 {
    let m = score.len() - 1;
    let v = DVector::from_iterator(m, score[..m].iter().copied());
    let vm = DMatrix::from_fn(m, m, |r, c| cov[r][c]);
    let stat = match vm.clone().cholesky() {
        Some(ch) => v.dot(&ch.solve(&v)),
        None => quadratic_form_pinv(&vm, &v).0,
    };
    stat.max(0.0)
}

/// Benjamini-Hochberg step-up adjustment, returned in input order.
pub fn bh_adjust(p: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::usage(format!("p-value {bad} outside [0, 1]")));
    }
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (0..m).rev() {
        let idx = order[rank];
        running = running.min(p[idx] * (m as f64 / (rank + 1) as f64));
        adjusted[idx] = running.min(1.0);
    }
    Ok(adjusted)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairwiseMatrix {
    pub levels: Vec<String>,
    /// `raw[i][j]` for i != j; `None` on the diagonal.
    pub raw: Vec<Vec<Option<f64>>>,
    pub adjusted: Vec<Vec<Option<f64>>>,
    pub weight: WeightSpec,
}

impl PairwiseMatrix {
    pub fn comparisons(&self) -> usize {
        let k = self.levels.len();
        k * (k - 1) / 2
    }
}

/// Two-level tests for every pair of non-empty levels, BH-adjusted across
/// all pairs.
pub fn pairwise_tests(cohort: &Cohort, variable: &str, weight: WeightSpec) -> Result<PairwiseMatrix> {
    let (codes, labels) = cohort.level_indices(variable)?;
    let durations = cohort.durations();
    let events = cohort.events();
    let mut present = vec![false; labels.len()];
    for &c in &codes {
        present[c] = true;
    }
    let levels: Vec<usize> = (0..labels.len()).filter(|&l| present[l]).collect();
    if levels.len() < 2 {
        return Err(Error::usage(format!(
            "'{variable}' needs at least two non-empty levels for pairwise tests"
        )));
    }
    let pairs: Vec<(usize, usize)> = (0..levels.len())
        .flat_map(|a| (a + 1..levels.len()).map(move |b| (a, b)))
        .collect();

    let raw_p: Vec<f64> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let (la, lb) = (levels[a], levels[b]);
            let keep: Vec<usize> = (0..codes.len()).filter(|&i| codes[i] == la || codes[i] == lb).collect();
            let d: Vec<f64> = keep.iter().map(|&i| durations[i]).collect();
            let e: Vec<bool> = keep.iter().map(|&i| events[i]).collect();
            let g: Vec<usize> = keep.iter().map(|&i| usize::from(codes[i] == lb)).collect();
            let names = [labels[la].clone(), labels[lb].clone()];
            weighted_logrank_groups(&d, &e, &g, &names, weight).map(|r| r.p_value)
        })
        .collect::<Result<_>>()?;
    let adj_p = bh_adjust(&raw_p)?;

    let k = levels.len();
    let mut raw = vec![vec![None; k]; k];
    let mut adjusted = vec![vec![None; k]; k];
    for (idx, &(a, b)) in pairs.iter().enumerate() {
        raw[a][b] = Some(raw_p[idx]);
        raw[b][a] = Some(raw_p[idx]);
        adjusted[a][b] = Some(adj_p[idx]);
        adjusted[b][a] = Some(adj_p[idx]);
    }
    Ok(PairwiseMatrix {
        levels: levels.iter().map(|&l| labels[l].clone()).collect(),
        raw,
        adjusted,
        weight,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{Covariate, CovariateSchema, CovariateValue, SurvivalRecord};
    use proptest::prelude::*;

    fn labels(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("g{i}")).collect()
    }

    /// Independent two-group log-rank by hypergeometric enumeration: at each
    /// distinct event time take the group-0 death count's mean and variance.
    fn hypergeometric_logrank(times: &[f64], events: &[bool], groups: &[usize]) -> f64 {
        let mut event_times: Vec<f64> = times
            .iter()
            .zip(events)
            .filter(|(_, e)| **e)
            .map(|(t, _)| *t)
            .collect();
        event_times.sort_by(f64::total_cmp);
        event_times.dedup();
        let (mut u, mut var) = (0.0, 0.0);
        for &t in &event_times {
            let risk: Vec<usize> = (0..times.len()).filter(|&i| times[i] >= t).collect();
            let n = risk.len() as f64;
            let n0 = risk.iter().filter(|&&i| groups[i] == 0).count() as f64;
            let d = risk.iter().filter(|&&i| times[i] == t && events[i]).count() as f64;
            let d0 = risk.iter().filter(|&&i| times[i] == t && events[i] && groups[i] == 0).count() as f64;
            u += d0 - n0 * d / n;
            if n > 1.0 {
                var += n0 * (n - n0) * d * (n - d) / (n * n * (n - 1.0));
            }
        }
        u * u / var
    }

    #[test]
    fn four_event_hand_enumeration() {
        // A: 1e, 3e; B: 2e, 4e
        let t = [1.0, 3.0, 2.0, 4.0];
        let e = [true; 4];
        let g = [0, 0, 1, 1];
        let r = weighted_logrank_groups(&t, &e, &g, &labels(2), WeightSpec::LogRank).unwrap();
        let oracle = hypergeometric_logrank(&t, &e, &g);
        assert!((r.chi_square - oracle).abs() < 1e-12);
        // score 2/3, variance 13/18
        assert!((r.chi_square - 8.0 / 13.0).abs() < 1e-12);
        assert_eq!(r.df, 1);
    }

    #[test]
    fn identical_groups_give_zero_statistic() {
        let base = [1.0, 2.0, 2.0, 3.5, 4.0, 6.0];
        let ev = [true, true, false, true, false, true];
        let t: Vec<f64> = base.iter().chain(base.iter()).copied().collect();
        let e: Vec<bool> = ev.iter().chain(ev.iter()).copied().collect();
        let g: Vec<usize> = (0..12).map(|i| i / 6).collect();
        for w in [WeightSpec::LogRank, WeightSpec::Gehan, WeightSpec::PetoPeto] {
            let r = weighted_logrank_groups(&t, &e, &g, &labels(2), w).unwrap();
            assert!(r.chi_square.abs() < 1e-12);
            assert!((r.p_value - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn table_tail_mappings() {
        assert!(chi_square_sf(110.0, 2) < 2e-16);
        assert!((chi_square_sf(8.8, 7) - 0.267).abs() < 0.005);
    }

    #[test]
    fn errors() {
        let t = [1.0, 2.0];
        assert!(matches!(
            weighted_logrank_groups(&t, &[true, true], &[0, 0], &labels(2), WeightSpec::LogRank),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            weighted_logrank_groups(&t, &[false, false], &[0, 1], &labels(2), WeightSpec::LogRank),
            Err(Error::Data(_))
        ));
        let bad = WeightSpec::FlemingHarrington { rho: -1.0, gamma: 0.0 };
        assert!(matches!(
            weighted_logrank_groups(&t, &[true, true], &[0, 1], &labels(2), bad),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn weight_parsing_round_trips() {
        for w in [
            WeightSpec::LogRank,
            WeightSpec::Gehan,
            WeightSpec::PetoPeto,
            WeightSpec::FlemingHarrington { rho: 1.0, gamma: 0.5 },
        ] {
            assert_eq!(w.to_string().parse::<WeightSpec>().unwrap(), w);
        }
        assert_eq!(
            "fh:0,1".parse::<WeightSpec>().unwrap(),
            WeightSpec::FlemingHarrington { rho: 0.0, gamma: 1.0 }
        );
        assert!("fisher".parse::<WeightSpec>().is_err());
    }

    #[test]
    fn peto_weight_is_left_continuous() {
        // single group pair with events at 1 and 2: at t=2 the weight is
        // 1 - 1/(4+1) = 0.8 using the pooled risk set at t=1
        let t = [1.0, 2.0, 3.0, 4.0];
        let e = [true, true, false, false];
        let g = [0, 1, 0, 1];
        let r = weighted_logrank_groups(&t, &e, &g, &labels(2), WeightSpec::PetoPeto).unwrap();
        // t=1: n=4, group0 at risk 2 -> 1 - 0.5 = 0.5; t=2: n=3, group0 at risk 1 -> -1/3
        let want = 1.0 * 0.5 + 0.8 * (-1.0 / 3.0);
        assert!((r.score[0] - want).abs() < 1e-15);
    }

    #[test]
    fn bh_examples() {
        let a = bh_adjust(&[0.01, 0.02, 0.04]).unwrap();
        for (x, y) in a.iter().zip([0.03, 0.03, 0.04]) {
            assert!((x - y).abs() < 1e-15);
        }
        assert_eq!(bh_adjust(&[0.37]).unwrap(), vec![0.37]);
        assert_eq!(bh_adjust(&[1.0, 1.0]).unwrap(), vec![1.0, 1.0]);
        assert!(bh_adjust(&[]).unwrap().is_empty());
        assert!(matches!(bh_adjust(&[0.2, 1.5]), Err(Error::Usage(_))));
    }

    fn three_level_cohort(shift: f64) -> Cohort {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let schema = CovariateSchema::new(vec![Covariate::categorical("g", ["a", "b", "c"])]).unwrap();
        let mut recs = Vec::new();
        for level in 0..3 {
            let rate = if level == 2 { shift } else { 1.0 };
            for _ in 0..80 {
                let u: f64 = rng.random();
                let t = -u.ln() / rate;
                let (t, e) = if t > 3.0 { (3.0, false) } else { (t, true) };
                recs.push(SurvivalRecord::with_covariates(t, e, vec![CovariateValue::Level(level)]));
            }
        }
        Cohort::new(schema, recs).unwrap()
    }

    #[test]
    fn pairwise_identical_pair_has_largest_p() {
        let c = three_level_cohort(3.0);
        let m = pairwise_tests(&c, "g", WeightSpec::PetoPeto).unwrap();
        assert_eq!(m.comparisons(), 3);
        let ab = m.adjusted[0][1].unwrap();
        assert!(ab > m.adjusted[0][2].unwrap());
        assert!(ab > m.adjusted[1][2].unwrap());
        for i in 0..3 {
            assert!(m.raw[i][i].is_none());
            for j in 0..3 {
                if i != j {
                    assert!(m.adjusted[i][j].unwrap() >= m.raw[i][j].unwrap());
                    assert_eq!(m.raw[i][j], m.raw[j][i]);
                }
            }
        }
    }

    #[test]
    fn two_level_pairwise_is_unadjusted() {
        let c = three_level_cohort(2.0).subset(|r| r.covariates[0] != CovariateValue::Level(2));
        let m = pairwise_tests(&c, "g", WeightSpec::LogRank).unwrap();
        assert_eq!(m.levels, ["a", "b"]);
        assert_eq!(m.raw[0][1], m.adjusted[0][1]);
        let direct = weighted_logrank(&c, "g", WeightSpec::LogRank).unwrap();
        assert!((direct.p_value - m.raw[0][1].unwrap()).abs() < 1e-14);
    }

    fn arb_sample() -> impl Strategy<Value = (Vec<f64>, Vec<bool>, Vec<usize>)> {
        (6usize..40).prop_flat_map(|n| {
            (
                proptest::collection::vec(1u32..15, n),
                proptest::collection::vec(proptest::bool::weighted(0.7), n),
                proptest::collection::vec(0usize..3, n),
            )
                .prop_map(|(t, e, g)| (t.into_iter().map(f64::from).collect(), e, g))
        })
    }

    proptest! {
        #[test]
        fn fh_zero_zero_equals_logrank((t, mut e, mut g) in arb_sample()) {
            e[0] = true;
            g[0] = 0;
            g[1] = 1;
            let lr = weighted_logrank_groups(&t, &e, &g, &labels(3), WeightSpec::LogRank).unwrap();
            let fh = weighted_logrank_groups(&t, &e, &g, &labels(3),
                WeightSpec::FlemingHarrington { rho: 0.0, gamma: 0.0 }).unwrap();
            prop_assert_eq!(lr.chi_square, fh.chi_square);
            prop_assert_eq!(lr.p_value, fh.p_value);
        }

        #[test]
        fn observed_minus_expected_sums_to_zero((t, mut e, mut g) in arb_sample()) {
            e[0] = true;
            g[0] = 0;
            g[1] = 2;
            let r = weighted_logrank_groups(&t, &e, &g, &labels(3), WeightSpec::Gehan).unwrap();
            let total: f64 = r.groups.iter().map(|x| x.observed - x.expected).sum();
            prop_assert!(total.abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&r.p_value));
            prop_assert_eq!(r.df, r.groups.len() - 1);
        }

        #[test]
        fn relabeling_groups_leaves_statistic_unchanged((t, mut e, mut g) in arb_sample()) {
            e[0] = true;
            g[0] = 0;
            g[1] = 1;
            g[2] = 2;
            let perm = [2usize, 0, 1];
            let g2: Vec<usize> = g.iter().map(|&x| perm[x]).collect();
            for w in [WeightSpec::LogRank, WeightSpec::PetoPeto] {
                let a = weighted_logrank_groups(&t, &e, &g, &labels(3), w).unwrap();
                let b = weighted_logrank_groups(&t, &e, &g2, &labels(3), w).unwrap();
                prop_assert!((a.chi_square - b.chi_square).abs() <= 1e-8 * (1.0 + a.chi_square));
            }
        }

        #[test]
        fn two_group_scalar_form((t, mut e, g) in arb_sample()) {
            e[0] = true;
            let mut g: Vec<usize> = g.iter().map(|x| x % 2).collect();
            g[0] = 0;
            g[1] = 1;
            for w in [WeightSpec::LogRank, WeightSpec::Gehan, WeightSpec::PetoPeto] {
                let r = weighted_logrank_groups(&t, &e, &g, &labels(2), w).unwrap();
                if r.covariance[0][0] > 0.0 {
                    let scalar = r.score[0] * r.score[0] / r.covariance[0][0];
                    prop_assert!((r.chi_square - scalar).abs() <= 1e-10 * (1.0 + scalar));
                }
            }
            let lr = weighted_logrank_groups(&t, &e, &g, &labels(2), WeightSpec::LogRank).unwrap();
            let oracle = hypergeometric_logrank(&t, &e, &g);
            if oracle.is_finite() {
                prop_assert!((lr.chi_square - oracle).abs() <= 1e-9 * (1.0 + oracle));
            }
        }

        #[test]
        fn bh_is_monotone_and_dominates(p in proptest::collection::vec(0.0f64..=1.0, 1..40)) {
            let adj = bh_adjust(&p).unwrap();
            let mut order: Vec<usize> = (0..p.len()).collect();
            order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
            for w in order.windows(2) {
                prop_assert!(adj[w[0]] <= adj[w[1]]);
            }
            for (a, r) in adj.iter().zip(&p) {
                prop_assert!(a >= r && *a <= 1.0);
            }
        }
    }
}
