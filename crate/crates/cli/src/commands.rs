//! One function per subcommand: validate options, load, analyse, render.

use std::fs;
use std::path::PathBuf;

use serde::Serialize;
use survkit::aft::{acceleration_factors, aft_fit, compare_aic, univariable_screen, AftDistribution, AftFit, AicRow};
use survkit::cohort::{summarize as summary_report, write_csv, Cohort, CovariateKind, SummaryReport};
use survkit::cox::{cox_fit, ph_test, PhColumn, Ties, TimeTransform};
use survkit::error::{Error, Result};
use survkit::grouping::{group_curves, GroupAssignment, GroupingOptions};
use survkit::km::{km_fit_with_band, km_stratified_with_band, BandKind, CurveStep, SurvivalCurve};
use survkit::rank_tests::{pairwise_tests, weighted_logrank, PairwiseMatrix, RankTestResult, WeightSpec};
use survkit::simulator::{paper_preset, simulate_cohort, SimConfig};

use crate::render::{sig6, Cell, Table};
use crate::{write_to, Format, InputArgs, OutputArgs, Preset};

fn emit_json<T: Serialize>(out: &OutputArgs, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(format!("JSON encoding: {e}")))?;
    text.push('\n');
    write_to(&out.output, &text)
}

fn emit_tables(out: &OutputArgs, tables: &[Table], footer: &[String]) -> Result<()> {
    let mut text = tables.iter().map(Table::render).collect::<Vec<_>>().join("\n");
    if !footer.is_empty() {
        text.push('\n');
        for line in footer {
            text.push_str(line);
            text.push('\n');
        }
    }
    write_to(&out.output, &text)
}

fn emit_csv(out: &OutputArgs, table: &Table) -> Result<()> {
    write_to(&out.output, &table.to_csv())
}

/// Model variables: the given list, or every covariate of the cohort.
fn model_variables(cohort: &Cohort, vars: &[String]) -> Vec<String> {
    if vars.is_empty() {
        cohort.schema().iter().map(|c| c.name.clone()).collect()
    } else {
        vars.to_vec()
    }
}

fn pct(count: usize, percent: f64) -> String {
    format!("{count} ({percent:.1})")
}

// ---------------------------------------------------------------------------

pub fn summarize(input: &InputArgs, out: &OutputArgs) -> Result<()> {
    let cohort = input.load()?;
    let report = summary_report(&cohort)?;
    match out.format {
        Format::Json => emit_json(out, &report),
        Format::Csv => emit_csv(out, &summary_csv(&report)),
        Format::Table => {
            let mut cat = Table::new(&["Categorical variables", "N (%)", "Censored (%)"])
                .titled("Distribution of the categorical variables");
            cat.push(vec![Cell::text(cohort.event_column()), Cell::Empty, Cell::Empty]);
            let events_pct = 100.0 * report.events as f64 / report.n as f64;
            cat.push(vec![Cell::text("  0 - censored"), Cell::text(pct(report.censored, report.censored_percent)), Cell::Empty]);
            cat.push(vec![Cell::text("  1 - event"), Cell::text(pct(report.events, events_pct)), Cell::Empty]);
            for var in &report.categorical {
                cat.push(vec![Cell::text(&var.name), Cell::Empty, Cell::Empty]);
                for l in &var.levels {
                    cat.push(vec![
                        Cell::text(format!("  {}", l.level)),
                        Cell::text(pct(l.n, l.percent)),
                        Cell::text(pct(l.censored, l.censored_percent)),
                    ]);
                }
            }
            let mut cont = Table::new(&["Variable", "Mean (SD)"]).titled("Mean and standard deviation for the scale variables");
            for var in std::iter::once(&report.duration).chain(&report.continuous) {
                let sd = var.sd.map_or("NA".to_string(), sig6);
                cont.push(vec![Cell::text(&var.name), Cell::text(format!("{} ({sd})", sig6(var.mean)))]);
            }
            emit_tables(out, &[cat, cont], &[])
        }
    }
}

fn summary_csv(report: &SummaryReport) -> Table {
    let mut t = Table::new(&["variable", "level", "n", "percent", "censored", "censored_percent", "mean", "sd"]);
    for var in &report.categorical {
        for l in &var.levels {
            t.push(vec![
                Cell::text(&var.name),
                Cell::text(&l.level),
                Cell::Int(l.n),
                Cell::Num(l.percent),
                Cell::Int(l.censored),
                Cell::Num(l.censored_percent),
                Cell::Empty,
                Cell::Empty,
            ]);
        }
    }
    for var in std::iter::once(&report.duration).chain(&report.continuous) {
        t.push(vec![
            Cell::text(&var.name),
            Cell::Empty,
            Cell::Int(report.n),
            Cell::Empty,
            Cell::Empty,
            Cell::Empty,
            Cell::Num(var.mean),
            var.sd.map_or(Cell::Empty, Cell::Num),
        ]);
    }
    t
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct StepOut {
    time: f64,
    n_risk: usize,
    n_event: usize,
    n_censor: usize,
    survival: f64,
    std_err: f64,
    ci_low: f64,
    ci_high: f64,
}

impl From<&CurveStep> for StepOut {
    fn from(s: &CurveStep) -> Self {
        StepOut {
            time: s.time,
            n_risk: s.n_risk,
            n_event: s.n_event,
            n_censor: s.n_censor,
            survival: s.survival,
            std_err: s.std_err(),
            ci_low: s.ci_low,
            ci_high: s.ci_high,
        }
    }
}

#[derive(Serialize)]
struct EstimateOut {
    time: f64,
    survival: f64,
    beyond_follow_up: bool,
}

#[derive(Serialize)]
struct CurveOut {
    variable: Option<String>,
    level: Option<String>,
    n: usize,
    events: usize,
    median: Option<f64>,
    estimates: Vec<EstimateOut>,
    steps: Vec<StepOut>,
}

#[derive(Serialize)]
struct KmOut {
    band: &'static str,
    times: Vec<f64>,
    curves: Vec<CurveOut>,
}

fn step_table(curves: &[CurveOut], stratified: bool) -> Table {
    let base = ["time", "n_risk", "n_event", "n_censor", "survival", "std_err", "ci_low", "ci_high"];
    let headers: Vec<&str> = if stratified {
        ["variable", "level"].iter().chain(&base).copied().collect()
    } else {
        base.to_vec()
    };
    let mut t = Table::new(&headers);
    for c in curves {
        for s in &c.steps {
            let mut row = Vec::new();
            if stratified {
                row.push(Cell::text(c.variable.clone().unwrap_or_default()));
                row.push(Cell::text(c.level.clone().unwrap_or_default()));
            }
            row.extend([
                Cell::Num(s.time),
                Cell::Int(s.n_risk),
                Cell::Int(s.n_event),
                Cell::Int(s.n_censor),
                Cell::Num(s.survival),
                Cell::Num(s.std_err),
                Cell::Num(s.ci_low),
                Cell::Num(s.ci_high),
            ]);
            t.push(row);
        }
    }
    t
}

pub fn km(
    input: &InputArgs,
    out: &OutputArgs,
    by: &[String],
    times: &[f64],
    band: BandKind,
    plot_data: Option<&PathBuf>,
) -> Result<()> {
    if let Some(t) = times.iter().find(|t| !(**t >= 0.0)) {
        return Err(Error::Usage(format!("evaluation time {t} must be non-negative")));
    }
    let cohort = input.load()?;
    let mut fitted: Vec<(Option<String>, Option<String>, SurvivalCurve)> = Vec::new();
    if by.is_empty() {
        fitted.push((None, None, km_fit_with_band(&cohort, band)?));
    }
    for var in by {
        for (level, curve) in km_stratified_with_band(&cohort, var, band)? {
            fitted.push((Some(var.clone()), Some(level), curve));
        }
    }
    let curves: Vec<CurveOut> = fitted
        .iter()
        .map(|(variable, level, curve)| {
            Ok(CurveOut {
                variable: variable.clone(),
                level: level.clone(),
                n: curve.n,
                events: curve.events,
                median: curve.median(),
                estimates: times
                    .iter()
                    .map(|&t| {
                        let e = curve.estimate_at(t)?;
                        Ok(EstimateOut {
                            time: t,
                            survival: e.value,
                            beyond_follow_up: e.beyond_follow_up,
                        })
                    })
                    .collect::<Result<_>>()?,
                steps: curve.steps.iter().map(StepOut::from).collect(),
            })
        })
        .collect::<Result<_>>()?;
    let stratified = !by.is_empty();
    if let Some(path) = plot_data {
        write_to(&Some(path.clone()), &step_table(&curves, stratified).to_csv())?;
    }
    match out.format {
        Format::Json => emit_json(
            out,
            &KmOut {
                band: match band {
                    BandKind::LogLog => "loglog",
                    BandKind::Linear => "linear",
                },
                times: times.to_vec(),
                curves,
            },
        ),
        Format::Csv => emit_csv(out, &step_table(&curves, stratified)),
        Format::Table => {
            let time_labels: Vec<String> = times.iter().map(|t| sig6(*t)).collect();
            let mut headers = vec![""];
            headers.extend(time_labels.iter().map(String::as_str));
            let mut est = Table::new(&headers).titled("Survival estimates");
            let mut med = Table::new(&["", "n", "events", "median"]).titled("Median survival");
            let mut current: Option<&str> = None;
            for c in &curves {
                let label = match (&c.variable, &c.level) {
                    (Some(v), Some(l)) => {
                        if current != Some(v.as_str()) {
                            est.push(vec![Cell::text(v)]);
                            med.push(vec![Cell::text(v)]);
                            current = Some(v.as_str());
                        }
                        format!("  {l}")
                    }
                    _ => "all".to_string(),
                };
                let mut row = vec![Cell::text(&label)];
                row.extend(c.estimates.iter().map(|e| {
                    if e.beyond_follow_up {
                        Cell::text("-")
                    } else {
                        Cell::Num(e.survival)
                    }
                }));
                est.push(row);
                med.push(vec![
                    Cell::text(label),
                    Cell::Int(c.n),
                    Cell::Int(c.events),
                    c.median.map_or(Cell::text("NA"), Cell::Num),
                ]);
            }
            emit_tables(out, &[est, med], &[])
        }
    }
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct TestOut {
    variable: String,
    #[serde(flatten)]
    result: RankTestResult,
}

#[derive(Serialize)]
struct TestsOut {
    results: Vec<TestOut>,
}

fn weight_label(w: &WeightSpec) -> String {
    match w {
        WeightSpec::LogRank => "Log-rank".into(),
        WeightSpec::Gehan => "Gehan".into(),
        WeightSpec::PetoPeto => "Peto-Peto".into(),
        other => other.to_string(),
    }
}

pub fn test(input: &InputArgs, out: &OutputArgs, by: &[String], weights: &[WeightSpec]) -> Result<()> {
    for w in weights {
        w.validate()?;
    }
    let cohort = input.load()?;
    let mut results = Vec::new();
    for var in by {
        for w in weights {
            results.push(TestOut {
                variable: var.clone(),
                result: weighted_logrank(&cohort, var, *w)?,
            });
        }
    }
    match out.format {
        Format::Json => emit_json(out, &TestsOut { results }),
        Format::Csv => {
            let mut t = Table::new(&["variable", "weight", "statistic", "df", "p"]);
            for r in &results {
                t.push(vec![
                    Cell::text(&r.variable),
                    Cell::text(r.result.weight.to_string()),
                    Cell::Num(r.result.chi_square),
                    Cell::Int(r.result.df),
                    Cell::P(r.result.p_value),
                ]);
            }
            emit_csv(out, &t)
        }
        Format::Table => {
            let mut headers = vec!["Variable".to_string()];
            for w in weights {
                headers.push(format!("{} X2(df)", weight_label(w)));
                headers.push(format!("{} p-value", weight_label(w)));
            }
            let refs: Vec<&str> = headers.iter().map(String::as_str).collect();
            let mut t = Table::new(&refs).titled("Tests for comparison of survival curves");
            for chunk in results.chunks(weights.len()) {
                let mut row = vec![Cell::text(&chunk[0].variable)];
                for r in chunk {
                    row.push(Cell::text(format!("{} ({})", sig6(r.result.chi_square), r.result.df)));
                    row.push(Cell::P(r.result.p_value));
                }
                t.push(row);
            }
            emit_tables(out, &[t], &[])
        }
    }
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct PairwiseOut {
    variable: String,
    comparisons: usize,
    #[serde(flatten)]
    matrix: PairwiseMatrix,
}

pub fn pairwise(input: &InputArgs, out: &OutputArgs, by: &str, weight: WeightSpec) -> Result<()> {
    weight.validate()?;
    let cohort = input.load()?;
    let m = pairwise_tests(&cohort, by, weight)?;
    let k = m.levels.len();
    match out.format {
        Format::Json => emit_json(
            out,
            &PairwiseOut {
                variable: by.to_string(),
                comparisons: m.comparisons(),
                matrix: m,
            },
        ),
        Format::Csv => {
            let mut headers = vec!["level"];
            headers.extend(m.levels.iter().map(String::as_str));
            let mut t = Table::new(&headers);
            for i in 0..k {
                let mut row = vec![Cell::text(&m.levels[i])];
                row.extend(m.adjusted[i].iter().map(|p| p.map_or(Cell::Empty, Cell::P)));
                t.push(row);
            }
            emit_csv(out, &t)
        }
        Format::Table => {
            let mut headers = vec![""];
            headers.extend(m.levels[..k - 1].iter().map(String::as_str));
            let mut t = Table::new(&headers).titled(format!(
                "P-values for the pairwise comparisons based on {} test, Benjamini-Hochberg adjusted",
                weight_label(&weight)
            ));
            for i in 1..k {
                let mut row = vec![Cell::text(&m.levels[i])];
                for j in 0..k - 1 {
                    row.push(if j < i {
                        m.adjusted[i][j].map_or(Cell::Empty, Cell::P)
                    } else {
                        Cell::text("-")
                    });
                }
                t.push(row);
            }
            emit_tables(out, &[t], &[format!("{} comparisons", m.comparisons())])
        }
    }
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct CoefficientOut {
    name: String,
    beta: f64,
    se: f64,
    z: f64,
    p: f64,
}

#[derive(Serialize)]
struct CoxOut {
    coefficients: Vec<CoefficientOut>,
    loglik: f64,
    ties: Ties,
}

#[derive(Serialize)]
struct PhOut {
    columns: Vec<PhColumn>,
    global: PhColumn,
    transform: TimeTransform,
    fit: CoxOut,
}

pub fn phtest(input: &InputArgs, out: &OutputArgs, vars: &[String], ties: Ties, transform: TimeTransform) -> Result<()> {
    let cohort = input.load()?;
    let vars = model_variables(&cohort, vars);
    let fit = cox_fit(&cohort, &vars, ties)?;
    let test = ph_test(&fit, &cohort, transform)?;
    let coefficients: Vec<CoefficientOut> = fit
        .column_names
        .iter()
        .zip(&fit.coefficients)
        .zip(&fit.std_errors)
        .zip(fit.z_scores().into_iter().zip(fit.p_values()))
        .map(|(((name, &beta), &se), (z, p))| CoefficientOut {
            name: name.clone(),
            beta,
            se,
            z,
            p,
        })
        .collect();
    let ph_table = || {
        let mut t = Table::new(&["", "chisq", "df", "p"]).titled(format!(
            "Proportional hazards test (Grambsch-Therneau, {transform} time)"
        ));
        for c in test.columns.iter().chain(std::iter::once(&test.global)) {
            t.push(vec![Cell::text(&c.name), Cell::Num(c.chi_square), Cell::Int(c.df), Cell::P(c.p_value)]);
        }
        t
    };
    match out.format {
        Format::Json => emit_json(
            out,
            &PhOut {
                columns: test.columns.clone(),
                global: test.global.clone(),
                transform,
                fit: CoxOut {
                    coefficients,
                    loglik: fit.loglik,
                    ties,
                },
            },
        ),
        Format::Csv => emit_csv(out, &ph_table()),
        Format::Table => {
            let mut cox = Table::new(&["", "beta", "exp(beta)", "se", "z", "p"])
                .titled(format!("Cox proportional hazards fit ({ties} ties)"));
            for c in &coefficients {
                cox.push(vec![
                    Cell::text(&c.name),
                    Cell::Num(c.beta),
                    Cell::Num(c.beta.exp()),
                    Cell::Num(c.se),
                    Cell::Num(c.z),
                    Cell::P(c.p),
                ]);
            }
            let footer = vec![format!(
                "n = {}, events = {}, log partial likelihood = {}",
                fit.n,
                fit.events,
                sig6(fit.loglik)
            )];
            let mut text_tables = vec![cox];
            text_tables.push(ph_table());
            emit_tables(out, &text_tables, &footer)
        }
    }
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct AftCoefficientOut {
    name: String,
    beta: f64,
    se: f64,
    p: f64,
    accel_factor: f64,
}

#[derive(Serialize)]
struct InterceptOut {
    beta: f64,
    se: f64,
    p: f64,
}

#[derive(Serialize)]
struct ScaleOut {
    value: f64,
    fixed: bool,
}

#[derive(Serialize)]
struct ScreenOut {
    variable: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    columns: Option<Vec<survkit::aft::ScreenColumn>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lr_chisq: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lr_df: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lr_p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct AftOut {
    distribution: AftDistribution,
    intercept: InterceptOut,
    coefficients: Vec<AftCoefficientOut>,
    scale: ScaleOut,
    loglik: f64,
    aic: f64,
    k: usize,
    n: usize,
    events: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    screen: Option<Vec<ScreenOut>>,
}

fn aft_out(fit: &AftFit, screen: Option<Vec<ScreenOut>>) -> AftOut {
    AftOut {
        distribution: fit.distribution,
        intercept: InterceptOut {
            beta: fit.intercept,
            se: fit.intercept_se,
            p: fit.intercept_p(),
        },
        coefficients: fit
            .column_names
            .iter()
            .zip(&fit.coefficients)
            .zip(&fit.std_errors)
            .zip(fit.p_values())
            .zip(acceleration_factors(fit))
            .map(|((((name, &beta), &se), p), (_, af))| AftCoefficientOut {
                name: name.clone(),
                beta,
                se,
                p,
                accel_factor: af,
            })
            .collect(),
        scale: ScaleOut {
            value: fit.scale,
            fixed: fit.scale_fixed,
        },
        loglik: fit.loglik,
        aic: fit.aic,
        k: fit.k,
        n: fit.n,
        events: fit.events,
        screen,
    }
}

fn aft_coefficient_table(o: &AftOut) -> Table {
    let mut t = Table::new(&["", "beta", "se", "p", "accel. factor"]);
    t.push(vec![
        Cell::text("Intercept"),
        Cell::Num(o.intercept.beta),
        Cell::Num(o.intercept.se),
        Cell::P(o.intercept.p),
        Cell::Empty,
    ]);
    for c in &o.coefficients {
        t.push(vec![Cell::text(&c.name), Cell::Num(c.beta), Cell::Num(c.se), Cell::P(c.p), Cell::Num(c.accel_factor)]);
    }
    t
}

/// Univariable and multivariable estimates side by side, one row per level.
fn screen_table(cohort: &Cohort, fit: &AftOut, screen: &[ScreenOut], model_vars: &[String]) -> Table {
    let mut t = Table::new(&["Covariable", "Simple beta", "Simple p", "Multiple beta", "Multiple p"]).titled(format!(
        "Univariable and multivariable {} survival regression",
        fit.distribution.label()
    ));
    t.push(vec![
        Cell::text("Intercept"),
        Cell::text("-"),
        Cell::text("-"),
        Cell::Num(fit.intercept.beta),
        Cell::P(fit.intercept.p),
    ]);
    let simple = |var: &str, col: &str| -> Option<(Cell, Cell)> {
        let s = screen.iter().find(|s| s.variable == var)?;
        match &s.columns {
            Some(cols) => cols
                .iter()
                .find(|c| c.name == col)
                .map(|c| (Cell::Num(c.beta), Cell::P(c.p))),
            None => Some((Cell::text("failed"), Cell::Empty)),
        }
    };
    let multiple = |col: &str| {
        fit.coefficients
            .iter()
            .find(|c| c.name == col)
            .map(|c| (Cell::Num(c.beta), Cell::P(c.p)))
    };
    let mut order: Vec<String> = screen.iter().map(|s| s.variable.clone()).collect();
    for v in model_vars {
        if !order.contains(v) {
            order.push(v.clone());
        }
    }
    for var in &order {
        let in_model = model_vars.contains(var);
        let in_screen = screen.iter().any(|s| &s.variable == var);
        let idx = cohort.schema().index_of(var).expect("validated by the fits");
        match &cohort.schema().get(idx).kind {
            CovariateKind::Categorical { levels } => {
                t.push(vec![Cell::text(var)]);
                for (k, level) in levels.iter().enumerate() {
                    let col = format!("{var}={level}");
                    let dash = || (Cell::text("-"), Cell::text("-"));
                    let blank = || (Cell::Empty, Cell::Empty);
                    let (sb, sp) = match (k, in_screen) {
                        (0, true) => dash(),
                        (_, true) => simple(var, &col).unwrap_or_else(blank),
                        _ => blank(),
                    };
                    let (mb, mp) = match (k, in_model) {
                        (0, true) => dash(),
                        (_, true) => multiple(&col).unwrap_or_else(blank),
                        _ => blank(),
                    };
                    t.push(vec![Cell::text(format!("  {level}")), sb, sp, mb, mp]);
                }
            }
            CovariateKind::Continuous => {
                let (sb, sp) = simple(var, var).unwrap_or((Cell::Empty, Cell::Empty));
                let (mb, mp) = multiple(var).unwrap_or((Cell::Empty, Cell::Empty));
                t.push(vec![Cell::text(var), sb, sp, mb, mp]);
            }
        }
    }
    t
}

pub fn aft(input: &InputArgs, out: &OutputArgs, dist: AftDistribution, vars: &[String], screen: bool) -> Result<()> {
    let cohort = input.load()?;
    let model_vars = model_variables(&cohort, vars);
    let fit = aft_fit(&cohort, &model_vars, dist)?;
    let screened = if screen {
        let all = model_variables(&cohort, &[]);
        let rows = univariable_screen(&cohort, &all, dist)?;
        Some(
            rows.into_iter()
                .map(|r| match r.result {
                    Ok(e) => ScreenOut {
                        variable: r.variable,
                        columns: Some(e.columns),
                        lr_chisq: Some(e.lr_chi_square),
                        lr_df: Some(e.lr_df),
                        lr_p: Some(e.lr_p),
                        error: None,
                    },
                    Err(err) => {
                        eprintln!("survkit: warning: single-variable fit of '{}' failed: {err}", r.variable);
                        ScreenOut {
                            variable: r.variable,
                            columns: None,
                            lr_chisq: None,
                            lr_df: None,
                            lr_p: None,
                            error: Some(err.to_string()),
                        }
                    }
                })
                .collect::<Vec<_>>(),
        )
    } else {
        None
    };
    let o = aft_out(&fit, screened);
    match out.format {
        Format::Json => emit_json(out, &o),
        Format::Csv => match &o.screen {
            Some(s) => emit_csv(out, &screen_table(&cohort, &o, s, &model_vars)),
            None => emit_csv(out, &aft_coefficient_table(&o)),
        },
        Format::Table => {
            let scale = if o.scale.fixed {
                format!("scale = {} (fixed)", sig6(o.scale.value))
            } else {
                format!("scale = {}", sig6(o.scale.value))
            };
            let footer = vec![
                format!("{} AFT model, n = {}, events = {}", dist.label(), o.n, o.events),
                scale,
                format!("log-likelihood = {}, k = {}, AIC = {}", sig6(o.loglik), o.k, sig6(o.aic)),
            ];
            let mut tables = vec![aft_coefficient_table(&o).titled(format!("{} AFT regression", dist.label()))];
            if let Some(s) = &o.screen {
                tables.push(screen_table(&cohort, &o, s, &model_vars));
            }
            emit_tables(out, &tables, &footer)
        }
    }
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct CompareOut {
    variables: Vec<String>,
    rows: Vec<AicRow>,
    selected: AftDistribution,
}

pub fn compare(input: &InputArgs, out: &OutputArgs, vars: &[String], dists: &[AftDistribution]) -> Result<()> {
    let dists: Vec<AftDistribution> = if dists.is_empty() { AftDistribution::ALL.to_vec() } else { dists.to_vec() };
    let cohort = input.load()?;
    let model_vars = model_variables(&cohort, vars);
    let fits: Vec<AftFit> = {
        use rayon::prelude::*;
        dists
            .par_iter()
            .map(|&d| aft_fit(&cohort, &model_vars, d))
            .collect::<Result<_>>()?
    };
    let rows = compare_aic(&fits)?;
    let selected = rows[0].distribution;
    match out.format {
        Format::Json => emit_json(
            out,
            &CompareOut {
                variables: model_vars,
                rows,
                selected,
            },
        ),
        Format::Csv => {
            let mut t = Table::new(&["distribution", "loglik", "k", "aic", "delta_aic"]);
            for r in &rows {
                t.push(vec![
                    Cell::text(r.distribution.to_string()),
                    Cell::Num(r.loglik),
                    Cell::Int(r.k),
                    Cell::Num(r.aic),
                    Cell::Num(r.delta_aic),
                ]);
            }
            emit_csv(out, &t)
        }
        Format::Table => {
            let mut t = Table::new(&["Parametric Survival Model", "AIC"]).titled(format!(
                "Akaike's Information Criterion, covariates {}",
                model_vars.join(", ")
            ));
            for f in &fits {
                t.push(vec![Cell::text(f.distribution.label()), Cell::Num(f.aic)]);
            }
            emit_tables(out, &[t], &[format!("lowest AIC: {}", selected.label())])
        }
    }
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct GroupOut {
    variable: String,
    #[serde(flatten)]
    assignment: GroupAssignment,
}

fn assignment_table(a: &GroupAssignment) -> Table {
    let mut t = Table::new(&["level", "group"]);
    for (level, _) in &a.rmst {
        t.push(vec![Cell::text(level), Cell::Int(a.group_of(level).expect("every level assigned"))]);
    }
    t
}

#[allow(clippy::too_many_arguments)]
pub fn group(
    input: &InputArgs,
    out: &OutputArgs,
    by: &str,
    weight: WeightSpec,
    alpha: f64,
    max_groups: Option<usize>,
    assignments: Option<&PathBuf>,
) -> Result<()> {
    weight.validate()?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Usage(format!("alpha {alpha} outside (0, 1)")));
    }
    if max_groups == Some(0) {
        return Err(Error::Usage("max-groups must be at least 1".into()));
    }
    let cohort = input.load()?;
    let a = group_curves(
        &cohort,
        by,
        GroupingOptions {
            weight,
            alpha,
            max_groups,
        },
    )?;
    if let Some(path) = assignments {
        write_to(&Some(path.clone()), &assignment_table(&a).to_csv())?;
    }
    match out.format {
        Format::Json => emit_json(
            out,
            &GroupOut {
                variable: by.to_string(),
                assignment: a,
            },
        ),
        Format::Csv => emit_csv(out, &assignment_table(&a)),
        Format::Table => {
            let mut t = Table::new(&["Group", "Levels", "within p", "adjusted p", "mean RMST"])
                .titled(format!("Groups of survival curves for {by}"));
            for g in &a.groups {
                t.push(vec![
                    Cell::Int(g.index),
                    Cell::text(g.levels.join(", ")),
                    Cell::P(g.within_p),
                    Cell::P(g.adjusted_p),
                    Cell::Num(g.mean_rmst),
                ]);
            }
            let footer = vec![
                format!(
                    "G = {}, homogeneous = {}, weight = {}, alpha = {}",
                    a.group_count,
                    if a.homogeneous { "yes" } else { "no" },
                    a.weight,
                    sig6(a.alpha)
                ),
                format!("RMST horizon = {}", sig6(a.horizon)),
            ];
            emit_tables(out, &[t], &footer)
        }
    }
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SimulateOut {
    seed: u64,
    n: usize,
    events: usize,
    censored: usize,
    censored_percent: f64,
    horizon: Option<f64>,
    distribution: AftDistribution,
    columns: Vec<String>,
}

pub fn simulate(
    preset: Option<Preset>,
    config: Option<&PathBuf>,
    seed: u64,
    n: Option<usize>,
    out: Option<&PathBuf>,
    print_config: bool,
    format: Format,
) -> Result<()> {
    let mut cfg = match (preset, config) {
        (Some(Preset::Paper), _) => paper_preset(),
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            SimConfig::from_toml(&text)?
        }
        (None, None) => return Err(Error::Usage("either --preset or --config is required".into())),
    };
    cfg.seed = seed;
    if let Some(n) = n {
        cfg.n = n;
    }
    cfg.validate()?;
    if print_config {
        return write_to(&None, &cfg.to_toml());
    }
    let cohort = simulate_cohort(&cfg)?;
    let mut buf = Vec::new();
    write_csv(&cohort, &mut buf)?;
    let csv = String::from_utf8(buf).expect("CSV writer emits UTF-8");
    let Some(path) = out else {
        return write_to(&None, &csv);
    };
    write_to(&Some(path.clone()), &csv)?;
    let censored = cohort.len() - cohort.event_count();
    let report = SimulateOut {
        seed,
        n: cohort.len(),
        events: cohort.event_count(),
        censored,
        censored_percent: 100.0 * censored as f64 / cohort.len() as f64,
        horizon: cfg.horizon(),
        distribution: cfg.distribution,
        columns: std::iter::once(cohort.time_column().to_string())
            .chain(std::iter::once(cohort.event_column().to_string()))
            .chain(cohort.schema().iter().map(|c| c.name.clone()))
            .collect(),
    };
    let sink = OutputArgs { format, output: None };
    match format {
        Format::Json => emit_json(&sink, &report),
        Format::Table | Format::Csv => {
            let mut t = Table::new(&["seed", "n", "events", "censored (%)", "horizon"]);
            t.push(vec![
                Cell::text(seed.to_string()),
                Cell::Int(report.n),
                Cell::Int(report.events),
                Cell::text(pct(report.censored, report.censored_percent)),
                report.horizon.map_or(Cell::text("none"), Cell::Num),
            ]);
            if format == Format::Csv {
                emit_csv(&sink, &t)
            } else {
                emit_tables(&sink, &[t], &[format!("wrote {}", path.display())])
            }
        }
    }
}
