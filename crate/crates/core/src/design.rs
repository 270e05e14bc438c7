//! Regression design matrices: dummy coding against the first level and
//! internal column standardization.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::cohort::{Cohort, CovariateKind, CovariateValue};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum TermKind {
    Continuous,
    Categorical { levels: Vec<String> },
}

/// One model variable and the design columns it expands into.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Term {
    pub name: String,
    pub kind: TermKind,
}

impl Term {
    pub fn column_names(&self) -> Vec<String> {
        match &self.kind {
            TermKind::Continuous => vec![self.name.clone()],
            TermKind::Categorical { levels } => levels[1..].iter().map(|l| format!("{}={l}", self.name)).collect(),
        }
    }

    pub fn width(&self) -> usize {
        match &self.kind {
            TermKind::Continuous => 1,
            TermKind::Categorical { levels } => levels.len() - 1,
        }
    }
}

/// Covariate value supplied by a caller for prediction.
#[derive(Debug, Clone, PartialEq)]
pub enum InputValue {
    Level(String),
    Number(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignSpec {
    pub terms: Vec<Term>,
}

impl DesignSpec {
    pub fn from_cohort(cohort: &Cohort, variables: &[String]) -> Result<Self> {
        let mut terms = Vec::with_capacity(variables.len());
        for (i, v) in variables.iter().enumerate() {
            if variables[..i].contains(v) {
                return Err(Error::usage(format!("variable '{v}' listed twice")));
            }
            let idx = cohort
                .schema()
                .index_of(v)
                .ok_or_else(|| Error::usage(format!("unknown variable '{v}'")))?;
            let kind = match &cohort.schema().get(idx).kind {
                CovariateKind::Continuous => TermKind::Continuous,
                CovariateKind::Categorical { levels } => TermKind::Categorical { levels: levels.clone() },
            };
            terms.push(Term { name: v.clone(), kind });
        }
        Ok(DesignSpec { terms })
    }

    pub fn column_names(&self) -> Vec<String> {
        self.terms.iter().flat_map(Term::column_names).collect()
    }

    pub fn width(&self) -> usize {
        self.terms.iter().map(Term::width).sum()
    }

    /// Column range of each term.
    pub fn term_columns(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.terms
            .iter()
            .map(|t| {
                let r = start..start + t.width();
                start = r.end;
                r
            })
            .collect()
    }

    /// Encode caller-supplied values keyed by variable name.
    pub fn encode_input(&self, values: &HashMap<String, InputValue>) -> Result<Vec<f64>> {
        let mut row = Vec::with_capacity(self.width());
        for term in &self.terms {
            let v = values
                .get(&term.name)
                .ok_or_else(|| Error::usage(format!("missing value for '{}'", term.name)))?;
            match (&term.kind, v) {
                (TermKind::Continuous, InputValue::Number(x)) => row.push(*x),
                (TermKind::Continuous, InputValue::Level(s)) => row.push(
                    s.trim()
                        .parse()
                        .map_err(|_| Error::usage(format!("'{}' expects a number, got '{s}'", term.name)))?,
                ),
                (TermKind::Categorical { levels }, v) => {
                    let label = match v {
                        InputValue::Level(s) => s.clone(),
                        InputValue::Number(x) => x.to_string(),
                    };
                    let pos = levels
                        .iter()
                        .position(|l| *l == label)
                        .ok_or_else(|| Error::usage(format!("unknown level '{label}' for '{}'", term.name)))?;
                    row.extend((1..levels.len()).map(|k| if k == pos { 1.0 } else { 0.0 }));
                }
            }
        }
        Ok(row)
    }
}

/// Encoded design, row-major, without intercept.
#[derive(Debug, Clone)]
pub struct Design {
    pub spec: DesignSpec,
    pub x: DMatrix<f64>,
}

impl Design {
    pub fn build(cohort: &Cohort, variables: &[String]) -> Result<Self> {
        let spec = DesignSpec::from_cohort(cohort, variables)?;
        let idx: Vec<usize> = variables
            .iter()
            .map(|v| cohort.schema().index_of(v).expect("validated above"))
            .collect();
        let p = spec.width();
        let mut x = DMatrix::zeros(cohort.len(), p);
        for (r, rec) in cohort.records().iter().enumerate() {
            let mut c = 0;
            for (term, &k) in spec.terms.iter().zip(&idx) {
                match rec.covariates[k] {
                    CovariateValue::Number(v) => {
                        x[(r, c)] = v;
                    }
                    CovariateValue::Level(l) => {
                        if l > 0 {
                            x[(r, c + l - 1)] = 1.0;
                        }
                    }
                }
                c += term.width();
            }
        }
        Ok(Design { spec, x })
    }

    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }

    /// Column means and standard deviations. Fails when a column is constant
    /// or the centered columns are linearly dependent (with or without an
    /// intercept, which the centering absorbs).
    pub fn standardization(&self) -> Result<Standardizer> {
        let n = self.x.nrows();
        let p = self.x.ncols();
        let names = self.spec.column_names();
        let mut center = vec![0.0; p];
        let mut scale = vec![1.0; p];
        for j in 0..p {
            let col = self.x.column(j);
            let mean = col.mean();
            let ss: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
            let sd = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
            if !(sd > 1e-12 * mean.abs().max(1.0)) {
                return Err(Error::model(format!("design column '{}' is constant", names[j])));
            }
            center[j] = mean;
            scale[j] = sd;
        }
        let z = self.standardized_with(&center, &scale);
        if p > 0 {
            let gram = z.transpose() * &z / (n.max(2) - 1) as f64;
            let eig = gram.symmetric_eigen();
            let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, &v| m.min(v));
            if min < 1e-10 {
                // name the column with the largest loading on the null direction
                let k = eig.eigenvalues.imin();
                let v = eig.eigenvectors.column(k);
                let worst = v.iamax();
                return Err(Error::model(format!(
                    "design is rank-deficient; column '{}' is collinear with others",
                    names[worst]
                )));
            }
        }
        Ok(Standardizer { center, scale })
    }

    fn standardized_with(&self, center: &[f64], scale: &[f64]) -> DMatrix<f64> {
        let mut z = self.x.clone();
        for j in 0..z.ncols() {
            for v in z.column_mut(j).iter_mut() {
                *v = (*v - center[j]) / scale[j];
            }
        }
        z
    }

    pub fn standardized(&self, s: &Standardizer) -> DMatrix<f64> {
        self.standardized_with(&s.center, &s.scale)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

/// FNV-1a over the outcome columns and the design; identifies the data a
/// model was fitted on.
pub fn fingerprint(cohort: &Cohort, design: &Design) -> u64 {
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bits: u64| {
        for b in bits.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(PRIME);
        }
    };
    for r in cohort.records() {
        eat(r.duration.to_bits());
        eat(u64::from(r.event));
    }
    for v in design.x.iter() {
        eat(v.to_bits());
    }
    for name in design.spec.column_names() {
        for b in name.bytes() {
            eat(u64::from(b));
        }
    }
    h
}
