//! Plain-text and CSV rendering of result tables.

use std::fmt::Write as _;

/// p-values below this print as "<2e-16" in tables.
const P_FLOOR: f64 = 2e-16;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Int(usize),
    Num(f64),
    P(f64),
    Empty,
}

impl Cell {
    pub fn text(s: impl Into<String>) -> Self {
        Cell::Text(s.into())
    }

    fn for_table(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(v) => v.to_string(),
            Cell::Num(v) => sig6(*v),
            Cell::P(p) if *p < P_FLOOR => "<2e-16".into(),
            Cell::P(p) => sig6(*p),
            Cell::Empty => String::new(),
        }
    }

    fn for_csv(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(v) => v.to_string(),
            Cell::Num(v) | Cell::P(v) => full(*v),
            Cell::Empty => String::new(),
        }
    }

    fn numeric(&self) -> bool {
        matches!(self, Cell::Int(_) | Cell::Num(_) | Cell::P(_))
    }
}

/// Shortest representation that parses back to the same value.
pub fn full(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else if v != 0.0 && v.is_finite() && !(1e-5..1e16).contains(&v.abs()) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

/// Six significant digits, trailing zeros dropped, scientific notation for
/// very small or large magnitudes.
pub fn sig6(v: f64) -> String {
    if v.is_nan() {
        return "NA".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "Inf".into() } else { "-Inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        return format!("{mantissa}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs());
    }
    trim_zeros(&format!("{v:.*}", (5 - exp) as usize)).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub title: Option<String>,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(headers: &[&str]) -> Self {
        Table {
            title: None,
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn titled(mut self, title: impl Into<String>) -> Self {
        self.title = Some(title.into());
        self
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        self.rows.push(row);
    }

    /// Aligned text: first column left-aligned, numeric cells right-aligned.
    pub fn render(&self) -> String {
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| r.iter().map(Cell::for_table).collect())
            .collect();
        let cols = self.headers.len();
        let mut width: Vec<usize> = self.headers.iter().map(|h| h.chars().count()).collect();
        for row in &cells {
            for (j, c) in row.iter().enumerate().take(cols) {
                width[j] = width[j].max(c.chars().count());
            }
        }
        let mut out = String::new();
        if let Some(t) = &self.title {
            let _ = writeln!(out, "{t}");
        }
        let line = |out: &mut String, items: &[String], numeric: &[bool]| {
            let mut s = String::new();
            for (j, item) in items.iter().enumerate().take(cols) {
                if j > 0 {
                    s.push_str("  ");
                }
                let pad = width[j] - item.chars().count();
                if numeric[j] {
                    s.push_str(&" ".repeat(pad));
                    s.push_str(item);
                } else {
                    s.push_str(item);
                    s.push_str(&" ".repeat(pad));
                }
            }
            let _ = writeln!(out, "{}", s.trim_end());
        };
        let header_numeric: Vec<bool> = (0..cols).map(|j| j > 0).collect();
        line(&mut out, &self.headers, &header_numeric);
        let rule: Vec<String> = width.iter().map(|w| "-".repeat(*w)).collect();
        line(&mut out, &rule, &vec![false; cols]);
        for (row, text) in self.rows.iter().zip(&cells) {
            let numeric: Vec<bool> = (0..cols)
                .map(|j| row.get(j).is_some_and(|c| c.numeric() || j > 0))
                .collect();
            let mut padded = text.clone();
            padded.resize(cols, String::new());
            line(&mut out, &padded, &numeric);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers).expect("in-memory write");
        for row in &self.rows {
            let mut rec: Vec<String> = row.iter().map(Cell::for_csv).collect();
            rec.resize(self.headers.len(), String::new());
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
    }
}
