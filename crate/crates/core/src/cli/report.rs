//! Report emission: aligned text tables or flat `key=value` records.

use std::fmt::Write as _;

use crate::qcore::Amplitude;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Text(String),
    /// A probability or other real number.
    Real(f64),
    Complex(Amplitude),
    Count(u64),
    Flag(bool),
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_string())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Text(s)
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Real(x)
    }
}

impl From<Amplitude> for Value {
    fn from(a: Amplitude) -> Self {
        Value::Complex(a)
    }
}

impl From<u64> for Value {
    fn from(n: u64) -> Self {
        Value::Count(n)
    }
}

impl From<usize> for Value {
    fn from(n: usize) -> Self {
        Value::Count(n as u64)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Flag(b)
    }
}

pub type Record = Vec<(&'static str, Value)>;

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub records: Vec<Record>,
}

impl Section {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, record: Record) {
        self.records.push(record);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Text,
    Kv,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub sections: Vec<Section>,
}

impl Report {
    pub fn push(&mut self, section: Section) {
        self.sections.push(section);
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Text => self.render_text(),
            Format::Kv => self.render_kv(),
        }
    }

    fn render_text(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.sections.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            writeln!(out, "== {} ==", s.name).unwrap();
            let Some(first) = s.records.first() else {
                out.push_str("(none)\n");
                continue;
            };
            let header: Vec<&str> = first.iter().map(|(k, _)| *k).collect();
            let rows: Vec<Vec<String>> = s
                .records
                .iter()
                .map(|r| r.iter().map(|(_, v)| text_value(v)).collect())
                .collect();
            let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
            for row in &rows {
                for (w, cell) in widths.iter_mut().zip(row) {
                    *w = (*w).max(cell.chars().count());
                }
            }
            let line = |cells: &[String]| {
                let padded: Vec<String> = cells
                    .iter()
                    .zip(&widths)
                    .map(|(c, w)| format!("{c:<w$}"))
                    .collect();
                padded.join("  ").trim_end().to_string()
            };
            let header: Vec<String> = header.iter().map(|h| h.to_string()).collect();
            writeln!(out, "{}", line(&header)).unwrap();
            for row in &rows {
                writeln!(out, "{}", line(row)).unwrap();
            }
        }
        out
    }

    fn render_kv(&self) -> String {
        let mut out = String::new();
        for s in &self.sections {
            writeln!(out, "# {}", s.name).unwrap();
            for r in &s.records {
                write!(out, "section={}", kv_text(&s.name)).unwrap();
                for (k, v) in r {
                    write!(out, " {k}={}", kv_value(v)).unwrap();
                }
                out.push('\n');
            }
        }
        out
    }
}

/// 17 significant digits, with negative zero printed as zero.
pub fn real17(x: f64) -> String {
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{x:.16e}")
}

fn kv_text(s: &str) -> String {
    if !s.is_empty() && !s.chars().any(|c| c.is_whitespace() || c == '"' || c == '=' || c == '\\') {
        return s.to_string();
    }
    let mut out = String::from("\"");
    for c in s.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}

fn kv_value(v: &Value) -> String {
    match v {
        Value::Text(s) => kv_text(s),
        Value::Real(x) => real17(*x),
        Value::Complex(a) => format!("{},{}", real17(a.re), real17(a.im)),
        Value::Count(n) => n.to_string(),
        Value::Flag(b) => b.to_string(),
    }
}

fn text_value(v: &Value) -> String {
    match v {
        Value::Text(s) => s.clone(),
        Value::Real(x) => text_real(*x),
        Value::Complex(a) => text_complex(*a),
        Value::Count(n) => n.to_string(),
        Value::Flag(b) => if *b { "yes" } else { "no" }.to_string(),
    }
}

const GUESS_TOL: f64 = 1e-12;
const MAX_DEN: u64 = 64;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn rational_guess(x: f64) -> Option<(u64, u64)> {
    if !x.is_finite() || !(0.0..=1e6).contains(&x) {
        return None;
    }
    (1..=MAX_DEN).find_map(|q| {
        let p = (x * q as f64).round();
        ((x - p / q as f64).abs() <= GUESS_TOL && gcd(p as u64, q) == 1).then_some((p as u64, q))
    })
}

fn show_rational(p: u64, q: u64) -> String {
    if q == 1 {
        p.to_string()
    } else {
        format!("{p}/{q}")
    }
}

/// A short exact form for `x` when one with a small denominator fits.
pub fn exact_guess(x: f64) -> Option<String> {
    let sign = if x < 0.0 { "-" } else { "" };
    let a = x.abs();
    if let Some((p, q)) = rational_guess(a) {
        return Some(format!("{sign}{}", show_rational(p, q)));
    }
    let (p, q) = rational_guess(a * a)?;
    Some(format!("{sign}sqrt({})", show_rational(p, q)))
}

fn text_real(x: f64) -> String {
    let x = if x.abs() < 1e-15 { 0.0 } else { x };
    let plain = format!("{x:.12}");
    match exact_guess(x) {
        Some(g) if g.parse::<f64>().is_err() => format!("{plain} ({g})"),
        _ => plain,
    }
}

fn text_complex(a: Amplitude) -> String {
    let part = |x: f64| {
        let x = if x.abs() < 1e-15 { 0.0 } else { x };
        exact_guess(x).unwrap_or_else(|| format!("{x:.12}"))
    };
    if a.im.abs() < 1e-15 {
        part(a.re)
    } else if a.re.abs() < 1e-15 {
        format!("{}i", part(a.im))
    } else {
        let im = part(a.im.abs());
        format!("{}{}{im}i", part(a.re), if a.im < 0.0 { "-" } else { "+" })
    }
}
