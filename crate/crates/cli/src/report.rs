//! Tabular reports rendered as aligned text, CSV or JSON.
//!
//! Column names carry their unit as a suffix: `_ps` for picoseconds, `_au`
//! for area units (area coefficient times size), `_frac` for probabilities
//! and ratios, `_pct` for percentages, `_count` for counts and `_idx` for
//! indices.

use std::fmt::Write as _;

use clap::ValueEnum;
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Text,
    Csv,
    Structured,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
    Bool(bool),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(x) => format!("{x}"),
            Cell::Int(n) => n.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
        }
    }

    fn text(&self) -> String {
        match self {
            Cell::Num(x) if x.is_finite() && x.abs() >= 1e-3 && x.abs() < 1e7 => format!("{x:.4}"),
            Cell::Num(x) if *x == 0.0 => "0.0000".into(),
            Cell::Num(x) => format!("{x:.4e}"),
            other => other.csv(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Num(x) => serde_json::Number::from_f64(*x).map_or(Value::Null, Value::Number),
            Cell::Int(n) => Value::from(*n),
            Cell::Text(s) => Value::from(s.as_str()),
            Cell::Bool(b) => Value::from(*b),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<usize> for Cell {
    fn from(n: usize) -> Self {
        Cell::Int(n as u64)
    }
}

impl From<u64> for Cell {
    fn from(n: u64) -> Self {
        Cell::Int(n)
    }
}

impl From<bool> for Cell {
    fn from(b: bool) -> Self {
        Cell::Bool(b)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Section {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn with_columns(name: &str, columns: Vec<String>) -> Self {
        Self {
            name: name.to_string(),
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Single-row section built from `(column, value)` pairs.
    pub fn record(name: &str, fields: Vec<(&str, Cell)>) -> Self {
        let (columns, row): (Vec<_>, Vec<_>) =
            fields.into_iter().map(|(c, v)| (c.to_string(), v)).unzip();
        Self {
            name: name.to_string(),
            columns,
            rows: vec![row],
        }
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::csv))
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 output")
    }

    fn to_text(&self) -> String {
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| r.iter().map(Cell::text).collect())
            .collect();
        let widths: Vec<usize> = (0..self.columns.len())
            .map(|j| {
                cells
                    .iter()
                    .map(|r| r[j].len())
                    .chain(std::iter::once(self.columns[j].len()))
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = format!("{}\n", self.name);
        let line = |out: &mut String, items: &[String]| {
            let parts: Vec<String> = items
                .iter()
                .zip(&widths)
                .map(|(s, w)| format!("{s:>w$}"))
                .collect();
            let _ = writeln!(out, "  {}", parts.join("  "));
        };
        line(&mut out, &self.columns);
        for r in &cells {
            line(&mut out, r);
        }
        out
    }

    fn to_json(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|r| {
                    let m: Map<String, Value> = self
                        .columns
                        .iter()
                        .cloned()
                        .zip(r.iter().map(Cell::json))
                        .collect();
                    Value::Object(m)
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub sections: Vec<Section>,
}

impl Report {
    pub fn push(&mut self, s: Section) {
        self.sections.push(s);
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Text => self
                .sections
                .iter()
                .map(Section::to_text)
                .collect::<Vec<_>>()
                .join("\n"),
            Format::Csv => {
                // a lone table stays plain CSV; several are separated by a
                // blank line and introduced by a `# name` line
                if let [only] = self.sections.as_slice() {
                    return only.to_csv();
                }
                self.sections
                    .iter()
                    .map(|s| format!("# {}\n{}", s.name, s.to_csv()))
                    .collect::<Vec<_>>()
                    .join("\n")
            }
            Format::Structured => {
                let m: Map<String, Value> = self
                    .sections
                    .iter()
                    .map(|s| (s.name.clone(), s.to_json()))
                    .collect();
                let mut out =
                    serde_json::to_string_pretty(&Value::Object(m)).expect("report serializes");
                out.push('\n');
                out
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Report {
        let mut s = Section::new("stages", &["stage_idx", "mu_ps"]);
        s.push(vec![0usize.into(), 12.5.into()]);
        s.push(vec![1usize.into(), 0.1.into()]);
        let mut r = Report::default();
        r.push(s);
        r
    }

    #[test]
    fn single_table_csv_is_plain() {
        assert_eq!(
            sample().render(Format::Csv),
            "stage_idx,mu_ps\n0,12.5\n1,0.1\n"
        );
    }

    #[test]
    fn structured_output_is_json() {
        let v: Value = serde_json::from_str(&sample().render(Format::Structured)).unwrap();
        assert_eq!(v["stages"][0]["mu_ps"], 12.5);
    }

    #[test]
    fn text_is_aligned() {
        let t = sample().render(Format::Text);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[1].len(), lines[2].len());
    }
}
