//! Result tables: a versioned comment line, then plain CSV.
//!
//! Floats are written with 17 significant digits so a table round-trips
//! bit-exactly; integral values are written as integers.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

pub const FORMAT_TAG: &str = "autoloss-results";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Num(f64),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Num(v as f64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

pub fn format_num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.16e}")
    }
}

pub fn parse_num(s: &str) -> Option<f64> {
    match s {
        "nan" => Some(f64::NAN),
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => s.parse().ok(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    /// Free-form `key=value` labels written into the header comment.
    pub labels: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table {
            labels: Vec::new(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn label(mut self, key: &str, value: impl ToString) -> Self {
        self.labels.push((key.into(), value.to_string()));
        self
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut out = format!("# {FORMAT_TAG} v{FORMAT_VERSION}");
        for (k, v) in &self.labels {
            out.push_str(&format!(" {k}={v}"));
        }
        out.push('\n');
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|c| match c {
                Cell::Text(s) => s.clone(),
                Cell::Num(v) => format_num(*v),
            }))?;
        }
        out.push_str(std::str::from_utf8(&w.into_inner()?)?);
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string()?).with_context(|| format!("writing {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let first = text.lines().next().unwrap_or("");
        let mut words = first.split_whitespace();
        let prefix = format!("{FORMAT_TAG}");
        if words.next() != Some("#") || words.next() != Some(prefix.as_str()) {
            bail!("missing {FORMAT_TAG} header line");
        }
        match words.next() {
            Some(v) if v == format!("v{FORMAT_VERSION}") => {}
            other => bail!("unsupported table version {other:?}"),
        }
        let labels = words
            .filter_map(|w| w.split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let body = text.split_once('\n').map(|(_, b)| b).unwrap_or("");
        let mut r = csv::Reader::from_reader(body.as_bytes());
        let columns = r.headers()?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            rows.push(
                rec?.iter()
                    .map(|s| match parse_num(s) {
                        Some(v) => Cell::Num(v),
                        None => Cell::Text(s.to_string()),
                    })
                    .collect(),
            );
        }
        Ok(Table { labels, columns, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_exactly() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02e23, 12345.0, f64::MIN_POSITIVE] {
            assert_eq!(parse_num(&format_num(v)).unwrap().to_bits(), v.to_bits());
        }
        assert!(parse_num(&format_num(f64::NAN)).unwrap().is_nan());
        assert_eq!(format_num(0.1), "1.0000000000000001e-1");
        assert_eq!(format_num(42.0), "42");
    }

    #[test]
    fn table_round_trips() {
        let mut t = Table::new(&["arm", "trial", "x"]).label("config", "abc");
        t.push(vec!["guided".into(), 3usize.into(), 0.25f64.into()]);
        t.push(vec!["a,b".into(), 4usize.into(), f64::NAN.into()]);
        let text = t.to_csv_string().unwrap();
        assert!(text.starts_with("# autoloss-results v1 config=abc\narm,trial,x\n"));
        let back = Table::parse(&text).unwrap();
        assert_eq!(back.columns, t.columns);
        assert_eq!(back.labels, t.labels);
        assert_eq!(back.rows[0], t.rows[0]);
        assert_eq!(back.rows[1][0], Cell::Text("a,b".into()));
    }

    #[test]
    fn rejects_unversioned_tables() {
        assert!(Table::parse("arm,x\na,1\n").is_err());
        assert!(Table::parse("# autoloss-results v9\narm\n").is_err());
    }
}
