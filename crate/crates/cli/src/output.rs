use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::exit::Failure;
use crate::problem::SCHEMA_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Jsonl,
}

/// Seventeen significant digits, enough to read every double back exactly.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Text(String),
    Flag(bool),
    Empty,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(x) => num(*x),
            Cell::Text(s) => s.clone(),
            Cell::Flag(b) => b.to_string(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Num(x) => serde_json::Number::from_f64(*x).map_or(Value::Null, Value::Number),
            Cell::Text(s) => Value::String(s.clone()),
            Cell::Flag(b) => Value::Bool(*b),
            Cell::Empty => Value::Null,
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map_or(Cell::Empty, Into::into)
    }
}

impl From<bool> for Cell {
    fn from(b: bool) -> Self {
        Cell::Flag(b)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(headers: &[&str]) -> Self {
        Table { headers: headers.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }
}

/// Destination of the primary output: a file, or stdout for `-`.
#[derive(Debug, Clone)]
pub struct Sink {
    path: Option<PathBuf>,
}

impl Sink {
    pub fn new(out: &str) -> Self {
        Sink { path: (out != "-").then(|| PathBuf::from(out)) }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    fn open(&self) -> Result<Box<dyn Write>, Failure> {
        Ok(match &self.path {
            Some(p) => Box::new(BufWriter::new(File::create(p)?)),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        })
    }

    pub fn table(&self, table: &Table, format: Format) -> Result<(), Failure> {
        let mut w = self.open()?;
        match format {
            Format::Csv => {
                let mut c = csv::Writer::from_writer(&mut w);
                c.write_record(&table.headers)?;
                for row in &table.rows {
                    c.write_record(row.iter().map(Cell::csv))?;
                }
                c.flush()?;
            }
            Format::Jsonl => {
                for row in &table.rows {
                    let obj: Map<String, Value> = table.headers.iter().cloned().zip(row.iter().map(Cell::json)).collect();
                    serde_json::to_writer(&mut w, &obj)?;
                    writeln!(w)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn report<T: Serialize>(&self, report: &T) -> Result<(), Failure> {
        let mut w = self.open()?;
        serde_json::to_writer(&mut w, &versioned(report)?)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}

/// JSON object with `"schema"` as its first key.
pub fn versioned<T: Serialize>(report: &T) -> Result<Value, Failure> {
    let mut out = Map::new();
    out.insert("schema".into(), Value::from(SCHEMA_VERSION));
    match serde_json::to_value(report)? {
        Value::Object(m) => out.extend(m),
        other => {
            out.insert("data".into(), other);
        }
    }
    Ok(Value::Object(out))
}

pub fn write_json_file<T: Serialize>(path: &Path, report: &T) -> Result<(), Failure> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &versioned(report)?)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// `<out>.json` next to a file output.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}
