//! Tabular output in CSV or JSON lines, each file opened by a header that
//! records the command, the configuration hash and the seed.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use optoreadout::config::OutputFormat;
use serde_json::json;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    F(f64),
    U(u64),
    B(bool),
    S(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::F(v)
    }
}
impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::U(v as u64)
    }
}
impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::U(v)
    }
}
impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::B(v)
    }
}
impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::S(v.to_owned())
    }
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::F(v) => format!("{v:e}"),
            Cell::U(v) => v.to_string(),
            Cell::B(v) => v.to_string(),
            Cell::S(s) => s.clone(),
        }
    }

    fn json(&self) -> serde_json::Value {
        match self {
            Cell::F(v) if v.is_finite() => json!(v),
            Cell::F(_) => serde_json::Value::Null,
            Cell::U(v) => json!(v),
            Cell::B(v) => json!(v),
            Cell::S(s) => json!(s),
        }
    }
}

/// Provenance written at the top of every output file.
#[derive(Debug, Clone)]
pub struct Header {
    pub command: &'static str,
    pub config_sha256: String,
    pub seed: u64,
    pub convention: String,
}

#[derive(Debug, Clone)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&'static str]) -> Self {
        Self {
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the columns");
        self.rows.push(row);
    }

    pub fn write<W: Write>(&self, mut w: W, header: &Header, format: OutputFormat) -> io::Result<()> {
        match format {
            OutputFormat::Csv => {
                writeln!(w, "# optoreadout {} {}", header.command, env!("CARGO_PKG_VERSION"))?;
                writeln!(w, "# config_sha256 = {}", header.config_sha256)?;
                writeln!(w, "# seed = {}", header.seed)?;
                writeln!(w, "# convention = {}", header.convention)?;
                writeln!(w, "{}", self.columns.join(","))?;
                for row in &self.rows {
                    let line: Vec<String> = row.iter().map(Cell::csv).collect();
                    writeln!(w, "{}", line.join(","))?;
                }
            }
            OutputFormat::Jsonl => {
                let head = json!({
                    "header": {
                        "command": header.command,
                        "version": env!("CARGO_PKG_VERSION"),
                        "config_sha256": header.config_sha256,
                        "seed": header.seed,
                        "convention": header.convention,
                        "columns": self.columns,
                    }
                });
                writeln!(w, "{head}")?;
                for row in &self.rows {
                    // keys in column order
                    let fields: Vec<String> = self
                        .columns
                        .iter()
                        .zip(row)
                        .map(|(c, v)| format!("{}:{}", json!(c), v.json()))
                        .collect();
                    writeln!(w, "{{{}}}", fields.join(","))?;
                }
            }
        }
        Ok(())
    }
}

/// Writes `table` to `dir/stem.{csv,jsonl}` and returns the path.
pub fn write_table(dir: &Path, stem: &str, table: &Table, header: &Header, format: OutputFormat) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let ext = match format {
        OutputFormat::Csv => "csv",
        OutputFormat::Jsonl => "jsonl",
    };
    let path = dir.join(format!("{stem}.{ext}"));
    let mut w = BufWriter::new(fs::File::create(&path)?);
    table.write(&mut w, header, format)?;
    w.flush()?;
    Ok(path)
}
