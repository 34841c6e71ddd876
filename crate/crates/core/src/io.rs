//! CSV and JSON artifacts. Floats are written with 17 significant digits so
//! every value reads back bit-for-bit.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::system::ControlField;

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// One cell of a CSV row.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(x) => fmt_f64(*x),
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<usize> for Cell {
    fn from(i: usize) -> Self {
        Cell::Int(i as u64)
    }
}

impl From<u64> for Cell {
    fn from(i: u64) -> Self {
        Cell::Int(i)
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

pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<Cell>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::InternalConsistency(format!(
                "CSV row has {} cells, header has {}",
                row.len(),
                header.len()
            )));
        }
        w.write_record(row.iter().map(Cell::render))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Columns `t, eps_1, ..., eps_C` with `t` the end-of-step sample time.
pub fn write_field_csv(path: &Path, field: &ControlField) -> Result<()> {
    let names: Vec<String> = (1..=field.channel_count()).map(|c| format!("eps_{c}")).collect();
    let mut header = vec!["t"];
    header.extend(names.iter().map(String::as_str));
    let times = field.grid().sample_times();
    let rows = times.iter().enumerate().map(|(k, &t)| {
        let mut row = vec![Cell::Num(t)];
        row.extend(field.at_step(k).into_iter().map(Cell::Num));
        row
    });
    write_csv(path, &header, rows)
}

/// Reads a field written by [`write_field_csv`]; the grid is inferred from the time column.
pub fn read_field_csv(path: &Path) -> Result<ControlField> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let header = r.headers()?.clone();
    if header.len() < 2 || &header[0] != "t" {
        return Err(Error::InvalidInput(format!(
            "{}: expected header `t,eps_1,...`, found `{}`",
            path.display(),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let channels = header.len() - 1;
    let mut times = Vec::new();
    let mut columns = vec![Vec::new(); channels];
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec[i].trim().parse::<f64>().map_err(|_| {
                Error::InvalidInput(format!("{}: row {}: `{}` is not a number", path.display(), line + 2, &rec[i]))
            })
        };
        times.push(parse(0)?);
        for (c, col) in columns.iter_mut().enumerate() {
            col.push(parse(c + 1)?);
        }
    }
    if times.is_empty() {
        return Err(Error::InvalidInput(format!("{}: no samples", path.display())));
    }
    let n = times.len();
    let dt = times[0];
    let total = times[n - 1];
    let grid = TimeGrid::new(total, total / n as f64)?;
    for (k, &t) in times.iter().enumerate() {
        if (t - grid.sample_time(k)).abs() > 1e-9 * total.max(1.0) {
            return Err(Error::InvalidInput(format!(
                "{}: sample times are not uniform end-of-step times (row {}, t = {t}, first t = {dt})",
                path.display(),
                k + 2
            )));
        }
    }
    ControlField::from_channels(grid, &columns)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// A result bundled with the configuration that produced it.
#[derive(Debug, Serialize)]
pub struct Artifact<'a, T: Serialize> {
    pub command: &'a str,
    pub seed: u64,
    pub config: RunConfig,
    pub result: &'a T,
}

impl<'a, T: Serialize> Artifact<'a, T> {
    pub fn new(command: &'a str, config: &RunConfig, result: &'a T) -> Self {
        Artifact { command, seed: config.seed, config: config.resolved(), result }
    }
}
