//! CSV tables and JSON files written to the output directory.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use scatterlab::diffusion::BoundaryCounts;
use scatterlab::scattering::EventCounters;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Int(u64),
    Float(f64),
}

impl Cell {
    fn write(&self, out: &mut impl Write) -> std::io::Result<()> {
        match *self {
            Cell::Int(i) => write!(out, "{i}"),
            Cell::Float(x) => write!(out, "{x:.16e}"),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<u64> for Cell {
    fn from(i: u64) -> Self {
        Cell::Int(i)
    }
}

/// A CSV table; the first table of a run is `data.csv`, later ones `data_<name>.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, header: Vec<String>) -> Self {
        Self {
            name: name.to_string(),
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        writeln!(out, "{}", self.header.join(","))?;
        for row in &self.rows {
            for (i, cell) in row.iter().enumerate() {
                if i > 0 {
                    out.write_all(b",")?;
                }
                cell.write(&mut out)?;
            }
            out.write_all(b"\n")?;
        }
        out.flush()
    }
}

/// `prefix_1, ..., prefix_d`.
pub fn indexed(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("{prefix}_{i}")).collect()
}

/// Failure and boundary counts of a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct RunCounters {
    pub events: u64,
    pub collisions: u64,
    pub resamples: u64,
    pub singular_hits: u64,
    pub trapped_trajectories: u64,
    pub stalled_marches: u64,
    pub boundary_retries: u64,
    pub boundary_halvings: u64,
}

impl RunCounters {
    pub fn add_events(&mut self, c: &EventCounters) {
        self.events += c.events;
        self.collisions += c.collisions;
        self.resamples += c.resamples;
        self.singular_hits += c.singular_hits;
        self.trapped_trajectories += c.trapped;
        self.stalled_marches += c.stalled;
    }

    pub fn add_boundary(&mut self, c: &BoundaryCounts) {
        self.boundary_retries += c.retries;
        self.boundary_halvings += c.halvings;
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    fs::write(path, text)
}
