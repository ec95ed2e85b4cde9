//! CSV reading and writing. Floats are written with 17 significant digits
//! so files round-trip exactly and byte-compare across engine modes.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use anyhow::{Context, Result};

pub const RESULTS_HEADER: &str =
    "alg,m,M,theta,mse,time_s,stage_rounds,weight_msgs,payload_particles";
pub const ENVELOPE_HEADER: &str = "alg,m,M,theta,mse,time_s";

pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write a numeric matrix, one row per line, no header.
pub fn write_matrix_csv(path: &Path, rows: &[Vec<f64>]) -> Result<()> {
    let mut file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut buf = String::new();
    for row in rows {
        let line: Vec<String> = row.iter().map(|&v| format_float(v)).collect();
        buf.push_str(&line.join(","));
        buf.push('\n');
    }
    file.write_all(buf.as_bytes())?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut rows = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        rows.push(row.with_context(|| format!("{}:{}: bad float", path.display(), idx + 1))?);
    }
    Ok(rows)
}

/// One row of results.csv.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub alg: String,
    pub m: usize,
    pub island_size: usize,
    pub theta: String,
    pub mse: f64,
    pub time_s: f64,
    pub stage_rounds: u64,
    pub weight_msgs: u64,
    pub payload_particles: u64,
}

impl ResultRow {
    pub fn cell_key(&self) -> String {
        format!("{},{},{},{}", self.alg, self.m, self.island_size, self.theta)
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6},{},{},{}",
            self.alg,
            self.m,
            self.island_size,
            self.theta,
            format_float(self.mse),
            self.time_s,
            self.stage_rounds,
            self.weight_msgs,
            self.payload_particles
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        anyhow::ensure!(f.len() == 9, "expected 9 fields, got {}", f.len());
        Ok(Self {
            alg: f[0].to_string(),
            m: f[1].parse()?,
            island_size: f[2].parse()?,
            theta: f[3].to_string(),
            mse: f[4].parse()?,
            time_s: f[5].parse()?,
            stage_rounds: f[6].parse()?,
            weight_msgs: f[7].parse()?,
            payload_particles: f[8].parse()?,
        })
    }
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut rows = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if idx == 0 {
            anyhow::ensure!(line == RESULTS_HEADER, "unexpected results header: {line}");
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        rows.push(ResultRow::parse(&line).with_context(|| format!("{}:{}", path.display(), idx + 1))?);
    }
    Ok(rows)
}

/// Create results.csv with its header unless it already exists (resume).
pub fn ensure_results_csv(path: &Path) -> Result<()> {
    if !path.exists() {
        let mut file = File::create(path)?;
        writeln!(file, "{RESULTS_HEADER}")?;
    }
    Ok(())
}

pub fn append_result_row(path: &Path, row: &ResultRow) -> Result<()> {
    let mut file = OpenOptions::new().append(true).open(path)?;
    writeln!(file, "{}", row.to_csv())?;
    Ok(())
}
