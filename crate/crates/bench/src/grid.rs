//! Experiment grids: one shared dataset per grid, one results.csv row per
//! (algorithm, m, M, theta) cell, J independent runs per cell.

use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};
use serde::Serialize;

use butterfly_smc::engine::{execute_parallel, Mode};
use butterfly_smc::engine::rng::mix_seed;
use butterfly_smc::butterfly::Topology;
use butterfly_smc::filters::{Algorithm, FilterConfig, FilterRun, Threshold};
use butterfly_smc::model::{simulate_data, RandomWalkHmm, RandomWalkModel, Trajectory};
use butterfly_smc::oracle::{kalman_filter, mse, KalmanState};

use crate::io;

/// Label used in CSV files and seed mixing for a threshold value.
pub fn theta_label(threshold: &Threshold) -> String {
    match threshold {
        Threshold::Always => "always".to_string(),
        Threshold::Ess(t) => format!("{t}"),
    }
}

pub fn parse_theta(s: &str) -> Result<Threshold> {
    if s == "always" {
        Ok(Threshold::Always)
    } else {
        let t: f64 = s.parse().with_context(|| format!("bad theta '{s}'"))?;
        Ok(Threshold::Ess(t))
    }
}

fn theta_bits(threshold: &Threshold) -> u64 {
    match threshold {
        Threshold::Always => u64::MAX,
        Threshold::Ess(t) => t.to_bits(),
    }
}

/// The full experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentGrid {
    pub dim: usize,
    pub n_max: usize,
    /// Independent runs per cell.
    pub runs: usize,
    pub m_values: Vec<usize>,
    pub island_values: Vec<usize>,
    pub theta_values: Vec<Threshold>,
    pub algorithms: Vec<Algorithm>,
    pub data_seed: u64,
    pub run_seed_base: u64,
    pub mode: Mode,
    pub stage_rotation: bool,
    /// When false, time_s is written as zero so output is byte-stable.
    pub record_time: bool,
    /// Test hook: report the Kalman means as the estimates (MSE becomes 0).
    pub debug_truth_estimates: bool,
    /// Keep the exchange log on the first run of each cell.
    pub record_exchange_log: bool,
}

impl ExperimentGrid {
    pub fn validate(&self) -> Result<()> {
        anyhow::ensure!(self.runs >= 1, "J must be at least 1");
        anyhow::ensure!(self.n_max >= 1, "n_max must be at least 1");
        for &m in &self.m_values {
            anyhow::ensure!(m.is_power_of_two(), "m = {m} is not a power of two");
        }
        Ok(())
    }
}

/// Dataset plus oracle, generated once per grid and shared by every cell.
pub struct SharedData {
    pub trajectory: Trajectory,
    pub truth: Vec<KalmanState>,
    pub model: RandomWalkModel,
}

pub fn prepare_data(dim: usize, n_max: usize, data_seed: u64) -> Result<SharedData> {
    let model = RandomWalkModel::standard(dim);
    let trajectory = simulate_data(&model, n_max, data_seed)?;
    let truth = kalman_filter(&model, &trajectory.observations)?;
    Ok(SharedData {
        trajectory,
        truth,
        model,
    })
}

/// MSE of using the raw observations as the estimates of the filtering
/// means (identical across the J runs).
pub fn raw_observation_mse(
    observations: &[Vec<f64>],
    truth: &[KalmanState],
    runs: usize,
) -> Result<f64> {
    let estimates: Vec<Vec<Vec<f64>>> = (0..runs.max(1)).map(|_| observations.to_vec()).collect();
    Ok(mse(&estimates, truth)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct CellSummary {
    pub alg: String,
    pub m: usize,
    #[serde(rename = "M")]
    pub island_size: usize,
    pub theta: String,
    pub mse: f64,
    pub time_s: f64,
    pub stage_rounds: u64,
    pub weight_msgs: u64,
    pub payload_particles: u64,
}

/// Run the J replicates of one cell; returns the summary row and the first
/// replicate's run record (for per-step traces).
pub fn run_cell(
    data: &SharedData,
    algorithm: Algorithm,
    m: usize,
    island_size: usize,
    threshold: Threshold,
    grid: &ExperimentGrid,
) -> Result<(io::ResultRow, FilterRun)> {
    let topology = Topology::new(m, island_size)
        .with_context(|| format!("cell {} m={m} M={island_size}", algorithm.name()))?;
    let hmm = Arc::new(RandomWalkHmm::new(
        data.model,
        data.trajectory.observations.clone(),
    )?);

    let mut estimates = Vec::with_capacity(grid.runs);
    let mut time_total = 0.0;
    let mut stage_rounds = 0u64;
    let mut weight_msgs = 0u64;
    let mut payload = 0u64;
    let mut first_run = None;
    for j in 0..grid.runs {
        let seed = mix_seed(&[
            grid.run_seed_base,
            algorithm as u64,
            m as u64,
            island_size as u64,
            theta_bits(&threshold),
            j as u64,
        ]);
        let mut config = FilterConfig::new(topology, algorithm, threshold, seed);
        config.stage_rotation = grid.stage_rotation;
        config.record_exchange_log = grid.record_exchange_log && j == 0;
        let (run, stats) = execute_parallel(Arc::clone(&hmm) as _, &config, grid.mode)
            .with_context(|| {
                format!(
                    "cell {} m={m} M={island_size} theta={} run {j}",
                    algorithm.name(),
                    theta_label(&threshold)
                )
            })?;
        if grid.debug_truth_estimates {
            estimates.push(data.truth.iter().map(|s| s.mean.clone()).collect());
        } else {
            estimates.push(run.filt_estimates.clone());
        }
        time_total += run.wall_time_s;
        stage_rounds += stats.totals.stage_rounds;
        weight_msgs += stats.totals.weight_msgs;
        payload += stats.totals.payload_particles;
        if first_run.is_none() {
            first_run = Some(run);
        }
    }
    let cell_mse = mse(&estimates, &data.truth)?;
    let row = io::ResultRow {
        alg: algorithm.name().to_string(),
        m,
        island_size,
        theta: theta_label(&threshold),
        mse: cell_mse,
        time_s: if grid.record_time {
            time_total / grid.runs as f64
        } else {
            0.0
        },
        stage_rounds,
        weight_msgs,
        payload_particles: payload,
    };
    Ok((row, first_run.expect("at least one run")))
}


/// Run the whole grid, writing dataset.csv, kalman.csv and results.csv into
/// `out_dir`. Rows are appended as cells complete; cells whose key is
/// already present in results.csv are skipped, so interrupted grids resume.
pub fn run_grid(grid: &ExperimentGrid, out_dir: &Path) -> Result<Vec<io::ResultRow>> {
    grid.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let data = prepare_data(grid.dim, grid.n_max, grid.data_seed)?;
    io::write_matrix_csv(&out_dir.join("dataset.csv"), &data.trajectory.observations)?;
    let means: Vec<Vec<f64>> = data.truth.iter().map(|s| s.mean.clone()).collect();
    io::write_matrix_csv(&out_dir.join("kalman.csv"), &means)?;

    let results_path = out_dir.join("results.csv");
    io::ensure_results_csv(&results_path)?;
    let done: std::collections::HashSet<String> = io::read_results_csv(&results_path)?
        .into_iter()
        .map(|r| r.cell_key())
        .collect();

    let mut rows = Vec::new();
    for &algorithm in &grid.algorithms {
        for &m in &grid.m_values {
            for &island_size in &grid.island_values {
                for &threshold in &grid.theta_values {
                    let key = format!(
                        "{},{m},{island_size},{}",
                        algorithm.name(),
                        theta_label(&threshold)
                    );
                    if done.contains(&key) {
                        continue;
                    }
                    let (row, _) = run_cell(&data, algorithm, m, island_size, threshold, grid)?;
                    io::append_result_row(&results_path, &row)?;
                    rows.push(row);
                }
            }
        }
    }
    Ok(rows)
}
