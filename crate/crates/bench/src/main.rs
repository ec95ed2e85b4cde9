//! Command-line harness around the filter library: dataset simulation, the
//! Kalman oracle, single-cell runs, experiment grids, lower envelopes, and
//! the dissemination drill.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use butterfly_smc::engine::{dissemination_drill, Mode};
use butterfly_smc::filters::{algorithm_by_name, algorithm_names, Algorithm, Threshold};
use butterfly_smc::model::{simulate_data, RandomWalkModel};
use butterfly_smc::oracle::kalman_filter;

use butterfly_smc_bench::envelope::{lower_envelope, EnvelopePoint};
use butterfly_smc_bench::grid::{parse_theta, prepare_data, run_cell, run_grid, ExperimentGrid};
use butterfly_smc_bench::io;

#[derive(Parser)]
#[command(
    name = "butterfly-smc",
    about = "Particle filters with butterfly-constrained resampling: benchmark harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// State dimension d.
    #[arg(long, default_value_t = 7)]
    d: usize,
    /// Number of time steps.
    #[arg(long = "n-max", default_value_t = 500)]
    n_max: usize,
    /// Master seed (dataset and run seeds derive from it).
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args, Clone)]
struct EngineArgs {
    /// Step the PEs on one thread (default).
    #[arg(long, conflicts_with = "threaded")]
    serial: bool,
    /// Run one worker thread per PE.
    #[arg(long)]
    threaded: bool,
    /// Rotate the first island stage across steps.
    #[arg(long = "rotate-stages")]
    rotate_stages: bool,
    /// Write time_s as 0 so outputs are byte-stable across modes.
    #[arg(long = "no-timing")]
    no_timing: bool,
}

impl EngineArgs {
    fn mode(&self) -> Mode {
        if self.threaded {
            Mode::Threaded
        } else {
            Mode::Serial
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset and write <out>/dataset.csv.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run the exact Kalman filter over a dataset and write <out>/kalman.csv.
    Kalman {
        /// Observation CSV; defaults to <out>/dataset.csv.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run one (algorithm, m, M, theta) cell: J runs, per-step trace of the
    /// first run, one results.csv row, and a summary.json.
    Run {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        engine: EngineArgs,
        /// Algorithm name.
        #[arg(long)]
        alg: String,
        /// Number of PEs (power of two).
        #[arg(long)]
        m: usize,
        /// Particles per PE.
        #[arg(long = "M")]
        island_size: usize,
        /// Resampling threshold in (1/N, 1], or "always".
        #[arg(long, default_value = "always")]
        theta: String,
        /// Independent runs.
        #[arg(long = "J", default_value_t = 1)]
        runs: usize,
        /// Also write the per-pair exchange log of the first run.
        #[arg(long = "exchange-log")]
        exchange_log: bool,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run a grid over comma-separated lists of algorithms, m, M and theta.
    Grid {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        engine: EngineArgs,
        /// Comma-separated algorithm names.
        #[arg(long)]
        alg: String,
        /// Comma-separated PE counts.
        #[arg(long)]
        m: String,
        /// Comma-separated particles-per-PE values.
        #[arg(long = "M")]
        island_size: String,
        /// Comma-separated thresholds ("always" allowed).
        #[arg(long, default_value = "always")]
        theta: String,
        /// Independent runs per cell.
        #[arg(long = "J", default_value_t = 5)]
        runs: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Compute per-algorithm lower envelopes of a results.csv.
    Envelope {
        /// Input results.csv.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output CSV path.
        #[arg(long, default_value = "envelope.csv")]
        out: PathBuf,
    },
    /// Butterfly dissemination drill: rounds until one hot island's block
    /// reaches every PE.
    Drill {
        /// Number of PEs (power of two).
        #[arg(long)]
        m: usize,
        /// The 1-based hot island.
        #[arg(long, default_value_t = 1)]
        hot: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// List the registered algorithms.
    Algorithms,
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(|f| {
            f.trim()
                .parse::<T>()
                .map_err(|e| anyhow::anyhow!("bad {what} '{f}': {e}"))
        })
        .collect()
}

fn parse_algorithms(s: &str) -> Result<Vec<Algorithm>> {
    s.split(',')
        .map(|f| algorithm_by_name(f.trim()).map_err(|e| anyhow::anyhow!(e)))
        .collect()
}

fn parse_thetas(s: &str) -> Result<Vec<Threshold>> {
    s.split(',').map(|f| parse_theta(f.trim())).collect()
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate { model, out } => {
            std::fs::create_dir_all(&out)?;
            let rw = RandomWalkModel::standard(model.d);
            let data = simulate_data(&rw, model.n_max, model.seed)?;
            let path = out.join("dataset.csv");
            io::write_matrix_csv(&path, &data.observations)?;
            println!(
                "wrote {} ({} steps, d={})",
                path.display(),
                model.n_max,
                model.d
            );
        }
        Command::Kalman { data, out } => {
            std::fs::create_dir_all(&out)?;
            let input = data.unwrap_or_else(|| out.join("dataset.csv"));
            let observations = io::read_matrix_csv(&input)?;
            anyhow::ensure!(!observations.is_empty(), "empty dataset");
            let rw = RandomWalkModel::standard(observations[0].len());
            let states = kalman_filter(&rw, &observations)?;
            let means: Vec<Vec<f64>> = states.iter().map(|s| s.mean.clone()).collect();
            let path = out.join("kalman.csv");
            io::write_matrix_csv(&path, &means)?;
            println!("wrote {}", path.display());
        }
        Command::Run {
            model,
            engine,
            alg,
            m,
            island_size,
            theta,
            runs,
            exchange_log,
            out,
        } => {
            std::fs::create_dir_all(&out)?;
            let algorithm = algorithm_by_name(&alg)?;
            let threshold = parse_theta(&theta)?;
            let grid = ExperimentGrid {
                dim: model.d,
                n_max: model.n_max,
                runs,
                m_values: vec![m],
                island_values: vec![island_size],
                theta_values: vec![threshold],
                algorithms: vec![algorithm],
                data_seed: model.seed,
                run_seed_base: model.seed,
                mode: engine.mode(),
                stage_rotation: engine.rotate_stages,
                record_time: !engine.no_timing,
                debug_truth_estimates: false,
                record_exchange_log: exchange_log,
            };
            let data = prepare_data(grid.dim, grid.n_max, grid.data_seed)?;
            io::write_matrix_csv(&out.join("dataset.csv"), &data.trajectory.observations)?;
            let means: Vec<Vec<f64>> = data.truth.iter().map(|s| s.mean.clone()).collect();
            io::write_matrix_csv(&out.join("kalman.csv"), &means)?;

            let (row, first_run) = run_cell(&data, algorithm, m, island_size, threshold, &grid)?;
            std::fs::write(out.join("run.csv"), first_run.step_csv())?;
            if let Some(log) = &first_run.exchange_log {
                let mut text = String::from(butterfly_smc::resample::ExchangeRecord::CSV_HEADER);
                text.push('\n');
                for record in log {
                    text.push_str(&record.to_csv_row());
                    text.push('\n');
                }
                std::fs::write(out.join("exchange_log.csv"), text)?;
            }
            let results = out.join("results.csv");
            io::ensure_results_csv(&results)?;
            io::append_result_row(&results, &row)?;
            let summary = butterfly_smc_bench::grid::CellSummary {
                alg: row.alg.clone(),
                m: row.m,
                island_size: row.island_size,
                theta: row.theta.clone(),
                mse: row.mse,
                time_s: row.time_s,
                stage_rounds: row.stage_rounds,
                weight_msgs: row.weight_msgs,
                payload_particles: row.payload_particles,
            };
            std::fs::write(
                out.join("summary.json"),
                serde_json::to_string_pretty(&summary)?,
            )?;
            println!(
                "{} m={} M={} theta={}: mse={:.6e} time={:.3}s",
                row.alg, row.m, row.island_size, row.theta, row.mse, row.time_s
            );
        }
        Command::Grid {
            model,
            engine,
            alg,
            m,
            island_size,
            theta,
            runs,
            out,
        } => {
            let grid = ExperimentGrid {
                dim: model.d,
                n_max: model.n_max,
                runs,
                m_values: parse_list(&m, "m")?,
                island_values: parse_list(&island_size, "M")?,
                theta_values: parse_thetas(&theta)?,
                algorithms: parse_algorithms(&alg)?,
                data_seed: model.seed,
                run_seed_base: model.seed,
                mode: engine.mode(),
                stage_rotation: engine.rotate_stages,
                record_time: !engine.no_timing,
                debug_truth_estimates: false,
                record_exchange_log: false,
            };
            let rows = run_grid(&grid, &out)?;
            println!(
                "completed {} cells into {}",
                rows.len(),
                out.join("results.csv").display()
            );
        }
        Command::Envelope { input, out } => {
            let rows = io::read_results_csv(&input)?;
            let points: Vec<EnvelopePoint> =
                rows.iter().map(EnvelopePoint::from_result).collect();
            let kept = lower_envelope(&points);
            let mut text = String::from(io::ENVELOPE_HEADER);
            text.push('\n');
            for p in &kept {
                text.push_str(&format!(
                    "{},{},{:.6}\n",
                    p.tag,
                    io::format_float(p.mse),
                    p.time_s
                ));
            }
            std::fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?;
            println!("kept {} of {} points -> {}", kept.len(), points.len(), out.display());
        }
        Command::Drill { m, hot, seed } => {
            let rounds = dissemination_drill(m, hot, seed)?;
            println!("m={m} hot={hot}: {rounds} rounds (log2(m) = {})", m.trailing_zeros());
        }
        Command::Algorithms => {
            for name in algorithm_names() {
                println!("{name}");
            }
        }
    }
    Ok(())
}
