//! Complete filter algorithms assembled from the resampling primitives.
//!
//! Each algorithm lives behind the crate-internal `Strategy` trait and is
//! registered by name; [`algorithm_by_name`] resolves the CLI/config string
//! to an [`Algorithm`], and the engine dispatches to the registered
//! strategy at runtime.
//!
//! All algorithms record the per-step estimates before any resampling, from
//! the mutated (prediction) particles: the unweighted-in-the-limit mean of
//! the prediction sample, and the potential-weighted mean that estimates
//! the filtering mean and feeds the MSE benchmarks.

mod airpf;
mod bpf;
mod ipf;

pub use ipf::relabel_keep_one_copy;

use crate::butterfly::Topology;
use crate::engine::comm::{CommStats, MsgRecord};
use crate::engine::pe::StepSums;
use crate::engine::EngineCtl;
use crate::error::{Error, Result};
use crate::resample::{ExchangeRecord, SwapMode};

/// The interchangeable filter algorithms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    /// Bootstrap particle filter with global multinomial resampling.
    Bpf,
    /// BPF with butterfly-staged resampling of individual particles.
    BpfAugmented,
    /// Augmented island resampling particle filter.
    AirpfPlain,
    /// AIRPF with the pure-exchange-avoiding island stages.
    AirpfModified,
    /// Island particle filter, between-island resampling first.
    Ipf1,
    /// Island particle filter, within-island resampling first.
    Ipf2,
}

pub(crate) trait Strategy: Sync {
    fn run(
        &self,
        eng: &mut dyn EngineCtl,
        config: &FilterConfig,
        builder: &mut RunBuilder,
    ) -> Result<()>;
}

struct Entry {
    name: &'static str,
    kind: Algorithm,
    strategy: &'static (dyn Strategy + Sync),
}

static REGISTRY: [Entry; 6] = [
    Entry {
        name: "bpf",
        kind: Algorithm::Bpf,
        strategy: &bpf::Bpf,
    },
    Entry {
        name: "bpf-aug",
        kind: Algorithm::BpfAugmented,
        strategy: &bpf::BpfAugmented,
    },
    Entry {
        name: "airpf",
        kind: Algorithm::AirpfPlain,
        strategy: &airpf::Airpf {
            mode: SwapMode::Plain,
        },
    },
    Entry {
        name: "airpf-mod",
        kind: Algorithm::AirpfModified,
        strategy: &airpf::Airpf {
            mode: SwapMode::Modified,
        },
    },
    Entry {
        name: "ipf1",
        kind: Algorithm::Ipf1,
        strategy: &ipf::Ipf {
            within_first: false,
        },
    },
    Entry {
        name: "ipf2",
        kind: Algorithm::Ipf2,
        strategy: &ipf::Ipf { within_first: true },
    },
];

/// The registered algorithm names, in registry order.
pub fn algorithm_names() -> Vec<&'static str> {
    REGISTRY.iter().map(|e| e.name).collect()
}

/// Resolve a CLI/config name to an algorithm.
pub fn algorithm_by_name(name: &str) -> Result<Algorithm> {
    REGISTRY
        .iter()
        .find(|e| e.name == name)
        .map(|e| e.kind)
        .ok_or_else(|| {
            Error::Config(format!(
                "unknown algorithm '{name}' (expected one of: {})",
                algorithm_names().join(", ")
            ))
        })
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        REGISTRY
            .iter()
            .find(|e| e.kind == *self)
            .expect("registered")
            .name
    }

    pub(crate) fn strategy(&self) -> &'static dyn Strategy {
        REGISTRY
            .iter()
            .find(|e| e.kind == *self)
            .expect("registered")
            .strategy
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// When resampling is triggered.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    /// Resample unconditionally at every opportunity.
    Always,
    /// Resample only while the ESS is strictly below theta.
    Ess(f64),
}

impl Threshold {
    pub(crate) fn triggers(&self, ess: f64) -> bool {
        match self {
            Threshold::Always => true,
            Threshold::Ess(theta) => ess < *theta,
        }
    }
}

/// Everything needed to run one filter.
#[derive(Debug, Clone)]
pub struct FilterConfig {
    pub topology: Topology,
    pub algorithm: Algorithm,
    pub threshold: Threshold,
    /// Rotate the first island stage across steps (picks up after the last
    /// executed stage of the previous step).
    pub stage_rotation: bool,
    pub seed: u64,
    /// Record every cross-PE message (memory-heavy; tests only).
    pub trace_messages: bool,
    /// Keep the per-pair exchange log in the run record.
    pub record_exchange_log: bool,
    /// Keep per-step particle snapshots (taken before resampling).
    pub record_snapshots: bool,
    /// Keep per-island restricted estimates.
    pub record_island_estimates: bool,
}

impl FilterConfig {
    pub fn new(topology: Topology, algorithm: Algorithm, threshold: Threshold, seed: u64) -> Self {
        Self {
            topology,
            algorithm,
            threshold,
            stage_rotation: false,
            seed,
            trace_messages: false,
            record_exchange_log: false,
            record_snapshots: false,
            record_island_estimates: false,
        }
    }
}

/// One filter trajectory.
#[derive(Debug, Clone)]
pub struct FilterRun {
    pub dim: usize,
    /// Carry-weighted means of the prediction sample, one per step.
    pub pred_estimates: Vec<Vec<f64>>,
    /// Potential-weighted means (filtering-mean estimates), one per step.
    pub filt_estimates: Vec<Vec<f64>>,
    /// The trigger ESS seen at each step (particle-level for the BPF
    /// family, island-level for the island algorithms).
    pub ess: Vec<f64>,
    /// Butterfly stages executed at each step.
    pub stages: Vec<u32>,
    pub comm: CommStats,
    pub wall_time_s: f64,
    pub island_estimates: Option<Vec<Vec<Vec<f64>>>>,
    pub snapshots: Option<Vec<Vec<f64>>>,
    pub exchange_log: Option<Vec<ExchangeRecord>>,
    pub msg_trace: Option<Vec<MsgRecord>>,
}

impl FilterRun {
    /// Per-step CSV: n, the filtering-mean estimate, ESS, stages, payload.
    pub fn step_csv(&self) -> String {
        let mut out = String::new();
        out.push('n');
        for i in 0..self.dim {
            out.push_str(&format!(",est_{i}"));
        }
        out.push_str(",ess,stages,payload_particles\n");
        for (n, est) in self.filt_estimates.iter().enumerate() {
            out.push_str(&n.to_string());
            for v in est {
                out.push_str(&format!(",{v:.16e}"));
            }
            let payload = self.comm.per_step.get(n).map_or(0, |s| s.payload_particles);
            out.push_str(&format!(
                ",{:.16e},{},{payload}\n",
                self.ess[n], self.stages[n]
            ));
        }
        out
    }

    /// Equality of everything except wall time; what determinism tests use.
    pub fn same_results(&self, other: &FilterRun) -> bool {
        let bits = |xs: &Vec<Vec<f64>>| -> Vec<Vec<u64>> {
            xs.iter()
                .map(|r| r.iter().map(|v| v.to_bits()).collect())
                .collect()
        };
        bits(&self.pred_estimates) == bits(&other.pred_estimates)
            && bits(&self.filt_estimates) == bits(&other.filt_estimates)
            && self.ess.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
                == other.ess.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            && self.stages == other.stages
            && self.comm == other.comm
            && self.exchange_log == other.exchange_log
    }
}

/// Coordinator-side accumulator for [`FilterRun`].
pub(crate) struct RunBuilder {
    dim: usize,
    pred: Vec<Vec<f64>>,
    filt: Vec<Vec<f64>>,
    ess: Vec<f64>,
    stages: Vec<u32>,
    island_estimates: Vec<Vec<Vec<f64>>>,
    snapshots: Vec<Vec<f64>>,
}

impl RunBuilder {
    pub fn new(dim: usize, n_max: usize) -> Self {
        Self {
            dim,
            pred: Vec::with_capacity(n_max),
            filt: Vec::with_capacity(n_max),
            ess: Vec::with_capacity(n_max),
            stages: Vec::with_capacity(n_max),
            island_estimates: Vec::new(),
            snapshots: Vec::new(),
        }
    }

    pub fn record_step(
        &mut self,
        config: &FilterConfig,
        sums: &StepSums,
        trigger_ess: f64,
        stages: u32,
    ) {
        self.pred.push(sums.pred_mean());
        self.filt.push(sums.filt_mean());
        self.ess.push(trigger_ess);
        self.stages.push(stages);
        if config.record_island_estimates {
            self.island_estimates
                .push(sums.per_pe.iter().map(|p| p.island_mean.clone()).collect());
        }
    }

    pub fn push_snapshot(&mut self, data: Vec<f64>) {
        self.snapshots.push(data);
    }

    pub fn finish(
        self,
        config: &FilterConfig,
        comm: CommStats,
        wall_time_s: f64,
        exchange_log: Vec<ExchangeRecord>,
        msg_trace: Option<Vec<MsgRecord>>,
    ) -> FilterRun {
        FilterRun {
            dim: self.dim,
            pred_estimates: self.pred,
            filt_estimates: self.filt,
            ess: self.ess,
            stages: self.stages,
            comm,
            wall_time_s,
            island_estimates: config
                .record_island_estimates
                .then_some(self.island_estimates),
            snapshots: config.record_snapshots.then_some(self.snapshots),
            exchange_log: config.record_exchange_log.then_some(exchange_log),
            msg_trace,
        }
    }
}

/// Island-level ESS over strictly positive island weights.
pub(crate) fn island_ess(vbar: &[f64]) -> f64 {
    crate::resample::ess(vbar).expect("island weights are floored positive")
}
