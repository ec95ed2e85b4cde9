//! Simulated multi-PE execution engine.
//!
//! The engine runs a filter as m processing elements exchanging messages
//! along the butterfly schedule, either on one thread (the PEs are stepped
//! in index order) or on m worker threads plus a coordinator. Both modes
//! drive the same per-PE arithmetic with the same per-PE RNG streams, so
//! they produce bitwise-identical results; the threaded mode exists to
//! exercise the real message-passing structure, and communication is
//! simulated with in-process channels rather than network transport.
//!
//! Cross-PE traffic is charged to [`comm::CommStats`] under the fixed
//! accounting model documented in [`comm`].

pub mod comm;
pub(crate) mod pe;
pub mod rng;
mod serial;
mod threaded;

use std::sync::Arc;
use std::time::Instant;

use crate::butterfly::{build_schedule, Topology};
use crate::error::{Error, Result};
use crate::filters::{FilterConfig, FilterRun, RunBuilder, Threshold};
use crate::model::Model;
use crate::resample::{ExchangeRecord, SwapMode};
use comm::{CommLedger, CommStats, MsgRecord};
use pe::StepSums;
use rng::RngStream;

/// How the PEs are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// One thread steps every PE in index order.
    Serial,
    /// m worker threads plus a coordinator, with channel-based exchanges.
    Threaded,
}

impl Mode {
    pub fn label(&self) -> &'static str {
        match self {
            Mode::Serial => "serial",
            Mode::Threaded => "threaded",
        }
    }
}

/// The operations a filter strategy may issue against the PE array.
/// Implemented by both the serial and the threaded executor; strategies are
/// written once against this trait.
pub(crate) trait EngineCtl {
    fn topology(&self) -> Topology;
    fn n_max(&self) -> usize;
    fn begin_step(&mut self, n: u32);

    fn init_particles(&mut self);
    fn compute_potentials(&mut self, n: usize);
    fn step_sums(&mut self, n: usize) -> StepSums;

    /// Within-island multinomial resampling; returns the island weights.
    fn within_island(&mut self) -> Vec<f64>;
    /// Skip-path: fold potentials into carried weights, rescaled by `scale`.
    fn absorb_weights(&mut self, scale: f64);

    fn begin_aug(&mut self);
    fn aug_stage(&mut self, s: u8);
    fn finish_aug(&mut self, scale: f64);

    /// Execute one island-level butterfly stage; `vbar` is the
    /// coordinator's mirror of the island weights and is pair-averaged in
    /// place exactly as the PEs update their own copies.
    fn island_stage(&mut self, s: u8, mode: SwapMode, vbar: &mut [f64]);
    /// Store leftover island weights (vbar / scale) as island carries.
    fn commit_island_carries(&mut self, scale: f64);

    /// Gather all effective weights and blocks for a global round; charged.
    fn global_gather(&mut self) -> (Arc<Vec<f64>>, Arc<Vec<f64>>);
    fn global_resample(&mut self, weights: &Arc<Vec<f64>>, blocks: &Arc<Vec<f64>>);

    /// Charge the one-scalar-per-PE island weight gather of an IPF round.
    fn charge_island_weight_round(&mut self);
    /// Move island blocks per `assignment` (destination -> source island)
    /// and consume the island-level weights; `g_pending` marks whether the
    /// current potentials are still unresampled locally.
    fn island_assign(&mut self, assignment: &[usize], g_pending: bool);

    fn mutate(&mut self, n: usize);
    fn global_rng(&mut self) -> &mut RngStream;
    fn snapshot(&mut self) -> Vec<f64>;

    fn finish(self: Box<Self>) -> (CommStats, Vec<ExchangeRecord>, Option<Vec<MsgRecord>>);
}

fn validate_config(config: &FilterConfig) -> Result<()> {
    let n = config.topology.total_particles();
    if let Threshold::Ess(theta) = config.threshold {
        if !(theta > 1.0 / n as f64 && theta <= 1.0) {
            return Err(Error::Config(format!(
                "theta = {theta} outside (1/{n}, 1]"
            )));
        }
    }
    Ok(())
}

/// Run one filter over the simulated PEs. Serial and threaded modes produce
/// bitwise-identical [`FilterRun`] records for the same configuration.
pub fn execute_parallel(
    model: Arc<dyn Model>,
    config: &FilterConfig,
    mode: Mode,
) -> Result<(FilterRun, CommStats)> {
    validate_config(config)?;
    let strategy = config.algorithm.strategy();
    let schedule = Arc::new(build_schedule(config.topology));

    let mut eng: Box<dyn EngineCtl> = match mode {
        Mode::Serial => Box::new(serial::SerialEngine::new(
            Arc::clone(&model),
            config,
            Arc::clone(&schedule),
        )),
        Mode::Threaded => Box::new(threaded::ThreadedEngine::new(
            Arc::clone(&model),
            config,
            Arc::clone(&schedule),
        )?),
    };

    let mut builder = RunBuilder::new(model.dim(), model.n_max());
    let started = Instant::now();
    strategy.run(eng.as_mut(), config, &mut builder)?;
    let wall = started.elapsed().as_secs_f64();

    let (stats, exchange_log, trace) = eng.finish();
    let run = builder.finish(config, stats.clone(), wall, exchange_log, trace);
    Ok((run, stats))
}

/// Simulate the degenerate dissemination scenario: one island carries all
/// the weight and the butterfly stages spread its block. Returns the number
/// of island-stage rounds until every PE holds the hot block; with cold
/// weights this small the answer is log2(m) with overwhelming probability.
pub fn dissemination_drill(m: usize, hot_island: usize, seed: u64) -> Result<usize> {
    let topo = Topology::new(m, 1)?;
    if hot_island == 0 || hot_island > m {
        return Err(Error::Config(format!(
            "hot island {hot_island} outside 1..={m}"
        )));
    }
    if m == 1 {
        return Ok(0);
    }
    let schedule = build_schedule(topo);
    let states: Vec<Vec<f64>> = (0..m).map(|k| vec![k as f64]).collect();
    let mut ensemble = crate::resample::ParticleEnsemble::from_states(topo, &states)?;
    let mut vbar = vec![1e-30; m];
    vbar[hot_island - 1] = 1.0;
    let mut streams: Vec<RngStream> = (0..m).map(|k| RngStream::for_pe(seed, k)).collect();
    let hot_tag = (hot_island - 1) as f64;

    let s_max = schedule.num_stages();
    let mut log = Vec::new();
    let mut rounds = 0usize;
    loop {
        let s = rounds % s_max + 1;
        crate::resample::island_stage_in_place(
            &mut ensemble,
            &mut vbar,
            &schedule,
            s,
            SwapMode::Plain,
            &mut streams,
            0,
            &mut log,
        );
        rounds += 1;
        let all_hot = (0..m).all(|k| ensemble.particle(k)[0] == hot_tag);
        if all_hot {
            return Ok(rounds);
        }
        if rounds > 64 * s_max {
            return Err(Error::Runtime(
                "dissemination did not complete; cold weights too heavy".into(),
            ));
        }
    }
}

/// Split two distinct mutable references out of a slice.
pub(crate) fn split_two<T>(items: &mut [T], a: usize, b: usize) -> (&mut T, &mut T) {
    debug_assert!(a < b);
    let (lo, hi) = items.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

pub(crate) fn new_ledger(config: &FilterConfig) -> CommLedger {
    CommLedger::new(config.trace_messages)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drill_matches_log2_m() {
        for (m, expect) in [(2usize, 1usize), (4, 2), (8, 3), (16, 4)] {
            assert_eq!(dissemination_drill(m, 1, 99).unwrap(), expect);
        }
        assert_eq!(dissemination_drill(4, 3, 7).unwrap(), 2);
        assert_eq!(dissemination_drill(1, 1, 7).unwrap(), 0);
    }

    #[test]
    fn drill_rejects_bad_hot_island() {
        assert!(matches!(
            dissemination_drill(4, 5, 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            dissemination_drill(6, 1, 0),
            Err(Error::Topology(_))
        ));
    }
}
