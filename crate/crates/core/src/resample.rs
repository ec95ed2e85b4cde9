//! Resampling primitives: multinomial, butterfly-staged (augmented) at the
//! particle and island level, within-island resampling, the fully adapted
//! stage controller, and the effective sample size.
//!
//! Everything here is a deterministic function of its inputs and the RNG
//! streams it is handed; island k always draws from `streams[k]`, which is
//! what makes the serial reference path and the multi-worker engine agree
//! bit for bit.

use crate::butterfly::{PairSchedule, Topology};
use crate::engine::rng::RngStream;
use crate::error::{Error, Result};

/// N particles of dimension `dim` partitioned into m islands of M; island k
/// (0-based) owns the contiguous rows k*M .. (k+1)*M.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    topology: Topology,
    dim: usize,
    data: Vec<f64>,
}

impl ParticleEnsemble {
    pub fn new(topology: Topology, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("dimension must be at least 1".into()));
        }
        if data.len() != topology.total_particles() * dim {
            return Err(Error::Shape(format!(
                "expected {} values, got {}",
                topology.total_particles() * dim,
                data.len()
            )));
        }
        Ok(Self {
            topology,
            dim,
            data,
        })
    }

    pub fn from_states(topology: Topology, states: &[Vec<f64>]) -> Result<Self> {
        let dim = states.first().map(|s| s.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(states.len() * dim);
        for s in states {
            data.extend_from_slice(s);
        }
        Self::new(topology, dim, data)
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Particle `i` (0-based global index).
    pub fn particle(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// The block of island `k` (0-based), M*dim values.
    pub fn island(&self, k: usize) -> &[f64] {
        let len = self.topology.island_size() * self.dim;
        &self.data[k * len..(k + 1) * len]
    }

    pub fn island_mut(&mut self, k: usize) -> &mut [f64] {
        let len = self.topology.island_size() * self.dim;
        &mut self.data[k * len..(k + 1) * len]
    }

    pub fn set_island(&mut self, k: usize, block: &[f64]) {
        self.island_mut(k).copy_from_slice(block);
    }

    pub fn swap_islands(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        let len = self.topology.island_size() * self.dim;
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let (left, right) = self.data.split_at_mut(hi * len);
        left[lo * len..(lo + 1) * len].swap_with_slice(&mut right[..len]);
    }
}

fn validate_weights(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::Domain("weights must be nonempty".into()));
    }
    for (i, &w) in weights.iter().enumerate() {
        if !w.is_finite() || w <= 0.0 {
            return Err(Error::Domain(format!("weight {i} = {w} is not positive")));
        }
    }
    Ok(())
}

/// Effective sample size of positive weights: (mean w)^2 / (mean w^2),
/// always in [1/n, 1] up to rounding.
pub fn ess(weights: &[f64]) -> Result<f64> {
    validate_weights(weights)?;
    let n = weights.len() as f64;
    let sum: f64 = weights.iter().sum();
    let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
    if sum_sq == 0.0 || !sum.is_finite() || !sum_sq.is_finite() {
        return Err(Error::Domain("weights overflow or vanish in ESS".into()));
    }
    Ok((sum / n).powi(2) / (sum_sq / n))
}

/// Cumulative sums of `weights` plus their total; feeds [`draw_categorical`].
pub(crate) fn build_cdf(weights: impl Iterator<Item = f64>) -> (Vec<f64>, f64) {
    let mut cdf = Vec::new();
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cdf.push(acc);
    }
    (cdf, acc)
}

/// Inverse-CDF categorical draw: one uniform per draw, scaled by the total
/// weight rather than normalising the weights.
pub(crate) fn draw_categorical(cdf: &[f64], total: f64, rng: &mut RngStream) -> usize {
    let u = rng.uniform() * total;
    let idx = cdf.partition_point(|&c| c <= u);
    idx.min(cdf.len() - 1)
}

/// Multinomial resampling: each output row is drawn i.i.d. from the weighted
/// empirical distribution of the input rows.
pub fn multinomial_resample(
    particles: &[f64],
    dim: usize,
    weights: &[f64],
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    if dim == 0 || particles.len() != weights.len() * dim {
        return Err(Error::Shape(format!(
            "{} values with dim {dim} do not match {} weights",
            particles.len(),
            weights.len()
        )));
    }
    validate_weights(weights)?;
    let (cdf, total) = build_cdf(weights.iter().copied());
    if !total.is_finite() || total <= 0.0 {
        return Err(Error::Domain(format!("total weight {total} is unusable")));
    }
    let mut out = vec![0.0; particles.len()];
    for slot in 0..weights.len() {
        let src = draw_categorical(&cdf, total, rng);
        out[slot * dim..(slot + 1) * dim]
            .copy_from_slice(&particles[src * dim..(src + 1) * dim]);
    }
    Ok(out)
}

/// Multinomial resampling of one island block in place; the shared kernel
/// for the within-island pass. Returns nothing; the caller tracks weights.
pub(crate) fn multinomial_block_in_place(
    block: &mut [f64],
    dim: usize,
    weights: &[f64],
    rng: &mut RngStream,
) -> Result<()> {
    let out = multinomial_resample(block, dim, weights, rng)?;
    block.copy_from_slice(&out);
    Ok(())
}

/// Within-island resampling: each island independently resamples its own M
/// particles by its local weights. Returns the per-particle output weights,
/// equal within each island to the island mean of the input weights.
pub fn within_island_resample(
    ensemble: &mut ParticleEnsemble,
    potentials: &[f64],
    streams: &mut [RngStream],
) -> Result<Vec<f64>> {
    let topo = ensemble.topology();
    let n = topo.total_particles();
    let island_size = topo.island_size();
    if potentials.len() != n {
        return Err(Error::Shape(format!(
            "{} potentials for {} particles",
            potentials.len(),
            n
        )));
    }
    if streams.len() < topo.num_pes() {
        return Err(Error::Topology("one RNG stream per island required".into()));
    }
    validate_weights(potentials)?;

    let dim = ensemble.dim();
    let mut w_out = vec![0.0; n];
    for k in 0..topo.num_pes() {
        let local = &potentials[k * island_size..(k + 1) * island_size];
        let mean = local.iter().sum::<f64>() / island_size as f64;
        multinomial_block_in_place(ensemble.island_mut(k), dim, local, &mut streams[k])?;
        for w in &mut w_out[k * island_size..(k + 1) * island_size] {
            *w = mean;
        }
    }
    Ok(w_out)
}

/// Per-stage weight snapshots produced by [`augmented_resample`].
#[derive(Debug, Clone)]
pub struct StageWeights {
    /// values[s] holds the N per-particle weights V_s, s = 0..=S.
    pub values: Vec<Vec<f64>>,
}

impl StageWeights {
    pub fn final_weights(&self) -> &[f64] {
        self.values.last().expect("at least V_0 present")
    }
}

/// Butterfly-staged resampling of individual particles. At stage s each
/// island draws its M outputs from the 2M particles of its pair window with
/// probabilities proportional to the stage-(s-1) weights; the stage weight
/// becomes the window mean, so after the final stage all weights coincide
/// with the global mean of the inputs.
pub fn augmented_resample(
    ensemble: &mut ParticleEnsemble,
    potentials: &[f64],
    schedule: &PairSchedule,
    streams: &mut [RngStream],
) -> Result<StageWeights> {
    let topo = ensemble.topology();
    if schedule.topology() != topo {
        return Err(Error::Topology(
            "schedule was built for a different topology".into(),
        ));
    }
    let n = topo.total_particles();
    if potentials.len() != n {
        return Err(Error::Shape(format!(
            "{} potentials for {n} particles",
            potentials.len()
        )));
    }
    if streams.len() < topo.num_pes() {
        return Err(Error::Topology("one RNG stream per island required".into()));
    }
    validate_weights(potentials)?;

    let island_size = topo.island_size();
    let dim = ensemble.dim();
    let mut v = potentials.to_vec();
    let mut trace = StageWeights {
        values: vec![v.clone()],
    };

    for s in 1..=schedule.num_stages() {
        let mut v_next = v.clone();
        for &(l1, r1) in schedule.stage(s) {
            let (l, r) = (l1 - 1, r1 - 1);
            // Canonical window: the lower-index island's particles first.
            let wl = &v[l * island_size..(l + 1) * island_size];
            let wr = &v[r * island_size..(r + 1) * island_size];
            let (cdf, total) = build_cdf(wl.iter().chain(wr.iter()).copied());
            let v_new = total / (2 * island_size) as f64;

            let left_block = ensemble.island(l).to_vec();
            let right_block = ensemble.island(r).to_vec();
            let pick = |idx: usize| -> &[f64] {
                if idx < island_size {
                    &left_block[idx * dim..(idx + 1) * dim]
                } else {
                    let j = idx - island_size;
                    &right_block[j * dim..(j + 1) * dim]
                }
            };

            for &(island, stream_idx) in &[(l, l), (r, r)] {
                let mut fresh = Vec::with_capacity(island_size * dim);
                for _ in 0..island_size {
                    let idx = draw_categorical(&cdf, total, &mut streams[stream_idx]);
                    fresh.extend_from_slice(pick(idx));
                }
                ensemble.set_island(island, &fresh);
            }
            for w in &mut v_next[l * island_size..(l + 1) * island_size] {
                *w = v_new;
            }
            for w in &mut v_next[r * island_size..(r + 1) * island_size] {
                *w = v_new;
            }
        }
        v = v_next;
        trace.values.push(v.clone());
    }
    Ok(trace)
}

/// Which side of a pair a draw selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Whether the island-level stage undoes pure pairwise exchanges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwapMode {
    Plain,
    Modified,
}

/// What happened inside one pair at one stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExchangeOutcome {
    /// Both PEs kept their own block.
    KeepKeep,
    /// The right PE adopted the left block.
    CopyLeftToRight,
    /// The left PE adopted the right block.
    CopyRightToLeft,
    /// Both adopted the partner's block (plain mode only).
    Swap,
    /// A pure exchange was detected and undone (modified mode only).
    SwapAvoided,
}

impl ExchangeOutcome {
    pub fn label(&self) -> &'static str {
        match self {
            ExchangeOutcome::KeepKeep => "keep-keep",
            ExchangeOutcome::CopyLeftToRight | ExchangeOutcome::CopyRightToLeft => "one-copy",
            ExchangeOutcome::Swap => "two-copy",
            ExchangeOutcome::SwapAvoided => "swap-avoided",
        }
    }
}

/// Particles crossing the link for one pair outcome.
pub fn outcome_payload(outcome: ExchangeOutcome, island_size: usize) -> u64 {
    match outcome {
        ExchangeOutcome::KeepKeep | ExchangeOutcome::SwapAvoided => 0,
        ExchangeOutcome::CopyLeftToRight | ExchangeOutcome::CopyRightToLeft => island_size as u64,
        ExchangeOutcome::Swap => 2 * island_size as u64,
    }
}

/// Draw the source side given the left-side probability.
pub fn pick_side(u: f64, p_left: f64) -> Side {
    if u < p_left {
        Side::Left
    } else {
        Side::Right
    }
}

/// Resolve the two independent draws of a pair. The swap test compares the
/// sampled source-island indices, never particle values: two islands holding
/// equal states are still distinct islands.
pub fn resolve_pair(
    left_choice: Side,
    right_choice: Side,
    mode: SwapMode,
) -> (Side, Side, ExchangeOutcome) {
    match (left_choice, right_choice) {
        (Side::Left, Side::Right) => (Side::Left, Side::Right, ExchangeOutcome::KeepKeep),
        (Side::Left, Side::Left) => (Side::Left, Side::Left, ExchangeOutcome::CopyLeftToRight),
        (Side::Right, Side::Right) => (Side::Right, Side::Right, ExchangeOutcome::CopyRightToLeft),
        (Side::Right, Side::Left) => match mode {
            SwapMode::Plain => (Side::Right, Side::Left, ExchangeOutcome::Swap),
            SwapMode::Modified => (Side::Left, Side::Right, ExchangeOutcome::SwapAvoided),
        },
    }
}

/// One pair draw: left decides from `u_l`, right from `u_r`, both against
/// the same left-side probability v_l / (v_l + v_r).
pub fn island_pair_draw(
    v_l: f64,
    v_r: f64,
    u_l: f64,
    u_r: f64,
    mode: SwapMode,
) -> (Side, Side, ExchangeOutcome) {
    let p_left = v_l / (v_l + v_r);
    resolve_pair(pick_side(u_l, p_left), pick_side(u_r, p_left), mode)
}

/// One exchange-log row: what one pair did at one stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExchangeRecord {
    pub step: u32,
    pub stage: u8,
    pub pair: u16,
    pub outcome: ExchangeOutcome,
    pub payload_particles: u64,
}

impl ExchangeRecord {
    pub const CSV_HEADER: &'static str = "step,stage,pair,outcome,payload_particles";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.step,
            self.stage,
            self.pair,
            self.outcome.label(),
            self.payload_particles
        )
    }
}

/// Result of the island-level stages: per-stage island weights and the
/// exchange log.
#[derive(Debug, Clone)]
pub struct IslandTrace {
    /// vbar[s] holds the m island weights after stage s (vbar[0] = input).
    pub vbar: Vec<Vec<f64>>,
    pub exchange_log: Vec<ExchangeRecord>,
}

/// Execute one island-level butterfly stage over the whole ensemble,
/// updating `vbar` in place (pair averages) and appending to the log.
#[allow(clippy::too_many_arguments)]
pub(crate) fn island_stage_in_place(
    ensemble: &mut ParticleEnsemble,
    vbar: &mut [f64],
    schedule: &PairSchedule,
    s: usize,
    mode: SwapMode,
    streams: &mut [RngStream],
    step: u32,
    log: &mut Vec<ExchangeRecord>,
) {
    let island_size = ensemble.topology().island_size();
    for (pair_idx, &(l1, r1)) in schedule.stage(s).iter().enumerate() {
        let (l, r) = (l1 - 1, r1 - 1);
        let u_l = streams[l].uniform();
        let u_r = streams[r].uniform();
        let (eff_l, eff_r, outcome) = island_pair_draw(vbar[l], vbar[r], u_l, u_r, mode);
        match (eff_l, eff_r) {
            (Side::Left, Side::Right) => {}
            (Side::Left, Side::Left) => {
                let block = ensemble.island(l).to_vec();
                ensemble.set_island(r, &block);
            }
            (Side::Right, Side::Right) => {
                let block = ensemble.island(r).to_vec();
                ensemble.set_island(l, &block);
            }
            (Side::Right, Side::Left) => ensemble.swap_islands(l, r),
        }
        let mean = 0.5 * (vbar[l] + vbar[r]);
        vbar[l] = mean;
        vbar[r] = mean;
        log.push(ExchangeRecord {
            step,
            stage: s as u8,
            pair: pair_idx as u16,
            outcome,
            payload_particles: outcome_payload(outcome, island_size),
        });
    }
}

/// Butterfly-staged resampling of whole islands: at each stage every PE
/// independently keeps its own block or adopts its partner's, with odds
/// given by the island weights; weights are then pair-averaged.
pub fn island_augmented_resample(
    ensemble: &mut ParticleEnsemble,
    island_weights: &[f64],
    schedule: &PairSchedule,
    streams: &mut [RngStream],
    mode: SwapMode,
) -> Result<IslandTrace> {
    let topo = ensemble.topology();
    if schedule.topology() != topo {
        return Err(Error::Topology(
            "schedule was built for a different topology".into(),
        ));
    }
    if island_weights.len() != topo.num_pes() {
        return Err(Error::Shape(format!(
            "{} island weights for {} islands",
            island_weights.len(),
            topo.num_pes()
        )));
    }
    if streams.len() < topo.num_pes() {
        return Err(Error::Topology("one RNG stream per island required".into()));
    }
    validate_weights(island_weights)?;

    let mut vbar = island_weights.to_vec();
    let mut trace = IslandTrace {
        vbar: vec![vbar.clone()],
        exchange_log: Vec::new(),
    };
    for s in 1..=schedule.num_stages() {
        island_stage_in_place(
            ensemble,
            &mut vbar,
            schedule,
            s,
            mode,
            streams,
            0,
            &mut trace.exchange_log,
        );
        trace.vbar.push(vbar.clone());
    }
    Ok(trace)
}

/// Outcome of the fully adapted controller.
#[derive(Debug, Clone)]
pub struct ControllerOutcome {
    pub stages_executed: usize,
    /// The last stage that ran, if any; feeds stage rotation.
    pub last_stage: Option<usize>,
    /// Island ESS seen at each gate, including the one that stopped the loop.
    pub ess_trace: Vec<f64>,
    /// Island weights after the executed stages.
    pub vbar: Vec<f64>,
    pub exchange_log: Vec<ExchangeRecord>,
}

/// Fully adapted island resampling: before each stage (cyclically ordered
/// from `start_stage`) evaluate the island-level ESS of the current weights
/// and execute the stage only while it stays below `theta`.
#[allow(clippy::too_many_arguments)]
pub fn fully_adapted_controller(
    ensemble: &mut ParticleEnsemble,
    island_weights: &[f64],
    schedule: &PairSchedule,
    theta: f64,
    start_stage: usize,
    streams: &mut [RngStream],
    mode: SwapMode,
) -> Result<ControllerOutcome> {
    let topo = ensemble.topology();
    let m = topo.num_pes();
    let s_max = schedule.num_stages();
    if !(theta > 1.0 / m as f64 && theta <= 1.0) {
        return Err(Error::Config(format!(
            "theta = {theta} outside (1/{m}, 1]"
        )));
    }
    if start_stage == 0 || start_stage > s_max.max(1) {
        return Err(Error::Config(format!(
            "start stage {start_stage} outside 1..={s_max}"
        )));
    }
    if island_weights.len() != m {
        return Err(Error::Shape(format!(
            "{} island weights for {m} islands",
            island_weights.len()
        )));
    }
    validate_weights(island_weights)?;

    let mut vbar = island_weights.to_vec();
    let mut out = ControllerOutcome {
        stages_executed: 0,
        last_stage: None,
        ess_trace: Vec::new(),
        vbar: Vec::new(),
        exchange_log: Vec::new(),
    };
    for k in 0..s_max {
        let gate = ess(&vbar)?;
        out.ess_trace.push(gate);
        if gate >= theta {
            break;
        }
        let s = (start_stage - 1 + k) % s_max + 1;
        island_stage_in_place(
            ensemble,
            &mut vbar,
            schedule,
            s,
            mode,
            streams,
            0,
            &mut out.exchange_log,
        );
        out.stages_executed += 1;
        out.last_stage = Some(s);
    }
    out.vbar = vbar;
    Ok(out)
}
