//! Single-threaded executor: PEs are stepped in index order, pairwise
//! stages in pair order. The reference interpretation of the engine ops.

use std::sync::Arc;

use crate::butterfly::{PairSchedule, Topology};
use crate::engine::comm::{CommLedger, CommStats, MsgRecord};
use crate::engine::pe::{aug_pair_serial, Pe, StepSums};
use crate::engine::rng::{RngStream, GLOBAL_STREAM};
use crate::engine::{new_ledger, split_two, EngineCtl};
use crate::filters::FilterConfig;
use crate::model::Model;
use crate::resample::{resolve_pair, ExchangeRecord, Side, SwapMode};

type Bundle = (Vec<f64>, Vec<f64>, Vec<f64>);

pub(crate) struct SerialEngine {
    topo: Topology,
    n_max: usize,
    schedule: Arc<PairSchedule>,
    pes: Vec<Pe>,
    global_rng: RngStream,
    ledger: CommLedger,
}

impl SerialEngine {
    pub fn new(model: Arc<dyn Model>, config: &FilterConfig, schedule: Arc<PairSchedule>) -> Self {
        let topo = config.topology;
        let pes = (0..topo.num_pes())
            .map(|k| Pe::new(k, topo, Arc::clone(&model), config.seed))
            .collect();
        Self {
            topo,
            n_max: model.n_max(),
            schedule,
            pes,
            global_rng: RngStream::new(config.seed, GLOBAL_STREAM),
            ledger: new_ledger(config),
        }
    }
}

impl EngineCtl for SerialEngine {
    fn topology(&self) -> Topology {
        self.topo
    }

    fn n_max(&self) -> usize {
        self.n_max
    }

    fn begin_step(&mut self, n: u32) {
        self.ledger.begin_step(n);
    }

    fn init_particles(&mut self) {
        for pe in &mut self.pes {
            pe.init_particles();
        }
    }

    fn compute_potentials(&mut self, n: usize) {
        for pe in &mut self.pes {
            pe.compute_potentials(n);
        }
    }

    fn step_sums(&mut self, n: usize) -> StepSums {
        StepSums {
            per_pe: self.pes.iter().map(|pe| pe.sums(n)).collect(),
            dim: self.pes[0].dim,
            island_size: self.topo.island_size(),
        }
    }

    fn within_island(&mut self) -> Vec<f64> {
        self.pes.iter_mut().map(|pe| pe.within_island()).collect()
    }

    fn absorb_weights(&mut self, scale: f64) {
        for pe in &mut self.pes {
            pe.absorb_weights(scale);
        }
    }

    fn begin_aug(&mut self) {
        for pe in &mut self.pes {
            pe.begin_aug();
        }
    }

    fn aug_stage(&mut self, s: u8) {
        self.ledger.charge_stage_round();
        let island = self.topo.island_size();
        for &(l1, r1) in self.schedule.stage(s as usize) {
            let (l, r) = (l1 - 1, r1 - 1);
            let (pl, pr) = split_two(&mut self.pes, l, r);
            let cross = aug_pair_serial(pl, pr, s);
            self.ledger
                .charge_aug_pair(s, l as u16, r as u16, island, cross);
        }
    }

    fn finish_aug(&mut self, scale: f64) {
        for pe in &mut self.pes {
            pe.finish_aug(scale);
        }
    }

    fn island_stage(&mut self, s: u8, mode: SwapMode, vbar: &mut [f64]) {
        self.ledger.charge_stage_round();
        let island = self.topo.island_size();
        for (pair_idx, &(l1, r1)) in self.schedule.stage(s as usize).iter().enumerate() {
            let (l, r) = (l1 - 1, r1 - 1);
            let (pl, pr) = split_two(&mut self.pes, l, r);
            let p_left = pl.vbar / (pl.vbar + pr.vbar);
            let left_choice = pl.draw_side(p_left);
            let right_choice = pr.draw_side(p_left);
            let (eff_l, eff_r, outcome) = resolve_pair(left_choice, right_choice, mode);
            match (eff_l, eff_r) {
                (Side::Left, Side::Right) => {}
                (Side::Left, Side::Left) => pr.block.copy_from_slice(&pl.block),
                (Side::Right, Side::Right) => pl.block.copy_from_slice(&pr.block),
                (Side::Right, Side::Left) => std::mem::swap(&mut pl.block, &mut pr.block),
            }
            let mean = 0.5 * (pl.vbar + pr.vbar);
            pl.vbar = mean;
            pr.vbar = mean;
            vbar[l] = mean;
            vbar[r] = mean;
            self.ledger
                .charge_island_pair(s, pair_idx as u16, l as u16, r as u16, outcome, island);
        }
    }

    fn commit_island_carries(&mut self, scale: f64) {
        for pe in &mut self.pes {
            pe.commit_island_carry(scale);
        }
    }

    fn global_gather(&mut self) -> (Arc<Vec<f64>>, Arc<Vec<f64>>) {
        self.ledger
            .charge_global_gather(self.topo.num_pes(), self.topo.island_size());
        let mut weights = Vec::with_capacity(self.topo.total_particles());
        let mut blocks = Vec::new();
        for pe in &self.pes {
            weights.extend(pe.effective_weights());
            blocks.extend_from_slice(&pe.block);
        }
        (Arc::new(weights), Arc::new(blocks))
    }

    fn global_resample(&mut self, weights: &Arc<Vec<f64>>, blocks: &Arc<Vec<f64>>) {
        for pe in &mut self.pes {
            let cross = pe.global_resample(weights, blocks);
            self.ledger.charge_global_payload(cross);
        }
    }

    fn charge_island_weight_round(&mut self) {
        self.ledger.charge_island_weight_round(self.topo.num_pes());
    }

    fn island_assign(&mut self, assignment: &[usize], g_pending: bool) {
        // Snapshot sources before installing so simultaneous moves see the
        // pre-round blocks, matching the send-then-receive protocol.
        let bundles: Vec<Option<Bundle>> = (0..self.pes.len())
            .map(|k| {
                let src = assignment[k];
                if src == k {
                    None
                } else {
                    let s = &self.pes[src];
                    Some((s.block.clone(), s.g.clone(), s.pcarry.clone()))
                }
            })
            .collect();
        for (k, bundle) in bundles.into_iter().enumerate() {
            if let Some((block, g, pcarry)) = bundle {
                let pe = &mut self.pes[k];
                pe.block = block;
                pe.g = g;
                pe.pcarry = pcarry;
                self.ledger.charge_island_adoption(
                    assignment[k] as u16,
                    k as u16,
                    self.topo.island_size(),
                );
            }
        }
        for pe in &mut self.pes {
            pe.consume_island_weight(g_pending);
        }
    }

    fn mutate(&mut self, n: usize) {
        for pe in &mut self.pes {
            pe.mutate(n);
        }
    }

    fn global_rng(&mut self) -> &mut RngStream {
        &mut self.global_rng
    }

    fn snapshot(&mut self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.topo.total_particles() * self.pes[0].dim);
        for pe in &self.pes {
            out.extend_from_slice(&pe.block);
        }
        out
    }

    fn finish(self: Box<Self>) -> (CommStats, Vec<ExchangeRecord>, Option<Vec<MsgRecord>>) {
        self.ledger.finish()
    }
}
