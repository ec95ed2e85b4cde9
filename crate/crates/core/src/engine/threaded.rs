//! Threaded executor: m worker threads plus the coordinator. Workers own
//! their PE state and exchange with their stage partner through in-process
//! channels; a command/report round trip is the stage barrier. Every recv
//! asserts the expected sender, so cross-pair traffic cannot pass silently.

use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;

use crate::butterfly::{partner, PairSchedule, Topology};
use crate::engine::comm::{CommLedger, CommStats, MsgRecord};
use crate::engine::pe::{Pe, PeSums, StepSums};
use crate::engine::rng::{RngStream, GLOBAL_STREAM};
use crate::engine::{new_ledger, EngineCtl};
use crate::error::{Error, Result};
use crate::filters::FilterConfig;
use crate::model::Model;
use crate::resample::{build_cdf, draw_categorical, resolve_pair, ExchangeOutcome, ExchangeRecord, Side, SwapMode};

#[derive(Clone)]
enum Cmd {
    Init,
    Potentials(usize),
    Sums(usize),
    WithinIsland,
    Absorb(f64),
    BeginAug,
    AugStage(u8),
    FinishAug(f64),
    IslandStage(u8, SwapMode),
    CommitIslandCarries(f64),
    GlobalGather,
    GlobalResample(Arc<Vec<f64>>, Arc<Vec<f64>>),
    IslandAssign(Arc<Vec<usize>>, bool),
    Mutate(usize),
    Snapshot,
    Halt,
}

enum Body {
    Weight(f64),
    WeightVec(Vec<f64>),
    Choice(Side),
    Request(Vec<u32>),
    Rows(Vec<f64>),
    Bundle {
        block: Vec<f64>,
        g: Vec<f64>,
        pcarry: Vec<f64>,
    },
}

struct PeerMsg {
    from: u16,
    body: Body,
}

enum ReportBody {
    Done,
    Sums(PeSums),
    Within(f64),
    IslandStage(Option<(u16, ExchangeOutcome)>),
    AugStage(Option<u64>),
    Gather { weights: Vec<f64>, block: Vec<f64> },
    Resampled(u64),
    Adopted(Option<u16>),
    Snapshot(Vec<f64>),
}

struct Report {
    pe: u16,
    body: ReportBody,
}

struct Worker {
    pe: Pe,
    schedule: Arc<PairSchedule>,
    peers: Vec<Sender<PeerMsg>>,
    inbox: Receiver<PeerMsg>,
}

impl Worker {
    fn send(&self, to: usize, body: Body) {
        self.peers[to]
            .send(PeerMsg {
                from: self.pe.idx as u16,
                body,
            })
            .expect("peer channel closed");
    }

    fn recv_from(&self, from: usize) -> Body {
        let msg = self.inbox.recv().expect("peer channel closed");
        assert_eq!(
            msg.from as usize, from,
            "PE {} received a message from {} while paired with {from}",
            self.pe.idx, msg.from
        );
        msg.body
    }

    fn island_stage(&mut self, s: u8, mode: SwapMode) -> Option<(u16, ExchangeOutcome)> {
        let me = self.pe.idx;
        let p = partner(me + 1, s as usize) - 1;
        let low = me < p;
        self.send(p, Body::Weight(self.pe.vbar));
        let pv = match self.recv_from(p) {
            Body::Weight(v) => v,
            _ => panic!("expected a weight"),
        };
        let (v_low, v_high) = if low { (self.pe.vbar, pv) } else { (pv, self.pe.vbar) };
        let p_left = v_low / (v_low + v_high);
        let my_choice = self.pe.draw_side(p_left);
        self.send(p, Body::Choice(my_choice));
        let their_choice = match self.recv_from(p) {
            Body::Choice(c) => c,
            _ => panic!("expected a choice"),
        };
        let (low_choice, high_choice) = if low {
            (my_choice, their_choice)
        } else {
            (their_choice, my_choice)
        };
        let (eff_l, eff_r, outcome) = resolve_pair(low_choice, high_choice, mode);
        let (my_eff, their_eff, my_side) = if low {
            (eff_l, eff_r, Side::Left)
        } else {
            (eff_r, eff_l, Side::Right)
        };
        if their_eff == my_side {
            self.send(p, Body::Rows(self.pe.block.clone()));
        }
        if my_eff != my_side {
            match self.recv_from(p) {
                Body::Rows(b) => self.pe.block = b,
                _ => panic!("expected a block"),
            }
        }
        self.pe.vbar = 0.5 * (v_low + v_high);
        if low {
            let pair = self
                .schedule
                .stage(s as usize)
                .iter()
                .position(|&(l, _)| l == me + 1)
                .expect("pair present") as u16;
            Some((pair, outcome))
        } else {
            None
        }
    }

    fn aug_stage(&mut self, s: u8) -> Option<u64> {
        let me = self.pe.idx;
        let island = self.pe.island_size();
        let dim = self.pe.dim;
        let p = partner(me + 1, s as usize) - 1;
        let low = me < p;

        let (sum_low, sum_high, cdf, total) = if s == 1 {
            self.send(p, Body::WeightVec(self.pe.vvec.clone()));
            let pv = match self.recv_from(p) {
                Body::WeightVec(v) => v,
                _ => panic!("expected a weight vector"),
            };
            let own_sum: f64 = self.pe.vvec.iter().sum();
            let partner_sum: f64 = pv.iter().sum();
            let (cdf, total) = if low {
                build_cdf(self.pe.vvec.iter().chain(pv.iter()).copied())
            } else {
                build_cdf(pv.iter().chain(self.pe.vvec.iter()).copied())
            };
            if low {
                (own_sum, partner_sum, cdf, total)
            } else {
                (partner_sum, own_sum, cdf, total)
            }
        } else {
            self.send(p, Body::Weight(self.pe.vbar));
            let pv = match self.recv_from(p) {
                Body::Weight(v) => v,
                _ => panic!("expected a weight"),
            };
            let (v_low, v_high) = if low { (self.pe.vbar, pv) } else { (pv, self.pe.vbar) };
            let (cdf, total) = build_cdf(
                std::iter::repeat_n(v_low, island)
                    .chain(std::iter::repeat_n(v_high, island)),
            );
            (
                v_low * island as f64,
                v_high * island as f64,
                cdf,
                total,
            )
        };

        let picks: Vec<usize> = (0..island)
            .map(|_| draw_categorical(&cdf, total, &mut self.pe.rng))
            .collect();
        let my_request: Vec<u32> = picks
            .iter()
            .filter_map(|&idx| {
                let on_low = idx < island;
                if on_low == low {
                    None
                } else if low {
                    Some((idx - island) as u32)
                } else {
                    Some(idx as u32)
                }
            })
            .collect();
        self.send(p, Body::Request(my_request.clone()));
        let their_request = match self.recv_from(p) {
            Body::Request(r) => r,
            _ => panic!("expected a request"),
        };
        let rows: Vec<f64> = their_request
            .iter()
            .flat_map(|&i| self.pe.block[i as usize * dim..(i as usize + 1) * dim].to_vec())
            .collect();
        self.send(p, Body::Rows(rows));
        let got = match self.recv_from(p) {
            Body::Rows(r) => r,
            _ => panic!("expected rows"),
        };

        let old = self.pe.block.clone();
        let mut fresh = Vec::with_capacity(island * dim);
        let mut taken = 0usize;
        for &idx in &picks {
            let on_low = idx < island;
            if on_low == low {
                let j = if low { idx } else { idx - island };
                fresh.extend_from_slice(&old[j * dim..(j + 1) * dim]);
            } else {
                fresh.extend_from_slice(&got[taken * dim..(taken + 1) * dim]);
                taken += 1;
            }
        }
        self.pe.block = fresh;
        self.pe.vbar = (sum_low + sum_high) / (2 * island) as f64;
        if low {
            Some((my_request.len() + their_request.len()) as u64)
        } else {
            None
        }
    }

    fn island_assign(&mut self, assignment: &[usize], g_pending: bool) -> Option<u16> {
        let me = self.pe.idx;
        for (dest, &src) in assignment.iter().enumerate() {
            if dest != me && src == me {
                self.send(
                    dest,
                    Body::Bundle {
                        block: self.pe.block.clone(),
                        g: self.pe.g.clone(),
                        pcarry: self.pe.pcarry.clone(),
                    },
                );
            }
        }
        let adopted = if assignment[me] != me {
            match self.recv_from(assignment[me]) {
                Body::Bundle { block, g, pcarry } => {
                    self.pe.block = block;
                    self.pe.g = g;
                    self.pe.pcarry = pcarry;
                    Some(assignment[me] as u16)
                }
                _ => panic!("expected a bundle"),
            }
        } else {
            None
        };
        self.pe.consume_island_weight(g_pending);
        adopted
    }

    fn run(mut self, cmds: Receiver<Cmd>, reports: Sender<Report>) {
        let me = self.pe.idx as u16;
        while let Ok(cmd) = cmds.recv() {
            let body = match cmd {
                Cmd::Init => {
                    self.pe.init_particles();
                    ReportBody::Done
                }
                Cmd::Potentials(n) => {
                    self.pe.compute_potentials(n);
                    ReportBody::Done
                }
                Cmd::Sums(n) => ReportBody::Sums(self.pe.sums(n)),
                Cmd::WithinIsland => ReportBody::Within(self.pe.within_island()),
                Cmd::Absorb(scale) => {
                    self.pe.absorb_weights(scale);
                    ReportBody::Done
                }
                Cmd::BeginAug => {
                    self.pe.begin_aug();
                    ReportBody::Done
                }
                Cmd::AugStage(s) => ReportBody::AugStage(self.aug_stage(s)),
                Cmd::FinishAug(scale) => {
                    self.pe.finish_aug(scale);
                    ReportBody::Done
                }
                Cmd::IslandStage(s, mode) => ReportBody::IslandStage(self.island_stage(s, mode)),
                Cmd::CommitIslandCarries(scale) => {
                    self.pe.commit_island_carry(scale);
                    ReportBody::Done
                }
                Cmd::GlobalGather => ReportBody::Gather {
                    weights: self.pe.effective_weights(),
                    block: self.pe.block.clone(),
                },
                Cmd::GlobalResample(weights, blocks) => {
                    ReportBody::Resampled(self.pe.global_resample(&weights, &blocks))
                }
                Cmd::IslandAssign(assignment, g_pending) => {
                    ReportBody::Adopted(self.island_assign(&assignment, g_pending))
                }
                Cmd::Mutate(n) => {
                    self.pe.mutate(n);
                    ReportBody::Done
                }
                Cmd::Snapshot => ReportBody::Snapshot(self.pe.block.clone()),
                Cmd::Halt => break,
            };
            if reports.send(Report { pe: me, body }).is_err() {
                break;
            }
        }
    }
}

pub(crate) struct ThreadedEngine {
    topo: Topology,
    dim: usize,
    n_max: usize,
    schedule: Arc<PairSchedule>,
    cmd_txs: Vec<Sender<Cmd>>,
    report_rx: Receiver<Report>,
    handles: Vec<JoinHandle<()>>,
    global_rng: RngStream,
    ledger: CommLedger,
}

impl ThreadedEngine {
    pub fn new(
        model: Arc<dyn Model>,
        config: &FilterConfig,
        schedule: Arc<PairSchedule>,
    ) -> Result<Self> {
        let topo = config.topology;
        let m = topo.num_pes();
        let (report_tx, report_rx) = channel::<Report>();

        let mut peer_txs = Vec::with_capacity(m);
        let mut peer_rxs = Vec::with_capacity(m);
        for _ in 0..m {
            let (tx, rx) = channel::<PeerMsg>();
            peer_txs.push(tx);
            peer_rxs.push(rx);
        }

        let mut cmd_txs = Vec::with_capacity(m);
        let mut handles = Vec::with_capacity(m);
        for (k, inbox) in peer_rxs.into_iter().enumerate() {
            let (cmd_tx, cmd_rx) = channel::<Cmd>();
            cmd_txs.push(cmd_tx);
            let worker = Worker {
                pe: Pe::new(k, topo, Arc::clone(&model), config.seed),
                schedule: Arc::clone(&schedule),
                peers: peer_txs.clone(),
                inbox,
            };
            let reports = report_tx.clone();
            let spawned = std::thread::Builder::new()
                .name(format!("pe{k}"))
                .spawn(move || worker.run(cmd_rx, reports));
            match spawned {
                Ok(handle) => handles.push(handle),
                Err(e) => {
                    // Clean shutdown of the workers that did start.
                    drop(cmd_txs);
                    for h in handles {
                        let _ = h.join();
                    }
                    return Err(Error::Runtime(format!("failed to spawn worker {k}: {e}")));
                }
            }
        }

        Ok(Self {
            topo,
            dim: model.dim(),
            n_max: model.n_max(),
            schedule,
            cmd_txs,
            report_rx,
            handles,
            global_rng: RngStream::new(config.seed, GLOBAL_STREAM),
            ledger: new_ledger(config),
        })
    }

    fn command_all(&mut self, cmd: Cmd) -> Vec<ReportBody> {
        for tx in &self.cmd_txs {
            tx.send(cmd.clone()).expect("worker command channel closed");
        }
        let m = self.topo.num_pes();
        let mut out: Vec<Option<ReportBody>> = (0..m).map(|_| None).collect();
        for _ in 0..m {
            let report = self.report_rx.recv().expect("worker report channel closed");
            out[report.pe as usize] = Some(report.body);
        }
        out.into_iter().map(|b| b.expect("report per PE")).collect()
    }
}

impl EngineCtl for ThreadedEngine {
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
        self.command_all(Cmd::Init);
    }

    fn compute_potentials(&mut self, n: usize) {
        self.command_all(Cmd::Potentials(n));
    }

    fn step_sums(&mut self, n: usize) -> StepSums {
        let per_pe = self
            .command_all(Cmd::Sums(n))
            .into_iter()
            .map(|b| match b {
                ReportBody::Sums(s) => s,
                _ => panic!("expected sums"),
            })
            .collect();
        StepSums {
            per_pe,
            dim: self.dim,
            island_size: self.topo.island_size(),
        }
    }

    fn within_island(&mut self) -> Vec<f64> {
        self.command_all(Cmd::WithinIsland)
            .into_iter()
            .map(|b| match b {
                ReportBody::Within(w) => w,
                _ => panic!("expected island weight"),
            })
            .collect()
    }

    fn absorb_weights(&mut self, scale: f64) {
        self.command_all(Cmd::Absorb(scale));
    }

    fn begin_aug(&mut self) {
        self.command_all(Cmd::BeginAug);
    }

    fn aug_stage(&mut self, s: u8) {
        self.ledger.charge_stage_round();
        let reports = self.command_all(Cmd::AugStage(s));
        let island = self.topo.island_size();
        for &(l1, r1) in self.schedule.stage(s as usize) {
            let (l, r) = (l1 - 1, r1 - 1);
            match &reports[l] {
                ReportBody::AugStage(Some(cross)) => {
                    self.ledger
                        .charge_aug_pair(s, l as u16, r as u16, island, *cross);
                }
                _ => panic!("low PE of a pair must report the stage payload"),
            }
        }
    }

    fn finish_aug(&mut self, scale: f64) {
        self.command_all(Cmd::FinishAug(scale));
    }

    fn island_stage(&mut self, s: u8, mode: SwapMode, vbar: &mut [f64]) {
        self.ledger.charge_stage_round();
        let reports = self.command_all(Cmd::IslandStage(s, mode));
        let island = self.topo.island_size();
        for &(l1, r1) in self.schedule.stage(s as usize) {
            let (l, r) = (l1 - 1, r1 - 1);
            match &reports[l] {
                ReportBody::IslandStage(Some((pair, outcome))) => {
                    self.ledger
                        .charge_island_pair(s, *pair, l as u16, r as u16, *outcome, island);
                }
                _ => panic!("low PE of a pair must report the outcome"),
            }
            let mean = 0.5 * (vbar[l] + vbar[r]);
            vbar[l] = mean;
            vbar[r] = mean;
        }
    }

    fn commit_island_carries(&mut self, scale: f64) {
        self.command_all(Cmd::CommitIslandCarries(scale));
    }

    fn global_gather(&mut self) -> (Arc<Vec<f64>>, Arc<Vec<f64>>) {
        self.ledger
            .charge_global_gather(self.topo.num_pes(), self.topo.island_size());
        let mut weights = Vec::with_capacity(self.topo.total_particles());
        let mut blocks = Vec::new();
        for body in self.command_all(Cmd::GlobalGather) {
            match body {
                ReportBody::Gather {
                    weights: w,
                    block: b,
                } => {
                    weights.extend(w);
                    blocks.extend(b);
                }
                _ => panic!("expected a gather report"),
            }
        }
        (Arc::new(weights), Arc::new(blocks))
    }

    fn global_resample(&mut self, weights: &Arc<Vec<f64>>, blocks: &Arc<Vec<f64>>) {
        let reports = self.command_all(Cmd::GlobalResample(
            Arc::clone(weights),
            Arc::clone(blocks),
        ));
        for body in reports {
            match body {
                ReportBody::Resampled(cross) => self.ledger.charge_global_payload(cross),
                _ => panic!("expected a resample report"),
            }
        }
    }

    fn charge_island_weight_round(&mut self) {
        self.ledger.charge_island_weight_round(self.topo.num_pes());
    }

    fn island_assign(&mut self, assignment: &[usize], g_pending: bool) {
        let reports =
            self.command_all(Cmd::IslandAssign(Arc::new(assignment.to_vec()), g_pending));
        let island = self.topo.island_size();
        for (k, body) in reports.into_iter().enumerate() {
            match body {
                ReportBody::Adopted(Some(from)) => {
                    self.ledger.charge_island_adoption(from, k as u16, island);
                }
                ReportBody::Adopted(None) => {}
                _ => panic!("expected an adoption report"),
            }
        }
    }

    fn mutate(&mut self, n: usize) {
        self.command_all(Cmd::Mutate(n));
    }

    fn global_rng(&mut self) -> &mut RngStream {
        &mut self.global_rng
    }

    fn snapshot(&mut self) -> Vec<f64> {
        let mut out = Vec::new();
        for body in self.command_all(Cmd::Snapshot) {
            match body {
                ReportBody::Snapshot(b) => out.extend(b),
                _ => panic!("expected a snapshot"),
            }
        }
        out
    }

    fn finish(self: Box<Self>) -> (CommStats, Vec<ExchangeRecord>, Option<Vec<MsgRecord>>) {
        let this = *self;
        for tx in &this.cmd_txs {
            let _ = tx.send(Cmd::Halt);
        }
        drop(this.cmd_txs);
        for handle in this.handles {
            let _ = handle.join();
        }
        this.ledger.finish()
    }
}
