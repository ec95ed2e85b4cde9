//! Per-PE state and the local arithmetic shared by the serial and threaded
//! executors. Everything a PE does is a deterministic function of its own
//! state, its own RNG stream, and the messages it receives.

use std::sync::Arc;

use crate::butterfly::Topology;
use crate::engine::rng::RngStream;
use crate::model::{Model, POTENTIAL_FLOOR};
use crate::resample::{build_cdf, draw_categorical, multinomial_block_in_place, Side};

/// Weighted partial sums one PE reports for estimates and ESS evaluation.
/// `c` is the carried weight (particle carry times island carry), `w` the
/// effective weight `c * g`.
#[derive(Debug, Clone)]
pub(crate) struct PeSums {
    pub sum_c: f64,
    pub sum_cx: Vec<f64>,
    pub sum_w: f64,
    pub sum_wx: Vec<f64>,
    pub sum_w2: f64,
    /// Rao-Blackwellised filtering sums over the parent kernel mixture
    /// (fall back to the w sums when no mixture is available).
    pub sum_r: f64,
    pub sum_rx: Vec<f64>,
    /// Local c-weighted mean (the island-restricted estimate).
    pub island_mean: Vec<f64>,
}

/// Gathered sums for one step, in PE order.
#[derive(Debug, Clone)]
pub(crate) struct StepSums {
    pub per_pe: Vec<PeSums>,
    pub dim: usize,
    pub island_size: usize,
}

impl StepSums {
    pub fn pred_mean(&self) -> Vec<f64> {
        self.weighted_mean(|p| (p.sum_c, &p.sum_cx))
    }

    pub fn filt_mean(&self) -> Vec<f64> {
        self.weighted_mean(|p| (p.sum_r, &p.sum_rx))
    }

    fn weighted_mean<'a, F>(&'a self, pick: F) -> Vec<f64>
    where
        F: Fn(&'a PeSums) -> (f64, &'a Vec<f64>),
    {
        let mut num = vec![0.0; self.dim];
        let mut den = 0.0;
        for pe in &self.per_pe {
            let (w, wx) = pick(pe);
            den += w;
            for (a, b) in num.iter_mut().zip(wx.iter()) {
                *a += b;
            }
        }
        num.iter().map(|v| v / den).collect()
    }

    /// ESS of the effective weights over all N particles.
    pub fn particle_ess(&self) -> f64 {
        let n = (self.per_pe.len() * self.island_size) as f64;
        let sum_w: f64 = self.per_pe.iter().map(|p| p.sum_w).sum();
        let sum_w2: f64 = self.per_pe.iter().map(|p| p.sum_w2).sum();
        (sum_w / n).powi(2) / (sum_w2 / n)
    }

    /// Mean effective weight, used to rescale carried weights.
    pub fn mean_w(&self) -> f64 {
        let n = (self.per_pe.len() * self.island_size) as f64;
        self.per_pe.iter().map(|p| p.sum_w).sum::<f64>() / n
    }

    /// Island weights: the island means of the effective weights.
    pub fn island_weights(&self) -> Vec<f64> {
        self.per_pe
            .iter()
            .map(|p| p.sum_w / self.island_size as f64)
            .collect()
    }
}

pub(crate) struct Pe {
    pub idx: usize,
    pub topo: Topology,
    pub dim: usize,
    pub model: Arc<dyn Model>,
    /// M particles, row-major.
    pub block: Vec<f64>,
    /// Potentials of the current step.
    pub g: Vec<f64>,
    /// Per-particle carried weights.
    pub pcarry: Vec<f64>,
    /// Island-level carried weight.
    pub icarry: f64,
    /// Island weight during butterfly stages.
    pub vbar: f64,
    /// Per-particle stage weights entering the first particle-level stage.
    pub vvec: Vec<f64>,
    /// The pre-mutation sample and its carries: the kernel mixture behind
    /// the next step's filtering-mean estimate.
    pub parents: Option<(Vec<f64>, Vec<f64>)>,
    pub rng: RngStream,
}

impl Pe {
    pub fn new(idx: usize, topo: Topology, model: Arc<dyn Model>, master_seed: u64) -> Self {
        let island = topo.island_size();
        let dim = model.dim();
        Self {
            idx,
            topo,
            dim,
            model,
            block: vec![0.0; island * dim],
            g: vec![1.0; island],
            pcarry: vec![1.0; island],
            icarry: 1.0,
            vbar: 1.0,
            vvec: vec![1.0; island],
            parents: None,
            rng: RngStream::for_pe(master_seed, idx),
        }
    }

    pub fn island_size(&self) -> usize {
        self.topo.island_size()
    }

    pub fn init_particles(&mut self) {
        let dim = self.dim;
        let model = Arc::clone(&self.model);
        for i in 0..self.island_size() {
            model.sample_initial(&mut self.block[i * dim..(i + 1) * dim], &mut self.rng);
        }
        self.pcarry.fill(1.0);
        self.icarry = 1.0;
        self.parents = None;
    }

    pub fn compute_potentials(&mut self, n: usize) {
        let dim = self.dim;
        for i in 0..self.island_size() {
            self.g[i] = self.model.potential(n, &self.block[i * dim..(i + 1) * dim]);
        }
    }

    pub fn sums(&self, n: usize) -> PeSums {
        let dim = self.dim;
        let mut s = PeSums {
            sum_c: 0.0,
            sum_cx: vec![0.0; dim],
            sum_w: 0.0,
            sum_wx: vec![0.0; dim],
            sum_w2: 0.0,
            sum_r: 0.0,
            sum_rx: vec![0.0; dim],
            island_mean: vec![0.0; dim],
        };
        for i in 0..self.island_size() {
            let c = self.pcarry[i] * self.icarry;
            let w = c * self.g[i];
            s.sum_c += c;
            s.sum_w += w;
            s.sum_w2 += w * w;
            for (k, x) in self.block[i * dim..(i + 1) * dim].iter().enumerate() {
                s.sum_cx[k] += c * x;
                s.sum_wx[k] += w * x;
            }
        }
        let mut rb_done = false;
        if let Some((pblock, pcarry)) = &self.parents {
            let mut mu = vec![0.0; dim];
            rb_done = true;
            for i in 0..self.island_size() {
                match self
                    .model
                    .kernel_posterior(n, &pblock[i * dim..(i + 1) * dim], &mut mu)
                {
                    Some(k) => {
                        let ck = pcarry[i] * k;
                        s.sum_r += ck;
                        for (acc, m) in s.sum_rx.iter_mut().zip(mu.iter()) {
                            *acc += ck * m;
                        }
                    }
                    None => {
                        rb_done = false;
                        break;
                    }
                }
            }
        }
        if !rb_done {
            s.sum_r = s.sum_w;
            s.sum_rx = s.sum_wx.clone();
        }
        for k in 0..dim {
            s.island_mean[k] = s.sum_cx[k] / s.sum_c;
        }
        s
    }

    /// Multinomial resampling of the local block by carry-weighted
    /// potentials. Returns the island weight W = icarry * mean(pcarry * g)
    /// and leaves the block unweighted (pcarry = 1).
    pub fn within_island(&mut self) -> f64 {
        let island = self.island_size();
        let weights: Vec<f64> = (0..island)
            .map(|i| (self.pcarry[i] * self.icarry) * self.g[i])
            .collect();
        let sum: f64 = weights.iter().sum();
        multinomial_block_in_place(&mut self.block, self.dim, &weights, &mut self.rng)
            .expect("validated weights");
        self.pcarry.fill(1.0);
        self.vbar = sum / island as f64;
        self.vbar
    }

    /// The effective per-particle weights carry * g of the current step.
    pub fn effective_weights(&self) -> Vec<f64> {
        (0..self.island_size())
            .map(|i| (self.pcarry[i] * self.icarry) * self.g[i])
            .collect()
    }

    /// Skip-path bookkeeping: fold the potentials into the carried weights,
    /// rescaled to keep magnitudes near one.
    pub fn absorb_weights(&mut self, scale: f64) {
        for (c, g) in self.pcarry.iter_mut().zip(self.g.iter()) {
            *c = (*c * g / scale).max(POTENTIAL_FLOOR);
        }
    }

    /// Enter the particle-level butterfly stages: the stage-0 weights are
    /// the effective weights.
    pub fn begin_aug(&mut self) {
        for i in 0..self.island_size() {
            self.vvec[i] = (self.pcarry[i] * self.icarry) * self.g[i];
        }
        self.vbar = self.vvec.iter().sum::<f64>() / self.island_size() as f64;
    }

    /// Leave the particle-level stages early or at the end: the (island
    /// constant) stage weight becomes the particle carry.
    pub fn finish_aug(&mut self, scale: f64) {
        let v = (self.vbar / scale).max(POTENTIAL_FLOOR);
        self.pcarry.fill(v);
        self.icarry = 1.0;
    }

    /// Store leftover island weights after early-stopped island stages.
    pub fn commit_island_carry(&mut self, scale: f64) {
        self.icarry = (self.vbar / scale).max(POTENTIAL_FLOOR);
    }

    /// After a between-island resampling round the island-level weight has
    /// been consumed: keep only the within-island relative structure.
    /// `g_pending` says whether this step's potentials are still waiting to
    /// be resampled locally (they then belong to the island weight too).
    pub fn consume_island_weight(&mut self, g_pending: bool) {
        let island = self.island_size() as f64;
        let mean = if g_pending {
            self.pcarry
                .iter()
                .zip(self.g.iter())
                .map(|(c, g)| c * g)
                .sum::<f64>()
                / island
        } else {
            self.pcarry.iter().sum::<f64>() / island
        };
        for c in self.pcarry.iter_mut() {
            *c = (*c / mean).max(POTENTIAL_FLOOR);
        }
        self.icarry = 1.0;
    }

    pub fn draw_side(&mut self, p_left: f64) -> Side {
        crate::resample::pick_side(self.rng.uniform(), p_left)
    }

    /// Draw the local share of a global multinomial round. Returns the
    /// number of draws whose source island differs from this PE.
    pub fn global_resample(&mut self, weights: &[f64], blocks: &[f64]) -> u64 {
        let dim = self.dim;
        let island = self.island_size();
        let (cdf, total) = build_cdf(weights.iter().copied());
        let mut fresh = Vec::with_capacity(island * dim);
        let mut cross = 0u64;
        for _ in 0..island {
            let src = draw_categorical(&cdf, total, &mut self.rng);
            if src / island != self.idx {
                cross += 1;
            }
            fresh.extend_from_slice(&blocks[src * dim..(src + 1) * dim]);
        }
        self.block = fresh;
        self.pcarry.fill(1.0);
        self.icarry = 1.0;
        cross
    }

    pub fn mutate(&mut self, _n: usize) {
        let carries: Vec<f64> = (0..self.island_size())
            .map(|i| self.pcarry[i] * self.icarry)
            .collect();
        self.parents = Some((self.block.clone(), carries));
        let dim = self.dim;
        let model = Arc::clone(&self.model);
        for i in 0..self.island_size() {
            model.transition(&mut self.block[i * dim..(i + 1) * dim], &mut self.rng);
        }
    }
}

/// Serial two-sided kernel for one particle-level butterfly pair. Both
/// sides draw their outputs from the shared 2M window (lower island first);
/// returns the number of draws that crossed the link.
pub(crate) fn aug_pair_serial(low: &mut Pe, high: &mut Pe, stage: u8) -> u64 {
    let island = low.island_size();
    let dim = low.dim;

    let (cdf, total) = if stage == 1 {
        build_cdf(low.vvec.iter().chain(high.vvec.iter()).copied())
    } else {
        build_cdf(
            std::iter::repeat_n(low.vbar, island)
                .chain(std::iter::repeat_n(high.vbar, island)),
        )
    };
    let (sum_low, sum_high) = if stage == 1 {
        (low.vvec.iter().sum::<f64>(), high.vvec.iter().sum::<f64>())
    } else {
        (low.vbar * island as f64, high.vbar * island as f64)
    };

    let low_block = low.block.clone();
    let high_block = high.block.clone();
    let mut cross = 0u64;
    for (pe, own_is_low) in [(&mut *low, true), (&mut *high, false)] {
        let mut fresh = Vec::with_capacity(island * dim);
        for _ in 0..island {
            let idx = draw_categorical(&cdf, total, &mut pe.rng);
            let (source, from_low) = if idx < island {
                (&low_block[idx * dim..(idx + 1) * dim], true)
            } else {
                let j = idx - island;
                (&high_block[j * dim..(j + 1) * dim], false)
            };
            if from_low != own_is_low {
                cross += 1;
            }
            fresh.extend_from_slice(source);
        }
        pe.block = fresh;
    }
    let v_new = (sum_low + sum_high) / (2 * island) as f64;
    low.vbar = v_new;
    high.vbar = v_new;
    cross
}
