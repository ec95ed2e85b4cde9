//! Bootstrap particle filter with global multinomial resampling, and its
//! variant where the resampling step runs through the particle-level
//! butterfly stages.

use crate::butterfly::build_schedule;
use crate::engine::EngineCtl;
use crate::error::Result;
use crate::filters::{island_ess, FilterConfig, RunBuilder, Strategy};

pub(crate) struct Bpf;

impl Strategy for Bpf {
    fn run(
        &self,
        eng: &mut dyn EngineCtl,
        config: &FilterConfig,
        builder: &mut RunBuilder,
    ) -> Result<()> {
        eng.init_particles();
        for n in 0..eng.n_max() {
            eng.begin_step(n as u32);
            eng.compute_potentials(n);
            let sums = eng.step_sums(n);
            if config.record_snapshots {
                builder.push_snapshot(eng.snapshot());
            }
            let ess = sums.particle_ess();
            builder.record_step(config, &sums, ess, 0);
            if config.threshold.triggers(ess) {
                let (weights, blocks) = eng.global_gather();
                eng.global_resample(&weights, &blocks);
            } else {
                eng.absorb_weights(sums.mean_w());
            }
            eng.mutate(n);
        }
        Ok(())
    }
}

pub(crate) struct BpfAugmented;

impl Strategy for BpfAugmented {
    fn run(
        &self,
        eng: &mut dyn EngineCtl,
        config: &FilterConfig,
        builder: &mut RunBuilder,
    ) -> Result<()> {
        let topo = eng.topology();
        let schedule = build_schedule(topo);
        let s_max = topo.stages();
        let m = topo.num_pes();
        let island = topo.island_size() as f64;

        eng.init_particles();
        for n in 0..eng.n_max() {
            eng.begin_step(n as u32);
            eng.compute_potentials(n);
            let sums = eng.step_sums(n);
            if config.record_snapshots {
                builder.push_snapshot(eng.snapshot());
            }
            let ess0 = sums.particle_ess();

            // Coordinator mirror of the stage weights: per-particle ESS at
            // the first gate, island-constant weights afterwards (the pair
            // averages reproduce the PEs' own updates bit for bit).
            let mut v: Vec<f64> = Vec::new();
            let mut stages_run = 0u32;
            for s in 1..=s_max {
                let gate = if stages_run == 0 { ess0 } else { island_ess(&v) };
                if !config.threshold.triggers(gate) {
                    break;
                }
                if stages_run == 0 {
                    eng.begin_aug();
                }
                eng.aug_stage(s as u8);
                if stages_run == 0 {
                    let sum_w: Vec<f64> = sums.per_pe.iter().map(|p| p.sum_w).collect();
                    v = sum_w.clone();
                    for &(l1, r1) in schedule.stage(s) {
                        let (l, r) = (l1 - 1, r1 - 1);
                        let fresh = (sum_w[l] + sum_w[r]) / (2.0 * island);
                        v[l] = fresh;
                        v[r] = fresh;
                    }
                } else {
                    for &(l1, r1) in schedule.stage(s) {
                        let (l, r) = (l1 - 1, r1 - 1);
                        let mean = 0.5 * (v[l] + v[r]);
                        v[l] = mean;
                        v[r] = mean;
                    }
                }
                stages_run += 1;
            }

            if stages_run == 0 {
                eng.absorb_weights(sums.mean_w());
            } else {
                let scale = v.iter().sum::<f64>() / m as f64;
                eng.finish_aug(scale);
            }
            builder.record_step(config, &sums, ess0, stages_run);
            eng.mutate(n);
        }
        Ok(())
    }
}
