//! Augmented island resampling particle filter: within-island multinomial
//! resampling every step, then butterfly-staged resampling of whole island
//! blocks, optionally gated stage by stage on the island-level ESS.

use crate::engine::EngineCtl;
use crate::error::Result;
use crate::filters::{island_ess, FilterConfig, RunBuilder, Strategy};
use crate::resample::SwapMode;

pub(crate) struct Airpf {
    pub mode: SwapMode,
}

impl Strategy for Airpf {
    fn run(
        &self,
        eng: &mut dyn EngineCtl,
        config: &FilterConfig,
        builder: &mut RunBuilder,
    ) -> Result<()> {
        let topo = eng.topology();
        let s_max = topo.stages();
        let m = topo.num_pes();

        eng.init_particles();
        let mut rotation_start = 1usize;
        for n in 0..eng.n_max() {
            eng.begin_step(n as u32);
            eng.compute_potentials(n);
            let sums = eng.step_sums(n);
            if config.record_snapshots {
                builder.push_snapshot(eng.snapshot());
            }

            let mut vbar = eng.within_island();
            let gate0 = if m > 1 { island_ess(&vbar) } else { 1.0 };

            let start = if config.stage_rotation {
                rotation_start
            } else {
                1
            };
            let mut stages_run = 0u32;
            let mut last_stage = None;
            for k in 0..s_max {
                let gate = if k == 0 { gate0 } else { island_ess(&vbar) };
                if !config.threshold.triggers(gate) {
                    break;
                }
                let s = (start - 1 + k) % s_max + 1;
                eng.island_stage(s as u8, self.mode, &mut vbar);
                stages_run += 1;
                last_stage = Some(s);
            }
            if config.stage_rotation {
                if let Some(s) = last_stage {
                    rotation_start = s % s_max + 1;
                }
            }

            let scale = vbar.iter().sum::<f64>() / m as f64;
            eng.commit_island_carries(scale);
            builder.record_step(config, &sums, gate0, stages_run);
            eng.mutate(n);
        }
        Ok(())
    }
}
