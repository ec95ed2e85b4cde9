//! Island particle filter baselines: two-level resampling with whole-island
//! multinomial duplication at the top level, in either order. Both deploy
//! the keep-one-copy relabeling: an island that survives the between-island
//! draw keeps one copy of its own block in place.

use crate::engine::rng::RngStream;
use crate::engine::EngineCtl;
use crate::error::Result;
use crate::filters::{island_ess, FilterConfig, RunBuilder, Strategy};
use crate::resample::{build_cdf, draw_categorical};

/// Relabel a raw island assignment (destination -> source) so that every
/// island drawn at least once is assigned to itself exactly once; the
/// multiset of sources is preserved. Deterministic: surplus copies fill the
/// dead destinations in ascending order.
pub fn relabel_keep_one_copy(assignment: &[usize]) -> Vec<usize> {
    let m = assignment.len();
    let mut counts = vec![0usize; m];
    for &src in assignment {
        counts[src] += 1;
    }
    let mut out = vec![usize::MAX; m];
    let mut extras = Vec::new();
    for (src, &c) in counts.iter().enumerate() {
        if c > 0 {
            out[src] = src;
            for _ in 1..c {
                extras.push(src);
            }
        }
    }
    let mut extras = extras.into_iter();
    for slot in out.iter_mut() {
        if *slot == usize::MAX {
            *slot = extras.next().expect("one surplus copy per dead island");
        }
    }
    out
}

fn draw_assignment(weights: &[f64], rng: &mut RngStream) -> Vec<usize> {
    let (cdf, total) = build_cdf(weights.iter().copied());
    let raw: Vec<usize> = (0..weights.len())
        .map(|_| draw_categorical(&cdf, total, rng))
        .collect();
    relabel_keep_one_copy(&raw)
}

pub(crate) struct Ipf {
    /// IPF2 resamples within islands first (one scalar weight per PE then
    /// crosses the network); IPF1 duplicates islands first.
    pub within_first: bool,
}

impl Strategy for Ipf {
    fn run(
        &self,
        eng: &mut dyn EngineCtl,
        config: &FilterConfig,
        builder: &mut RunBuilder,
    ) -> Result<()> {
        let m = eng.topology().num_pes();
        eng.init_particles();
        for n in 0..eng.n_max() {
            eng.begin_step(n as u32);
            eng.compute_potentials(n);
            let sums = eng.step_sums(n);
            if config.record_snapshots {
                builder.push_snapshot(eng.snapshot());
            }

            let trigger;
            if self.within_first {
                // IPF2: within-island resampling, then island duplication
                // driven by one weight per PE.
                let particle_ess = sums.particle_ess();
                let (wisl, within_ran) = if config.threshold.triggers(particle_ess) {
                    (eng.within_island(), true)
                } else {
                    eng.absorb_weights(sums.mean_w());
                    (sums.island_weights(), false)
                };
                let island_gate = if m > 1 { island_ess(&wisl) } else { 1.0 };
                trigger = island_gate;
                if m > 1 && config.threshold.triggers(island_gate) {
                    eng.charge_island_weight_round();
                    let assignment = draw_assignment(&wisl, eng.global_rng());
                    eng.island_assign(&assignment, !within_ran);
                } else if within_ran {
                    // Leftover island weights persist into the next step;
                    // each PE holds its own in vbar after the local pass.
                    let scale = wisl.iter().sum::<f64>() / m as f64;
                    eng.commit_island_carries(scale);
                }
            } else {
                // IPF1: island duplication by raw island weights, then
                // within-island resampling of whatever landed.
                let wisl = sums.island_weights();
                let island_gate = if m > 1 { island_ess(&wisl) } else { 1.0 };
                trigger = island_gate;
                if m > 1 && config.threshold.triggers(island_gate) {
                    eng.charge_island_weight_round();
                    let assignment = draw_assignment(&wisl, eng.global_rng());
                    eng.island_assign(&assignment, true);
                }
                let sums_after = eng.step_sums(n);
                if config.threshold.triggers(sums_after.particle_ess()) {
                    eng.within_island();
                } else {
                    eng.absorb_weights(sums_after.mean_w());
                }
            }
            builder.record_step(config, &sums, trigger, 0);
            eng.mutate(n);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relabel_preserves_multiset_and_survivors() {
        let out = relabel_keep_one_copy(&[2, 2, 2, 0]);
        let mut sorted = out.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 2, 2, 2]);
        assert_eq!(out[2], 2);
        assert_eq!(out[0], 0);
    }

    #[test]
    fn relabel_undoes_pure_permutations() {
        assert_eq!(relabel_keep_one_copy(&[1, 0]), vec![0, 1]);
        assert_eq!(relabel_keep_one_copy(&[2, 0, 1]), vec![0, 1, 2]);
    }

    /// Enumerate the equal-weight multinomial assignment for small m and
    /// check the keep-one-copy law: every PE keeps its own block with the
    /// same probability, at least 1/m, and the source multiset law is
    /// untouched by the relabeling.
    #[test]
    fn relabel_keep_probability_by_enumeration() {
        for m in [2usize, 3] {
            let total = (m as u64).pow(m as u32);
            let mut keep_counts = vec![0u64; m];
            let mut raw_multiset = std::collections::HashMap::new();
            let mut out_multiset = std::collections::HashMap::new();
            for code in 0..total {
                let mut raw = Vec::with_capacity(m);
                let mut c = code;
                for _ in 0..m {
                    raw.push((c % m as u64) as usize);
                    c /= m as u64;
                }
                let out = relabel_keep_one_copy(&raw);
                for k in 0..m {
                    if out[k] == k {
                        keep_counts[k] += 1;
                    }
                }
                let key = |v: &[usize]| {
                    let mut s = v.to_vec();
                    s.sort_unstable();
                    s
                };
                *raw_multiset.entry(key(&raw)).or_insert(0u64) += 1;
                *out_multiset.entry(key(&out)).or_insert(0u64) += 1;
            }
            assert_eq!(raw_multiset, out_multiset);
            for &k in &keep_counts {
                assert_eq!(k, keep_counts[0], "keep probability not exchangeable");
                assert!(k as f64 / total as f64 >= 1.0 / m as f64);
            }
        }
    }

    /// Island weights (3, 1) at m = 2: both output islands hold island 1's
    /// block iff the raw draw picked it twice, probability (3/4)^2 = 9/16;
    /// the relabeling never changes the multiset.
    #[test]
    fn duplication_probability_under_weighted_draw() {
        let mut rng = RngStream::new(915, 0);
        let replicates = 200_000;
        let mut both_first = 0u64;
        for _ in 0..replicates {
            let assignment = draw_assignment(&[3.0, 1.0], &mut rng);
            if assignment == vec![0, 0] {
                both_first += 1;
            }
        }
        let freq = both_first as f64 / replicates as f64;
        let p = 9.0 / 16.0;
        let se = (p * (1.0 - p) / replicates as f64).sqrt();
        assert!((freq - p).abs() <= 4.0 * se, "{freq} vs {p}");
    }
}
