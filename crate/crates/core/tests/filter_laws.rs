//! End-to-end laws of the assembled filters through the engine.

use std::sync::Arc;

use butterfly_smc::butterfly::Topology;
use butterfly_smc::engine::rng::RngStream;
use butterfly_smc::engine::{execute_parallel, Mode};
use butterfly_smc::filters::{Algorithm, FilterConfig, Threshold};
use butterfly_smc::model::{simulate_data, Model, RandomWalkHmm, RandomWalkModel};
use butterfly_smc::oracle::kalman_filter;

/// Model with a flat potential: resampling weights carry no information.
struct FlatPotentialModel {
    dim: usize,
    steps: usize,
}

impl Model for FlatPotentialModel {
    fn dim(&self) -> usize {
        self.dim
    }
    fn n_max(&self) -> usize {
        self.steps
    }
    fn sample_initial(&self, out: &mut [f64], rng: &mut RngStream) {
        for o in out.iter_mut() {
            *o = rng.normal();
        }
    }
    fn transition(&self, x: &mut [f64], rng: &mut RngStream) {
        for xi in x.iter_mut() {
            *xi += rng.normal();
        }
    }
    fn log_potential(&self, _n: usize, _x: &[f64]) -> f64 {
        0.0
    }
}

fn standard_hmm(dim: usize, n_max: usize, data_seed: u64) -> Arc<RandomWalkHmm> {
    let model = RandomWalkModel::standard(dim);
    let data = simulate_data(&model, n_max, data_seed).unwrap();
    Arc::new(RandomWalkHmm::new(model, data.observations).unwrap())
}

fn config(m: usize, island: usize, alg: Algorithm, threshold: Threshold, seed: u64) -> FilterConfig {
    FilterConfig::new(Topology::new(m, island).unwrap(), alg, threshold, seed)
}

#[test]
fn identical_seeds_give_bitwise_identical_runs() {
    let hmm = standard_hmm(2, 25, 3);
    for alg in [
        Algorithm::Bpf,
        Algorithm::BpfAugmented,
        Algorithm::AirpfPlain,
        Algorithm::AirpfModified,
        Algorithm::Ipf1,
        Algorithm::Ipf2,
    ] {
        let cfg = config(4, 8, alg, Threshold::Ess(0.7), 99);
        let (a, _) = execute_parallel(hmm.clone(), &cfg, Mode::Serial).unwrap();
        let (b, _) = execute_parallel(hmm.clone(), &cfg, Mode::Serial).unwrap();
        assert!(a.same_results(&b), "{alg} not reproducible");
    }
}

#[test]
fn serial_and_threaded_agree_bit_for_bit() {
    let hmm = standard_hmm(3, 20, 11);
    for alg in [
        Algorithm::Bpf,
        Algorithm::BpfAugmented,
        Algorithm::AirpfPlain,
        Algorithm::AirpfModified,
        Algorithm::Ipf1,
        Algorithm::Ipf2,
    ] {
        for threshold in [Threshold::Always, Threshold::Ess(0.6)] {
            let mut cfg = config(8, 4, alg, threshold, 1234);
            cfg.record_exchange_log = true;
            let (a, sa) = execute_parallel(hmm.clone(), &cfg, Mode::Serial).unwrap();
            let (b, sb) = execute_parallel(hmm.clone(), &cfg, Mode::Threaded).unwrap();
            assert!(a.same_results(&b), "{alg} diverges across engine modes");
            assert_eq!(sa, sb);
        }
    }
}

#[test]
fn initial_estimate_is_shared_across_algorithms() {
    // The estimate is taken before any resampling, from the freshly
    // initialised prediction sample; with one seed it is the same number
    // for every algorithm.
    let hmm = standard_hmm(1, 3, 5);
    let mut first: Option<Vec<u64>> = None;
    for alg in [
        Algorithm::Bpf,
        Algorithm::BpfAugmented,
        Algorithm::AirpfPlain,
        Algorithm::Ipf2,
    ] {
        let cfg = config(4, 16, alg, Threshold::Always, 42);
        let (run, _) = execute_parallel(hmm.clone(), &cfg, Mode::Serial).unwrap();
        let bits: Vec<u64> = run.pred_estimates[0].iter().map(|v| v.to_bits()).collect();
        match &first {
            None => first = Some(bits),
            Some(expected) => assert_eq!(&bits, expected, "{alg}"),
        }
    }
}

#[test]
fn flat_potentials_disable_adaptive_resampling_entirely() {
    let model = Arc::new(FlatPotentialModel { dim: 1, steps: 30 });
    for alg in [
        Algorithm::Bpf,
        Algorithm::BpfAugmented,
        Algorithm::AirpfModified,
        Algorithm::Ipf1,
        Algorithm::Ipf2,
    ] {
        let cfg = config(4, 8, alg, Threshold::Ess(0.999), 7);
        let (run, stats) = execute_parallel(model.clone() as _, &cfg, Mode::Serial).unwrap();
        // ESS is exactly 1 at every step, so nothing ever triggers...
        assert!(run.ess.iter().all(|&e| (e - 1.0).abs() < 1e-12), "{alg}");
        if alg == Algorithm::AirpfModified {
            // ...except AIRPF's within-island pass, which is unconditional
            // and local (no cross-PE traffic).
            assert_eq!(stats.totals.stage_rounds, 0, "{alg}");
        }
        assert_eq!(stats.totals.weight_msgs, 0, "{alg}");
        assert_eq!(stats.totals.payload_particles, 0, "{alg}");
    }
}

#[test]
fn flat_potentials_make_bpf_and_augmented_identical() {
    // With nothing triggering, both reduce to the same skip-and-mutate
    // path, so the whole run matches bit for bit.
    let model = Arc::new(FlatPotentialModel { dim: 2, steps: 15 });
    let a = config(4, 8, Algorithm::Bpf, Threshold::Ess(0.5), 21);
    let b = config(4, 8, Algorithm::BpfAugmented, Threshold::Ess(0.5), 21);
    let (ra, _) = execute_parallel(model.clone() as _, &a, Mode::Serial).unwrap();
    let (rb, _) = execute_parallel(model.clone() as _, &b, Mode::Serial).unwrap();
    assert!(ra.same_results(&rb));
}

#[test]
fn single_particle_bpf_is_one_markov_path() {
    let mut rw = RandomWalkModel::standard(1);
    rw.process_noise_var = 0.0;
    let data = simulate_data(&RandomWalkModel::standard(1), 10, 2).unwrap();
    let hmm = Arc::new(RandomWalkHmm::new(rw, data.observations).unwrap());
    let cfg = config(1, 1, Algorithm::Bpf, Threshold::Always, 17);
    let (run, stats) = execute_parallel(hmm, &cfg, Mode::Serial).unwrap();
    let first = run.pred_estimates[0][0];
    for est in &run.pred_estimates {
        assert_eq!(est[0].to_bits(), first.to_bits());
    }
    assert_eq!(stats.totals.payload_particles, 0);
}

#[test]
fn single_island_augmented_is_pure_propagation() {
    // m = 1 means no stages at all: sequential importance propagation.
    let hmm = standard_hmm(1, 20, 31);
    let cfg = config(1, 64, Algorithm::BpfAugmented, Threshold::Always, 5);
    let (run, stats) = execute_parallel(hmm, &cfg, Mode::Serial).unwrap();
    assert_eq!(stats.totals.stage_rounds, 0);
    assert_eq!(stats.totals.weight_msgs, 0);
    assert_eq!(stats.totals.payload_particles, 0);
    assert!(run.stages.iter().all(|&s| s == 0));
}

#[test]
fn ipf_with_one_island_collapses_to_local_bpf() {
    let hmm = standard_hmm(1, 20, 31);
    for alg in [Algorithm::Ipf1, Algorithm::Ipf2] {
        let cfg = config(1, 32, alg, Threshold::Always, 5);
        let (run, stats) = execute_parallel(hmm.clone(), &cfg, Mode::Serial).unwrap();
        assert_eq!(stats.totals.weight_msgs, 0, "{alg}");
        assert_eq!(stats.totals.payload_particles, 0, "{alg}");
        assert!(run.ess.iter().all(|&e| (e - 1.0).abs() < 1e-12), "{alg}");
    }
}

/// One AIRPF step at m = 2, M = 1 with a frozen transition is a single
/// pairwise weighted draw whose four joint outcomes are enumerable. The
/// per-replicate success probabilities vary with the realised initial
/// particles, so the check is a martingale bound on the centred sums.
///
/// The plain variant has the i.i.d.-marginal law P(output_k = a) = p; the
/// modified variant deliberately changes the marginals (swap avoidance
/// keeps blocks in place) while leaving the unordered multiset law at
/// {p^2, 2p(1-p), (1-p)^2}, so only the multiset is asserted for it.
#[test]
fn airpf_two_islands_single_particle_law() {
    let mut rw = RandomWalkModel::standard(1);
    rw.process_noise_var = 0.0;
    let observations = vec![vec![0.4], vec![0.4]];
    let hmm = Arc::new(RandomWalkHmm::new(rw, observations.clone()).unwrap());

    let replicates = 4000;
    for mode_alg in [Algorithm::AirpfPlain, Algorithm::AirpfModified] {
        let mut centred = [0.0f64; 2];
        let mut variance = 0.0f64;
        let mut multiset_centred = [0.0f64; 3];
        let mut multiset_var = [0.0f64; 3];
        for r in 0..replicates {
            let mut cfg = config(2, 1, mode_alg, Threshold::Always, 10_000 + r);
            cfg.record_snapshots = true;
            let (run, _) = execute_parallel(hmm.clone(), &cfg, Mode::Serial).unwrap();
            let snaps = run.snapshots.as_ref().unwrap();
            let (a, b) = (snaps[0][0], snaps[0][1]);
            let (out0, out1) = (snaps[1][0], snaps[1][1]);
            let ga = hmm.gaussian_potential(0, &[a]).unwrap();
            let gb = hmm.gaussian_potential(0, &[b]).unwrap();
            let p = ga / (ga + gb);
            for (k, out) in [out0, out1].into_iter().enumerate() {
                let hit = if out == a { 1.0 } else { 0.0 };
                centred[k] += hit - p;
            }
            variance += p * (1.0 - p);
            let exact = [p * p, 2.0 * p * (1.0 - p), (1.0 - p) * (1.0 - p)];
            let bucket = match (out0 == a, out1 == a) {
                (true, true) => 0,
                (false, false) => 2,
                _ => 1,
            };
            for k in 0..3 {
                let hit = if bucket == k { 1.0 } else { 0.0 };
                multiset_centred[k] += hit - exact[k];
                multiset_var[k] += exact[k] * (1.0 - exact[k]);
            }
        }
        if mode_alg == Algorithm::AirpfPlain {
            for (k, c) in centred.iter().enumerate() {
                assert!(
                    c.abs() <= 4.0 * variance.sqrt(),
                    "{mode_alg}: island {k} marginal off: {c} vs bound {}",
                    4.0 * variance.sqrt()
                );
            }
        }
        for k in 0..3 {
            assert!(
                multiset_centred[k].abs() <= 4.0 * multiset_var[k].sqrt(),
                "{mode_alg}: multiset bucket {k} off"
            );
        }
    }
}

/// Small paired benchmark: butterfly-staged resampling stays within 3x of
/// plain BPF at equal N against the Kalman truth.
#[test]
fn augmented_bpf_tracks_bpf_at_equal_n() {
    let dim = 1;
    let n_max = 50;
    let model = RandomWalkModel::standard(dim);
    let data = simulate_data(&model, n_max, 77).unwrap();
    let truth = kalman_filter(&model, &data.observations).unwrap();
    let hmm = Arc::new(RandomWalkHmm::new(model, data.observations).unwrap());

    let runs = 20;
    let mse = |alg: Algorithm, m: usize, island: usize| -> f64 {
        let mut total = 0.0;
        for j in 0..runs {
            let cfg = config(m, island, alg, Threshold::Always, 9000 + j);
            let (run, _) = execute_parallel(hmm.clone(), &cfg, Mode::Serial).unwrap();
            for (est, truth_state) in run.filt_estimates.iter().zip(truth.iter()) {
                for (e, t) in est.iter().zip(truth_state.mean.iter()) {
                    total += (e - t) * (e - t);
                }
            }
        }
        total / runs as f64
    };
    let bpf = mse(Algorithm::Bpf, 4, 64);
    let aug = mse(Algorithm::BpfAugmented, 4, 64);
    assert!(aug.is_finite() && bpf.is_finite());
    assert!(aug <= 3.0 * bpf, "augmented {aug} vs bpf {bpf}");
}

/// Island-restricted estimates are identically distributed across the two
/// PEs at m = 2 (two-sample Kolmogorov-Smirnov over replicates).
#[test]
fn island_estimates_are_exchangeable() {
    let hmm = standard_hmm(1, 10, 13);
    let replicates = 300;
    let mut k0 = Vec::with_capacity(replicates);
    let mut k1 = Vec::with_capacity(replicates);
    for r in 0..replicates {
        let mut cfg = config(2, 8, Algorithm::AirpfModified, Threshold::Always, 600 + r as u64);
        cfg.record_island_estimates = true;
        let (run, _) = execute_parallel(hmm.clone(), &cfg, Mode::Serial).unwrap();
        let last = run.island_estimates.as_ref().unwrap().last().unwrap();
        k0.push(last[0][0]);
        k1.push(last[1][0]);
    }
    k0.sort_by(f64::total_cmp);
    k1.sort_by(f64::total_cmp);
    let mut d_max: f64 = 0.0;
    let grid: Vec<f64> = k0.iter().chain(k1.iter()).copied().collect();
    for x in grid {
        let f0 = k0.partition_point(|&v| v <= x) as f64 / replicates as f64;
        let f1 = k1.partition_point(|&v| v <= x) as f64 / replicates as f64;
        d_max = d_max.max((f0 - f1).abs());
    }
    // alpha = 0.01 critical value c * sqrt(2/n) with c = 1.628.
    let critical = 1.628 * (2.0 / replicates as f64).sqrt();
    assert!(d_max < critical, "KS statistic {d_max} over {critical}");
}

#[test]
fn engine_rejects_out_of_range_thresholds() {
    let hmm = standard_hmm(1, 3, 1);
    for bad in [1.5, 0.0, 1.0 / 64.0] {
        let cfg = config(4, 16, Algorithm::Bpf, Threshold::Ess(bad), 1);
        assert!(execute_parallel(hmm.clone(), &cfg, Mode::Serial).is_err(), "theta {bad}");
    }
    let cfg = config(4, 16, Algorithm::Bpf, Threshold::Ess(0.5), 1);
    assert!(execute_parallel(hmm, &cfg, Mode::Serial).is_ok());
}

/// With rotation enabled, a step that stops early hands the next step a
/// different first stage; without it every step starts at stage 1.
#[test]
fn stage_rotation_moves_the_first_stage()
{
    let hmm = standard_hmm(7, 40, 19);
    let first_stages = |rotate: bool| -> Vec<u8> {
        let mut cfg = config(8, 16, Algorithm::AirpfModified, Threshold::Ess(0.9), 23);
        cfg.stage_rotation = rotate;
        cfg.record_exchange_log = true;
        let (run, _) = execute_parallel(hmm.clone(), &cfg, Mode::Serial).unwrap();
        let log = run.exchange_log.unwrap();
        let mut firsts = Vec::new();
        let mut seen_step = u32::MAX;
        for record in log {
            if record.step != seen_step {
                seen_step = record.step;
                firsts.push(record.stage);
            }
        }
        firsts
    };
    let fixed = first_stages(false);
    assert!(fixed.iter().all(|&s| s == 1), "without rotation: {fixed:?}");
    let rotated = first_stages(true);
    let distinct: std::collections::HashSet<u8> = rotated.iter().copied().collect();
    assert!(
        distinct.len() > 1,
        "rotation never moved the first stage: {rotated:?}"
    );
}
