//! Hidden Markov model abstraction and the linear-Gaussian random-walk
//! benchmark model.

use std::f64::consts::PI;

use crate::engine::rng::RngStream;
use crate::error::{Error, Result};

/// Absolute floor applied to exponentiated potentials. Potentials are
/// strictly positive by assumption; the floor preserves that under f64
/// underflow.
pub const POTENTIAL_FLOOR: f64 = 1e-300;

/// A hidden Markov model as seen by the filters: an initial sampler, a
/// transition kernel and per-step potential functions tied to a fixed
/// observation record.
///
/// Both samplers must be deterministic functions of the stream they draw
/// from; that is the reproducibility contract the engine relies on.
pub trait Model: Send + Sync {
    /// State dimension d.
    fn dim(&self) -> usize;

    /// Number of observations (filter steps).
    fn n_max(&self) -> usize;

    /// Draw from the initial distribution into `out` (length d).
    fn sample_initial(&self, out: &mut [f64], rng: &mut RngStream);

    /// Advance `x` one step through the transition kernel, in place.
    fn transition(&self, x: &mut [f64], rng: &mut RngStream);

    /// log g_n(x); the potential of state `x` against observation n.
    fn log_potential(&self, n: usize, x: &[f64]) -> f64;

    /// g_n(x), floored at [`POTENTIAL_FLOOR`] so it is strictly positive.
    fn potential(&self, n: usize, x: &[f64]) -> f64 {
        self.log_potential(n, x).exp().max(POTENTIAL_FLOOR)
    }

    /// Closed-form contribution of one transition-kernel component to the
    /// filtering-mean estimate: given a parent state, write the component
    /// posterior mean into `out_mean` and return the marginal likelihood of
    /// observation n under kernel-then-observe. Models without a closed
    /// form return None; estimates then fall back to the plain weighted
    /// particle mean.
    fn kernel_posterior(&self, _n: usize, _parent: &[f64], _out_mean: &mut [f64]) -> Option<f64> {
        None
    }
}

/// Parameters of the d-dimensional Gaussian random walk observed in Gaussian
/// noise: X_0 ~ N(0, I), X_n = X_{n-1} + eta_n with eta ~ N(0, q I), and
/// Y_n = X_n + eps_n with eps ~ N(0, r I).
#[derive(Debug, Clone, Copy)]
pub struct RandomWalkModel {
    pub dim: usize,
    /// Observation noise variance per coordinate (r). Benchmark value 1/4.
    pub obs_noise_var: f64,
    /// Process noise variance per coordinate (q). Benchmark value 1.
    /// Setting it to 0 freezes the state path; used as a test hook.
    pub process_noise_var: f64,
}

impl RandomWalkModel {
    /// The benchmark parameterisation: unit process noise, 1/4 observation
    /// noise.
    pub fn standard(dim: usize) -> Self {
        Self {
            dim,
            obs_noise_var: 0.25,
            process_noise_var: 1.0,
        }
    }
}

/// One simulated dataset: the latent path and its observations, each
/// `n_max` rows of `dim` columns.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub observations: Vec<Vec<f64>>,
}

/// Simulate `n_max` steps of the random-walk model. Deterministic per seed;
/// the dataset stream is independent of every filter stream.
pub fn simulate_data(model: &RandomWalkModel, n_max: usize, seed: u64) -> Result<Trajectory> {
    if n_max == 0 {
        return Err(Error::EmptyTrajectory);
    }
    let d = model.dim;
    let mut rng = RngStream::new(seed, crate::engine::rng::GLOBAL_STREAM);
    let q = model.process_noise_var.sqrt();
    let r = model.obs_noise_var.sqrt();

    let mut states = Vec::with_capacity(n_max);
    let mut observations = Vec::with_capacity(n_max);
    let mut x: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    for n in 0..n_max {
        if n > 0 {
            for xi in x.iter_mut() {
                *xi += q * rng.normal();
            }
        }
        let y: Vec<f64> = x.iter().map(|&xi| xi + r * rng.normal()).collect();
        states.push(x.clone());
        observations.push(y);
    }
    Ok(Trajectory {
        states,
        observations,
    })
}

/// The random-walk model bound to a realised observation sequence; this is
/// what the filters consume.
#[derive(Debug, Clone)]
pub struct RandomWalkHmm {
    model: RandomWalkModel,
    observations: Vec<Vec<f64>>,
    log_norm: f64,
}

impl RandomWalkHmm {
    pub fn new(model: RandomWalkModel, observations: Vec<Vec<f64>>) -> Result<Self> {
        for (n, y) in observations.iter().enumerate() {
            if y.len() != model.dim {
                return Err(Error::Shape(format!(
                    "observation {n} has dimension {}, expected {}",
                    y.len(),
                    model.dim
                )));
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericInput(format!(
                    "observation {n} contains a non-finite value"
                )));
            }
        }
        // Full Gaussian normalisation constant, kept so potential values are
        // comparable across implementations.
        let log_norm = -(model.dim as f64) * 0.5 * (2.0 * PI * model.obs_noise_var).ln();
        Ok(Self {
            model,
            observations,
            log_norm,
        })
    }

    pub fn model(&self) -> &RandomWalkModel {
        &self.model
    }

    pub fn observations(&self) -> &[Vec<f64>] {
        &self.observations
    }

    /// The N(y_n; x, r I) density, floored to stay strictly positive.
    pub fn gaussian_potential(&self, n: usize, x: &[f64]) -> Result<f64> {
        if n >= self.observations.len() {
            return Err(Error::Shape(format!(
                "time index {n} out of range (n_max = {})",
                self.observations.len()
            )));
        }
        if x.len() != self.model.dim {
            return Err(Error::Shape(format!(
                "state has dimension {}, expected {}",
                x.len(),
                self.model.dim
            )));
        }
        Ok(self.potential(n, x))
    }
}

impl Model for RandomWalkHmm {
    fn dim(&self) -> usize {
        self.model.dim
    }

    fn n_max(&self) -> usize {
        self.observations.len()
    }

    fn sample_initial(&self, out: &mut [f64], rng: &mut RngStream) {
        for o in out.iter_mut() {
            *o = rng.normal();
        }
    }

    fn transition(&self, x: &mut [f64], rng: &mut RngStream) {
        let q = self.model.process_noise_var.sqrt();
        for xi in x.iter_mut() {
            *xi += q * rng.normal();
        }
    }

    fn log_potential(&self, n: usize, x: &[f64]) -> f64 {
        let y = &self.observations[n];
        let mut sq = 0.0;
        for (xi, yi) in x.iter().zip(y.iter()) {
            let diff = xi - yi;
            sq += diff * diff;
        }
        self.log_norm - sq / (2.0 * self.model.obs_noise_var)
    }

    fn kernel_posterior(&self, n: usize, parent: &[f64], out_mean: &mut [f64]) -> Option<f64> {
        // Kernel N(parent, q I) observed through N(x, r I): the component
        // marginal is N(y; parent, (q+r) I) and the component posterior
        // mean is (q y + r parent) / (q + r).
        let q = self.model.process_noise_var;
        let r = self.model.obs_noise_var;
        let s = q + r;
        let y = &self.observations[n];
        let mut sq = 0.0;
        for ((m, p), yi) in out_mean.iter_mut().zip(parent.iter()).zip(y.iter()) {
            *m = (q * yi + r * p) / s;
            let diff = p - yi;
            sq += diff * diff;
        }
        let log_norm = -(self.model.dim as f64) * 0.5 * (2.0 * PI * s).ln();
        Some((log_norm - sq / (2.0 * s)).exp().max(POTENTIAL_FLOOR))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_trajectory() {
        let m = RandomWalkModel::standard(1);
        assert!(matches!(
            simulate_data(&m, 0, 1),
            Err(Error::EmptyTrajectory)
        ));
    }

    #[test]
    fn shapes_match_request() {
        let m = RandomWalkModel::standard(7);
        let t = simulate_data(&m, 100, 9).unwrap();
        assert_eq!(t.states.len(), 100);
        assert_eq!(t.observations.len(), 100);
        assert!(t.states.iter().all(|s| s.len() == 7));
        assert!(t.observations.iter().all(|y| y.len() == 7));
    }

    #[test]
    fn seed_determinism_is_bitwise() {
        let m = RandomWalkModel::standard(3);
        let a = simulate_data(&m, 50, 1234).unwrap();
        let b = simulate_data(&m, 50, 1234).unwrap();
        for (x, y) in a.states.iter().zip(b.states.iter()) {
            for (u, v) in x.iter().zip(y.iter()) {
                assert_eq!(u.to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn observation_noise_variance_matches_model() {
        // Var(Y - X) over many seeds should sit within 5% of 0.25.
        let m = RandomWalkModel::standard(1);
        let mut residuals = Vec::with_capacity(3 * 10_000);
        for seed in 0..10_000u64 {
            let t = simulate_data(&m, 3, seed).unwrap();
            for (y, x) in t.observations.iter().zip(t.states.iter()) {
                residuals.push(y[0] - x[0]);
            }
        }
        let n = residuals.len() as f64;
        let mean = residuals.iter().sum::<f64>() / n;
        let var = residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        assert!(
            (var - 0.25).abs() < 0.05 * 0.25,
            "residual variance {var} not within 5% of 0.25"
        );
    }

    #[test]
    fn zero_process_noise_freezes_the_state() {
        let mut m = RandomWalkModel::standard(2);
        m.process_noise_var = 0.0;
        let t = simulate_data(&m, 10, 7).unwrap();
        for s in &t.states {
            assert_eq!(s, &t.states[0]);
        }
        for (y, s) in t.observations.iter().zip(t.states.iter()) {
            assert!(y.iter().zip(s.iter()).all(|(a, b)| (a - b).abs() < 10.0));
        }
    }

    #[test]
    fn potential_at_the_mode() {
        let m = RandomWalkModel::standard(1);
        let hmm = RandomWalkHmm::new(m, vec![vec![1.5]]).unwrap();
        let v = hmm.gaussian_potential(0, &[1.5]).unwrap();
        assert!((v - 0.7978845608028654).abs() < 1e-12);
    }

    #[test]
    fn potential_is_floored_in_the_tail() {
        let m = RandomWalkModel::standard(1);
        let hmm = RandomWalkHmm::new(m, vec![vec![0.0]]).unwrap();
        let v = hmm.gaussian_potential(0, &[1e6]).unwrap();
        assert_eq!(v, POTENTIAL_FLOOR);
        assert!(v > 0.0);
    }

    #[test]
    fn potential_is_symmetric_about_the_observation() {
        let m = RandomWalkModel::standard(1);
        let hmm = RandomWalkHmm::new(m, vec![vec![2.0]]).unwrap();
        let lo = hmm.gaussian_potential(0, &[1.25]).unwrap();
        let hi = hmm.gaussian_potential(0, &[2.75]).unwrap();
        assert_eq!(lo.to_bits(), hi.to_bits());
    }

    #[test]
    fn potential_rejects_bad_shapes() {
        let m = RandomWalkModel::standard(2);
        let hmm = RandomWalkHmm::new(m, vec![vec![0.0, 0.0]]).unwrap();
        assert!(matches!(
            hmm.gaussian_potential(0, &[0.0]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            hmm.gaussian_potential(5, &[0.0, 0.0]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn hmm_rejects_non_finite_observations() {
        let m = RandomWalkModel::standard(1);
        assert!(matches!(
            RandomWalkHmm::new(m, vec![vec![f64::NAN]]),
            Err(Error::NumericInput(_))
        ));
    }
}
