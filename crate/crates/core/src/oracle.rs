//! Exact Kalman filter for the linear-Gaussian random-walk model, used as
//! ground truth for MSE computation.
//!
//! Two implementations are kept deliberately: a scalar recursion exploiting
//! the isotropy of the benchmark model, and a generic dense recursion with a
//! Joseph-form covariance update. They cross-check each other in the tests.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::RandomWalkModel;

/// Filtering mean and covariance after the update at one time step.
#[derive(Debug, Clone)]
pub struct KalmanState {
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
}

fn validate(model: &RandomWalkModel, observations: &[Vec<f64>]) -> Result<()> {
    if observations.is_empty() {
        return Err(Error::Shape("observations must be nonempty".into()));
    }
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
                "observation {n} is not finite"
            )));
        }
    }
    Ok(())
}

/// Kalman recursion specialised to the isotropic model: the covariance stays
/// a scalar multiple of the identity, so one variance per step suffices.
///
/// Initialised from the prior N(0, I); the state at index n is the posterior
/// after updating with Y_n, for every n including n = 0.
pub fn kalman_filter(
    model: &RandomWalkModel,
    observations: &[Vec<f64>],
) -> Result<Vec<KalmanState>> {
    validate(model, observations)?;
    let d = model.dim;
    let r = model.obs_noise_var;
    let q = model.process_noise_var;

    let mut out = Vec::with_capacity(observations.len());
    let mut mean = vec![0.0; d];
    let mut var = 1.0; // prior variance
    for (n, y) in observations.iter().enumerate() {
        let pred_var = if n == 0 { var } else { var + q };
        let gain = pred_var / (pred_var + r);
        for (m, yi) in mean.iter_mut().zip(y.iter()) {
            *m += gain * (yi - *m);
        }
        var = (1.0 - gain) * pred_var;
        out.push(KalmanState {
            mean: mean.clone(),
            cov: DMatrix::identity(d, d) * var,
        });
    }
    Ok(out)
}

/// Generic dense recursion for the same model (identity transition and
/// observation matrices), with the Joseph-form covariance update.
pub fn kalman_filter_dense(
    model: &RandomWalkModel,
    observations: &[Vec<f64>],
) -> Result<Vec<KalmanState>> {
    validate(model, observations)?;
    let d = model.dim;
    let eye = DMatrix::<f64>::identity(d, d);
    let r_mat = &eye * model.obs_noise_var;
    let q_mat = &eye * model.process_noise_var;

    let mut out = Vec::with_capacity(observations.len());
    let mut mean = DVector::<f64>::zeros(d);
    let mut cov = eye.clone();
    for (n, y) in observations.iter().enumerate() {
        let pred_cov = if n == 0 { cov.clone() } else { &cov + &q_mat };
        let innovation_cov = &pred_cov + &r_mat;
        let gain = &pred_cov
            * innovation_cov
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::NumericInput("singular innovation covariance".into()))?;
        let y_vec = DVector::from_column_slice(y);
        mean = &mean + &gain * (&y_vec - &mean);
        let ik = &eye - &gain;
        cov = &ik * &pred_cov * ik.transpose() + &gain * &r_mat * gain.transpose();
        out.push(KalmanState {
            mean: mean.iter().copied().collect(),
            cov: cov.clone(),
        });
    }
    Ok(out)
}

/// Prediction means implied by a filtering trajectory: for the random-walk
/// model the prediction mean at n equals the filtering mean at n-1, and the
/// prior mean (zero) at n = 0.
pub fn prediction_means(truth: &[KalmanState], dim: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(truth.len());
    out.push(vec![0.0; dim]);
    for state in truth.iter().take(truth.len().saturating_sub(1)) {
        out.push(state.mean.clone());
    }
    out
}

/// Mean squared error over J runs: (1/J) sum_j sum_n sum_i (est - truth)^2.
/// The inner sums over time and coordinate are sums, not means.
pub fn mse(estimates_per_run: &[Vec<Vec<f64>>], truth: &[KalmanState]) -> Result<f64> {
    if estimates_per_run.is_empty() {
        return Err(Error::Shape("need at least one run".into()));
    }
    let n_max = truth.len();
    let mut total = 0.0;
    for (j, run) in estimates_per_run.iter().enumerate() {
        if run.len() != n_max {
            return Err(Error::Shape(format!(
                "run {j} has {} steps, truth has {n_max}",
                run.len()
            )));
        }
        for (est, state) in run.iter().zip(truth.iter()) {
            if est.len() != state.mean.len() {
                return Err(Error::Shape(format!(
                    "run {j}: estimate dimension {} vs truth {}",
                    est.len(),
                    state.mean.len()
                )));
            }
            for (e, t) in est.iter().zip(state.mean.iter()) {
                total += (e - t) * (e - t);
            }
        }
    }
    Ok(total / estimates_per_run.len() as f64)
}
