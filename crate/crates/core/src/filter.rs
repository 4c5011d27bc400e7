//! One expectation pass: the augmented EKF forward recursion interleaved
//! with the one-lag fixed-point smoother, accumulating the residual/second-
//! moment sums the maximization step consumes.

use nalgebra::{DMatrix, DVector};

use crate::em::HyperParams;
use crate::matcore::{self, SpdFactor};
use crate::model::{DiscretizationCache, SensorConfig, StructuralModel};
use crate::sim::Dataset;
use crate::{Error, Result};

/// Minimum reciprocal-condition estimate accepted when factoring innovation
/// or predictive covariances.
const RCOND_FLOOR: f64 = 1e-14;

/// Gaussian state estimate at one time index. The covariance is
/// symmetrized on construction.
#[derive(Debug, Clone)]
pub struct GaussianEstimate {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianEstimate {
    pub fn new(mean: DVector<f64>, mut cov: DMatrix<f64>) -> Self {
        matcore::symmetrize(&mut cov);
        Self { mean, cov }
    }

    fn is_finite(&self) -> bool {
        self.mean.iter().all(|x| x.is_finite()) && self.cov.iter().all(|x| x.is_finite())
    }
}

/// Everything one forward pass produces: the lag-one smoothed initial
/// state, optionally the whole smoothed trajectory, and the accumulated
/// observation/process moment sums.
#[derive(Debug, Clone)]
pub struct PassResult {
    /// Smoothed initial estimate (mean and covariance of the state at k=0
    /// conditioned on the first observation).
    pub initial: GaussianEstimate,
    /// Smoothed trajectory for k = 0..n when requested. Index k holds the
    /// one-step-ahead smoothed estimate; the last entry is the filtered
    /// estimate at k = n (no later observation exists).
    pub smoothed: Option<Vec<GaussianEstimate>>,
    /// Accumulated observation moment: sum over k of the expected residual
    /// outer products plus the linearized covariance terms.
    pub obs_moment: DMatrix<f64>,
    /// Accumulated process moment (same structure for the transition).
    pub proc_moment: DMatrix<f64>,
    /// Number of time steps n.
    pub steps: usize,
}

/// Options for a forward pass.
#[derive(Debug, Clone, Copy, Default)]
pub struct PassOptions {
    /// Retain the full smoothed trajectory (memory-heavy for long records).
    pub keep_trajectory: bool,
}

/// EKF prediction: mean through the augmented transition, covariance
/// through the process Jacobian. Returns the Jacobian used so callers can
/// reuse it for smoothing.
pub fn ekf_predict(
    prev: &GaussianEstimate,
    model: &StructuralModel,
    q_a: &DMatrix<f64>,
    cache: &mut DiscretizationCache,
    step: usize,
) -> Result<(GaussianEstimate, DMatrix<f64>)> {
    let f_jac = model
        .process_jacobian(&prev.mean, cache)
        .map_err(|e| as_divergence(e, step))?;
    let mean = model
        .augmented_transition(&prev.mean, cache)
        .map_err(|e| as_divergence(e, step))?;
    let cov = &f_jac * &prev.cov * f_jac.transpose() + q_a;
    let est = GaussianEstimate::new(mean, cov);
    if !est.is_finite() {
        return Err(Error::Divergence { step, what: "non-finite prediction".into() });
    }
    Ok((est, f_jac))
}

/// EKF measurement update with the augmented observation vector (pseudo
/// entries are zeros).
pub fn ekf_update(
    pred: &GaussianEstimate,
    d_a: &DVector<f64>,
    model: &StructuralModel,
    cfg: &SensorConfig,
    r_a: &DMatrix<f64>,
    step: usize,
) -> Result<GaussianEstimate> {
    let h_jac = model.observation_jacobian(cfg, &pred.mean)?;
    let predicted_obs = model.observation_map(cfg, &pred.mean)?;

    let hp = &h_jac * &pred.cov;
    let mut innov_cov = &hp * h_jac.transpose() + r_a;
    matcore::symmetrize(&mut innov_cov);
    let fact = SpdFactor::new(&innov_cov).map_err(|_| Error::SingularCovariance {
        step,
        what: "innovation covariance is not positive definite".into(),
    })?;
    if fact.rcond() < RCOND_FLOOR {
        return Err(Error::SingularCovariance {
            step,
            what: format!("innovation covariance rcond {:.3e}", fact.rcond()),
        });
    }

    // Gain G = P H^T S^{-1}; computed as (S^{-1} H P)^T.
    let gain = fact.solve_mat(&hp).transpose();
    let innovation = d_a - &predicted_obs;
    let mean = &pred.mean + &gain * &innovation;
    let cov = &pred.cov - &gain * &hp;
    let est = GaussianEstimate::new(mean, cov);
    if !est.is_finite() {
        return Err(Error::Divergence { step, what: "non-finite update".into() });
    }
    Ok(est)
}

/// One-lag fixed-point smoothing of the previous state using the current
/// prediction/update pair. Returns the smoothed estimate and the
/// cross-covariance term `L P` entering the process moment.
pub fn smooth_one_lag(
    filtered_prev: &GaussianEstimate,
    pred: &GaussianEstimate,
    updated: &GaussianEstimate,
    f_jac: &DMatrix<f64>,
    step: usize,
) -> Result<(GaussianEstimate, DMatrix<f64>)> {
    let fact = SpdFactor::new(&pred.cov).map_err(|_| Error::SingularCovariance {
        step,
        what: "predictive covariance is not positive definite".into(),
    })?;
    if fact.rcond() < RCOND_FLOOR {
        return Err(Error::SingularCovariance {
            step,
            what: format!("predictive covariance rcond {:.3e}", fact.rcond()),
        });
    }
    // L = P_prev F^T P_pred^{-1}, via L^T = P_pred^{-1} F P_prev.
    let gain = fact.solve_mat(&(f_jac * &filtered_prev.cov)).transpose();
    let mean = &filtered_prev.mean + &gain * (&updated.mean - &pred.mean);
    let cov_delta = &updated.cov - &pred.cov;
    let cov = &filtered_prev.cov + &gain * cov_delta * gain.transpose();
    let smoothed = GaussianEstimate::new(mean, cov);
    if !smoothed.is_finite() {
        return Err(Error::Divergence { step, what: "non-finite smoothed state".into() });
    }
    let cross = &gain * &smoothed.cov;
    Ok((smoothed, cross))
}

struct MomentAccumulator {
    obs: DMatrix<f64>,
    proc: DMatrix<f64>,
}

impl MomentAccumulator {
    fn new(n_obs: usize, n_aug: usize) -> Self {
        Self { obs: DMatrix::zeros(n_obs, n_obs), proc: DMatrix::zeros(n_aug, n_aug) }
    }

    /// Adds the expectation terms for one time index: `smoothed_k` is the
    /// one-step-ahead estimate of the state at that index, `lag` the
    /// smoothed estimate one index earlier, `cross` the associated
    /// gain-covariance product.
    fn add(
        &mut self,
        model: &StructuralModel,
        cfg: &SensorConfig,
        cache: &mut DiscretizationCache,
        d_a: &DVector<f64>,
        smoothed_k: &GaussianEstimate,
        lag: &GaussianEstimate,
        cross: &DMatrix<f64>,
        step: usize,
    ) -> Result<()> {
        let h_jac = model.observation_jacobian(cfg, &smoothed_k.mean)?;
        let resid_obs = d_a - model.observation_map(cfg, &smoothed_k.mean)?;
        self.obs += &resid_obs * resid_obs.transpose();
        self.obs += &h_jac * &smoothed_k.cov * h_jac.transpose();

        let f_jac = model
            .process_jacobian(&lag.mean, cache)
            .map_err(|e| as_divergence(e, step))?;
        let predicted = model
            .augmented_transition(&lag.mean, cache)
            .map_err(|e| as_divergence(e, step))?;
        let resid_proc = &smoothed_k.mean - &predicted;
        self.proc += &resid_proc * resid_proc.transpose();
        self.proc += &smoothed_k.cov;
        self.proc += &f_jac * &lag.cov * f_jac.transpose();
        let fc = &f_jac * cross;
        self.proc -= &fc;
        self.proc -= fc.transpose();
        Ok(())
    }
}

fn as_divergence(e: Error, step: usize) -> Error {
    match e {
        Error::NonFinite(what) => Error::Divergence { step, what: what.into() },
        other => other,
    }
}

/// Runs the EKF with the interleaved one-lag smoother over a dataset,
/// accumulating the expectation sums. Deterministic: identical inputs give
/// bit-identical moments.
pub fn run_pass(
    data: &Dataset,
    model: &StructuralModel,
    cfg: &SensorConfig,
    phi: &HyperParams,
    opts: &PassOptions,
) -> Result<PassResult> {
    cfg.validate(model)?;
    phi.validate(model.n_augmented(), cfg.n_obs())?;
    if (data.dt - model.dt()).abs() > 1e-9 * model.dt() {
        return Err(Error::InvalidData(format!(
            "dataset dt {} does not match model dt {}",
            data.dt,
            model.dt()
        )));
    }
    let obs = data.observations(cfg)?;
    let n = obs.nrows();
    let n_obs = cfg.n_obs();
    let n_meas = cfg.n_meas();

    let mut cache = DiscretizationCache::new();
    let mut acc = MomentAccumulator::new(n_obs, model.n_augmented());
    let prior = GaussianEstimate::new(phi.mu0.clone(), phi.p0.clone());

    if n == 0 {
        return Ok(PassResult {
            initial: prior.clone(),
            smoothed: opts.keep_trajectory.then(|| vec![prior]),
            obs_moment: acc.obs,
            proc_moment: acc.proc,
            steps: 0,
        });
    }

    let mut trajectory = opts.keep_trajectory.then(|| Vec::with_capacity(n + 1));
    let mut filtered = prior;
    let mut initial: Option<GaussianEstimate> = None;
    // Smoothed estimate and cross term from the previous step, plus the
    // observation consumed there; feeds the lagged moment terms.
    let mut lag: Option<(GaussianEstimate, DMatrix<f64>, DVector<f64>)> = None;

    for k in 1..=n {
        let mut d_a = DVector::zeros(n_obs);
        d_a.rows_mut(0, n_meas).copy_from(&obs.row(k - 1).transpose());

        let (pred, f_jac) = ekf_predict(&filtered, model, &phi.q_a, &mut cache, k)?;
        let updated = ekf_update(&pred, &d_a, model, cfg, &phi.r_a, k)?;
        let (smoothed_prev, cross) = smooth_one_lag(&filtered, &pred, &updated, &f_jac, k)?;

        if let Some((lag_est, lag_cross, lag_obs)) = lag.take() {
            // Terms for index k-1: its one-step-ahead estimate is ready.
            acc.add(model, cfg, &mut cache, &lag_obs, &smoothed_prev, &lag_est, &lag_cross, k)?;
        }
        if k == 1 {
            initial = Some(smoothed_prev.clone());
        }
        if let Some(t) = trajectory.as_mut() {
            t.push(smoothed_prev.clone());
        }
        lag = Some((smoothed_prev, cross, d_a));
        filtered = updated;
    }

    // Tail term at k = n: no later observation exists, so the filtered
    // estimate substitutes for the one-step-ahead smoothed one.
    let (lag_est, lag_cross, lag_obs) = lag.take().expect("n >= 1");
    acc.add(model, cfg, &mut cache, &lag_obs, &filtered, &lag_est, &lag_cross, n)?;
    if let Some(t) = trajectory.as_mut() {
        t.push(filtered.clone());
    }

    matcore::symmetrize(&mut acc.obs);
    matcore::symmetrize(&mut acc.proc);
    Ok(PassResult {
        initial: initial.expect("n >= 1"),
        smoothed: trajectory,
        obs_moment: acc.obs,
        proc_moment: acc.proc,
        steps: n,
    })
}
