//! The expectation-maximization outer loop: surrogate evaluation, the
//! closed-form maximization step for the noise hyperparameters, the
//! convergence loop, and virtual-sensing output from the final posterior.

use nalgebra::{DMatrix, DVector};

use crate::filter::{run_pass, GaussianEstimate, PassOptions, PassResult};
use crate::matcore::{self, trace_solve, SpdFactor};
use crate::model::{SensorConfig, StructuralModel};
use crate::sim::Dataset;
use crate::{Error, Result};

/// Hyperparameters updated by the maximization step: initial-state mean and
/// covariance plus the process/observation noise covariances. Initialized
/// block-diagonal, generally dense after updates.
#[derive(Debug, Clone)]
pub struct HyperParams {
    /// Initial augmented-state mean.
    pub mu0: DVector<f64>,
    /// Initial augmented-state covariance.
    pub p0: DMatrix<f64>,
    /// Augmented process noise covariance.
    pub q_a: DMatrix<f64>,
    /// Augmented observation noise covariance (physical rows first, then
    /// pseudo rows).
    pub r_a: DMatrix<f64>,
}

impl HyperParams {
    pub fn validate(&self, n_aug: usize, n_obs: usize) -> Result<()> {
        if self.mu0.len() != n_aug || self.p0.nrows() != n_aug || self.p0.ncols() != n_aug {
            return Err(Error::Dimension(format!(
                "initial-state hyperparameters sized for {} states, expected {n_aug}",
                self.mu0.len()
            )));
        }
        if self.q_a.nrows() != n_aug || self.q_a.ncols() != n_aug {
            return Err(Error::Dimension("process noise covariance has wrong order".into()));
        }
        if self.r_a.nrows() != n_obs || self.r_a.ncols() != n_obs {
            return Err(Error::Dimension(format!(
                "observation noise covariance has order {}, expected {n_obs}",
                self.r_a.nrows()
            )));
        }
        let finite = self.mu0.iter().all(|x| x.is_finite())
            && self.p0.iter().all(|x| x.is_finite())
            && self.q_a.iter().all(|x| x.is_finite())
            && self.r_a.iter().all(|x| x.is_finite());
        if !finite {
            return Err(Error::NonFinite("hyperparameters"));
        }
        Ok(())
    }
}

/// Knobs for the documented default hyperparameters used when the
/// steady-state initializer is skipped.
#[derive(Debug, Clone)]
pub struct InitialNoiseOptions {
    /// Measurement-noise fraction of each channel's mean square.
    pub gamma: f64,
    /// Initial state-noise variance.
    pub q_z: f64,
    /// Initial parameter-noise variance.
    pub q_theta: f64,
    /// Initial input-noise variance.
    pub q_p: f64,
    /// Pseudo-observation noise as a multiple of the input noise.
    pub r_pd_factor: f64,
    /// Initial variance of the dynamical-state block of `P_0`.
    pub p0_z: f64,
    /// Relative initial standard deviation of the parameter block of `P_0`
    /// (std = rel * (1 + |theta0|)).
    pub p0_theta_rel: f64,
    /// Initial variance of the input block of `P_0`.
    pub p0_p: f64,
}

impl Default for InitialNoiseOptions {
    fn default() -> Self {
        Self {
            gamma: 1e-4,
            q_z: 1e-13,
            q_theta: 1e-8,
            q_p: 1e3,
            r_pd_factor: 10.0,
            p0_z: 1e-2,
            p0_theta_rel: 0.2,
            p0_p: 1e3,
        }
    }
}

/// Builds the documented default hyperparameters from a nominal parameter
/// vector and the measured channels (for the mean-square rule on R).
pub fn default_hyperparams(
    model: &StructuralModel,
    cfg: &SensorConfig,
    theta0: &DVector<f64>,
    observations: &DMatrix<f64>,
    opts: &InitialNoiseOptions,
) -> Result<HyperParams> {
    let (nz, nt, np) = (model.n_states(), model.n_params(), model.n_inputs());
    if theta0.len() != nt {
        return Err(Error::Dimension(format!(
            "theta0 has {} entries, model expects {nt}",
            theta0.len()
        )));
    }
    if observations.ncols() != cfg.n_meas() {
        return Err(Error::Dimension(format!(
            "observation matrix has {} columns, sensors expect {}",
            observations.ncols(),
            cfg.n_meas()
        )));
    }
    let n_aug = nz + nt + np;

    let mut mu0 = DVector::zeros(n_aug);
    mu0.rows_mut(nz, nt).copy_from(theta0);

    let mut p0 = DMatrix::zeros(n_aug, n_aug);
    for i in 0..nz {
        p0[(i, i)] = opts.p0_z;
    }
    for s in 0..nt {
        let std = opts.p0_theta_rel * (1.0 + theta0[s].abs());
        p0[(nz + s, nz + s)] = std * std;
    }
    for j in 0..np {
        p0[(nz + nt + j, nz + nt + j)] = opts.p0_p;
    }

    let mut q_a = DMatrix::zeros(n_aug, n_aug);
    for i in 0..nz {
        q_a[(i, i)] = opts.q_z;
    }
    for s in 0..nt {
        q_a[(nz + s, nz + s)] = opts.q_theta;
    }
    for j in 0..np {
        q_a[(nz + nt + j, nz + nt + j)] = opts.q_p;
    }

    let n_obs = cfg.n_obs();
    let mut r_a = DMatrix::zeros(n_obs, n_obs);
    let n = observations.nrows().max(1) as f64;
    for ch in 0..cfg.n_meas() {
        let ms = observations.column(ch).iter().map(|x| x * x).sum::<f64>() / n;
        r_a[(ch, ch)] = (opts.gamma * ms).max(1e-20);
    }
    for i in 0..cfg.n_pseudo {
        r_a[(cfg.n_meas() + i, cfg.n_meas() + i)] = opts.r_pd_factor * opts.q_p;
    }

    Ok(HyperParams { mu0, p0, q_a, r_a })
}

/// Evaluates the expected log-posterior surrogate from a pass's accumulated
/// moments at the given hyperparameters.
pub fn surrogate(phi: &HyperParams, pass: &PassResult, n: usize) -> Result<f64> {
    let r_fact = SpdFactor::new(&phi.r_a)
        .map_err(|_| Error::NotPositiveDefinite("observation noise covariance R^a".into()))?;
    let q_fact = SpdFactor::new(&phi.q_a)
        .map_err(|_| Error::NotPositiveDefinite("process noise covariance Q^a".into()))?;
    let p_fact = SpdFactor::new(&phi.p0)
        .map_err(|_| Error::NotPositiveDefinite("initial covariance P_0".into()))?;

    let diff = &pass.initial.mean - &phi.mu0;
    let e0 = &pass.initial.cov + &diff * diff.transpose();

    let nf = n as f64;
    let l = -0.5 * nf * r_fact.ln_det()
        - 0.5 * nf * q_fact.ln_det()
        - 0.5 * p_fact.ln_det()
        - 0.5 * trace_solve(&p_fact, &e0)
        - 0.5 * trace_solve(&r_fact, &pass.obs_moment)
        - 0.5 * trace_solve(&q_fact, &pass.proc_moment);
    if !l.is_finite() {
        return Err(Error::NonFinite("surrogate value"));
    }
    Ok(l)
}

/// Closed-form maximization step: the smoothed initial moments and the
/// averaged residual moments are the exact maximizers of the surrogate.
pub fn m_step(pass: &PassResult, n: usize) -> Result<HyperParams> {
    if n == 0 {
        return Err(Error::InvalidData("maximization step needs at least one sample".into()));
    }
    let nf = n as f64;
    let mut r_a = &pass.obs_moment / nf;
    let mut q_a = &pass.proc_moment / nf;
    matcore::symmetrize(&mut r_a);
    matcore::symmetrize(&mut q_a);
    Ok(HyperParams { mu0: pass.initial.mean.clone(), p0: pass.initial.cov.clone(), q_a, r_a })
}

/// Options of the outer loop.
#[derive(Debug, Clone)]
pub struct BemOptions {
    /// Relative surrogate-change tolerance.
    pub tol: f64,
    /// Iteration cap.
    pub itrmax: usize,
    /// Zero the cross blocks of the updated process noise each iteration,
    /// restoring the block-diagonal layout of the initialization.
    pub project_blockdiag: bool,
    /// Truncate the dataset to this many steps (for quick runs).
    pub max_steps: Option<usize>,
}

impl Default for BemOptions {
    fn default() -> Self {
        Self { tol: 2e-4, itrmax: 200, project_blockdiag: false, max_steps: None }
    }
}

/// Per-iteration diagnostics persisted for post-hoc inspection.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: usize,
    pub surrogate: f64,
    pub con: f64,
    pub r_diag: Vec<f64>,
    pub q_diag: Vec<f64>,
}

/// Outcome of the outer loop: the smoothed trajectory under the final
/// hyperparameters, the hyperparameters themselves, and the surrogate
/// trace.
#[derive(Debug, Clone)]
pub struct BemResult {
    /// Smoothed trajectory, length n + 1 (index 0 is the initial state).
    pub smoothed: Vec<GaussianEstimate>,
    /// Final hyperparameters.
    pub phi: HyperParams,
    /// Surrogate/hyperparameter history, one record per iteration.
    pub trace: Vec<IterationRecord>,
    /// Iterations performed.
    pub iterations: usize,
    /// Whether the relative surrogate change dropped below tolerance.
    pub converged: bool,
    /// Diagnostic message when the loop aborted on a numerical failure.
    pub failure: Option<String>,
}

fn project_block_diagonal(q: &mut DMatrix<f64>, nz: usize, nt: usize) {
    let n = q.nrows();
    for i in 0..n {
        for j in 0..n {
            let bi = if i < nz { 0 } else if i < nz + nt { 1 } else { 2 };
            let bj = if j < nz { 0 } else if j < nz + nt { 1 } else { 2 };
            if bi != bj {
                q[(i, j)] = 0.0;
            }
        }
    }
}

/// Alternates expectation passes and maximization steps until the relative
/// surrogate change drops below tolerance, then reruns a final pass under
/// the converged hyperparameters to produce the posterior trajectory.
pub fn run_bem(
    data: &Dataset,
    model: &StructuralModel,
    cfg: &SensorConfig,
    phi0: &HyperParams,
    opts: &BemOptions,
) -> Result<BemResult> {
    let data_owned;
    let data = match opts.max_steps {
        Some(cap) if cap < data.n_steps() => {
            data_owned = data.truncated(cap);
            &data_owned
        }
        _ => data,
    };
    if data.n_steps() == 0 {
        return Err(Error::InvalidData("empty dataset: nothing to identify".into()));
    }
    if cfg.n_obs() < 2 {
        return Err(Error::InvalidData(
            "degenerate single-channel configuration: at least two observation rows \
             (including pseudo-observations) are required"
                .into(),
        ));
    }

    let mut phi = phi0.clone();
    let mut prev_phi = phi0.clone();
    let mut l_prev = 1.0_f64;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut failure = None;
    let mut iterations = 0;

    for j in 1..=opts.itrmax {
        let pass = match run_pass(data, model, cfg, &phi, &PassOptions::default()) {
            Ok(p) => p,
            Err(e) if j > 1 => {
                // Keep the last hyperparameters that produced a full pass.
                failure = Some(e.to_string());
                phi = prev_phi;
                break;
            }
            Err(e) => return Err(e),
        };
        let n = pass.steps;
        let mut phi_new = m_step(&pass, n)?;
        if opts.project_blockdiag {
            project_block_diagonal(&mut phi_new.q_a, model.n_states(), model.n_params());
        }
        let l1 = surrogate(&phi_new, &pass, n)?;
        let con = (l1 - l_prev).abs() / l_prev.abs().max(1.0);
        trace.push(IterationRecord {
            iteration: j,
            surrogate: l1,
            con,
            r_diag: phi_new.r_a.diagonal().iter().cloned().collect(),
            q_diag: phi_new.q_a.diagonal().iter().cloned().collect(),
        });
        prev_phi = std::mem::replace(&mut phi, phi_new);
        iterations = j;
        if con < opts.tol {
            converged = true;
            break;
        }
        l_prev = l1;
    }

    let final_pass = run_pass(data, model, cfg, &phi, &PassOptions { keep_trajectory: true })?;
    Ok(BemResult {
        smoothed: final_pass.smoothed.expect("trajectory requested"),
        phi,
        trace,
        iterations,
        converged,
        failure,
    })
}

/// Virtual channel selector within the full-field map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VirtualKind {
    Stress,
    Strain,
    Disp,
    Vel,
    Acc,
}

/// One requested virtual channel (`index` is zero-based within its kind).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VirtualChannel {
    pub kind: VirtualKind,
    pub index: usize,
}

/// Per-step Gaussian posterior of the requested virtual channels.
#[derive(Debug, Clone)]
pub struct VirtualSeries {
    pub channels: Vec<VirtualChannel>,
    /// Row k holds the posterior mean at time index k (row 0 = initial).
    pub mean: DMatrix<f64>,
    /// Matching posterior standard deviations.
    pub std: DMatrix<f64>,
}

fn virtual_row_index(model: &StructuralModel, ch: &VirtualChannel) -> Result<usize> {
    let n_sigma = model.stress_map().nrows();
    let n_eps = model.strain_map().nrows();
    let nd = model.n_dof();
    let (base, count) = match ch.kind {
        VirtualKind::Stress => (0, n_sigma),
        VirtualKind::Strain => (n_sigma, n_eps),
        VirtualKind::Disp => (n_sigma + n_eps, nd),
        VirtualKind::Vel => (n_sigma + n_eps + nd, nd),
        VirtualKind::Acc => (n_sigma + n_eps + 2 * nd, nd),
    };
    if ch.index >= count {
        return Err(Error::InvalidData(format!(
            "virtual channel index {} out of range ({count} channels of that kind)",
            ch.index
        )));
    }
    Ok(base + ch.index)
}

/// Maps a smoothed trajectory to the requested virtual channels.
pub fn virtual_series(
    smoothed: &[GaussianEstimate],
    model: &StructuralModel,
    channels: &[VirtualChannel],
) -> Result<VirtualSeries> {
    let rows: Vec<usize> = channels
        .iter()
        .map(|ch| virtual_row_index(model, ch))
        .collect::<Result<_>>()?;
    let mut mean = DMatrix::zeros(smoothed.len(), channels.len());
    let mut std = DMatrix::zeros(smoothed.len(), channels.len());
    for (k, est) in smoothed.iter().enumerate() {
        let (m, cov) = model.virtual_posterior(est)?;
        for (c, &row) in rows.iter().enumerate() {
            mean[(k, c)] = m[row];
            std[(k, c)] = cov[(row, row)].max(0.0).sqrt();
        }
    }
    Ok(VirtualSeries { channels: channels.to_vec(), mean, std })
}

/// Virtual-sensing output for a finished identification run.
pub fn emit_virtual(
    result: &BemResult,
    model: &StructuralModel,
    channels: &[VirtualChannel],
) -> Result<VirtualSeries> {
    virtual_series(&result.smoothed, model, channels)
}
