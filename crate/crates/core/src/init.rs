//! Steady-state noise initializer: with the structural parameters frozen at
//! a nominal value, the reduced (state + input) model is time-invariant, so
//! stationary filter/smoother gains follow from Riccati and Stein solutions
//! and the noise covariances admit the same closed-form updates as the main
//! loop at a fraction of the cost.

use nalgebra::{DMatrix, DVector};

use crate::em::HyperParams;
use crate::matcore::{self, trace_solve, SpdFactor};
use crate::model::{SensorConfig, StructuralModel};
use crate::sim::Dataset;
use crate::{Error, Result};

/// Time-invariant reduced model over `zeta = [z; p]`.
#[derive(Debug, Clone)]
pub struct ReducedModel {
    /// Reduced transition matrix `[[A, B], [0, I]]`.
    pub a_z: DMatrix<f64>,
    /// Reduced observation matrix (physical rows, then pseudo rows).
    pub g_z: DMatrix<f64>,
    /// Reduced state length `2 N_d + N_p`.
    pub n_zeta: usize,
}

/// Freezes the parameters at `theta0` and assembles the reduced pair.
pub fn reduce_model(
    model: &StructuralModel,
    cfg: &SensorConfig,
    theta0: &DVector<f64>,
) -> Result<ReducedModel> {
    let nz = model.n_states();
    let np = model.n_inputs();
    let n_zeta = nz + np;
    let disc = model.discretize_at(theta0)?;
    if !disc.a.iter().all(|x| x.is_finite()) || !disc.b.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("reduced-model discretization"));
    }
    let (g_c, j_c) = model.observation_matrices(cfg, theta0)?;

    let mut a_z = DMatrix::zeros(n_zeta, n_zeta);
    a_z.view_mut((0, 0), (nz, nz)).copy_from(&disc.a);
    a_z.view_mut((0, nz), (nz, np)).copy_from(&disc.b);
    for j in 0..np {
        a_z[(nz + j, nz + j)] = 1.0;
    }

    let n_obs = cfg.n_obs();
    let mut g_z = DMatrix::zeros(n_obs, n_zeta);
    g_z.view_mut((0, 0), (cfg.n_meas(), nz)).copy_from(&g_c);
    g_z.view_mut((0, nz), (cfg.n_meas(), np)).copy_from(&j_c);
    for i in 0..cfg.n_pseudo {
        g_z[(cfg.n_meas() + i, nz + i)] = 1.0;
    }
    Ok(ReducedModel { a_z, g_z, n_zeta })
}

/// Stationary filter/smoother quantities of the reduced model.
#[derive(Debug, Clone)]
pub struct StationarySet {
    /// Stationary predictive covariance (Riccati fixed point).
    pub p_pred: DMatrix<f64>,
    /// Stationary filter gain.
    pub k_gain: DMatrix<f64>,
    /// Stationary filtered covariance.
    pub p_filt: DMatrix<f64>,
    /// Stationary smoothing gain.
    pub l_gain: DMatrix<f64>,
    /// Stationary one-lag smoothed covariance (Stein solution).
    pub p_smooth: DMatrix<f64>,
}

/// Chains the Riccati solution into the stationary gains and the Stein
/// equation for the smoothed covariance.
pub fn stationary_gains(
    rm: &ReducedModel,
    q_z: &DMatrix<f64>,
    r_a: &DMatrix<f64>,
) -> Result<StationarySet> {
    let dare = matcore::solve_dare(&rm.a_z, &rm.g_z, q_z, r_a)?;
    let p_pred = dare.p_pred;

    let gp = &rm.g_z * &p_pred;
    let mut innov = &gp * rm.g_z.transpose() + r_a;
    matcore::symmetrize(&mut innov);
    let innov_fact = SpdFactor::new(&innov)
        .map_err(|_| Error::NotPositiveDefinite("stationary innovation covariance".into()))?;
    // K = P- G^T S^{-1} = (S^{-1} G P-)^T
    let k_gain = innov_fact.solve_mat(&gp).transpose();

    let mut p_filt = &p_pred - &k_gain * &gp;
    matcore::symmetrize(&mut p_filt);

    // L = P A^T (P-)^{-1} = ((P-)^{-1} A P)^T
    let pred_fact = SpdFactor::new(&p_pred)
        .map_err(|_| Error::NotPositiveDefinite("stationary predictive covariance".into()))?;
    let l_gain = pred_fact.solve_mat(&(&rm.a_z * &p_filt)).transpose();

    // Stationary smoothed covariance: L P^s L^T - P^s + (P - L P- L^T) = 0.
    let mut stein_c = &p_filt - &l_gain * &p_pred * l_gain.transpose();
    matcore::symmetrize(&mut stein_c);
    let p_smooth = matcore::solve_stein(&l_gain, &stein_c)?;

    Ok(StationarySet { p_pred, k_gain, p_filt, l_gain, p_smooth })
}

/// Options for the initializer loop (convergence semantics shared with the
/// main loop).
#[derive(Debug, Clone)]
pub struct InitializerOptions {
    pub tol: f64,
    pub itrmax: usize,
    /// Initial reduced-state mean (defaults to rest).
    pub mu_zeta0: Option<DVector<f64>>,
}

impl Default for InitializerOptions {
    fn default() -> Self {
        Self { tol: 2e-4, itrmax: 200, mu_zeta0: None }
    }
}

/// Per-iteration diagnostics of the initializer.
#[derive(Debug, Clone)]
pub struct InitializerRecord {
    pub iteration: usize,
    pub surrogate: f64,
    pub con: f64,
    pub r_diag: Vec<f64>,
    pub q_diag: Vec<f64>,
}

/// Converged (or best-effort) stationary noise estimates.
#[derive(Debug, Clone)]
pub struct InitializerOutcome {
    /// Reduced process noise estimate.
    pub q_zeta: DMatrix<f64>,
    /// Observation noise estimate (physical + pseudo rows).
    pub r_a: DMatrix<f64>,
    /// Smoothed initial reduced-state mean.
    pub mu_zeta: DVector<f64>,
    /// Stationary smoothed covariance (initial-state covariance estimate).
    pub p_zeta: DMatrix<f64>,
    /// Stationary set of the final iteration.
    pub stationary: StationarySet,
    pub trace: Vec<InitializerRecord>,
    pub iterations: usize,
    pub converged: bool,
    /// Diagnostic when the loop stopped on a numerical failure.
    pub failure: Option<String>,
}

impl InitializerOutcome {
    /// Embeds the reduced estimates into full augmented hyperparameters:
    /// the state and input blocks (including their cross terms) come from
    /// the initializer, the untouched parameter blocks are supplied as
    /// diagonals, and parameter cross blocks stay zero.
    pub fn to_hyperparams(
        &self,
        model: &StructuralModel,
        theta0: &DVector<f64>,
        q_theta_diag: &DVector<f64>,
        p0_theta_diag: &DVector<f64>,
    ) -> Result<HyperParams> {
        let (nz, nt, np) = (model.n_states(), model.n_params(), model.n_inputs());
        if theta0.len() != nt || q_theta_diag.len() != nt || p0_theta_diag.len() != nt {
            return Err(Error::Dimension("parameter block lengths do not match the model".into()));
        }
        if self.q_zeta.nrows() != nz + np {
            return Err(Error::Dimension("initializer output does not match the model".into()));
        }
        let n_aug = nz + nt + np;

        let embed = |reduced: &DMatrix<f64>, theta_diag: &DVector<f64>| {
            let mut full = DMatrix::zeros(n_aug, n_aug);
            full.view_mut((0, 0), (nz, nz)).copy_from(&reduced.view((0, 0), (nz, nz)));
            full.view_mut((0, nz + nt), (nz, np)).copy_from(&reduced.view((0, nz), (nz, np)));
            full.view_mut((nz + nt, 0), (np, nz)).copy_from(&reduced.view((nz, 0), (np, nz)));
            full.view_mut((nz + nt, nz + nt), (np, np))
                .copy_from(&reduced.view((nz, nz), (np, np)));
            for s in 0..nt {
                full[(nz + s, nz + s)] = theta_diag[s];
            }
            full
        };

        let mut mu0 = DVector::zeros(n_aug);
        mu0.rows_mut(0, nz).copy_from(&self.mu_zeta.rows(0, nz));
        mu0.rows_mut(nz, nt).copy_from(theta0);
        mu0.rows_mut(nz + nt, np).copy_from(&self.mu_zeta.rows(nz, np));

        Ok(HyperParams {
            mu0,
            p0: embed(&self.p_zeta, p0_theta_diag),
            q_a: embed(&self.q_zeta, q_theta_diag),
            r_a: self.r_a.clone(),
        })
    }
}

/// Surrogate of the reduced problem evaluated at the just-updated noise
/// estimates.
fn reduced_surrogate(
    n: usize,
    r_a: &DMatrix<f64>,
    q_z: &DMatrix<f64>,
    p0: &DMatrix<f64>,
    e0: &DMatrix<f64>,
    s_obs: &DMatrix<f64>,
    s_proc: &DMatrix<f64>,
) -> Result<f64> {
    let r_fact = SpdFactor::new(r_a)
        .map_err(|_| Error::NotPositiveDefinite("stationary R estimate".into()))?;
    let q_fact = SpdFactor::new(q_z)
        .map_err(|_| Error::NotPositiveDefinite("stationary Q estimate".into()))?;
    let p_fact = SpdFactor::new(p0)
        .map_err(|_| Error::NotPositiveDefinite("stationary initial covariance".into()))?;
    let nf = n as f64;
    let l = -0.5 * nf * r_fact.ln_det()
        - 0.5 * nf * q_fact.ln_det()
        - 0.5 * p_fact.ln_det()
        - 0.5 * trace_solve(&p_fact, e0)
        - 0.5 * trace_solve(&r_fact, s_obs)
        - 0.5 * trace_solve(&q_fact, s_proc);
    if !l.is_finite() {
        return Err(Error::NonFinite("initializer surrogate"));
    }
    Ok(l)
}

/// Runs the steady-state loop: stationary gains, constant-gain forward
/// recursion with one-lag smoothing, closed-form noise updates, until the
/// surrogate change stalls. A Riccati failure after the first iteration
/// returns the current best estimates flagged as non-converged.
pub fn run_initializer(
    data: &Dataset,
    model: &StructuralModel,
    cfg: &SensorConfig,
    theta0: &DVector<f64>,
    q0: &DMatrix<f64>,
    r0: &DMatrix<f64>,
    opts: &InitializerOptions,
) -> Result<InitializerOutcome> {
    let rm = reduce_model(model, cfg, theta0)?;
    let n_zeta = rm.n_zeta;
    let n_obs = cfg.n_obs();
    let n_meas = cfg.n_meas();
    if q0.nrows() != n_zeta || q0.ncols() != n_zeta {
        return Err(Error::Dimension(format!(
            "initial Q has order {}, reduced model needs {n_zeta}",
            q0.nrows()
        )));
    }
    if r0.nrows() != n_obs || r0.ncols() != n_obs {
        return Err(Error::Dimension(format!(
            "initial R has order {}, observations need {n_obs}",
            r0.nrows()
        )));
    }
    let obs = data.observations(cfg)?;
    let n = obs.nrows();
    if n == 0 {
        return Err(Error::InvalidData("empty dataset: nothing to initialize from".into()));
    }

    let mut q = q0.clone();
    let mut r = r0.clone();
    let mut mu_zeta = opts
        .mu_zeta0
        .clone()
        .unwrap_or_else(|| DVector::zeros(n_zeta));
    if mu_zeta.len() != n_zeta {
        return Err(Error::Dimension("initial reduced mean length mismatch".into()));
    }
    let mut p_zeta = DMatrix::<f64>::identity(n_zeta, n_zeta) * 1e-2;

    let mut l_prev = 1.0_f64;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut failure = None;
    let mut iterations = 0;
    let mut stationary: Option<StationarySet> = None;

    for j in 1..=opts.itrmax {
        let st = match stationary_gains(&rm, &q, &r) {
            Ok(st) => st,
            Err(e) => {
                if j > 1 {
                    failure = Some(e.to_string());
                    break;
                }
                return Err(e);
            }
        };

        // Constant-gain forward recursion with one-lag smoothing.
        let mut s_obs = DMatrix::<f64>::zeros(n_obs, n_obs);
        let mut s_proc = DMatrix::<f64>::zeros(n_zeta, n_zeta);
        let mut zeta = mu_zeta.clone();
        let mut zeta01: Option<DVector<f64>> = None;
        let mut lag: Option<(DVector<f64>, DVector<f64>)> = None;

        for k in 1..=n {
            let mut d = DVector::zeros(n_obs);
            d.rows_mut(0, n_meas).copy_from(&obs.row(k - 1).transpose());
            let pred = &rm.a_z * &zeta;
            let filt = &pred + &st.k_gain * (&d - &rm.g_z * &pred);
            let smoothed_prev = &zeta + &st.l_gain * (&filt - &pred);
            if k == 1 {
                zeta01 = Some(smoothed_prev.clone());
            }
            if let Some((lag_sm, lag_d)) = lag.take() {
                let resid_obs = &lag_d - &rm.g_z * &smoothed_prev;
                s_obs += &resid_obs * resid_obs.transpose();
                let resid_proc = &smoothed_prev - &rm.a_z * &lag_sm;
                s_proc += &resid_proc * resid_proc.transpose();
            }
            lag = Some((smoothed_prev, d));
            zeta = filt;
        }
        let (lag_sm, lag_d) = lag.take().expect("n >= 1");
        let resid_obs = &lag_d - &rm.g_z * &zeta;
        s_obs += &resid_obs * resid_obs.transpose();
        let resid_proc = &zeta - &rm.a_z * &lag_sm;
        s_proc += &resid_proc * resid_proc.transpose();

        if !(s_obs.iter().all(|x| x.is_finite()) && s_proc.iter().all(|x| x.is_finite())) {
            if j > 1 {
                failure = Some("non-finite stationary recursion".into());
                break;
            }
            return Err(Error::Divergence { step: n, what: "stationary recursion".into() });
        }

        let nf = n as f64;
        // Per-sample covariance contributions are stationary constants.
        let obs_cov_term = &rm.g_z * &st.p_smooth * rm.g_z.transpose();
        let proc_cov_term = {
            let alp = &rm.a_z * &st.l_gain * &st.p_smooth;
            &st.p_smooth + &rm.a_z * &st.p_smooth * rm.a_z.transpose() - &alp - alp.transpose()
        };
        let mut r_new = &s_obs / nf + &obs_cov_term;
        matcore::symmetrize(&mut r_new);
        let mut q_new = &s_proc / nf + &proc_cov_term;
        matcore::symmetrize(&mut q_new);
        let mu_new = zeta01.expect("n >= 1");
        let p_new = st.p_smooth.clone();

        let diff = &mu_new - &mu_new; // M-step sets the mean exactly
        let e0 = &p_new + &diff * diff.transpose();
        let s_obs_total = &s_obs + &obs_cov_term * nf;
        let s_proc_total = &s_proc + &proc_cov_term * nf;
        let l1 = match reduced_surrogate(n, &r_new, &q_new, &p_new, &e0, &s_obs_total, &s_proc_total)
        {
            Ok(l) => l,
            Err(e) => {
                if j > 1 {
                    failure = Some(e.to_string());
                    break;
                }
                return Err(e);
            }
        };
        let con = (l1 - l_prev).abs() / l_prev.abs().max(1.0);
        trace.push(InitializerRecord {
            iteration: j,
            surrogate: l1,
            con,
            r_diag: r_new.diagonal().iter().cloned().collect(),
            q_diag: q_new.diagonal().iter().cloned().collect(),
        });

        q = q_new;
        r = r_new;
        mu_zeta = mu_new;
        p_zeta = p_new;
        stationary = Some(st);
        iterations = j;
        if con < opts.tol {
            converged = true;
            break;
        }
        l_prev = l1;
    }

    let stationary = stationary.ok_or(Error::RiccatiNotDetectable)?;
    Ok(InitializerOutcome {
        q_zeta: q,
        r_a: r,
        mu_zeta,
        p_zeta,
        stationary,
        trace,
        iterations,
        converged,
        failure,
    })
}
