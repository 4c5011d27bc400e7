//! Structural model assembly and the augmented state-space machinery:
//! substructure-parameterized stiffness/damping, continuous and discretized
//! dynamics, the augmented process/observation models with their Jacobians,
//! and virtual-sensing maps for unmeasured response channels.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::filter::GaussianEstimate;
use crate::matcore;
use crate::{Error, Result};

/// Relative tolerance used to decide whether a cached discretization is
/// still valid for a new parameter vector.
const CACHE_THETA_TOL: f64 = 1e-12;

/// Default relative step of the central differences taken through the
/// discretized transition matrices when differentiating with respect to the
/// structural parameters.
const DEFAULT_FD_REL_STEP: f64 = 1e-6;

/// Augmented state split into its dynamical, parameter, and input blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    /// Dynamical state (displacements then velocities), length `2 N_d`.
    pub z: DVector<f64>,
    /// Structural parameters (stiffness entries first, then damping).
    pub theta: DVector<f64>,
    /// Input forces, length `N_p`.
    pub p: DVector<f64>,
}

impl AugmentedState {
    /// Concatenates the blocks into a single augmented vector.
    pub fn to_vector(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.z.len() + self.theta.len() + self.p.len());
        out.rows_mut(0, self.z.len()).copy_from(&self.z);
        out.rows_mut(self.z.len(), self.theta.len()).copy_from(&self.theta);
        out.rows_mut(self.z.len() + self.theta.len(), self.p.len())
            .copy_from(&self.p);
        out
    }
}

/// Sensor layout: which strain/displacement/velocity/acceleration channels
/// are measured, plus the number of input pseudo-observations appended
/// after the physical rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorConfig {
    /// Indices into the strain-map rows.
    pub strain: Vec<usize>,
    /// Measured displacement DOFs.
    pub disp: Vec<usize>,
    /// Measured velocity DOFs.
    pub vel: Vec<usize>,
    /// Measured acceleration DOFs.
    pub acc: Vec<usize>,
    /// Number of zero-valued input pseudo-observations.
    pub n_pseudo: usize,
}

impl SensorConfig {
    /// Physical measurement count `N_m`.
    pub fn n_meas(&self) -> usize {
        self.strain.len() + self.disp.len() + self.vel.len() + self.acc.len()
    }

    /// Total observation count `N_m + N_pd`.
    pub fn n_obs(&self) -> usize {
        self.n_meas() + self.n_pseudo
    }

    pub(crate) fn validate(&self, model: &StructuralModel) -> Result<()> {
        let nd = model.n_dof();
        let n_eps = model.strain_map.nrows();
        if self.n_meas() == 0 {
            return Err(Error::InvalidModel("sensor configuration selects no channels".into()));
        }
        if let Some(&i) = self.strain.iter().find(|&&i| i >= n_eps) {
            return Err(Error::InvalidModel(format!(
                "strain sensor index {i} out of range (strain map has {n_eps} rows)"
            )));
        }
        for (name, sel) in [("disp", &self.disp), ("vel", &self.vel), ("acc", &self.acc)] {
            if let Some(&i) = sel.iter().find(|&&i| i >= nd) {
                return Err(Error::InvalidModel(format!(
                    "{name} sensor DOF {i} out of range for {nd} DOFs"
                )));
            }
        }
        if self.n_pseudo > model.n_inputs() {
            return Err(Error::InvalidModel(format!(
                "{} pseudo-observations exceed the {} unknown inputs",
                self.n_pseudo,
                model.n_inputs()
            )));
        }
        Ok(())
    }
}

/// Discretized transition pair at a fixed parameter vector.
#[derive(Debug, Clone)]
pub struct Discretized {
    /// State transition matrix `A(theta)`.
    pub a: DMatrix<f64>,
    /// Input-to-state matrix `B(theta)`.
    pub b: DMatrix<f64>,
}

/// Linear structural model with substructure-parameterized stiffness and
/// damping. Immutable once constructed.
#[derive(Debug, Clone)]
pub struct StructuralModel {
    mass: DMatrix<f64>,
    mass_inv: DMatrix<f64>,
    k0: DMatrix<f64>,
    c0: DMatrix<f64>,
    k_sub: Vec<DMatrix<f64>>,
    c_sub: Vec<DMatrix<f64>>,
    s_p: DMatrix<f64>,
    strain_map: DMatrix<f64>,
    stress_map: DMatrix<f64>,
    dt: f64,
    fd_rel_step: f64,
}

fn check_symmetric(name: &str, m: &DMatrix<f64>) -> Result<()> {
    let scale = 1.0 + m.norm();
    if (m - m.transpose()).norm() > 1e-10 * scale {
        return Err(Error::InvalidModel(format!("{name} is not symmetric")));
    }
    Ok(())
}

impl StructuralModel {
    /// Builds and validates a model. `k_sub`/`c_sub` are the substructure
    /// matrices multiplied by the stiffness/damping entries of the
    /// parameter vector, in that order.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mass: DMatrix<f64>,
        k0: DMatrix<f64>,
        c0: DMatrix<f64>,
        k_sub: Vec<DMatrix<f64>>,
        c_sub: Vec<DMatrix<f64>>,
        s_p: DMatrix<f64>,
        strain_map: DMatrix<f64>,
        stress_map: DMatrix<f64>,
        dt: f64,
    ) -> Result<Self> {
        let nd = mass.nrows();
        if mass.ncols() != nd {
            return Err(Error::InvalidModel("mass matrix must be square".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidModel(format!("dt = {dt} must be positive")));
        }
        check_symmetric("mass", &mass)?;
        let mass_inv = Cholesky::new(mass.clone())
            .ok_or_else(|| Error::InvalidModel("mass matrix is not positive definite".into()))?
            .inverse();
        for (name, m) in [("k0", &k0), ("c0", &c0)] {
            if m.nrows() != nd || m.ncols() != nd {
                return Err(Error::InvalidModel(format!("{name} must be {nd}x{nd}")));
            }
            check_symmetric(name, m)?;
        }
        for (name, subs) in [("k_sub", &k_sub), ("c_sub", &c_sub)] {
            for (s, m) in subs.iter().enumerate() {
                if m.nrows() != nd || m.ncols() != nd {
                    return Err(Error::InvalidModel(format!("{name}[{s}] must be {nd}x{nd}")));
                }
                check_symmetric(&format!("{name}[{s}]"), m)?;
            }
        }
        if s_p.nrows() != nd {
            return Err(Error::InvalidModel(format!(
                "force distribution has {} rows, expected {nd}",
                s_p.nrows()
            )));
        }
        if strain_map.nrows() > 0 && strain_map.ncols() != nd {
            return Err(Error::InvalidModel("strain map must have N_d columns".into()));
        }
        if stress_map.nrows() > 0 && stress_map.ncols() != nd {
            return Err(Error::InvalidModel("stress map must have N_d columns".into()));
        }
        let all_finite = mass.iter().all(|x| x.is_finite())
            && k0.iter().all(|x| x.is_finite())
            && c0.iter().all(|x| x.is_finite())
            && s_p.iter().all(|x| x.is_finite())
            && k_sub.iter().chain(c_sub.iter()).all(|m| m.iter().all(|x| x.is_finite()));
        if !all_finite {
            return Err(Error::NonFinite("structural model matrices"));
        }
        Ok(Self {
            mass,
            mass_inv,
            k0,
            c0,
            k_sub,
            c_sub,
            s_p,
            strain_map,
            stress_map,
            dt,
            fd_rel_step: DEFAULT_FD_REL_STEP,
        })
    }

    /// Overrides the relative step used for parameter derivatives of the
    /// discretized transition matrices.
    pub fn with_fd_rel_step(mut self, step: f64) -> Self {
        self.fd_rel_step = step;
        self
    }

    pub fn n_dof(&self) -> usize {
        self.mass.nrows()
    }

    /// Dynamical state length `2 N_d`.
    pub fn n_states(&self) -> usize {
        2 * self.n_dof()
    }

    pub fn n_stiffness_params(&self) -> usize {
        self.k_sub.len()
    }

    pub fn n_damping_params(&self) -> usize {
        self.c_sub.len()
    }

    /// Total parameter count `N_theta`.
    pub fn n_params(&self) -> usize {
        self.k_sub.len() + self.c_sub.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.s_p.ncols()
    }

    /// Augmented state length `N_xi = 2 N_d + N_theta + N_p`.
    pub fn n_augmented(&self) -> usize {
        self.n_states() + self.n_params() + self.n_inputs()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn mass(&self) -> &DMatrix<f64> {
        &self.mass
    }

    pub fn force_distribution(&self) -> &DMatrix<f64> {
        &self.s_p
    }

    pub fn strain_map(&self) -> &DMatrix<f64> {
        &self.strain_map
    }

    pub fn stress_map(&self) -> &DMatrix<f64> {
        &self.stress_map
    }

    /// Substructure stiffness matrix of stiffness parameter `s`.
    pub fn stiffness_substructure(&self, s: usize) -> &DMatrix<f64> {
        &self.k_sub[s]
    }

    /// Substructure damping matrix of damping parameter `s`.
    pub fn damping_substructure(&self, s: usize) -> &DMatrix<f64> {
        &self.c_sub[s]
    }

    fn check_theta(&self, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(Error::Dimension(format!(
                "parameter vector has {} entries, model expects {}",
                theta.len(),
                self.n_params()
            )));
        }
        if !theta.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        Ok(())
    }

    /// Assembles `K(theta) = K_0 + sum theta_s K_s`.
    pub fn stiffness_matrix(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_theta(theta)?;
        let mut k = self.k0.clone();
        for (s, sub) in self.k_sub.iter().enumerate() {
            k += sub * theta[s];
        }
        Ok(k)
    }

    /// Assembles `C(theta) = C_0 + sum theta_s C_s` over the damping block.
    pub fn damping_matrix(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_theta(theta)?;
        let nk = self.k_sub.len();
        let mut c = self.c0.clone();
        for (s, sub) in self.c_sub.iter().enumerate() {
            c += sub * theta[nk + s];
        }
        Ok(c)
    }

    /// Continuous-time pair `(A_c, B_c)` at the given parameters.
    pub fn continuous_ss(&self, theta: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let nd = self.n_dof();
        let np = self.n_inputs();
        let k = self.stiffness_matrix(theta)?;
        let c = self.damping_matrix(theta)?;
        let mut a_c = DMatrix::zeros(2 * nd, 2 * nd);
        a_c.view_mut((0, nd), (nd, nd)).copy_from(&DMatrix::identity(nd, nd));
        a_c.view_mut((nd, 0), (nd, nd)).copy_from(&(-&self.mass_inv * &k));
        a_c.view_mut((nd, nd), (nd, nd)).copy_from(&(-&self.mass_inv * &c));
        let mut b_c = DMatrix::zeros(2 * nd, np);
        b_c.view_mut((nd, 0), (nd, np)).copy_from(&(&self.mass_inv * &self.s_p));
        Ok((a_c, b_c))
    }

    /// Zero-order-hold transition pair at `theta`.
    pub fn discretize_at(&self, theta: &DVector<f64>) -> Result<Discretized> {
        let (a_c, b_c) = self.continuous_ss(theta)?;
        let (a, b) = matcore::discretize(&a_c, &b_c, self.dt)?;
        Ok(Discretized { a, b })
    }

    /// Splits an augmented vector into `(z, theta, p)` blocks.
    pub fn split_augmented(&self, xi: &DVector<f64>) -> Result<AugmentedState> {
        let (nz, nt, np) = (self.n_states(), self.n_params(), self.n_inputs());
        if xi.len() != nz + nt + np {
            return Err(Error::Dimension(format!(
                "augmented state has {} entries, expected {}",
                xi.len(),
                nz + nt + np
            )));
        }
        Ok(AugmentedState {
            z: xi.rows(0, nz).into_owned(),
            theta: xi.rows(nz, nt).into_owned(),
            p: xi.rows(nz + nt, np).into_owned(),
        })
    }

    /// One step of the augmented process model: the dynamical block follows
    /// the discretized dynamics at the state's own parameters, while the
    /// parameter and input blocks pass through (random-walk means).
    pub fn augmented_transition(
        &self,
        xi: &DVector<f64>,
        cache: &mut DiscretizationCache,
    ) -> Result<DVector<f64>> {
        let parts = self.split_augmented(xi)?;
        let disc = cache.get(self, &parts.theta)?;
        let z_next = &disc.a * &parts.z + &disc.b * &parts.p;
        let mut out = xi.clone();
        out.rows_mut(0, z_next.len()).copy_from(&z_next);
        if !out.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("augmented transition output"));
        }
        Ok(out)
    }

    /// Process Jacobian `F` at `xi`: the augmented system matrix plus the
    /// parameter sensitivity of the dynamical block, the latter by central
    /// differences through the ZOH discretization.
    pub fn process_jacobian(
        &self,
        xi: &DVector<f64>,
        cache: &mut DiscretizationCache,
    ) -> Result<DMatrix<f64>> {
        let (nz, nt, np) = (self.n_states(), self.n_params(), self.n_inputs());
        let n = nz + nt + np;
        let parts = self.split_augmented(xi)?;

        let mut f = DMatrix::zeros(n, n);
        {
            let disc = cache.get(self, &parts.theta)?;
            f.view_mut((0, 0), (nz, nz)).copy_from(&disc.a);
            f.view_mut((0, nz + nt), (nz, np)).copy_from(&disc.b);
        }
        for i in 0..(nt + np) {
            f[(nz + i, nz + i)] = 1.0;
        }

        for s in 0..nt {
            let h = self.fd_rel_step * (1.0 + parts.theta[s].abs());
            let mut plus = parts.theta.clone();
            plus[s] += h;
            let mut minus = parts.theta.clone();
            minus[s] -= h;
            let dp = self.discretize_at(&plus)?;
            let dm = self.discretize_at(&minus)?;
            let col = ((&dp.a - &dm.a) * &parts.z + (&dp.b - &dm.b) * &parts.p) / (2.0 * h);
            f.view_mut((0, nz + s), (nz, 1)).copy_from(&col);
        }

        if !f.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("process Jacobian"));
        }
        Ok(f)
    }

    fn selection_matrix(rows: &[usize], width: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(rows.len(), width);
        for (r, &i) in rows.iter().enumerate() {
            m[(r, i)] = 1.0;
        }
        m
    }

    /// Continuous observation pair `(G_c, J_c)` stacking strain,
    /// displacement, velocity, and acceleration rows.
    pub fn observation_matrices(
        &self,
        cfg: &SensorConfig,
        theta: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        cfg.validate(self)?;
        let nd = self.n_dof();
        let np = self.n_inputs();
        let nm = cfg.n_meas();
        let k = self.stiffness_matrix(theta)?;
        let c = self.damping_matrix(theta)?;

        let mut g_c = DMatrix::zeros(nm, 2 * nd);
        let mut j_c = DMatrix::zeros(nm, np);
        let mut row = 0;

        if !cfg.strain.is_empty() {
            let s_eps = Self::selection_matrix(&cfg.strain, self.strain_map.nrows());
            let block = &s_eps * &self.strain_map;
            g_c.view_mut((row, 0), (cfg.strain.len(), nd)).copy_from(&block);
            row += cfg.strain.len();
        }
        if !cfg.disp.is_empty() {
            let s_d = Self::selection_matrix(&cfg.disp, nd);
            g_c.view_mut((row, 0), (cfg.disp.len(), nd)).copy_from(&s_d);
            row += cfg.disp.len();
        }
        if !cfg.vel.is_empty() {
            let s_v = Self::selection_matrix(&cfg.vel, nd);
            g_c.view_mut((row, nd), (cfg.vel.len(), nd)).copy_from(&s_v);
            row += cfg.vel.len();
        }
        if !cfg.acc.is_empty() {
            let s_a = Self::selection_matrix(&cfg.acc, nd);
            let sam = &s_a * &self.mass_inv;
            g_c.view_mut((row, 0), (cfg.acc.len(), nd)).copy_from(&(-&sam * &k));
            g_c.view_mut((row, nd), (cfg.acc.len(), nd)).copy_from(&(-&sam * &c));
            j_c.view_mut((row, 0), (cfg.acc.len(), np)).copy_from(&(&sam * &self.s_p));
        }
        Ok((g_c, j_c))
    }

    /// Augmented observation map `h(xi)`: physical rows per the observation
    /// model, then pseudo rows selecting the input block (targets are zero).
    pub fn observation_map(&self, cfg: &SensorConfig, xi: &DVector<f64>) -> Result<DVector<f64>> {
        let parts = self.split_augmented(xi)?;
        let (g_c, j_c) = self.observation_matrices(cfg, &parts.theta)?;
        let mut out = DVector::zeros(cfg.n_obs());
        let phys = &g_c * &parts.z + &j_c * &parts.p;
        out.rows_mut(0, phys.len()).copy_from(&phys);
        for i in 0..cfg.n_pseudo {
            out[cfg.n_meas() + i] = parts.p[i];
        }
        Ok(out)
    }

    /// Observation Jacobian `H` at `xi`. The parameter sensitivity is
    /// analytic: the map is bilinear in `(theta, z)` and only acceleration
    /// rows depend on `theta`.
    pub fn observation_jacobian(
        &self,
        cfg: &SensorConfig,
        xi: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        let parts = self.split_augmented(xi)?;
        let (nz, nt, np) = (self.n_states(), self.n_params(), self.n_inputs());
        let nd = self.n_dof();
        let (g_c, j_c) = self.observation_matrices(cfg, &parts.theta)?;

        let mut h = DMatrix::zeros(cfg.n_obs(), nz + nt + np);
        h.view_mut((0, 0), (cfg.n_meas(), nz)).copy_from(&g_c);
        h.view_mut((0, nz + nt), (cfg.n_meas(), np)).copy_from(&j_c);

        if !cfg.acc.is_empty() && nt > 0 {
            let acc_row0 = cfg.strain.len() + cfg.disp.len() + cfg.vel.len();
            let s_a = Self::selection_matrix(&cfg.acc, nd);
            let sam = &s_a * &self.mass_inv;
            let x = parts.z.rows(0, nd);
            let v = parts.z.rows(nd, nd);
            let nk = self.k_sub.len();
            for s in 0..nk {
                let col = -(&sam * (&self.k_sub[s] * x));
                h.view_mut((acc_row0, nz + s), (cfg.acc.len(), 1)).copy_from(&col);
            }
            for s in 0..self.c_sub.len() {
                let col = -(&sam * (&self.c_sub[s] * v));
                h.view_mut((acc_row0, nz + nk + s), (cfg.acc.len(), 1)).copy_from(&col);
            }
        }
        for i in 0..cfg.n_pseudo {
            h[(cfg.n_meas() + i, nz + nt + i)] = 1.0;
        }
        Ok(h)
    }

    /// Full-field virtual-sensing matrix mapping the augmented state to
    /// stress, strain, displacement, velocity, and acceleration channels.
    pub fn virtual_map(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        let nd = self.n_dof();
        let (nz, nt, np) = (self.n_states(), self.n_params(), self.n_inputs());
        let n_sigma = self.stress_map.nrows();
        let n_eps = self.strain_map.nrows();
        let k = self.stiffness_matrix(theta)?;
        let c = self.damping_matrix(theta)?;

        let n_e = n_sigma + n_eps + 3 * nd;
        let mut g = DMatrix::zeros(n_e, nz + nt + np);
        let mut row = 0;
        g.view_mut((row, 0), (n_sigma, nd)).copy_from(&self.stress_map);
        row += n_sigma;
        g.view_mut((row, 0), (n_eps, nd)).copy_from(&self.strain_map);
        row += n_eps;
        g.view_mut((row, 0), (nd, nd)).copy_from(&DMatrix::identity(nd, nd));
        row += nd;
        g.view_mut((row, nd), (nd, nd)).copy_from(&DMatrix::identity(nd, nd));
        row += nd;
        g.view_mut((row, 0), (nd, nd)).copy_from(&(-&self.mass_inv * &k));
        g.view_mut((row, nd), (nd, nd)).copy_from(&(-&self.mass_inv * &c));
        g.view_mut((row, nz + nt), (nd, np)).copy_from(&(&self.mass_inv * &self.s_p));
        Ok(g)
    }

    /// Linearization of the virtual-sensing map at `xi` (acceleration rows
    /// gain analytic parameter columns).
    pub fn virtual_jacobian(&self, xi: &DVector<f64>) -> Result<DMatrix<f64>> {
        let parts = self.split_augmented(xi)?;
        let nd = self.n_dof();
        let nz = self.n_states();
        let mut j = self.virtual_map(&parts.theta)?;
        let acc_row0 = j.nrows() - nd;
        let x = parts.z.rows(0, nd);
        let v = parts.z.rows(nd, nd);
        let nk = self.k_sub.len();
        for s in 0..nk {
            let col = -(&self.mass_inv * (&self.k_sub[s] * x));
            j.view_mut((acc_row0, nz + s), (nd, 1)).copy_from(&col);
        }
        for s in 0..self.c_sub.len() {
            let col = -(&self.mass_inv * (&self.c_sub[s] * v));
            j.view_mut((acc_row0, nz + nk + s), (nd, 1)).copy_from(&col);
        }
        Ok(j)
    }

    /// Posterior of the virtual channels given a smoothed state estimate:
    /// mean through the virtual map at the estimated parameters, covariance
    /// through the linearized map.
    pub fn virtual_posterior(
        &self,
        smoothed: &GaussianEstimate,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let parts = self.split_augmented(&smoothed.mean)?;
        let g = self.virtual_map(&parts.theta)?;
        let mean = &g * &smoothed.mean;
        let j = self.virtual_jacobian(&smoothed.mean)?;
        let mut cov = &j * &smoothed.cov * j.transpose();
        matcore::symmetrize(&mut cov);
        Ok((mean, cov))
    }
}

/// Small per-run cache of discretized transition pairs keyed on the
/// parameter vector. Two slots cover the filter's alternation between the
/// filtered and smoothed expansion points.
#[derive(Debug, Default)]
pub struct DiscretizationCache {
    slots: Vec<(DVector<f64>, Discretized)>,
}

impl DiscretizationCache {
    pub fn new() -> Self {
        Self { slots: Vec::with_capacity(2) }
    }

    fn matches(a: &DVector<f64>, b: &DVector<f64>) -> bool {
        a.len() == b.len()
            && a.iter()
                .zip(b.iter())
                .all(|(x, y)| (x - y).abs() <= CACHE_THETA_TOL * (1.0 + y.abs()))
    }

    /// Returns the discretization at `theta`, recomputing when no cached
    /// entry matches within the refresh tolerance.
    pub fn get(&mut self, model: &StructuralModel, theta: &DVector<f64>) -> Result<&Discretized> {
        if let Some(pos) = self.slots.iter().position(|(t, _)| Self::matches(theta, t)) {
            let entry = self.slots.remove(pos);
            self.slots.insert(0, entry);
            return Ok(&self.slots[0].1);
        }
        let disc = model.discretize_at(theta)?;
        if self.slots.len() >= 2 {
            self.slots.pop();
        }
        self.slots.insert(0, (theta.clone(), disc));
        Ok(&self.slots[0].1)
    }
}

/// Modal frequencies (Hz, ascending) and mode shapes of the generalized
/// problem `K phi = omega^2 M phi`.
#[derive(Debug, Clone)]
pub struct ModalData {
    pub frequencies_hz: Vec<f64>,
    pub shapes: Vec<DVector<f64>>,
}

/// Solves the generalized symmetric eigenproblem through a Cholesky
/// transform of the mass matrix.
pub fn modal_analysis(mass: &DMatrix<f64>, stiffness: &DMatrix<f64>) -> Result<ModalData> {
    let n = mass.nrows();
    if stiffness.nrows() != n || stiffness.ncols() != n || mass.ncols() != n {
        return Err(Error::Dimension("modal analysis: M and K must be square and equal".into()));
    }
    let chol = Cholesky::new(mass.clone())
        .ok_or_else(|| Error::InvalidModel("mass matrix is not positive definite".into()))?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidModel("mass Cholesky factor not invertible".into()))?;
    let mut b = &l_inv * stiffness * l_inv.transpose();
    matcore::symmetrize(&mut b);
    let eig = b.symmetric_eigen();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
    let mut frequencies_hz = Vec::with_capacity(n);
    let mut shapes = Vec::with_capacity(n);
    for &i in &order {
        let lambda = eig.eigenvalues[i].max(0.0);
        frequencies_hz.push(lambda.sqrt() / (2.0 * std::f64::consts::PI));
        let shape = l_inv.transpose() * eig.eigenvectors.column(i);
        shapes.push(shape);
    }
    Ok(ModalData { frequencies_hz, shapes })
}

/// Substructure matrices of a ground-anchored spring chain: element `0`
/// ties DOF `0` to ground, element `s` couples DOF `s-1` and `s`.
pub fn chain_substructures(n_dof: usize) -> Vec<DMatrix<f64>> {
    (0..n_dof)
        .map(|s| {
            let mut m = DMatrix::zeros(n_dof, n_dof);
            if s == 0 {
                m[(0, 0)] = 1.0;
            } else {
                m[(s - 1, s - 1)] = 1.0;
                m[(s, s)] = 1.0;
                m[(s - 1, s)] = -1.0;
                m[(s, s - 1)] = -1.0;
            }
            m
        })
        .collect()
}

/// Damping substructures parameterized by modal damping ratios: mode `i`
/// contributes `(M phi phi^T M / (phi^T M phi)) * 4 pi f_i`, so the
/// assembled damping matrix is the modal-ratio sum at the nominal modes.
pub fn modal_damping_substructures(
    mass: &DMatrix<f64>,
    nominal_stiffness: &DMatrix<f64>,
) -> Result<Vec<DMatrix<f64>>> {
    let modal = modal_analysis(mass, nominal_stiffness)?;
    let mut subs = Vec::with_capacity(modal.frequencies_hz.len());
    for (f_hz, phi) in modal.frequencies_hz.iter().zip(modal.shapes.iter()) {
        let m_phi = mass * phi;
        let denom = phi.dot(&m_phi);
        let outer = &m_phi * m_phi.transpose() / denom;
        subs.push(outer * (4.0 * std::f64::consts::PI * f_hz));
    }
    Ok(subs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// Uniform chain with all stiffness/damping entries unknown.
    pub(crate) fn chain_model(n: usize, dt: f64) -> StructuralModel {
        let subs = chain_substructures(n);
        let mut s_p = DMatrix::zeros(n, 1);
        s_p[(0, 0)] = 1.0;
        StructuralModel::new(
            DMatrix::identity(n, n),
            DMatrix::zeros(n, n),
            DMatrix::zeros(n, n),
            subs.clone(),
            subs,
            s_p,
            DMatrix::zeros(0, n),
            DMatrix::zeros(0, n),
            dt,
        )
        .unwrap()
    }

    fn nominal_theta(model: &StructuralModel, k: f64, c: f64) -> DVector<f64> {
        let mut theta = DVector::zeros(model.n_params());
        for s in 0..model.n_stiffness_params() {
            theta[s] = k;
        }
        for s in 0..model.n_damping_params() {
            theta[model.n_stiffness_params() + s] = c;
        }
        theta
    }

    fn sdof_model(dt: f64) -> StructuralModel {
        // Single DOF with unknown stiffness and damping scalars.
        StructuralModel::new(
            DMatrix::identity(1, 1),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            vec![DMatrix::identity(1, 1)],
            vec![DMatrix::identity(1, 1)],
            DMatrix::identity(1, 1),
            DMatrix::zeros(0, 1),
            DMatrix::zeros(0, 1),
            dt,
        )
        .unwrap()
    }

    #[test]
    fn stiffness_at_zero_theta_is_k0() {
        let n = 4;
        let mut k0 = DMatrix::zeros(n, n);
        k0[(0, 0)] = 7.0;
        let model = StructuralModel::new(
            DMatrix::identity(n, n),
            k0.clone(),
            DMatrix::zeros(n, n),
            chain_substructures(n),
            vec![],
            DMatrix::zeros(n, 1),
            DMatrix::zeros(0, n),
            DMatrix::zeros(0, n),
            0.01,
        )
        .unwrap();
        let k = model.stiffness_matrix(&DVector::zeros(n)).unwrap();
        assert_relative_eq!(k, k0, epsilon = 1e-14);
    }

    #[test]
    fn chain_assembly_matches_direct_oracle() {
        let model = chain_model(8, 0.001);
        let theta = nominal_theta(&model, 1000.0, 1.0);
        let k = model.stiffness_matrix(&theta).unwrap();
        for i in 0..8 {
            let expected = if i < 7 { 2000.0 } else { 1000.0 };
            assert_relative_eq!(k[(i, i)], expected, epsilon = 1e-12);
            if i < 7 {
                assert_relative_eq!(k[(i, i + 1)], -1000.0, epsilon = 1e-12);
            }
        }
        let c = model.damping_matrix(&theta).unwrap();
        for i in 0..8 {
            let expected = if i < 7 { 2.0 } else { 1.0 };
            assert_relative_eq!(c[(i, i)], expected, epsilon = 1e-12);
        }
        assert!((&k - k.transpose()).norm() < 1e-12);
        assert!((&c - c.transpose()).norm() < 1e-12);
    }

    #[test]
    fn shear_frame_stiffness_pattern() {
        // K = [[k1+k2, -k2, 0], [-k2, k2+k3, -k3], [0, -k3, k3]]
        let subs = chain_substructures(3);
        let model = StructuralModel::new(
            DMatrix::from_diagonal(&DVector::from_vec(vec![5.63, 6.03, 4.66])),
            DMatrix::zeros(3, 3),
            DMatrix::zeros(3, 3),
            subs,
            vec![],
            DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]),
            DMatrix::zeros(0, 3),
            DMatrix::zeros(0, 3),
            0.005,
        )
        .unwrap();
        let theta = DVector::from_vec(vec![11.0, 7.0, 3.0]);
        let k = model.stiffness_matrix(&theta).unwrap();
        let expected =
            DMatrix::from_row_slice(3, 3, &[18.0, -7.0, 0.0, -7.0, 10.0, -3.0, 0.0, -3.0, 3.0]);
        assert_relative_eq!(k, expected, epsilon = 1e-12);
    }

    #[test]
    fn modal_damping_matches_eigen_oracle() {
        let mass = DMatrix::from_diagonal(&DVector::from_vec(vec![5.63, 6.03, 4.66]));
        let subs = chain_substructures(3);
        let mut k_nom = DMatrix::zeros(3, 3);
        for sub in &subs {
            k_nom += sub * 1.0e4;
        }
        let c_subs = modal_damping_substructures(&mass, &k_nom).unwrap();
        let ratios = [0.01, 0.02, 0.015];
        let mut c = DMatrix::zeros(3, 3);
        for (sub, xi) in c_subs.iter().zip(ratios.iter()) {
            c += sub * *xi;
        }
        // Oracle: modal damping of the assembled C equals the ratios.
        let modal = modal_analysis(&mass, &k_nom).unwrap();
        for (i, (f_hz, phi)) in modal.frequencies_hz.iter().zip(modal.shapes.iter()).enumerate() {
            let num = phi.dot(&(&c * phi));
            let den = phi.dot(&(&mass * phi));
            let omega = 2.0 * std::f64::consts::PI * f_hz;
            let xi_recovered = num / (2.0 * omega * den);
            assert_relative_eq!(xi_recovered, ratios[i], epsilon = 1e-10);
        }
        assert!((&c - c.transpose()).norm() < 1e-12);
        let eig = c.symmetric_eigen().eigenvalues;
        assert!(eig.iter().all(|&l| l >= -1e-12));
    }

    #[test]
    fn continuous_ss_single_dof_layout() {
        let model = sdof_model(0.001);
        let theta = DVector::from_vec(vec![1000.0, 1.0]);
        let (a_c, b_c) = model.continuous_ss(&theta).unwrap();
        let expected_a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1000.0, -1.0]);
        let expected_b = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        assert_relative_eq!(a_c, expected_a, epsilon = 1e-14);
        assert_relative_eq!(b_c, expected_b, epsilon = 1e-14);
    }

    #[test]
    fn eight_dof_modal_range_and_folding() {
        let model = chain_model(8, 0.001);
        let theta = nominal_theta(&model, 1000.0, 1.0);
        let k = model.stiffness_matrix(&theta).unwrap();
        let modal = modal_analysis(model.mass(), &k).unwrap();
        let min = modal.frequencies_hz.first().unwrap();
        let max = modal.frequencies_hz.last().unwrap();
        assert!((min - 0.93).abs() < 0.01, "min frequency {min}");
        assert!((max - 9.89).abs() < 0.01, "max frequency {max}");

        // Folding theta into K_0/C_0 yields the same continuous model.
        let c = model.damping_matrix(&theta).unwrap();
        let folded = StructuralModel::new(
            DMatrix::identity(8, 8),
            k,
            c,
            vec![],
            vec![],
            model.force_distribution().clone(),
            DMatrix::zeros(0, 8),
            DMatrix::zeros(0, 8),
            0.001,
        )
        .unwrap();
        let (a1, b1) = model.continuous_ss(&theta).unwrap();
        let (a2, b2) = folded.continuous_ss(&DVector::zeros(0)).unwrap();
        assert_relative_eq!(a1, a2, epsilon = 1e-12);
        assert_relative_eq!(b1, b2, epsilon = 1e-12);
    }

    #[test]
    fn discretize_matches_inverse_oracle_on_chain() {
        let model = chain_model(8, 0.001);
        let theta = nominal_theta(&model, 1000.0, 1.0);
        let (a_c, b_c) = model.continuous_ss(&theta).unwrap();
        let disc = model.discretize_at(&theta).unwrap();
        // Oracle: (A - I) A_c^{-1} B_c, valid since A_c is invertible here.
        let a_c_inv = a_c.clone().try_inverse().unwrap();
        let oracle = (&disc.a - DMatrix::identity(16, 16)) * &a_c_inv * &b_c;
        assert!((&disc.b - &oracle).norm() <= 1e-9 * oracle.norm());
    }

    #[test]
    fn transition_fixed_points_and_lti_iteration() {
        let model = chain_model(3, 0.002);
        let theta = nominal_theta(&model, 500.0, 0.5);
        let mut cache = DiscretizationCache::new();

        // z = 0, p = 0 maps to itself with theta unchanged.
        let xi0 = AugmentedState {
            z: DVector::zeros(6),
            theta: theta.clone(),
            p: DVector::zeros(1),
        }
        .to_vector();
        let next = model.augmented_transition(&xi0, &mut cache).unwrap();
        assert_relative_eq!(next, xi0, epsilon = 1e-14);

        // Fixed theta, constant p: iterating equals the explicit recursion.
        let disc = model.discretize_at(&theta).unwrap();
        let mut z = DVector::from_fn(6, |i, _| 0.1 * (i as f64 + 1.0));
        let p = DVector::from_element(1, 2.5);
        let mut xi =
            AugmentedState { z: z.clone(), theta: theta.clone(), p: p.clone() }.to_vector();
        for _ in 0..50 {
            xi = model.augmented_transition(&xi, &mut cache).unwrap();
            z = &disc.a * &z + &disc.b * &p;
        }
        let parts = model.split_augmented(&xi).unwrap();
        assert!((&parts.z - &z).norm() <= 1e-10 * (1.0 + z.norm()));
        assert_relative_eq!(parts.theta, theta, epsilon = 1e-14);

        // dt -> 0 approaches the identity map.
        let tiny = chain_model(3, 1e-9);
        let mut cache2 = DiscretizationCache::new();
        let xi_r = DVector::from_fn(tiny.n_augmented(), |i, _| 0.3 * (i as f64 - 2.0));
        let out = tiny.augmented_transition(&xi_r, &mut cache2).unwrap();
        assert!((&out - &xi_r).norm() < 1e-6 * (1.0 + xi_r.norm()));
    }

    /// Central-difference Jacobian of the full augmented transition.
    fn fd_process_jacobian(model: &StructuralModel, xi: &DVector<f64>) -> DMatrix<f64> {
        let n = xi.len();
        let mut j = DMatrix::zeros(n, n);
        let mut cache = DiscretizationCache::new();
        for col in 0..n {
            let h = 1e-6 * (1.0 + xi[col].abs());
            let mut plus = xi.clone();
            plus[col] += h;
            let mut minus = xi.clone();
            minus[col] -= h;
            let fp = model.augmented_transition(&plus, &mut cache).unwrap();
            let fm = model.augmented_transition(&minus, &mut cache).unwrap();
            j.set_column(col, &((fp - fm) / (2.0 * h)));
        }
        j
    }

    #[test]
    fn process_jacobian_matches_finite_differences() {
        let model = chain_model(8, 0.001);
        let mut rng = StdRng::seed_from_u64(42);
        let mut cache = DiscretizationCache::new();
        for _ in 0..3 {
            let mut xi = DVector::zeros(model.n_augmented());
            for i in 0..16 {
                xi[i] = rng.random_range(-0.01..0.01);
            }
            for s in 0..16 {
                xi[16 + s] = if s < 8 {
                    rng.random_range(800.0..1200.0)
                } else {
                    rng.random_range(0.5..1.5)
                };
            }
            xi[32] = rng.random_range(-5.0..5.0);
            let f = model.process_jacobian(&xi, &mut cache).unwrap();
            let fd = fd_process_jacobian(&model, &xi);
            let denom = 1.0 + fd.norm();
            assert!(
                (&f - &fd).norm() / denom < 1e-5,
                "Jacobian mismatch {}",
                (&f - &fd).norm() / denom
            );
        }
    }

    #[test]
    fn process_jacobian_known_system_is_augmented_matrix() {
        // With no unknown parameters the sensitivity term vanishes.
        let n = 3;
        let subs = chain_substructures(n);
        let mut k = DMatrix::zeros(n, n);
        for s in &subs {
            k += s * 800.0;
        }
        let model = StructuralModel::new(
            DMatrix::identity(n, n),
            k,
            DMatrix::identity(n, n) * 0.4,
            vec![],
            vec![],
            DMatrix::from_column_slice(n, 1, &[1.0, 0.0, 0.0]),
            DMatrix::zeros(0, n),
            DMatrix::zeros(0, n),
            0.002,
        )
        .unwrap();
        let mut cache = DiscretizationCache::new();
        let xi = DVector::from_fn(model.n_augmented(), |i, _| 0.1 * i as f64);
        let f = model.process_jacobian(&xi, &mut cache).unwrap();
        let disc = model.discretize_at(&DVector::zeros(0)).unwrap();
        assert_relative_eq!(f.view((0, 0), (6, 6)).into_owned(), disc.a, epsilon = 1e-13);
        assert_relative_eq!(f.view((0, 6), (6, 1)).into_owned(), disc.b, epsilon = 1e-13);
        assert_relative_eq!(f[(6, 6)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn process_jacobian_zero_state_has_zero_theta_columns() {
        let model = chain_model(4, 0.001);
        let theta = nominal_theta(&model, 900.0, 1.1);
        let xi = AugmentedState { z: DVector::zeros(8), theta, p: DVector::zeros(1) }.to_vector();
        let mut cache = DiscretizationCache::new();
        let f = model.process_jacobian(&xi, &mut cache).unwrap();
        let theta_block = f.view((0, 8), (8, 8));
        assert!(theta_block.iter().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn observation_map_cases() {
        let model = sdof_model(0.001);
        let cfg =
            SensorConfig { strain: vec![], disp: vec![], vel: vec![], acc: vec![0], n_pseudo: 0 };
        // Acceleration row: -k x - c xdot + p for unit mass.
        let xi = AugmentedState {
            z: DVector::from_vec(vec![0.02, -0.3]),
            theta: DVector::from_vec(vec![1000.0, 1.0]),
            p: DVector::from_element(1, 4.0),
        }
        .to_vector();
        let h = model.observation_map(&cfg, &xi).unwrap();
        assert_relative_eq!(h[0], -1000.0 * 0.02 - 1.0 * (-0.3) + 4.0, epsilon = 1e-12);

        // Zero state maps to zero.
        let zero = DVector::zeros(model.n_augmented());
        let h0 = model.observation_map(&cfg, &zero).unwrap();
        assert!(h0.iter().all(|&x| x == 0.0));

        // Displacement-only selection semantics.
        let model3 = chain_model(3, 0.001);
        let cfg_d =
            SensorConfig { strain: vec![], disp: vec![2, 0], vel: vec![], acc: vec![], n_pseudo: 0 };
        let xi3 = DVector::from_fn(model3.n_augmented(), |i, _| i as f64 * 0.1);
        let h3 = model3.observation_map(&cfg_d, &xi3).unwrap();
        assert_relative_eq!(h3[0], xi3[2], epsilon = 1e-14);
        assert_relative_eq!(h3[1], xi3[0], epsilon = 1e-14);
    }

    #[test]
    fn observation_jacobian_analytic_cases() {
        let model = sdof_model(0.001);
        let cfg =
            SensorConfig { strain: vec![], disp: vec![], vel: vec![], acc: vec![0], n_pseudo: 1 };
        let x_hat = 0.07;
        let v_hat = -0.2;
        let xi = AugmentedState {
            z: DVector::from_vec(vec![x_hat, v_hat]),
            theta: DVector::from_vec(vec![1000.0, 1.0]),
            p: DVector::from_element(1, 1.0),
        }
        .to_vector();
        let h = model.observation_jacobian(&cfg, &xi).unwrap();
        // d h_acc / d k = -x_hat, d h_acc / d c = -v_hat.
        assert_relative_eq!(h[(0, 2)], -x_hat, epsilon = 1e-12);
        assert_relative_eq!(h[(0, 3)], -v_hat, epsilon = 1e-12);
        // Pseudo row selects the input block.
        assert_relative_eq!(h[(1, 4)], 1.0, epsilon = 1e-15);
        assert!(h.row(1).columns(0, 4).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn observation_jacobian_matches_finite_differences() {
        let model = chain_model(8, 0.001);
        let cfg = SensorConfig {
            strain: vec![],
            disp: vec![0, 3],
            vel: vec![],
            acc: vec![0, 3, 7],
            n_pseudo: 1,
        };
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..3 {
            let mut xi = DVector::zeros(model.n_augmented());
            for i in 0..16 {
                xi[i] = rng.random_range(-0.05..0.05);
            }
            for s in 0..16 {
                xi[16 + s] = if s < 8 {
                    rng.random_range(700.0..1300.0)
                } else {
                    rng.random_range(0.2..2.0)
                };
            }
            xi[32] = rng.random_range(-3.0..3.0);
            let h = model.observation_jacobian(&cfg, &xi).unwrap();
            let mut fd = DMatrix::zeros(cfg.n_obs(), xi.len());
            for col in 0..xi.len() {
                let step = 1e-6 * (1.0 + xi[col].abs());
                let mut plus = xi.clone();
                plus[col] += step;
                let mut minus = xi.clone();
                minus[col] -= step;
                let hp = model.observation_map(&cfg, &plus).unwrap();
                let hm = model.observation_map(&cfg, &minus).unwrap();
                fd.set_column(col, &((hp - hm) / (2.0 * step)));
            }
            assert!((&h - &fd).norm() / (1.0 + fd.norm()) < 1e-6);
        }
    }

    #[test]
    fn observation_linear_in_state_and_input_at_fixed_theta() {
        let model = chain_model(4, 0.001);
        let cfg = SensorConfig {
            strain: vec![],
            disp: vec![1],
            vel: vec![],
            acc: vec![0, 2],
            n_pseudo: 1,
        };
        let mut rng = StdRng::seed_from_u64(17);
        let theta = nominal_theta(&model, 950.0, 0.9);
        let mk = |rng: &mut StdRng| AugmentedState {
            z: DVector::from_fn(8, |_, _| rng.random_range(-1.0..1.0)),
            theta: theta.clone(),
            p: DVector::from_fn(1, |_, _| rng.random_range(-2.0..2.0)),
        };
        for _ in 0..5 {
            let a = mk(&mut rng);
            let b = mk(&mut rng);
            let sum =
                AugmentedState { z: &a.z + &b.z, theta: theta.clone(), p: &a.p + &b.p };
            let ha = model.observation_map(&cfg, &a.to_vector()).unwrap();
            let hb = model.observation_map(&cfg, &b.to_vector()).unwrap();
            let hsum = model.observation_map(&cfg, &sum.to_vector()).unwrap();
            assert!((&hsum - (&ha + &hb)).norm() < 1e-10 * (1.0 + hsum.norm()));
        }
    }

    #[test]
    fn virtual_posterior_cases() {
        // Known-theta model, zero covariance: virtual covariance is zero.
        let n = 2;
        let subs = chain_substructures(n);
        let mut k = DMatrix::zeros(n, n);
        for s in &subs {
            k += s * 600.0;
        }
        let known = StructuralModel::new(
            DMatrix::identity(n, n),
            k,
            DMatrix::identity(n, n) * 0.3,
            vec![],
            vec![],
            DMatrix::from_column_slice(n, 1, &[1.0, 0.0]),
            DMatrix::zeros(0, n),
            DMatrix::zeros(0, n),
            0.001,
        )
        .unwrap();
        let est = GaussianEstimate::new(
            DVector::from_fn(known.n_augmented(), |i, _| 0.1 * i as f64),
            DMatrix::zeros(known.n_augmented(), known.n_augmented()),
        );
        let (mean, cov) = known.virtual_posterior(&est).unwrap();
        assert!(cov.norm() < 1e-14);
        // Displacement virtual channel reproduces the state entry.
        assert_relative_eq!(mean[0], est.mean[0], epsilon = 1e-14);
        assert_relative_eq!(mean[1], est.mean[1], epsilon = 1e-14);

        // 1-DOF acceleration channel: -k x - c xdot + p with linearized row.
        let model = sdof_model(0.001);
        let xi = AugmentedState {
            z: DVector::from_vec(vec![0.01, -0.5]),
            theta: DVector::from_vec(vec![1200.0, 0.8]),
            p: DVector::from_element(1, 2.0),
        };
        let mut p_cov = DMatrix::zeros(5, 5);
        for i in 0..5 {
            p_cov[(i, i)] = 0.1 * (i as f64 + 1.0);
        }
        let est1 = GaussianEstimate::new(xi.to_vector(), p_cov.clone());
        let (mean1, cov1) = model.virtual_posterior(&est1).unwrap();
        // Rows: disp, vel, acc (no stress/strain maps).
        assert_relative_eq!(mean1[2], -1200.0 * 0.01 - 0.8 * (-0.5) + 2.0, epsilon = 1e-12);
        let row = DVector::from_vec(vec![-1200.0, -0.8, -0.01, 0.5, 1.0]);
        let expected_var = row.dot(&(&p_cov * &row));
        assert_relative_eq!(cov1[(2, 2)], expected_var, epsilon = 1e-10);
    }

    #[test]
    fn cache_refreshes_on_theta_change() {
        let model = chain_model(2, 0.001);
        let mut cache = DiscretizationCache::new();
        let t1 = nominal_theta(&model, 1000.0, 1.0);
        let a1 = cache.get(&model, &t1).unwrap().a.clone();
        let mut t2 = t1.clone();
        t2[0] = 1100.0;
        let a2 = cache.get(&model, &t2).unwrap().a.clone();
        assert!((&a1 - &a2).norm() > 1e-9);
        // Perturbation below the refresh tolerance reuses the entry.
        let mut t3 = t2.clone();
        t3[0] += 1e-15;
        let a3 = cache.get(&model, &t3).unwrap().a.clone();
        assert_eq!(a2, a3);
    }
}
