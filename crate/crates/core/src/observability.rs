//! Observability rank criterion: Lie-derivative observability matrices of
//! the coupled state/parameter/input estimation problem, with rank tests
//! deciding which orders render the unknowns locally observable.

use nalgebra::{DMatrix, DVector};

use crate::matcore::{self, DEFAULT_RANK_TOL};
use crate::model::{SensorConfig, StructuralModel};
use crate::{Error, Result};

/// Observability matrix of one order, partitioned into its state (`o`),
/// parameter (`g`), and input-derivative (`h`) column groups.
#[derive(Debug, Clone)]
pub struct OrcMatrix {
    /// Derivative order `k`.
    pub order_k: usize,
    /// State block, `(k+1) N_obs x 2 N_d`.
    pub o_block: DMatrix<f64>,
    /// Parameter block, `(k+1) N_obs x N_theta`.
    pub g_block: DMatrix<f64>,
    /// Input block, `(k+1) N_obs x (k+1) N_p`.
    pub h_block: DMatrix<f64>,
    /// Linearization state.
    pub z0: DVector<f64>,
    /// Observation rows per derivative order.
    pub n_obs: usize,
    /// Input count.
    pub n_inputs: usize,
    /// Relative singular-value tolerance for rank decisions.
    pub rank_tol: f64,
}

/// Verdict of the full-rank criterion at one order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    ObservableAtK,
    NotObservable,
}

/// Per-order scan entry.
#[derive(Debug, Clone)]
pub struct OrderReport {
    pub k: usize,
    /// Rank of the stacked (normalized) state/parameter block.
    pub rank_og: usize,
    /// Rank of the input block.
    pub rank_h: usize,
    pub observable: bool,
}

/// Continuous-time ingredients evaluated at the reference parameters.
struct OrcIngredients {
    a0: DMatrix<f64>,
    b_c: DMatrix<f64>,
    g0: DMatrix<f64>,
    j_c: DMatrix<f64>,
    /// Parameter coupling of the dynamics: columns `A_s z0`.
    c_cols: DMatrix<f64>,
    /// Parameter coupling of the observations: columns `G_s z0`.
    h_cols: DMatrix<f64>,
}

fn ingredients(
    model: &StructuralModel,
    cfg: &SensorConfig,
    theta_ref: &DVector<f64>,
    z0: &DVector<f64>,
) -> Result<OrcIngredients> {
    let nd = model.n_dof();
    let nz = model.n_states();
    let np = model.n_inputs();
    let nt = model.n_params();
    if z0.len() != nz {
        return Err(Error::Dimension(format!(
            "linearization state has {} entries, expected {nz}",
            z0.len()
        )));
    }
    let (a0, b_c) = model.continuous_ss(theta_ref)?;
    let (g_phys, j_phys) = model.observation_matrices(cfg, theta_ref)?;

    // Pseudo-observations enter like physical rows: no state part, a
    // direct selection of the input block.
    let n_obs = cfg.n_obs();
    let mut g0 = DMatrix::zeros(n_obs, nz);
    g0.view_mut((0, 0), (cfg.n_meas(), nz)).copy_from(&g_phys);
    let mut j_c = DMatrix::zeros(n_obs, np);
    j_c.view_mut((0, 0), (cfg.n_meas(), np)).copy_from(&j_phys);
    for i in 0..cfg.n_pseudo {
        j_c[(cfg.n_meas() + i, i)] = 1.0;
    }

    // Parameter derivative columns at z0. Only the lower (equation-of-
    // motion) block of the dynamics and the acceleration rows of the
    // observations depend on the parameters.
    let x0 = z0.rows(0, nd);
    let v0 = z0.rows(nd, nd);
    let mut c_cols = DMatrix::zeros(nz, nt);
    let mut h_cols = DMatrix::zeros(n_obs, nt);
    let nk = model.n_stiffness_params();

    // Acceleration-row selector for the observation coupling.
    let acc_row0 = cfg.strain.len() + cfg.disp.len() + cfg.vel.len();
    let mut s_a = DMatrix::zeros(cfg.acc.len(), nd);
    for (r, &dof) in cfg.acc.iter().enumerate() {
        s_a[(r, dof)] = 1.0;
    }
    let mass = model.mass().clone();
    let mass_chol = nalgebra::Cholesky::new(mass)
        .ok_or_else(|| Error::InvalidModel("mass matrix is not positive definite".into()))?;

    for s in 0..nt {
        let ku = if s < nk {
            model.stiffness_substructure(s) * x0
        } else {
            model.damping_substructure(s - nk) * v0
        };
        let minv_ku = mass_chol.solve(&ku);
        c_cols
            .view_mut((nd, s), (nd, 1))
            .copy_from(&mass_inv_cols(-&minv_ku));
        if !cfg.acc.is_empty() {
            let rows = -(&s_a * &minv_ku);
            h_cols.view_mut((acc_row0, s), (cfg.acc.len(), 1)).copy_from(&rows);
        }
    }

    Ok(OrcIngredients { a0, b_c, g0, j_c, c_cols, h_cols })
}

/// Builds the order-`k` observability matrix around the reference
/// parameters and linearization state.
pub fn build_orc(
    model: &StructuralModel,
    cfg: &SensorConfig,
    theta_ref: &DVector<f64>,
    z0: &DVector<f64>,
    k: usize,
) -> Result<OrcMatrix> {
    let ing = ingredients(model, cfg, theta_ref, z0)?;
    let nz = model.n_states();
    let nt = model.n_params();
    let np = model.n_inputs();
    let n_obs = cfg.n_obs();

    let mut o_block = DMatrix::zeros((k + 1) * n_obs, nz);
    let mut g_block = DMatrix::zeros((k + 1) * n_obs, nt);
    let mut h_block = DMatrix::zeros((k + 1) * n_obs, (k + 1) * np);

    // Powers G0 A0^j built incrementally.
    let mut g_pow = ing.g0.clone();
    // Running parameter sum: H + sum_{i<j} G0 A0^i C.
    let mut g_sum = ing.h_cols.clone();
    for j in 0..=k {
        o_block.view_mut((j * n_obs, 0), (n_obs, nz)).copy_from(&g_pow);
        g_block.view_mut((j * n_obs, 0), (n_obs, nt)).copy_from(&g_sum);
        // Input columns: block c<j holds G0 A0^{j-1-c} B_c, block j holds J_c.
        h_block
            .view_mut((j * n_obs, j * np), (n_obs, np))
            .copy_from(&ing.j_c);
        if j < k {
            // Prepare the next row: the new input column at position c uses
            // the powers accumulated so far.
            let gb = &g_pow * &ing.b_c;
            for jj in (j + 1)..=k {
                let c = jj - 1 - j;
                h_block
                    .view_mut((jj * n_obs, c * np), (n_obs, np))
                    .copy_from(&gb);
            }
            g_sum += &g_pow * &ing.c_cols;
            g_pow *= &ing.a0;
        }
    }

    Ok(OrcMatrix {
        order_k: k,
        o_block,
        g_block,
        h_block,
        z0: z0.clone(),
        n_obs,
        n_inputs: np,
        rank_tol: DEFAULT_RANK_TOL,
    })
}

fn max_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

fn normalized(m: &DMatrix<f64>) -> DMatrix<f64> {
    let s = max_singular_value(m);
    if s > 0.0 {
        m / s
    } else {
        m.clone()
    }
}

impl OrcMatrix {
    /// The stacked matrix with each column group normalized by its largest
    /// singular value (the groups mix physical units).
    pub fn normalized_stack(&self) -> DMatrix<f64> {
        let rows = self.o_block.nrows();
        let cols = self.o_block.ncols() + self.g_block.ncols() + self.h_block.ncols();
        let mut out = DMatrix::zeros(rows, cols);
        let mut col = 0;
        for block in [&self.o_block, &self.g_block, &self.h_block] {
            out.view_mut((0, col), (rows, block.ncols()))
                .copy_from(&normalized(block));
            col += block.ncols();
        }
        out
    }

    /// Rank of the normalized `[O G]` stack.
    pub fn rank_og(&self) -> Result<usize> {
        let rows = self.o_block.nrows();
        let cols = self.o_block.ncols() + self.g_block.ncols();
        let mut stack = DMatrix::zeros(rows, cols);
        stack
            .view_mut((0, 0), (rows, self.o_block.ncols()))
            .copy_from(&normalized(&self.o_block));
        stack
            .view_mut((0, self.o_block.ncols()), (rows, self.g_block.ncols()))
            .copy_from(&normalized(&self.g_block));
        matcore::numerical_rank(&stack, self.rank_tol)
    }

    /// Rank of the input block of this order.
    pub fn rank_h(&self) -> Result<usize> {
        matcore::numerical_rank(&self.h_block, self.rank_tol)
    }

    /// Rank of the previous order's input block (a leading sub-block).
    pub fn rank_h_prev(&self) -> Result<usize> {
        if self.order_k == 0 {
            return Ok(0);
        }
        let rows = self.order_k * self.n_obs;
        let cols = self.order_k * self.n_inputs;
        let sub = self.h_block.view((0, 0), (rows, cols)).into_owned();
        matcore::numerical_rank(&sub, self.rank_tol)
    }
}

/// Full-rank criterion: at order zero the entire matrix must have full
/// column rank; at higher orders the state/parameter stack must reach
/// `2 N_d + N_theta` and each new derivative order must add `N_p`
/// independent input directions.
pub fn check_full(orc: &OrcMatrix) -> Result<Verdict> {
    let full_state_cols = orc.o_block.ncols() + orc.g_block.ncols();
    if orc.order_k == 0 {
        let rank = matcore::numerical_rank(&orc.normalized_stack(), orc.rank_tol)?;
        let want = full_state_cols + orc.n_inputs;
        return Ok(if rank == want { Verdict::ObservableAtK } else { Verdict::NotObservable });
    }
    let og_ok = orc.rank_og()? == full_state_cols;
    let h_ok = orc.rank_h_prev()? + orc.n_inputs == orc.rank_h()?;
    Ok(if og_ok && h_ok { Verdict::ObservableAtK } else { Verdict::NotObservable })
}

/// Component-wise test: a column of the stacked matrix is observable when
/// removing it drops the rank by one.
pub fn check_component(orc: &OrcMatrix, column: usize) -> Result<bool> {
    let stack = orc.normalized_stack();
    if column >= stack.ncols() {
        return Err(Error::Dimension(format!(
            "column {column} out of range ({} columns)",
            stack.ncols()
        )));
    }
    let full_rank = matcore::numerical_rank(&stack, orc.rank_tol)?;
    let reduced = stack.remove_column(column);
    let reduced_rank = matcore::numerical_rank(&reduced, orc.rank_tol)?;
    Ok(full_rank == reduced_rank + 1)
}

/// Scans derivative orders `0..=k_max`, reporting ranks and verdicts. The
/// verdict sequence must be monotone (observable orders stay observable);
/// a violation is reported as an error since it indicates a numerically
/// unreliable rank decision.
pub fn scan_orders(
    model: &StructuralModel,
    cfg: &SensorConfig,
    theta_ref: &DVector<f64>,
    z0: &DVector<f64>,
    k_max: usize,
) -> Result<Vec<OrderReport>> {
    let mut out = Vec::with_capacity(k_max + 1);
    let mut seen_observable = false;
    for k in 0..=k_max {
        let orc = build_orc(model, cfg, theta_ref, z0, k)?;
        let verdict = check_full(&orc)?;
        let observable = verdict == Verdict::ObservableAtK;
        if seen_observable && !observable {
            return Err(Error::InvalidData(format!(
                "observability verdict reverted at order {k}; rank tolerance {} is unreliable here",
                orc.rank_tol
            )));
        }
        seen_observable |= observable;
        out.push(OrderReport {
            k,
            rank_og: orc.rank_og()?,
            rank_h: orc.rank_h()?,
            observable,
        });
    }
    Ok(out)
}

/// Smallest observable order within `0..=k_max`, if any.
pub fn first_observable_order(reports: &[OrderReport]) -> Option<usize> {
    reports.iter().find(|r| r.observable).map(|r| r.k)
}

/// Default linearization state: the all-ones vector (a generic point that
/// avoids structural zeros).
pub fn default_z0(model: &StructuralModel) -> DVector<f64> {
    DVector::from_element(model.n_states(), 1.0)
}

/// Default scan depth.
pub fn default_k_max(model: &StructuralModel) -> usize {
    2 * model.n_augmented()
}
