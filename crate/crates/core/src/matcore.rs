//! Dense linear-algebra kernels shared by the estimator stack: matrix
//! exponential, zero-order-hold discretization, discrete algebraic Riccati
//! and Stein (discrete Lyapunov) solvers, and numerical rank.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::{Error, Result};

/// Relative tolerance on singular values used by [`numerical_rank`] callers
/// that do not override it.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Padé-13 numerator/denominator coefficients for the matrix exponential.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Largest 1-norm for which the order-13 approximant is used unscaled.
const PADE13_THETA: f64 = 5.371920351148152;

fn ensure_finite(name: &'static str, m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(name))
    }
}

fn norm_1(m: &DMatrix<f64>) -> f64 {
    let mut max = 0.0_f64;
    for j in 0..m.ncols() {
        let s: f64 = m.column(j).iter().map(|x| x.abs()).sum();
        if s > max {
            max = s;
        }
    }
    max
}

/// Replaces `m` with its symmetric part `(m + m^T) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Matrix exponential by scaling-and-squaring with a fixed order-13 Padé
/// approximant.
///
/// Exact (to round-off) for nilpotent and diagonal inputs.
pub fn expm(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "expm needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    ensure_finite("expm input", m)?;
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }

    let eta = norm_1(m);
    let s = if eta > PADE13_THETA {
        (eta / PADE13_THETA).log2().ceil() as u32
    } else {
        0
    };
    let a = m / 2f64.powi(s as i32);

    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;

    let ident = DMatrix::<f64>::identity(n, n);
    // U = A (A6 (b13 A6 + b11 A4 + b9 A2) + b7 A6 + b5 A4 + b3 A2 + b1 I)
    let w1 = &a6 * PADE13[13] + &a4 * PADE13[11] + &a2 * PADE13[9];
    let w = &a6 * w1 + &a6 * PADE13[7] + &a4 * PADE13[5] + &a2 * PADE13[3] + &ident * PADE13[1];
    let u = &a * w;
    // V = A6 (b12 A6 + b10 A4 + b8 A2) + b6 A6 + b4 A4 + b2 A2 + b0 I
    let z1 = &a6 * PADE13[12] + &a4 * PADE13[10] + &a2 * PADE13[8];
    let v = &a6 * z1 + &a6 * PADE13[6] + &a4 * PADE13[4] + &a2 * PADE13[2] + &ident * PADE13[0];

    let denom = &v - &u;
    let numer = &v + &u;
    let mut r = denom
        .lu()
        .solve(&numer)
        .ok_or_else(|| Error::Dimension("expm Padé denominator is singular".into()))?;
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}

/// Zero-order-hold discretization of the continuous pair `(a_c, b_c)` over
/// the sampling interval `dt`.
///
/// Computed as the top blocks of `exp([[A_c, B_c], [0, 0]] dt)` so that
/// singular `A_c` is handled; agrees with `(A - I) A_c^{-1} B_c` whenever
/// `A_c` is invertible.
pub fn discretize(
    a_c: &DMatrix<f64>,
    b_c: &DMatrix<f64>,
    dt: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = a_c.nrows();
    if a_c.ncols() != n {
        return Err(Error::Dimension("discretize: A_c must be square".into()));
    }
    if b_c.nrows() != n {
        return Err(Error::Dimension(format!(
            "discretize: B_c has {} rows, A_c order is {}",
            b_c.nrows(),
            n
        )));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidData(format!("discretize: dt = {dt} must be > 0")));
    }
    ensure_finite("discretize A_c", a_c)?;
    ensure_finite("discretize B_c", b_c)?;

    let m = b_c.ncols();
    let mut block = DMatrix::zeros(n + m, n + m);
    block.view_mut((0, 0), (n, n)).copy_from(a_c);
    block.view_mut((0, n), (n, m)).copy_from(b_c);
    block *= dt;

    let e = expm(&block)?;
    let a = e.view((0, 0), (n, n)).into_owned();
    let b = e.view((0, n), (n, m)).into_owned();
    Ok((a, b))
}

/// Stationary predictive covariance solving the discrete algebraic Riccati
/// fixed point `P = A P A^T - A P G^T (R + G P G^T)^{-1} G P A^T + Q`.
#[derive(Debug, Clone)]
pub struct DareSolution {
    /// Stationary predictive covariance.
    pub p_pred: DMatrix<f64>,
    /// Frobenius norm of the fixed-point residual of the returned solution.
    pub residual: f64,
    /// Fixed-point iterations performed.
    pub iterations: usize,
}

const DARE_MAX_ITER: usize = 100_000;
const DARE_STEP_TOL: f64 = 1e-12;
const DARE_RESIDUAL_TOL: f64 = 1e-8;

fn dare_rhs(
    a: &DMatrix<f64>,
    g: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let pg_t = p * g.transpose();
    let mut s = g * &pg_t + r;
    symmetrize(&mut s);
    let s_fact = SpdFactor::new(&s)
        .map_err(|_| Error::NotPositiveDefinite("DARE innovation covariance".into()))?;
    // A P A^T - (A P G^T) S^{-1} (G P A^T) + Q
    let apg = a * &pg_t;
    let correction = &apg * s_fact.solve_mat(&apg.transpose());
    let mut next = a * p * a.transpose() - correction + q;
    symmetrize(&mut next);
    Ok(next)
}

/// Solves the discrete algebraic Riccati equation by fixed-point iteration
/// of the covariance recursion starting from `P = Q`.
///
/// Non-convergence within the iteration cap signals an inadequate sensor
/// configuration (detectability failure).
pub fn solve_dare(
    a: &DMatrix<f64>,
    g: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DareSolution> {
    let n = a.nrows();
    if a.ncols() != n || q.nrows() != n || q.ncols() != n || g.ncols() != n {
        return Err(Error::Dimension("solve_dare: conflicting dimensions".into()));
    }
    if r.nrows() != g.nrows() || r.ncols() != g.nrows() {
        return Err(Error::Dimension("solve_dare: R must match the rows of G".into()));
    }
    ensure_finite("DARE A", a)?;
    ensure_finite("DARE G", g)?;
    ensure_finite("DARE Q", q)?;
    ensure_finite("DARE R", r)?;

    let mut p = q.clone();
    symmetrize(&mut p);
    let mut iterations = 0;
    loop {
        let next = dare_rhs(a, g, q, r, &p)?;
        let step = (&next - &p).norm();
        let scale = 1.0_f64.max(next.norm());
        p = next;
        iterations += 1;
        if step <= DARE_STEP_TOL * scale {
            break;
        }
        if iterations >= DARE_MAX_ITER {
            return Err(Error::RiccatiNotDetectable);
        }
    }

    let residual = (&dare_rhs(a, g, q, r, &p)? - &p).norm();
    if residual > DARE_RESIDUAL_TOL * (1.0 + p.norm()) {
        return Err(Error::RiccatiNotDetectable);
    }
    Ok(DareSolution { p_pred: p, residual, iterations })
}

/// Order up to which the Stein equation is solved by Kronecker
/// vectorization; larger systems use fixed-point accumulation.
const STEIN_KRONECKER_MAX: usize = 64;
const STEIN_RESIDUAL_TOL: f64 = 1e-9;

fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Solves the Stein (discrete Lyapunov) equation `L P L^T - P + C = 0`.
///
/// Requires the spectral radius of `l` to be strictly below one; `c` is
/// expected symmetric and the result is symmetric.
pub fn solve_stein(l: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = l.nrows();
    if l.ncols() != n || c.nrows() != n || c.ncols() != n {
        return Err(Error::Dimension("solve_stein: conflicting dimensions".into()));
    }
    ensure_finite("Stein L", l)?;
    ensure_finite("Stein C", c)?;
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }

    let rho = spectral_radius(l);
    if rho >= 1.0 {
        return Err(Error::SteinUnstable { rho });
    }

    let mut p = if n <= STEIN_KRONECKER_MAX {
        // vec(L P L^T) = (L x L) vec(P), so (I - L x L) vec(P) = vec(C).
        let kron = l.kronecker(l);
        let sys = DMatrix::<f64>::identity(n * n, n * n) - kron;
        let rhs = DVector::from_column_slice(c.as_slice());
        let sol = sys
            .lu()
            .solve(&rhs)
            .ok_or(Error::SteinUnstable { rho })?;
        DMatrix::from_column_slice(n, n, sol.as_slice())
    } else {
        // P = sum_k L^k C (L^T)^k, truncated once terms stop contributing.
        let mut acc = c.clone();
        let mut term = c.clone();
        for _ in 0..100_000 {
            term = l * &term * l.transpose();
            let t_norm = term.norm();
            acc += &term;
            if t_norm <= 1e-16 * (1.0 + acc.norm()) {
                break;
            }
        }
        acc
    };
    symmetrize(&mut p);

    let residual = (l * &p * l.transpose() - &p + c).norm();
    if residual > STEIN_RESIDUAL_TOL * (1.0 + p.norm()) {
        return Err(Error::SteinUnstable { rho });
    }
    Ok(p)
}

/// Number of singular values above `rel_tol` times the largest one.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> Result<usize> {
    ensure_finite("numerical_rank input", m)?;
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(0);
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    if max == 0.0 {
        return Ok(0);
    }
    Ok(sv.iter().filter(|&&s| s > rel_tol * max).count())
}

/// Cholesky factorization of a symmetric positive-definite matrix with
/// symmetric diagonal equilibration, which keeps covariance blocks of very
/// different scales solvable.
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    scale: DVector<f64>,
    ln_det: f64,
    rcond: f64,
}

impl SpdFactor {
    /// Factors `m` (assumed symmetric). Fails if the equilibrated matrix is
    /// not positive definite.
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n {
            return Err(Error::Dimension("SpdFactor: matrix must be square".into()));
        }
        let mut scale = DVector::zeros(n);
        for i in 0..n {
            let d = m[(i, i)];
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::NotPositiveDefinite(format!(
                    "diagonal entry ({i},{i}) = {d}"
                )));
            }
            scale[i] = 1.0 / d.sqrt();
        }
        let mut eq = m.clone();
        for i in 0..n {
            for j in 0..n {
                eq[(i, j)] *= scale[i] * scale[j];
            }
        }
        let chol = Cholesky::new(eq)
            .ok_or_else(|| Error::NotPositiveDefinite("equilibrated matrix".into()))?;

        let l = chol.l_dirty();
        let mut ln_det = 0.0;
        let mut dmin = f64::INFINITY;
        let mut dmax = 0.0_f64;
        for i in 0..n {
            let d = l[(i, i)];
            ln_det += d.ln();
            dmin = dmin.min(d);
            dmax = dmax.max(d);
        }
        // ln|M| = ln|D^-1 (DMD) D^-1| = ln|DMD| - 2 sum ln d_i
        ln_det = 2.0 * ln_det - 2.0 * scale.iter().map(|d| d.ln()).sum::<f64>();
        // Cheap reciprocal-condition estimate of the equilibrated factor.
        let rcond = if dmax > 0.0 { (dmin / dmax).powi(2) } else { 0.0 };

        Ok(Self { chol, scale, ln_det, rcond })
    }

    /// Solves `M X = rhs`.
    pub fn solve_mat(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut scaled = rhs.clone();
        for i in 0..scaled.nrows() {
            let s = self.scale[i];
            for j in 0..scaled.ncols() {
                scaled[(i, j)] *= s;
            }
        }
        let mut sol = self.chol.solve(&scaled);
        for i in 0..sol.nrows() {
            let s = self.scale[i];
            for j in 0..sol.ncols() {
                sol[(i, j)] *= s;
            }
        }
        sol
    }

    /// Solves `M x = rhs`.
    pub fn solve_vec(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let scaled = rhs.component_mul(&self.scale);
        self.chol.solve(&scaled).component_mul(&self.scale)
    }

    /// Natural log of the determinant of the factored matrix.
    pub fn ln_det(&self) -> f64 {
        self.ln_det
    }

    /// Reciprocal-condition estimate of the equilibrated matrix.
    pub fn rcond(&self) -> f64 {
        self.rcond
    }
}

/// `tr(M^{-1} S)` through an existing factorization.
pub fn trace_solve(factor: &SpdFactor, s: &DMatrix<f64>) -> f64 {
    factor.solve_mat(s).trace()
}
