//! Second-moment operator algebra of a periodic MJLS.
//!
//! For a mode-indexed set `V = (V(1), …, V(N))`:
//!
//! ```text
//! E^i(V)   = Σ_j p_ij V(j)
//! T^j_k(V) = Σ_i p_ij φ_k(i) V(i) φ_k(i)^T      (covariance step)
//! L^i_k(V) = φ_k(i)^T E^i(V) φ_k(i)             (Lyapunov step, adjoint of T_k)
//! ```
//!
//! Lifted matrices act on the mode-major stacking of column-stacked `vec(V(i))`:
//! block `(j, i)` of the `T_k` lift is `p_ij (φ_k(i) ⊗ φ_k(i))`, block `(i, j)`
//! of the `L_k` lift is `p_ij (φ_k(i)^T ⊗ φ_k(i)^T)`. `G_T = T_{T-1}∘…∘T_0`
//! propagates second moments over one period and `F_T = L_0∘…∘L_{T-1}` is
//! assembled independently from the `L` lifts.

use nalgebra::{DVector, Schur};

use crate::error::{Error, Result};
use crate::linalg::{kron, Matrix};
use crate::model::{ClosedLoopSystem, ModeIndexedSet, PeriodicMjlsModel};

/// Above this dimension [`spectral_radius`] switches from a dense Schur
/// decomposition to power iteration.
pub const DENSE_EIGEN_LIMIT: usize = 512;
pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_ITER: usize = 100_000;

fn check_mode(i: usize, modes: usize) -> Result<()> {
    if i >= modes {
        return Err(Error::ModeOutOfRange { index: i, modes });
    }
    Ok(())
}

fn check_set(v: &ModeIndexedSet, cl: &ClosedLoopSystem) -> Result<()> {
    if v.num_modes() != cl.num_modes() || v.dim() != cl.n_x() {
        return Err(Error::Shape(format!(
            "mode-indexed set is {}x({}x{}), closed loop expects {}x({}x{})",
            v.num_modes(),
            v.dim(),
            v.dim(),
            cl.num_modes(),
            cl.n_x(),
            cl.n_x()
        )));
    }
    Ok(())
}

/// `E^i(V) = Σ_j p_ij V(j)`.
pub fn expectation_op(v: &ModeIndexedSet, transition: &Matrix, i: usize) -> Result<Matrix> {
    let n = transition.nrows();
    check_mode(i, n)?;
    if v.num_modes() != n {
        return Err(Error::Shape(format!(
            "set has {} modes, transition matrix has {n}",
            v.num_modes()
        )));
    }
    let d = v.dim();
    let mut out = Matrix::zeros(d, d);
    for (j, vj) in v.iter().enumerate() {
        out += vj * transition[(i, j)];
    }
    Ok(out)
}

/// `T^j_k(V) = Σ_i p_ij φ_k(i) V(i) φ_k(i)^T`.
pub fn t_op(v: &ModeIndexedSet, cl: &ClosedLoopSystem, k: usize, j: usize) -> Result<Matrix> {
    check_mode(j, cl.num_modes())?;
    check_set(v, cl)?;
    let n = cl.n_x();
    let p = cl.transition();
    let mut out = Matrix::zeros(n, n);
    for (i, vi) in v.iter().enumerate() {
        let w = p[(i, j)];
        if w != 0.0 {
            let phi = cl.phi(k, i);
            out += (phi * vi * phi.transpose()) * w;
        }
    }
    Ok(out)
}

/// `L^i_k(V) = φ_k(i)^T E^i(V) φ_k(i)`.
pub fn l_op(v: &ModeIndexedSet, cl: &ClosedLoopSystem, k: usize, i: usize) -> Result<Matrix> {
    check_mode(i, cl.num_modes())?;
    check_set(v, cl)?;
    let phi = cl.phi(k, i);
    let e = expectation_op(v, cl.transition(), i)?;
    Ok(phi.transpose() * e * phi)
}

/// Applies `T_k` to every mode.
pub fn t_step(v: &ModeIndexedSet, cl: &ClosedLoopSystem, k: usize) -> Result<ModeIndexedSet> {
    let out = (0..cl.num_modes())
        .map(|j| t_op(v, cl, k, j))
        .collect::<Result<Vec<_>>>()?;
    ModeIndexedSet::new(out)
}

/// Applies `L_k` to every mode.
pub fn l_step(v: &ModeIndexedSet, cl: &ClosedLoopSystem, k: usize) -> Result<ModeIndexedSet> {
    let out = (0..cl.num_modes())
        .map(|i| l_op(v, cl, k, i))
        .collect::<Result<Vec<_>>>()?;
    ModeIndexedSet::new(out)
}

/// Mode-major stacking of `vec(V(i))`.
pub fn stack(v: &ModeIndexedSet) -> DVector<f64> {
    let d2 = v.dim() * v.dim();
    let mut out = DVector::zeros(v.num_modes() * d2);
    for (i, m) in v.iter().enumerate() {
        out.rows_mut(i * d2, d2).copy_from_slice(m.as_slice());
    }
    out
}

pub fn unstack(x: &DVector<f64>, num_modes: usize, dim: usize) -> Result<ModeIndexedSet> {
    let d2 = dim * dim;
    if x.len() != num_modes * d2 {
        return Err(Error::Shape(format!(
            "stacked vector has length {}, expected {}",
            x.len(),
            num_modes * d2
        )));
    }
    ModeIndexedSet::new(
        (0..num_modes)
            .map(|i| Matrix::from_column_slice(dim, dim, x.rows(i * d2, d2).as_slice()))
            .collect(),
    )
}

/// Matrix representation of `T_k` on stacked vectorizations.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedStepMatrix {
    pub matrix: Matrix,
    pub k: usize,
}

pub fn lifted_step_matrix(cl: &ClosedLoopSystem, k: usize) -> LiftedStepMatrix {
    let n2 = cl.n_x() * cl.n_x();
    let modes = cl.num_modes();
    let p = cl.transition();
    let mut m = Matrix::zeros(modes * n2, modes * n2);
    for i in 0..modes {
        let phi = cl.phi(k, i);
        let block = kron(phi, phi);
        for j in 0..modes {
            let w = p[(i, j)];
            if w != 0.0 {
                m.view_mut((j * n2, i * n2), (n2, n2))
                    .copy_from(&(&block * w));
            }
        }
    }
    LiftedStepMatrix { matrix: m, k }
}

/// Matrix representation of `L_k` on stacked vectorizations.
pub fn lifted_l_step_matrix(cl: &ClosedLoopSystem, k: usize) -> Matrix {
    let n2 = cl.n_x() * cl.n_x();
    let modes = cl.num_modes();
    let p = cl.transition();
    let mut m = Matrix::zeros(modes * n2, modes * n2);
    for i in 0..modes {
        let phi_t = cl.phi(k, i).transpose();
        let block = kron(&phi_t, &phi_t);
        for j in 0..modes {
            let w = p[(i, j)];
            if w != 0.0 {
                m.view_mut((i * n2, j * n2), (n2, n2))
                    .copy_from(&(&block * w));
            }
        }
    }
    m
}

/// Lifted `G_T = M_{T-1} ⋯ M_1 M_0`.
pub fn one_period_operator(cl: &ClosedLoopSystem) -> Matrix {
    let mut g = lifted_step_matrix(cl, 0).matrix;
    for k in 1..cl.period() {
        g = lifted_step_matrix(cl, k).matrix * g;
    }
    g
}

/// Lifted `F_T = L_0 L_1 ⋯ L_{T-1}`.
pub fn f_period_operator(cl: &ClosedLoopSystem) -> Matrix {
    let mut f = lifted_l_step_matrix(cl, 0);
    for k in 1..cl.period() {
        f *= lifted_l_step_matrix(cl, k);
    }
    f
}

/// Largest eigenvalue modulus.
///
/// Dense Schur decomposition up to [`DENSE_EIGEN_LIMIT`], power iteration
/// above it.
pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    if m.nrows() != m.ncols() {
        return Err(Error::Shape(format!(
            "spectral radius of a non-square {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    if m.nrows() <= DENSE_EIGEN_LIMIT {
        dense_spectral_radius(m)
    } else {
        power_iteration_radius(m, POWER_TOL, POWER_MAX_ITER)
    }
}

fn dense_spectral_radius(m: &Matrix) -> Result<f64> {
    let schur = Schur::try_new(m.clone(), f64::EPSILON, 100_000)
        .ok_or_else(|| Error::NumericalFailure("Schur decomposition did not converge".into()))?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .fold(0.0_f64, |r, z| r.max(z.norm())))
}

/// Power iteration estimate of the spectral radius.
///
/// Uses the geometric mean of two successive growth factors so that a
/// dominant pair `±λ` or a complex-conjugate pair does not stall the
/// iteration; the estimate converges when successive values agree to `tol`
/// (relative).
pub fn power_iteration_radius(m: &Matrix, tol: f64, max_iter: usize) -> Result<f64> {
    let n = m.nrows();
    // deterministic start with all directions excited
    let mut x = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_033_988_749_895).fract());
    x /= x.norm();
    let mut prev = f64::NAN;
    let mut estimate = 0.0;
    for iter in 0..max_iter {
        let y = m * &x;
        let g1 = y.norm();
        if g1 == 0.0 {
            return Ok(0.0);
        }
        let y = y / g1;
        let z = m * &y;
        let g2 = z.norm();
        if g2 == 0.0 {
            return Ok(0.0);
        }
        estimate = (g1 * g2).sqrt();
        if iter > 0 && (estimate - prev).abs() <= tol * estimate.max(1e-300) {
            return Ok(estimate);
        }
        prev = estimate;
        x = z / g2;
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        estimate,
    })
}

/// Largest singular value.
pub fn operator_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().fold(0.0_f64, |a, &s| a.max(s))
}

/// Open-loop monodromy `A_{T-1}(i) ⋯ A_0(i)` of a single mode.
pub fn per_mode_monodromy(model: &PeriodicMjlsModel, i: usize) -> Result<Matrix> {
    check_mode(i, model.num_modes)?;
    let mut phi = model.a(0, i).clone();
    for k in 1..model.period {
        phi = model.a(k, i) * phi;
    }
    Ok(phi)
}

/// Closed-loop monodromy `φ_{T-1}(i) ⋯ φ_0(i)` of a single mode.
pub fn closed_loop_monodromy(cl: &ClosedLoopSystem, i: usize) -> Result<Matrix> {
    check_mode(i, cl.num_modes())?;
    let mut phi = cl.phi(0, i).clone();
    for k in 1..cl.period() {
        phi = cl.phi(k, i) * phi;
    }
    Ok(phi)
}
