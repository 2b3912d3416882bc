//! Mean-square stability tests and periodic Lyapunov certificates.
//!
//! A T-periodic MJLS is mean-square stable iff the one-period second-moment
//! operator `G_T` has spectral radius below one, iff there are positive
//! definite `P_k(i)` (with `P_T = P_0`) such that
//!
//! ```text
//! ν_k P_k(i) − φ_k(i)^T E^i(P_{k+1}) φ_k(i) ⪰ 0,    Π_k ν_k < 1
//! ```
//!
//! (`ν ≡ 1` with strict inequality gives the per-step form). Certificates are
//! produced either by the fixed-point recursion `P_k = L_k(P_{k+1}) + I` or by
//! solving the LMI feasibility problem, and are always re-verified here
//! without trusting the producer.

use std::fs;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{max_abs, min_eigenvalue, Matrix};
use crate::model::{grid_to_rows, rows_to_grid, ClosedLoopSystem, ModeIndexedSet};
use crate::operators::{
    closed_loop_monodromy, l_op, l_step, one_period_operator, operator_norm, spectral_radius,
};
use crate::sdp::{self, BlockLmi, SdpBackend, SdpProblem, SolveStatus, VarId};

/// Residual floor accepted when verifying a certificate.
pub const RESIDUAL_TOL: f64 = 1e-8;
/// Default strictness margin for the Lyapunov feasibility problems.
pub const DEFAULT_EPSILON: f64 = 1e-6;
/// Tolerance for `Π ν_k < 1`.
pub const NU_PRODUCT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub mss: bool,
    /// `σ_m(G_T)` (or of the time-invariant lift).
    pub spectral_radius: f64,
    /// Spectral radius of each mode's own (monodromy) matrix.
    pub per_mode_radii: Vec<f64>,
    /// Largest singular value of each mode's own (monodromy) matrix.
    pub per_mode_norms: Vec<f64>,
    pub method: String,
}

/// Time-invariant test on `(P^T ⊗ I) blkdiag(φ(i) ⊗ φ(i))`, the vectorised
/// second-moment map `X(j) ↦ Σ_i p_ij φ(i) X(i) φ(i)^T`.
///
/// With `P` itself in place of `P^T` the spectrum coincides only for two
/// modes.
pub fn check_mss_lti(modes: &ModeIndexedSet, transition: &Matrix) -> Result<StabilityReport> {
    let n = modes.num_modes();
    if transition.nrows() != n || transition.ncols() != n {
        return Err(Error::Shape(format!(
            "{n} modes but a {}x{} transition matrix",
            transition.nrows(),
            transition.ncols()
        )));
    }
    crate::model::validate_transition(transition)?;
    let d2 = modes.dim() * modes.dim();
    let mut blkdiag = Matrix::zeros(n * d2, n * d2);
    for (i, phi) in modes.iter().enumerate() {
        blkdiag
            .view_mut((i * d2, i * d2), (d2, d2))
            .copy_from(&phi.kronecker(phi));
    }
    let lift = transition.transpose().kronecker(&Matrix::identity(d2, d2)) * blkdiag;
    let radius = spectral_radius(&lift)?;
    Ok(StabilityReport {
        mss: radius < 1.0,
        spectral_radius: radius,
        per_mode_radii: modes
            .iter()
            .map(spectral_radius)
            .collect::<Result<Vec<_>>>()?,
        per_mode_norms: modes.iter().map(operator_norm).collect(),
        method: "time-invariant lifted operator".into(),
    })
}

/// Periodic test on `σ_m(G_T)`.
pub fn check_mss_ltvpm(cl: &ClosedLoopSystem) -> Result<StabilityReport> {
    let radius = spectral_radius(&one_period_operator(cl))?;
    let monodromies = (0..cl.num_modes())
        .map(|i| closed_loop_monodromy(cl, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(StabilityReport {
        mss: radius < 1.0,
        spectral_radius: radius,
        per_mode_radii: monodromies
            .iter()
            .map(spectral_radius)
            .collect::<Result<Vec<_>>>()?,
        per_mode_norms: monodromies.iter().map(operator_norm).collect(),
        method: "one-period operator G_T".into(),
    })
}

/// Periodic Lyapunov matrices with optional ν-sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovCertificate {
    /// `p[k][i]`, one set per time step of the period.
    pub p: Vec<ModeIndexedSet>,
    pub nu: Option<Vec<f64>>,
    pub epsilon: f64,
    /// `residuals[k][i] = λ_min(ν_k P_k(i) − L^i_k(P_{k+1}))`, filled by
    /// [`verify_certificate`].
    pub residuals: Vec<Vec<f64>>,
}

impl LyapunovCertificate {
    pub fn period(&self) -> usize {
        self.p.len()
    }

    pub fn at(&self, k: usize) -> &ModeIndexedSet {
        &self.p[k % self.p.len()]
    }

    pub fn nu_at(&self, k: usize) -> f64 {
        self.nu.as_ref().map_or(1.0, |nu| nu[k % nu.len()])
    }

    /// `x^T P_k(i) x`.
    pub fn value(&self, k: usize, i: usize, x: &DVector<f64>) -> f64 {
        (x.transpose() * &self.at(k)[i] * x)[(0, 0)]
    }

    pub fn to_file(&self) -> CertificateFile {
        CertificateFile {
            p: grid_to_rows(
                &self
                    .p
                    .iter()
                    .map(|s| s.entries().to_vec())
                    .collect::<Vec<_>>(),
            ),
            nu: self.nu.clone(),
            epsilon: self.epsilon,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(&self.to_file())?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, n_x: usize) -> Result<Self> {
        let file: CertificateFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        file.into_certificate(n_x)
    }
}

/// JSON form of a certificate: `P` is `T × N` row-major `n_x × n_x` arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateFile {
    #[serde(rename = "P")]
    pub p: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<Vec<f64>>,
    pub epsilon: f64,
}

impl CertificateFile {
    pub fn into_certificate(self, n_x: usize) -> Result<LyapunovCertificate> {
        let grid = rows_to_grid(&self.p, n_x, n_x, "P")?;
        let p = grid
            .into_iter()
            .map(|per_mode| {
                let sym: Vec<Matrix> = per_mode.iter().map(crate::linalg::symmetrize).collect();
                ModeIndexedSet::new(sym)
            })
            .collect::<Result<Vec<_>>>()?;
        if p.is_empty() {
            return Err(Error::Shape("certificate has no time steps".into()));
        }
        if let Some(nu) = &self.nu {
            if nu.len() != p.len() {
                return Err(Error::Shape(format!(
                    "certificate has {} ν values for period {}",
                    nu.len(),
                    p.len()
                )));
            }
        }
        Ok(LyapunovCertificate {
            p,
            nu: self.nu,
            epsilon: self.epsilon,
            residuals: Vec::new(),
        })
    }
}

/// Independent recomputation of every certificate inequality.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    /// `λ_min(ν_k P_k(i) − L^i_k(P_{k+1}))` per `(k, i)`.
    pub residuals: Vec<Vec<f64>>,
    /// `λ_min(P_k(i))` per `(k, i)`.
    pub p_min_eigenvalues: Vec<Vec<f64>>,
    pub min_residual: f64,
    pub worst: (usize, usize),
    pub min_p_eigenvalue: f64,
    pub nu_product: f64,
    pub certified: bool,
}

pub fn verify_certificate(
    cert: &mut LyapunovCertificate,
    cl: &ClosedLoopSystem,
) -> Result<ResidualReport> {
    let period = cl.period();
    if cert.period() != period
        || cert.p[0].num_modes() != cl.num_modes()
        || cert.p[0].dim() != cl.n_x()
    {
        return Err(Error::Shape(format!(
            "certificate is {}x{}x({}x{}), closed loop needs {}x{}x({}x{})",
            cert.period(),
            cert.p[0].num_modes(),
            cert.p[0].dim(),
            cert.p[0].dim(),
            period,
            cl.num_modes(),
            cl.n_x(),
            cl.n_x()
        )));
    }
    let mut residuals = vec![vec![0.0; cl.num_modes()]; period];
    let mut p_min = vec![vec![0.0; cl.num_modes()]; period];
    let mut min_residual = f64::INFINITY;
    let mut worst = (0, 0);
    let mut min_p = f64::INFINITY;
    for k in 0..period {
        let next = cert.at(k + 1);
        for i in 0..cl.num_modes() {
            let lhs = &cert.p[k][i] * cert.nu_at(k) - l_op(next, cl, k, i)?;
            let r = min_eigenvalue(&lhs);
            residuals[k][i] = r;
            if r < min_residual {
                min_residual = r;
                worst = (k, i);
            }
            p_min[k][i] = min_eigenvalue(&cert.p[k][i]);
            min_p = min_p.min(p_min[k][i]);
        }
    }
    let nu_product: f64 = (0..period).map(|k| cert.nu_at(k)).product();
    let nu_ok = match &cert.nu {
        Some(nu) => nu.iter().all(|&v| v > 0.0) && nu_product < 1.0 - NU_PRODUCT_TOL,
        None => true,
    };
    let certified = nu_ok
        && min_residual >= -RESIDUAL_TOL
        && min_p > 0.0
        && min_p >= cert.epsilon * (1.0 - sdp::MAX_VIOLATION);
    cert.residuals = residuals.clone();
    Ok(ResidualReport {
        residuals,
        p_min_eigenvalues: p_min,
        min_residual,
        worst,
        min_p_eigenvalue: min_p,
        nu_product,
        certified,
    })
}

/// Fixed point of the backward recursion `P_k(i) = L^i_k(P_{k+1}) + I`,
/// iterated one whole period at a time from `P ≡ I`.
///
/// Converges when both the change between successive periods and the
/// wrap-around mismatch at `k = T-1` are at most `tol` in max-norm; the
/// returned certificate then satisfies `P_k(i) − L^i_k(P_{k+1}) = I` within
/// `tol`.
pub fn canonical_lyapunov(
    cl: &ClosedLoopSystem,
    tol: f64,
    max_periods: usize,
) -> Result<LyapunovCertificate> {
    let (period, modes, n) = (cl.period(), cl.num_modes(), cl.n_x());
    let identity = ModeIndexedSet::identity(modes, n);
    let mut p = vec![identity.clone(); period];
    let add_identity = |v: ModeIndexedSet| v.map(|m| m + Matrix::identity(n, n));
    let mut change = f64::INFINITY;
    for _ in 0..max_periods {
        let prev = p.clone();
        let mut next = prev[0].clone();
        for k in (0..period).rev() {
            p[k] = add_identity(l_step(&next, cl, k)?);
            next = p[k].clone();
        }
        change = set_distance(&p, &prev);
        // mismatch of the last step against the freshly computed P_0
        let seam = {
            let last = add_identity(l_step(&p[0], cl, period - 1)?);
            set_distance(
                std::slice::from_ref(&last),
                std::slice::from_ref(&p[period - 1]),
            )
        };
        if !change.is_finite() {
            break;
        }
        if change <= tol && seam <= tol {
            let mut cert = LyapunovCertificate {
                p,
                nu: None,
                epsilon: 1.0,
                residuals: Vec::new(),
            };
            verify_certificate(&mut cert, cl)?;
            return Ok(cert);
        }
    }
    Err(Error::NonConvergence {
        iterations: max_periods,
        estimate: change,
    })
}

fn set_distance(a: &[ModeIndexedSet], b: &[ModeIndexedSet]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y.iter()).map(|(m1, m2)| max_abs(&(m1 - m2))))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub enum Feasibility {
    Feasible(LyapunovCertificate),
    Infeasible,
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Feasibility::Feasible(_))
    }

    pub fn certificate(self) -> Option<LyapunovCertificate> {
        match self {
            Feasibility::Feasible(c) => Some(c),
            Feasibility::Infeasible => None,
        }
    }
}

/// `P_k(i) ⪰ εI`, `P_k(i) − L^i_k(P_{k+1}) ⪰ εI`.
pub fn lyapunov_feasibility(
    cl: &ClosedLoopSystem,
    epsilon: f64,
    backend: &dyn SdpBackend,
) -> Result<Feasibility> {
    lyapunov_program(cl, None, epsilon, backend)
}

/// `P_k(i) ⪰ εI`, `ν_k P_k(i) − L^i_k(P_{k+1}) ⪰ εI` for a fixed
/// `ν` with every `ν_k > 0` and `Π ν_k < 1`.
pub fn relaxed_lyapunov_feasibility(
    cl: &ClosedLoopSystem,
    nu: &[f64],
    epsilon: f64,
    backend: &dyn SdpBackend,
) -> Result<Feasibility> {
    validate_nu(nu, cl.period())?;
    lyapunov_program(cl, Some(nu), epsilon, backend)
}

pub fn validate_nu(nu: &[f64], period: usize) -> Result<()> {
    if nu.len() != period {
        return Err(Error::Precondition(format!(
            "ν sequence has {} entries for period {period}",
            nu.len()
        )));
    }
    if let Some((k, v)) = nu.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::Precondition(format!("ν_{k} = {v} is not positive")));
    }
    let product: f64 = nu.iter().product();
    if product >= 1.0 - NU_PRODUCT_TOL {
        return Err(Error::Precondition(format!(
            "product of ν is {product}, must be < 1"
        )));
    }
    Ok(())
}

/// Both constraints are homogeneous in `P`, so the program is solved with a
/// unit margin and the solution scaled by `ε` afterwards.
fn lyapunov_program(
    cl: &ClosedLoopSystem,
    nu: Option<&[f64]>,
    epsilon: f64,
    backend: &dyn SdpBackend,
) -> Result<Feasibility> {
    if !(epsilon > 0.0) {
        return Err(Error::Precondition(format!(
            "ε = {epsilon} must be positive"
        )));
    }
    let (period, modes, n) = (cl.period(), cl.num_modes(), cl.n_x());
    let mut problem = SdpProblem::new();
    let vars: Vec<Vec<VarId>> = (0..period)
        .map(|k| {
            (0..modes)
                .map(|i| problem.add_symmetric(format!("P_{k}({i})"), n))
                .collect()
        })
        .collect();
    let p = cl.transition();
    for k in 0..period {
        let next = &vars[(k + 1) % period];
        let scale = nu.map_or(1.0, |nu| nu[k]);
        for i in 0..modes {
            let phi = cl.phi(k, i);
            let mut decrease = problem.expr(vars[k][i]).scale(scale);
            for (j, &var) in next.iter().enumerate() {
                let w = p[(i, j)];
                if w != 0.0 {
                    let term = problem
                        .expr(var)
                        .left_mul(&phi.transpose())
                        .right_mul(phi)
                        .scale(w);
                    decrease = decrease.sub(&term);
                }
            }
            let mut pos = BlockLmi::new(&[n]);
            pos.set(0, 0, problem.expr(vars[k][i]));
            problem.add_lmi(pos.build(format!("P_{k}({i}) >= eps"), 1.0));
            let mut dec = BlockLmi::new(&[n]);
            dec.set(0, 0, decrease);
            problem.add_lmi(dec.build(format!("decrease_{k}({i})"), 1.0));
            problem.add_objective_trace(vars[k][i], 1.0);
        }
    }
    let solution = sdp::solve(&problem, backend)?;
    match solution.status {
        SolveStatus::Infeasible => Ok(Feasibility::Infeasible),
        SolveStatus::NumericalFailure => Err(Error::NumericalFailure(solution.diagnostics)),
        SolveStatus::Optimal => {
            let p = vars
                .iter()
                .map(|per_mode| {
                    ModeIndexedSet::new(
                        per_mode
                            .iter()
                            .map(|&v| {
                                crate::linalg::symmetrize(&(solution.matrix(&problem, v) * epsilon))
                            })
                            .collect(),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let mut cert = LyapunovCertificate {
                p,
                nu: nu.map(<[f64]>::to_vec),
                epsilon,
                residuals: Vec::new(),
            };
            let report = verify_certificate(&mut cert, cl)?;
            if !report.certified {
                return Err(Error::NumericalFailure(format!(
                    "solver point fails re-verification (min residual {:e} at {:?}, min eig(P) {:e})",
                    report.min_residual, report.worst, report.min_p_eigenvalue
                )));
            }
            Ok(Feasibility::Feasible(cert))
        }
    }
}

/// Certified bound `β x0^T P_0(i0) x0` on `E[Σ_k x_k^T M_k(ω_k) x_k]`.
///
/// Requires `P_k(i) − L^i_k(P_{k+1}) − M_k(i)/β ⪰ 0` (within 1e-8) for
/// every `(k, i)` and every `M_k(i)` PSD.
pub fn performance_bound(
    cert: &LyapunovCertificate,
    cl: &ClosedLoopSystem,
    weights: &[ModeIndexedSet],
    beta: f64,
    x0: &DVector<f64>,
    i0: usize,
) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::Precondition(format!("β = {beta} must be positive")));
    }
    if weights.len() != cert.period() {
        return Err(Error::Shape(format!(
            "{} weight sets for period {}",
            weights.len(),
            cert.period()
        )));
    }
    if i0 >= cl.num_modes() {
        return Err(Error::ModeOutOfRange {
            index: i0,
            modes: cl.num_modes(),
        });
    }
    let mut worst: Option<(usize, usize, f64)> = None;
    for k in 0..cert.period() {
        for i in 0..cl.num_modes() {
            let m = &weights[k][i];
            let scale = max_abs(m).max(1.0);
            if min_eigenvalue(m) < -1e-10 * scale {
                return Err(Error::Precondition(format!(
                    "weight M_{k}({i}) is not positive semidefinite"
                )));
            }
            let lhs = &cert.at(k)[i] - l_op(cert.at(k + 1), cl, k, i)? - m / beta;
            let r = min_eigenvalue(&lhs);
            if worst.is_none_or(|(_, _, w)| r < w) {
                worst = Some((k, i, r));
            }
        }
    }
    if let Some((k, i, residual)) = worst {
        if residual < -RESIDUAL_TOL {
            return Err(Error::InequalityViolated { k, i, residual });
        }
    }
    Ok(beta * cert.value(0, i0, x0))
}
