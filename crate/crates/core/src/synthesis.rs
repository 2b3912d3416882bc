//! Mode-dependent state-feedback synthesis by semidefinite programming.
//!
//! Both problems use the change of variables `S_k(i) = P_k(i)^{-1}`,
//! `Y_k(i) = K_k(i) S_k(i)` so that every constraint is an LMI in
//! `(S, Y[, β])`, with `Γ_k(i) = A_k(i) S_k(i) + B_k(i) Y_k(i)`.
//!
//! * Cost-bound problem: minimise `β` so that `J(K) ≤ β` for every initial
//!   state in the convex hull of the given vertices, under per-mode control
//!   bounds `‖u‖ ≤ u_max(i)` and optional state ellipsoids `x^T W x ≤ 1`, all
//!   holding with probability one.
//! * Region problem: maximise `Σ_i ρ_i tr S_0(i)`, the size of the invariant
//!   ellipsoids `{x : x^T S_0(i)^{-1} x ≤ 1}`, under the same constraints and
//!   the ν-relaxed mean-square decrease condition.
//!
//! Every returned solution is re-verified from `(S, Y)` and the model data
//! alone, without trusting the solver's status.

use std::fs;
use std::path::Path;
use std::time::Duration;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{max_abs, min_eigenvalue, psd_sqrt, spd_inverse, symmetrize, Matrix};
use crate::model::{
    close_loop, grid_to_rows, rows_to_grid, ClosedLoopSystem, ControllerGains, ModeIndexedSet,
    PeriodicMjlsModel,
};
use crate::operators::{l_op, one_period_operator, spectral_radius};
use crate::sdp::{self, AffineExpr, BlockLmi, SdpBackend, SdpProblem, SolveStatus, VarId};
use crate::stability::{validate_nu, verify_certificate, LyapunovCertificate};

/// Default margin `ε` on every strict block.
pub const DEFAULT_EPSILON: f64 = 1e-7;
/// Floor accepted for recomputed (un-Schur'd) inequalities.
pub const CHECK_TOL: f64 = 1e-7;
/// Relative tolerance on `K S = Y`.
pub const GAIN_RESIDUAL_TOL: f64 = 1e-8;
const PROBABILITY_TOL: f64 = 1e-9;

/// Cost-bound synthesis data.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisSpecP1 {
    pub q: ModeIndexedSet,
    pub r: ModeIndexedSet,
    pub u_max: Vec<f64>,
    /// `w[k][i]`, optional state-ellipsoid weights.
    pub w: Option<Vec<ModeIndexedSet>>,
    pub hull_vertices: Vec<DVector<f64>>,
}

/// Region-of-attraction synthesis data.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisSpecP2 {
    pub nu: Vec<f64>,
    pub u_max: Vec<f64>,
    pub w: Vec<ModeIndexedSet>,
    pub rho: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFileP1 {
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    pub u_max: Vec<f64>,
    #[serde(rename = "W", default, skip_serializing_if = "Option::is_none")]
    pub w: Option<Vec<Vec<Vec<f64>>>>,
    pub hull_vertices: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFileP2 {
    pub nu: Vec<f64>,
    pub u_max: Vec<f64>,
    #[serde(rename = "W")]
    pub w: Vec<Vec<Vec<f64>>>,
    pub rho: Vec<f64>,
}

fn mode_set(data: &[Vec<f64>], dim: usize, name: &str) -> Result<ModeIndexedSet> {
    let grid = rows_to_grid(&[data.to_vec()], dim, dim, name)?;
    ModeIndexedSet::new_symmetric(grid.into_iter().next().unwrap_or_default())
}

fn weight_grid(data: &[Vec<Vec<f64>>], dim: usize) -> Result<Vec<ModeIndexedSet>> {
    rows_to_grid(data, dim, dim, "W")?
        .into_iter()
        .map(ModeIndexedSet::new_symmetric)
        .collect()
}

impl SynthesisSpecP1 {
    pub fn from_file(file: SpecFileP1, model: &PeriodicMjlsModel) -> Result<Self> {
        let spec = Self {
            q: mode_set(&file.q, model.n_x, "Q")?,
            r: mode_set(&file.r, model.n_u, "R")?,
            u_max: file.u_max,
            w: file.w.map(|w| weight_grid(&w, model.n_x)).transpose()?,
            hull_vertices: file
                .hull_vertices
                .into_iter()
                .map(DVector::from_vec)
                .collect(),
        };
        spec.validate(model)?;
        Ok(spec)
    }

    pub fn from_json_str(text: &str, model: &PeriodicMjlsModel) -> Result<Self> {
        Self::from_file(serde_json::from_str(text)?, model)
    }

    pub fn load(path: impl AsRef<Path>, model: &PeriodicMjlsModel) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?, model)
    }

    pub fn to_file(&self) -> SpecFileP1 {
        SpecFileP1 {
            q: grid_to_rows(&[self.q.entries().to_vec()]).remove(0),
            r: grid_to_rows(&[self.r.entries().to_vec()]).remove(0),
            u_max: self.u_max.clone(),
            w: self.w.as_ref().map(|w| weights_to_rows(w)),
            hull_vertices: self
                .hull_vertices
                .iter()
                .map(|v| v.as_slice().to_vec())
                .collect(),
        }
    }

    pub fn validate(&self, model: &PeriodicMjlsModel) -> Result<()> {
        check_mode_count(self.q.num_modes(), model, "Q")?;
        check_mode_count(self.r.num_modes(), model, "R")?;
        if self.q.dim() != model.n_x || self.r.dim() != model.n_u {
            return Err(Error::Shape(format!(
                "Q must be {0}x{0} and R {1}x{1}",
                model.n_x, model.n_u
            )));
        }
        for (i, q) in self.q.iter().enumerate() {
            if min_eigenvalue(q) < -1e-10 * max_abs(q).max(1.0) {
                return Err(Error::InvalidProblem(format!(
                    "Q({i}) is not positive semidefinite"
                )));
            }
        }
        for (i, r) in self.r.iter().enumerate() {
            if !(min_eigenvalue(r) > 0.0) {
                return Err(Error::InvalidProblem(format!(
                    "R({i}) is not positive definite"
                )));
            }
        }
        check_u_max(&self.u_max, model)?;
        if let Some(w) = &self.w {
            check_weights(w, model)?;
        }
        if self.hull_vertices.is_empty() {
            return Err(Error::InvalidProblem(
                "at least one hull vertex is required".into(),
            ));
        }
        if let Some(v) = self.hull_vertices.iter().find(|v| v.len() != model.n_x) {
            return Err(Error::Shape(format!(
                "hull vertex has {} entries, expected {}",
                v.len(),
                model.n_x
            )));
        }
        Ok(())
    }

    /// `M_k(i) = Q(i) + K_k(i)^T R(i) K_k(i)`.
    pub fn stage_weights(&self, gains: &ControllerGains) -> Result<Vec<ModeIndexedSet>> {
        (0..gains.period())
            .map(|k| {
                ModeIndexedSet::new(
                    (0..self.q.num_modes())
                        .map(|i| {
                            let kk = gains.gain(k, i);
                            symmetrize(&(&self.q[i] + kk.transpose() * &self.r[i] * kk))
                        })
                        .collect(),
                )
            })
            .collect()
    }
}

impl SynthesisSpecP2 {
    pub fn from_file(file: SpecFileP2, model: &PeriodicMjlsModel) -> Result<Self> {
        let spec = Self {
            nu: file.nu,
            u_max: file.u_max,
            w: weight_grid(&file.w, model.n_x)?,
            rho: file.rho,
        };
        spec.validate(model)?;
        Ok(spec)
    }

    pub fn from_json_str(text: &str, model: &PeriodicMjlsModel) -> Result<Self> {
        Self::from_file(serde_json::from_str(text)?, model)
    }

    pub fn load(path: impl AsRef<Path>, model: &PeriodicMjlsModel) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?, model)
    }

    pub fn to_file(&self) -> SpecFileP2 {
        SpecFileP2 {
            nu: self.nu.clone(),
            u_max: self.u_max.clone(),
            w: weights_to_rows(&self.w),
            rho: self.rho.clone(),
        }
    }

    pub fn validate(&self, model: &PeriodicMjlsModel) -> Result<()> {
        validate_nu(&self.nu, model.period)?;
        check_u_max(&self.u_max, model)?;
        check_weights(&self.w, model)?;
        validate_distribution(&self.rho, model.num_modes)
    }
}

fn weights_to_rows(w: &[ModeIndexedSet]) -> Vec<Vec<Vec<f64>>> {
    grid_to_rows(&w.iter().map(|s| s.entries().to_vec()).collect::<Vec<_>>())
}

fn check_mode_count(n: usize, model: &PeriodicMjlsModel, name: &str) -> Result<()> {
    if n != model.num_modes {
        return Err(Error::Shape(format!(
            "{name} has {n} modes, model has {}",
            model.num_modes
        )));
    }
    Ok(())
}

fn check_u_max(u_max: &[f64], model: &PeriodicMjlsModel) -> Result<()> {
    if u_max.len() != model.num_modes {
        return Err(Error::Shape(format!(
            "u_max has {} entries, model has {} modes",
            u_max.len(),
            model.num_modes
        )));
    }
    if let Some((i, u)) = u_max
        .iter()
        .enumerate()
        .find(|(_, u)| !(**u > 0.0 && u.is_finite()))
    {
        return Err(Error::InvalidProblem(format!(
            "u_max({i}) = {u} must be positive"
        )));
    }
    Ok(())
}

fn check_weights(w: &[ModeIndexedSet], model: &PeriodicMjlsModel) -> Result<()> {
    if w.len() != model.period {
        return Err(Error::Shape(format!(
            "W has {} time steps, model period is {}",
            w.len(),
            model.period
        )));
    }
    for (k, set) in w.iter().enumerate() {
        check_mode_count(set.num_modes(), model, "W")?;
        if set.dim() != model.n_x {
            return Err(Error::Shape(format!("W must be {0}x{0}", model.n_x)));
        }
        for (i, m) in set.iter().enumerate() {
            if min_eigenvalue(m) < -1e-10 * max_abs(m).max(1.0) {
                return Err(Error::InvalidProblem(format!(
                    "W_{k}({i}) is not positive semidefinite"
                )));
            }
        }
    }
    Ok(())
}

/// Cost-bound data for [`crate::model::benchmark_system`]: no state cost,
/// unit control cost, `|u| ≤ 125` and initial states in the square
/// `[-100, 100]²`.
pub fn benchmark_p1_spec() -> SynthesisSpecP1 {
    let alpha = 100.0;
    SynthesisSpecP1 {
        q: ModeIndexedSet::zeros(2, 2),
        r: ModeIndexedSet::identity(2, 1),
        u_max: vec![125.0; 2],
        w: None,
        hull_vertices: [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)]
            .iter()
            .map(|&(a, b)| DVector::from_vec(vec![alpha * a, alpha * b]))
            .collect(),
    }
}

/// Region data for [`crate::model::benchmark_system`]: the Lyapunov function
/// may only shrink by 10% at step 4 and must not grow elsewhere, `|u| ≤ 125`,
/// `‖x‖ ≤ 250`, uniform initial mode.
pub fn benchmark_p2_spec() -> SynthesisSpecP2 {
    let period = 10;
    let delta: f64 = 250.0;
    let mut nu = vec![1.0; period];
    nu[4] = 0.9;
    SynthesisSpecP2 {
        nu,
        u_max: vec![125.0; 2],
        w: vec![ModeIndexedSet::identity(2, 2).map(|m| m / delta.powi(2)); period],
        rho: vec![0.5; 2],
    }
}

/// Nonnegative entries summing to one (within 1e-9).
pub fn validate_distribution(rho: &[f64], modes: usize) -> Result<()> {
    if rho.len() != modes {
        return Err(Error::Shape(format!(
            "initial distribution has {} entries, model has {modes} modes",
            rho.len()
        )));
    }
    if rho.iter().any(|p| !(*p >= 0.0)) || (rho.iter().sum::<f64>() - 1.0).abs() > PROBABILITY_TOL {
        return Err(Error::InvalidProblem(format!(
            "initial distribution {rho:?} is not a probability vector"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    P1,
    P2,
}

/// Variable handles of an assembled synthesis program.
#[derive(Debug, Clone)]
pub struct SynthesisLayout {
    pub kind: ProblemKind,
    pub beta: Option<VarId>,
    /// `s[k][i]`
    pub s: Vec<Vec<VarId>>,
    /// `y[k][i]`
    pub y: Vec<Vec<VarId>>,
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Precondition(format!(
            "ε = {epsilon} must be positive"
        )));
    }
    Ok(())
}

fn add_variables(
    problem: &mut SdpProblem,
    model: &PeriodicMjlsModel,
) -> (Vec<Vec<VarId>>, Vec<Vec<VarId>>) {
    let mut s = Vec::with_capacity(model.period);
    let mut y = Vec::with_capacity(model.period);
    for k in 0..model.period {
        s.push(
            (0..model.num_modes)
                .map(|i| problem.add_symmetric(format!("S_{k}({i})"), model.n_x))
                .collect(),
        );
        y.push(
            (0..model.num_modes)
                .map(|i| problem.add_free(format!("Y_{k}({i})"), model.n_u, model.n_x))
                .collect(),
        );
    }
    (s, y)
}

/// `Γ_k(i) = A_k(i) S_k(i) + B_k(i) Y_k(i)`.
fn gamma(
    problem: &SdpProblem,
    model: &PeriodicMjlsModel,
    layout: &SynthesisLayout,
    k: usize,
    i: usize,
) -> AffineExpr {
    problem
        .expr(layout.s[k][i])
        .left_mul(model.a(k, i))
        .add(&problem.expr(layout.y[k][i]).left_mul(model.b(k, i)))
}

/// The expected-decrease block
/// `[ν S_k(i), *, …; √p_ij Γ, S_{k+1}(j), …; (cost rows)]` with the
/// `blkdiag{S_{k+1}}` part split into one diagonal block per mode.
fn decrease_block(
    problem: &SdpProblem,
    model: &PeriodicMjlsModel,
    layout: &SynthesisLayout,
    k: usize,
    i: usize,
    nu: f64,
    cost: Option<(&Matrix, &Matrix, VarId)>,
) -> BlockLmi {
    let (n, m, modes) = (model.n_x, model.n_u, model.num_modes);
    let next = (k + 1) % model.period;
    let mut sizes = vec![n; modes + 1];
    if cost.is_some() {
        sizes.extend([n, m]);
    }
    let mut lmi = BlockLmi::new(&sizes);
    let g = gamma(problem, model, layout, k, i);
    lmi.set(0, 0, problem.expr(layout.s[k][i]).scale(nu));
    for j in 0..modes {
        lmi.set(1 + j, 0, g.scale(model.transition[(i, j)].sqrt()));
        lmi.set(1 + j, 1 + j, problem.expr(layout.s[next][j]));
    }
    if let Some((q_half, r_half, beta)) = cost {
        let beta = problem.expr(beta);
        lmi.set(modes + 1, 0, problem.expr(layout.s[k][i]).left_mul(q_half));
        lmi.set(modes + 1, modes + 1, beta.times_identity(n));
        lmi.set(modes + 2, 0, problem.expr(layout.y[k][i]).left_mul(r_half));
        lmi.set(modes + 2, modes + 2, beta.times_identity(m));
    }
    lmi
}

/// Constraints shared by both problems: per-successor invariance, control
/// bound and (optional) state ellipsoid.
fn add_common_blocks(
    problem: &mut SdpProblem,
    model: &PeriodicMjlsModel,
    layout: &SynthesisLayout,
    u_max: &[f64],
    w: Option<&[ModeIndexedSet]>,
    epsilon: f64,
) -> Result<()> {
    let (n, m) = (model.n_x, model.n_u);
    for k in 0..model.period {
        let next = (k + 1) % model.period;
        for i in 0..model.num_modes {
            let g = gamma(problem, model, layout, k, i);
            for j in 0..model.num_modes {
                let mut lmi = BlockLmi::new(&[n, n]);
                lmi.set(0, 0, problem.expr(layout.s[k][i]));
                lmi.set(1, 0, g.clone());
                lmi.set(1, 1, problem.expr(layout.s[next][j]));
                problem.add_lmi(lmi.build(format!("invariance_{k}({i}->{j})"), epsilon));
            }
            let mut control = BlockLmi::new(&[m, n]);
            control.set(
                0,
                0,
                AffineExpr::constant(Matrix::identity(m, m) * u_max[i].powi(2)),
            );
            control.set(1, 0, problem.expr(layout.y[k][i]).transpose());
            control.set(1, 1, problem.expr(layout.s[k][i]));
            problem.add_lmi(control.build(format!("control_{k}({i})"), epsilon));
            if let Some(w) = w {
                let h = psd_sqrt(&w[k][i])?;
                let mut state = BlockLmi::new(&[n]);
                state.set(
                    0,
                    0,
                    problem
                        .expr(layout.s[k][i])
                        .left_mul(&h)
                        .right_mul(&h.transpose())
                        .scale(-1.0)
                        .add_constant(&Matrix::identity(n, n)),
                );
                problem.add_lmi(state.build(format!("state_{k}({i})"), epsilon));
            }
        }
    }
    Ok(())
}

/// Assembles the cost-bound program (minimise `β`).
pub fn build_p1_sdp(
    model: &PeriodicMjlsModel,
    spec: &SynthesisSpecP1,
    epsilon: f64,
) -> Result<(SdpProblem, SynthesisLayout)> {
    check_epsilon(epsilon)?;
    model.validate()?;
    spec.validate(model)?;
    let n = model.n_x;
    let mut problem = SdpProblem::new();
    let beta = problem.add_scalar("beta");
    let (s, y) = add_variables(&mut problem, model);
    let layout = SynthesisLayout {
        kind: ProblemKind::P1,
        beta: Some(beta),
        s,
        y,
    };
    problem.add_objective_scalar(beta, 1.0);

    for (v, x0) in spec.hull_vertices.iter().enumerate() {
        for i in 0..model.num_modes {
            let mut lmi = BlockLmi::new(&[1, n]);
            lmi.set(0, 0, AffineExpr::constant(Matrix::from_element(1, 1, 1.0)));
            lmi.set(
                1,
                0,
                AffineExpr::constant(Matrix::from_column_slice(n, 1, x0.as_slice())),
            );
            lmi.set(1, 1, problem.expr(layout.s[0][i]));
            problem.add_lmi(lmi.build(format!("hull_{v}({i})"), epsilon));
        }
    }
    let q_half = spec.q.iter().map(psd_sqrt).collect::<Result<Vec<_>>>()?;
    let r_half = spec.r.iter().map(psd_sqrt).collect::<Result<Vec<_>>>()?;
    for k in 0..model.period {
        for i in 0..model.num_modes {
            let lmi = decrease_block(
                &problem,
                model,
                &layout,
                k,
                i,
                1.0,
                Some((&q_half[i], &r_half[i], beta)),
            );
            problem.add_lmi(lmi.build(format!("cost_decrease_{k}({i})"), epsilon));
        }
    }
    add_common_blocks(
        &mut problem,
        model,
        &layout,
        &spec.u_max,
        spec.w.as_deref(),
        epsilon,
    )?;
    Ok((problem, layout))
}

/// Assembles the region program (minimise `−Σ ρ_i tr S_0(i)`).
pub fn build_p2_sdp(
    model: &PeriodicMjlsModel,
    spec: &SynthesisSpecP2,
    epsilon: f64,
) -> Result<(SdpProblem, SynthesisLayout)> {
    check_epsilon(epsilon)?;
    model.validate()?;
    spec.validate(model)?;
    let mut problem = SdpProblem::new();
    let (s, y) = add_variables(&mut problem, model);
    let layout = SynthesisLayout {
        kind: ProblemKind::P2,
        beta: None,
        s,
        y,
    };
    for (i, &rho) in spec.rho.iter().enumerate() {
        if rho != 0.0 {
            problem.add_objective_trace(layout.s[0][i], -rho);
        }
    }
    for k in 0..model.period {
        for i in 0..model.num_modes {
            let lmi = decrease_block(&problem, model, &layout, k, i, spec.nu[k], None);
            problem.add_lmi(lmi.build(format!("relaxed_decrease_{k}({i})"), epsilon));
        }
    }
    add_common_blocks(
        &mut problem,
        model,
        &layout,
        &spec.u_max,
        Some(&spec.w),
        epsilon,
    )?;
    Ok((problem, layout))
}

/// `K_k(i) = Y_k(i) S_k(i)^{-1}`; every `S_k(i)` must have minimum eigenvalue
/// at least `ε/2`.
pub fn extract_gains(
    s: &[ModeIndexedSet],
    y: &[Vec<Matrix>],
    epsilon: f64,
) -> Result<ControllerGains> {
    if s.len() != y.len() {
        return Err(Error::Shape(format!(
            "{} S steps but {} Y steps",
            s.len(),
            y.len()
        )));
    }
    let mut k = Vec::with_capacity(s.len());
    for (s_k, y_k) in s.iter().zip(y) {
        if s_k.num_modes() != y_k.len() {
            return Err(Error::Shape("S and Y mode counts differ".into()));
        }
        let mut row = Vec::with_capacity(y_k.len());
        for (s_ki, y_ki) in s_k.iter().zip(y_k) {
            let min_eig = min_eigenvalue(s_ki);
            if min_eig < 0.5 * epsilon {
                return Err(Error::NearlySingular {
                    min_eigenvalue: min_eig,
                });
            }
            if y_ki.ncols() != s_ki.nrows() {
                return Err(Error::Shape(format!(
                    "Y is {}x{}, S is {}x{}",
                    y_ki.nrows(),
                    y_ki.ncols(),
                    s_ki.nrows(),
                    s_ki.ncols()
                )));
            }
            // K = Y S^{-1}  ⇔  S K^T = Y^T
            let chol = nalgebra::Cholesky::new(symmetrize(s_ki)).ok_or(Error::NearlySingular {
                min_eigenvalue: min_eig,
            })?;
            row.push(chol.solve(&y_ki.transpose()).transpose());
        }
        k.push(row);
    }
    Ok(ControllerGains { k })
}

/// Worst recomputed margins of every synthesis inequality. All `*_min`
/// values are minimum eigenvalues; the solution is accepted when each is at
/// least `-CHECK_TOL`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationChecks {
    pub closed_loop_radius: f64,
    /// `max ‖K S − Y‖_max / (1 + ‖Y‖_max)`.
    pub gain_residual: f64,
    /// Schur complement of the decrease block in `S` variables.
    pub schur_min: f64,
    /// The same inequality in `P = S^{-1}` variables (including the stage
    /// cost for the cost-bound problem).
    pub lyapunov_min: f64,
    /// `P_k(i) − φ_k(i)^T P_{k+1}(j) φ_k(i)` over all `(k, i, j)`.
    pub invariance_min: f64,
    /// `u_max(i)² I − Y S^{-1} Y^T`.
    pub control_min: f64,
    /// `I − H S H^T`, absent without state weights.
    pub state_min: Option<f64>,
    /// `1 − x_v^T S_0(i)^{-1} x_v` over all hull vertices (cost-bound only).
    pub hull_min: Option<f64>,
    pub verified: bool,
}

/// `{x : x^T S_0(i)^{-1} x ≤ 1}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionEllipsoid {
    pub mode: usize,
    /// Shape matrix `S_0(i)`, row-major.
    pub shape: Vec<f64>,
    pub trace: f64,
}

#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub kind: ProblemKind,
    pub gains: ControllerGains,
    pub s: Vec<ModeIndexedSet>,
    pub y: Vec<Vec<Matrix>>,
    pub beta: Option<f64>,
    pub objective: f64,
    pub closed_loop_radius: f64,
    /// `P_k(i) = S_k(i)^{-1}`; `epsilon` records the smallest eigenvalue
    /// among them.
    pub certificate: LyapunovCertificate,
    pub checks: VerificationChecks,
    pub region: Vec<RegionEllipsoid>,
    /// `Σ_i ρ_i tr S_0(i)` (uniform ρ for the cost-bound problem).
    pub region_trace: f64,
    pub solve_time: Duration,
    pub iterations: usize,
    pub solver_diagnostics: String,
    /// State unit `c` the program was solved in.
    pub state_scale: f64,
}

impl SynthesisResult {
    pub fn closed_loop(&self, model: &PeriodicMjlsModel) -> Result<ClosedLoopSystem> {
        close_loop(model, &self.gains)
    }

    /// Largest `x^T P_0(i) x` over all modes.
    pub fn max_initial_value(&self, x: &DVector<f64>) -> f64 {
        (0..self.certificate.p[0].num_modes())
            .map(|i| self.certificate.value(0, i, x))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone)]
pub enum SynthesisOutcome {
    Solved(Box<SynthesisResult>),
    Infeasible { diagnostics: String },
}

impl SynthesisOutcome {
    pub fn solved(self) -> Option<SynthesisResult> {
        match self {
            SynthesisOutcome::Solved(r) => Some(*r),
            SynthesisOutcome::Infeasible { .. } => None,
        }
    }
}

/// Solves the cost-bound program and verifies the result.
///
/// The program is solved in state units `x̃ = x / c` with `c` the largest
/// hull-vertex entry, which keeps `S` and `β` of order one; the solver
/// re-check and [`VerificationChecks`] refer to these units, everything else
/// in the result is mapped back (`S = c² S̃`, `Y = c² Ỹ`, `β = c² β̃`).
pub fn synthesize_p1(
    model: &PeriodicMjlsModel,
    spec: &SynthesisSpecP1,
    epsilon: f64,
    backend: &dyn SdpBackend,
) -> Result<SynthesisOutcome> {
    spec.validate(model)?;
    let scale = spec
        .hull_vertices
        .iter()
        .map(|v| v.amax())
        .fold(0.0, f64::max);
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let scaled = spec.scaled(scale);
    let (problem, layout) = build_p1_sdp(model, &scaled, epsilon)?;
    let rho = vec![1.0 / model.num_modes as f64; model.num_modes];
    let checks = CheckInputs {
        nu: vec![1.0; model.period],
        cost: Some((&scaled.q, &scaled.r)),
        u_max: &scaled.u_max,
        w: scaled.w.as_deref(),
        hull: Some(&scaled.hull_vertices),
    };
    let outcome = finish(
        model, &problem, &layout, epsilon, backend, &rho, &checks, None,
    )?;
    Ok(outcome.unscaled(scale))
}

/// Solves the region program and verifies the result, in state units
/// `x̃ = x / c` with `c = min(1 / sqrt(max W), max u_max)` (see
/// [`synthesize_p1`]).
pub fn synthesize_p2(
    model: &PeriodicMjlsModel,
    spec: &SynthesisSpecP2,
    epsilon: f64,
    backend: &dyn SdpBackend,
) -> Result<SynthesisOutcome> {
    spec.validate(model)?;
    let largest = spec
        .w
        .iter()
        .flat_map(|set| set.iter().map(max_abs))
        .fold(0.0, f64::max);
    let from_w = if largest > 0.0 {
        1.0 / largest.sqrt()
    } else {
        f64::INFINITY
    };
    // the state bound may be inactive; the control bound then limits the region
    let from_u = spec.u_max.iter().copied().fold(0.0, f64::max);
    let scale = from_w.min(from_u);
    let scaled = spec.scaled(scale);
    let (problem, layout) = build_p2_sdp(model, &scaled, epsilon)?;
    let checks = CheckInputs {
        nu: scaled.nu.clone(),
        cost: None,
        u_max: &scaled.u_max,
        w: Some(&scaled.w),
        hull: None,
    };
    let outcome = finish(
        model,
        &problem,
        &layout,
        epsilon,
        backend,
        &scaled.rho,
        &checks,
        Some(scaled.nu.clone()),
    )?;
    Ok(outcome.unscaled(scale))
}

impl SynthesisSpecP1 {
    /// The same data in state units `x / c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            q: self.q.clone(),
            r: self.r.clone(),
            u_max: self.u_max.iter().map(|u| u / c).collect(),
            w: self
                .w
                .as_ref()
                .map(|w| w.iter().map(|set| set.map(|m| m * (c * c))).collect()),
            hull_vertices: self.hull_vertices.iter().map(|v| v / c).collect(),
        }
    }
}

impl SynthesisSpecP2 {
    /// The same data in state units `x / c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            nu: self.nu.clone(),
            u_max: self.u_max.iter().map(|u| u / c).collect(),
            w: self.w.iter().map(|set| set.map(|m| m * (c * c))).collect(),
            rho: self.rho.clone(),
        }
    }
}

impl SynthesisOutcome {
    fn unscaled(self, c: f64) -> Self {
        match self {
            SynthesisOutcome::Solved(mut r) => {
                let c2 = c * c;
                r.state_scale = c;
                r.s = r.s.iter().map(|set| set.map(|m| m * c2)).collect();
                for row in &mut r.y {
                    for y in row.iter_mut() {
                        *y *= c2;
                    }
                }
                r.beta = r.beta.map(|b| b * c2);
                r.objective *= c2;
                for e in &mut r.region {
                    e.shape.iter_mut().for_each(|v| *v *= c2);
                    e.trace *= c2;
                }
                r.region_trace *= c2;
                let cert = &mut r.certificate;
                cert.p = cert.p.iter().map(|set| set.map(|m| m / c2)).collect();
                cert.epsilon /= c2;
                cert.residuals.iter_mut().flatten().for_each(|v| *v /= c2);
                SynthesisOutcome::Solved(r)
            }
            other => other,
        }
    }
}

/// Problem data needed to recompute every inequality.
pub struct CheckInputs<'a> {
    pub nu: Vec<f64>,
    /// `(Q, R)`; the stage cost enters the decrease inequality as `M / β`.
    pub cost: Option<(&'a ModeIndexedSet, &'a ModeIndexedSet)>,
    pub u_max: &'a [f64],
    pub w: Option<&'a [ModeIndexedSet]>,
    pub hull: Option<&'a [DVector<f64>]>,
}

#[allow(clippy::too_many_arguments)]
fn finish(
    model: &PeriodicMjlsModel,
    problem: &SdpProblem,
    layout: &SynthesisLayout,
    epsilon: f64,
    backend: &dyn SdpBackend,
    rho: &[f64],
    inputs: &CheckInputs,
    nu: Option<Vec<f64>>,
) -> Result<SynthesisOutcome> {
    let solution = sdp::solve(problem, backend)?;
    match solution.status {
        SolveStatus::Infeasible => {
            return Ok(SynthesisOutcome::Infeasible {
                diagnostics: solution.diagnostics,
            })
        }
        SolveStatus::NumericalFailure => return Err(Error::NumericalFailure(solution.diagnostics)),
        SolveStatus::Optimal => {}
    }
    let s = layout
        .s
        .iter()
        .map(|row| {
            ModeIndexedSet::new(
                row.iter()
                    .map(|&v| symmetrize(&solution.matrix(problem, v)))
                    .collect(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let y: Vec<Vec<Matrix>> = layout
        .y
        .iter()
        .map(|row| row.iter().map(|&v| solution.matrix(problem, v)).collect())
        .collect();
    let gains = extract_gains(&s, &y, epsilon)?;
    let beta = layout.beta.map(|b| solution.scalar(problem, b));
    let checks = verify_solution(model, &s, &y, &gains, beta, inputs)?;

    let p = s
        .iter()
        .map(|set| {
            set.iter()
                .map(|m| spd_inverse(m).map(|inv| symmetrize(&inv)))
                .collect::<Result<Vec<_>>>()
                .and_then(ModeIndexedSet::new)
        })
        .collect::<Result<Vec<_>>>()?;
    let min_p = p
        .iter()
        .flat_map(|set| set.iter().map(min_eigenvalue))
        .fold(f64::INFINITY, f64::min);
    let mut certificate = LyapunovCertificate {
        p,
        nu,
        epsilon: min_p,
        residuals: Vec::new(),
    };
    verify_certificate(&mut certificate, &close_loop(model, &gains)?)?;

    let region: Vec<RegionEllipsoid> = s[0]
        .iter()
        .enumerate()
        .map(|(mode, m)| RegionEllipsoid {
            mode,
            shape: crate::linalg::to_row_major(m),
            trace: m.trace(),
        })
        .collect();
    let region_trace = region.iter().zip(rho).map(|(e, r)| e.trace * r).sum();
    Ok(SynthesisOutcome::Solved(Box::new(SynthesisResult {
        kind: layout.kind,
        gains,
        s,
        y,
        beta,
        objective: solution.objective_value,
        closed_loop_radius: checks.closed_loop_radius,
        certificate,
        checks,
        region,
        region_trace,
        solve_time: solution.solve_time,
        iterations: solution.iterations,
        solver_diagnostics: solution.diagnostics,
        state_scale: 1.0,
    })))
}

/// Recomputes every synthesis inequality from `(S, Y, K)` and the model.
pub fn verify_solution(
    model: &PeriodicMjlsModel,
    s: &[ModeIndexedSet],
    y: &[Vec<Matrix>],
    gains: &ControllerGains,
    beta: Option<f64>,
    inputs: &CheckInputs,
) -> Result<VerificationChecks> {
    let cl = close_loop(model, gains)?;
    let closed_loop_radius = spectral_radius(&one_period_operator(&cl))?;
    let p = s
        .iter()
        .map(|set| {
            set.iter()
                .map(|m| spd_inverse(m).map(|inv| symmetrize(&inv)))
                .collect::<Result<Vec<_>>>()
                .and_then(ModeIndexedSet::new)
        })
        .collect::<Result<Vec<_>>>()?;
    let period = model.period;
    let modes = model.num_modes;
    let mut gain_residual: f64 = 0.0;
    let mut schur_min = f64::INFINITY;
    let mut lyapunov_min = f64::INFINITY;
    let mut invariance_min = f64::INFINITY;
    let mut control_min = f64::INFINITY;
    let mut state_min: Option<f64> = None;
    let cost = match (inputs.cost, beta) {
        (Some((q, r)), Some(beta)) => Some((q, r, beta)),
        (Some(_), None) => {
            return Err(Error::Precondition("stage cost given without β".into()));
        }
        _ => None,
    };
    for k in 0..period {
        let next = (k + 1) % period;
        for i in 0..modes {
            let (s_ki, y_ki, k_ki, p_ki) = (&s[k][i], &y[k][i], gains.gain(k, i), &p[k][i]);
            gain_residual =
                gain_residual.max(max_abs(&(k_ki * s_ki - y_ki)) / (1.0 + max_abs(y_ki)));
            let nu = inputs.nu[k];
            let gamma = model.a(k, i) * s_ki + model.b(k, i) * y_ki;
            let e_inv = expected(&p[next], &model.transition, i);
            let mut schur = s_ki * nu - gamma.transpose() * &e_inv * &gamma;
            let mut lyap = p_ki * nu - l_op(&p[next], &cl, k, i)?;
            if let Some((q, r, beta)) = cost {
                schur -= (s_ki * &q[i] * s_ki + y_ki.transpose() * &r[i] * y_ki) / beta;
                lyap -= (&q[i] + k_ki.transpose() * &r[i] * k_ki) / beta;
            }
            schur_min = schur_min.min(min_eigenvalue(&schur));
            lyapunov_min = lyapunov_min.min(min_eigenvalue(&lyap));
            let phi = cl.phi(k, i);
            for p_next in p[next].iter() {
                invariance_min =
                    invariance_min.min(min_eigenvalue(&(p_ki - phi.transpose() * p_next * phi)));
            }
            let u2 = inputs.u_max[i].powi(2);
            let control =
                Matrix::identity(model.n_u, model.n_u) * u2 - y_ki * p_ki * y_ki.transpose();
            control_min = control_min.min(min_eigenvalue(&control));
            if let Some(w) = inputs.w {
                let h = psd_sqrt(&w[k][i])?;
                let state = Matrix::identity(model.n_x, model.n_x) - &h * s_ki * h.transpose();
                let m = min_eigenvalue(&state);
                state_min = Some(state_min.map_or(m, |v: f64| v.min(m)));
            }
        }
    }
    let hull_min = inputs.hull.map(|vertices| {
        vertices
            .iter()
            .flat_map(|x| {
                p[0].iter()
                    .map(move |p0| 1.0 - (x.transpose() * p0 * x)[(0, 0)])
            })
            .fold(f64::INFINITY, f64::min)
    });
    let verified = closed_loop_radius < 1.0
        && gain_residual <= GAIN_RESIDUAL_TOL
        && [schur_min, lyapunov_min, invariance_min, control_min]
            .into_iter()
            .chain(state_min)
            .chain(hull_min)
            .all(|m| m >= -CHECK_TOL);
    Ok(VerificationChecks {
        closed_loop_radius,
        gain_residual,
        schur_min,
        lyapunov_min,
        invariance_min,
        control_min,
        state_min,
        hull_min,
        verified,
    })
}

/// `Σ_j p_ij V(j)`.
fn expected(v: &ModeIndexedSet, transition: &Matrix, i: usize) -> Matrix {
    let mut e = Matrix::zeros(v.dim(), v.dim());
    for (j, m) in v.iter().enumerate() {
        e += m * transition[(i, j)];
    }
    e
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::benchmark_system;
    use crate::sdp::ClarabelBackend;

    fn scalar(v: f64) -> Matrix {
        Matrix::from_element(1, 1, v)
    }

    fn scalar_model(a: f64, b: f64, period: usize) -> PeriodicMjlsModel {
        PeriodicMjlsModel {
            n_x: 1,
            n_u: 1,
            num_modes: 1,
            period,
            a: vec![vec![scalar(a)]; period],
            b: vec![vec![scalar(b)]; period],
            transition: scalar(1.0),
        }
    }

    fn block_names(problem: &SdpProblem) -> Vec<&str> {
        problem.blocks().iter().map(|b| b.name.as_str()).collect()
    }

    #[test]
    fn benchmark_p1_block_count() {
        let model = benchmark_system();
        let spec = benchmark_p1_spec();
        let (problem, layout) = build_p1_sdp(&model, &spec, DEFAULT_EPSILON).unwrap();
        let (t, n, l) = (10, 2, 4);
        assert_eq!(problem.blocks().len(), t * n * (2 + n) + l * n);
        assert!(block_names(&problem)
            .iter()
            .all(|b| !b.starts_with("state")));
        assert!(layout.beta.is_some());
        // cost block: S, N successor blocks, βI_{n_x}, βI_{n_u}
        let cost = problem
            .blocks()
            .iter()
            .find(|b| b.name == "cost_decrease_3(1)")
            .unwrap();
        assert_eq!(cost.dim, 2 + 2 * 2 + 2 + 1);
    }

    #[test]
    fn origin_hull_reduces_to_psd() {
        let model = scalar_model(0.5, 1.0, 1);
        let mut spec = benchmark_p1_spec();
        spec.q = ModeIndexedSet::zeros(1, 1);
        spec.r = ModeIndexedSet::identity(1, 1);
        spec.u_max = vec![1.0];
        spec.hull_vertices = vec![DVector::zeros(1)];
        let (problem, _) = build_p1_sdp(&model, &spec, 1e-7).unwrap();
        let hull = problem
            .blocks()
            .iter()
            .find(|b| b.name == "hull_0(0)")
            .unwrap();
        let expected = Matrix::from_row_slice(2, 2, &[1.0 - 1e-7, 0.0, 0.0, -1e-7]);
        assert_eq!(hull.constant, expected);
    }

    #[test]
    fn state_blocks_only_with_weights() {
        let model = benchmark_system();
        let mut spec = benchmark_p1_spec();
        spec.w = Some(benchmark_p2_spec().w);
        let (problem, _) = build_p1_sdp(&model, &spec, DEFAULT_EPSILON).unwrap();
        let states = block_names(&problem)
            .iter()
            .filter(|b| b.starts_with("state"))
            .count();
        assert_eq!(states, 20);
    }

    #[test]
    fn invalid_inputs_rejected() {
        let model = benchmark_system();
        assert!(matches!(
            build_p1_sdp(&model, &benchmark_p1_spec(), 0.0),
            Err(Error::Precondition(_))
        ));
        let mut spec = benchmark_p1_spec();
        spec.u_max[1] = 0.0;
        assert!(build_p1_sdp(&model, &spec, 1e-7).is_err());
        let mut spec = benchmark_p1_spec();
        spec.r = ModeIndexedSet::zeros(2, 1);
        assert!(build_p1_sdp(&model, &spec, 1e-7).is_err());
        let mut spec = benchmark_p2_spec();
        spec.nu = vec![1.0; 10];
        assert!(matches!(
            build_p2_sdp(&model, &spec, 1e-7),
            Err(Error::Precondition(_))
        ));
        let mut spec = benchmark_p2_spec();
        spec.rho = vec![0.7, 0.7];
        assert!(build_p2_sdp(&model, &spec, 1e-7).is_err());
    }

    #[test]
    fn objective_follows_rho() {
        let model = benchmark_system();
        let mut spec = benchmark_p2_spec();
        spec.rho = vec![1.0, 0.0];
        let (problem, layout) = build_p2_sdp(&model, &spec, DEFAULT_EPSILON).unwrap();
        let c = problem.objective_vector();
        let touched: Vec<usize> = c
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(j, _)| j)
            .collect();
        let s00 = problem.variable(layout.s[0][0]);
        assert!(!touched.is_empty());
        assert!(touched
            .iter()
            .all(|&j| j >= s00.offset && j < s00.offset + s00.len()));
    }

    #[test]
    fn extract_gains_trivial() {
        let s = vec![ModeIndexedSet::identity(2, 2)];
        let y = vec![vec![
            Matrix::from_row_slice(1, 2, &[1.0, -2.0]),
            Matrix::from_row_slice(1, 2, &[0.5, 3.0]),
        ]];
        let g = extract_gains(&s, &y, 1e-7).unwrap();
        assert_eq!(g.k[0], y[0]);
        let zero = vec![vec![Matrix::zeros(1, 2); 2]];
        let s2 = vec![ModeIndexedSet::new(vec![
            Matrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
            Matrix::identity(2, 2) * 5.0,
        ])
        .unwrap()];
        assert!(extract_gains(&s2, &zero, 1e-7)
            .unwrap()
            .k
            .iter()
            .flatten()
            .all(|k| k.iter().all(|v| *v == 0.0)));
        let singular = vec![ModeIndexedSet::new(vec![Matrix::zeros(2, 2); 2]).unwrap()];
        assert!(matches!(
            extract_gains(&singular, &zero, 1e-7),
            Err(Error::NearlySingular { .. })
        ));
    }

    #[test]
    fn benchmark_p1_solves() {
        let model = benchmark_system();
        let r = synthesize_p1(
            &model,
            &benchmark_p1_spec(),
            DEFAULT_EPSILON,
            &ClarabelBackend::default(),
        )
        .unwrap()
        .solved()
        .expect("feasible");
        assert!(r.checks.verified, "{:?}", r.checks);
        assert!(r.closed_loop_radius < 0.1);
        let beta = r.beta.unwrap();
        assert!(beta.is_finite() && beta > 0.0);
        assert!((r.objective - beta).abs() <= 1e-6 * beta);
        for (k, row) in r.y.iter().enumerate() {
            for (i, y) in row.iter().enumerate() {
                let residual = max_abs(&(r.gains.gain(k, i) * &r.s[k][i] - y));
                assert!(residual <= GAIN_RESIDUAL_TOL * (1.0 + max_abs(y)));
            }
        }
        // hull vertices lie inside every initial ellipsoid
        for v in &benchmark_p1_spec().hull_vertices {
            assert!(r.max_initial_value(v) <= 1.0 + 1e-6);
        }
        assert!(r
            .certificate
            .residuals
            .iter()
            .flatten()
            .all(|&x| x >= -1e-8));
    }

    #[test]
    fn benchmark_p2_solves() {
        let model = benchmark_system();
        let spec = benchmark_p2_spec();
        let r = synthesize_p2(&model, &spec, DEFAULT_EPSILON, &ClarabelBackend::default())
            .unwrap()
            .solved()
            .expect("feasible");
        assert!(r.checks.verified, "{:?}", r.checks);
        assert!(r.closed_loop_radius < 0.1);
        assert!(r.checks.state_min.is_some());
        assert_eq!(r.certificate.nu.as_deref(), Some(spec.nu.as_slice()));
        assert!((r.objective + r.region_trace).abs() <= 1e-6 * r.region_trace);
        assert_eq!(r.region.len(), 2);
    }

    #[test]
    fn tiny_control_bound_infeasible() {
        let model = benchmark_system();
        let mut spec = benchmark_p1_spec();
        spec.u_max = vec![0.001; 2];
        let outcome =
            synthesize_p1(&model, &spec, DEFAULT_EPSILON, &ClarabelBackend::default()).unwrap();
        assert!(matches!(outcome, SynthesisOutcome::Infeasible { .. }));
    }

    #[test]
    fn no_authority_stable_plant() {
        let model = scalar_model(0.5, 0.0, 1);
        let spec = SynthesisSpecP1 {
            q: ModeIndexedSet::zeros(1, 1),
            r: ModeIndexedSet::identity(1, 1),
            u_max: vec![1.0],
            w: None,
            hull_vertices: vec![DVector::zeros(1)],
        };
        let r = synthesize_p1(&model, &spec, DEFAULT_EPSILON, &ClarabelBackend::default())
            .unwrap()
            .solved()
            .expect("feasible");
        assert!(r.gains.gain(0, 0)[(0, 0)].abs() < 1e-6);
        assert!(r.beta.unwrap() < 1e-5);
        assert!(r.checks.verified);
    }

    #[test]
    fn unstabilizable_plant_infeasible() {
        let model = scalar_model(2.0, 0.0, 1);
        let spec = SynthesisSpecP2 {
            nu: vec![0.9],
            u_max: vec![1.0],
            w: vec![ModeIndexedSet::identity(1, 1)],
            rho: vec![1.0],
        };
        let outcome =
            synthesize_p2(&model, &spec, DEFAULT_EPSILON, &ClarabelBackend::default()).unwrap();
        assert!(matches!(outcome, SynthesisOutcome::Infeasible { .. }));
    }

    #[test]
    fn looser_state_bound_enlarges_region() {
        let model = benchmark_system();
        let backend = ClarabelBackend::default();
        let tight = synthesize_p2(&model, &benchmark_p2_spec(), DEFAULT_EPSILON, &backend)
            .unwrap()
            .solved()
            .unwrap();
        let mut loose_spec = benchmark_p2_spec();
        let delta: f64 = 1e6;
        loose_spec.w = vec![ModeIndexedSet::identity(2, 2).map(|m| m / delta.powi(2)); 10];
        let loose = synthesize_p2(&model, &loose_spec, DEFAULT_EPSILON, &backend)
            .unwrap()
            .solved()
            .unwrap();
        assert!(loose.checks.verified, "{:?}", loose.checks);
        assert!(loose.region_trace > tight.region_trace);
    }

    #[test]
    fn spec_files_round_trip_and_stay_distinct() {
        let model = benchmark_system();
        let p1 = serde_json::to_string(&benchmark_p1_spec().to_file()).unwrap();
        let p2 = serde_json::to_string(&benchmark_p2_spec().to_file()).unwrap();
        assert_eq!(
            SynthesisSpecP1::from_json_str(&p1, &model).unwrap(),
            benchmark_p1_spec()
        );
        assert_eq!(
            SynthesisSpecP2::from_json_str(&p2, &model).unwrap(),
            benchmark_p2_spec()
        );
        assert!(SynthesisSpecP2::from_json_str(&p1, &model).is_err());
        assert!(SynthesisSpecP1::from_json_str(&p2, &model).is_err());
    }
}
