//! Monte Carlo simulation, analytic second-moment propagation and
//! probability-one constraint audits.
//!
//! Trajectory `t` of a batch draws everything (mode chain, initial state)
//! from its own ChaCha8 stream `(seed, t)`, and batch statistics are merged
//! in trajectory order, so sequential and parallel runs are bit-identical.

use std::io::Write;

use nalgebra::DVector;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::linalg::{max_abs, min_eigenvalue, Matrix};
use crate::model::{ClosedLoopSystem, ControllerGains, ModeIndexedSet};
use crate::operators::t_step;
use crate::stability::LyapunovCertificate;
use crate::synthesis::validate_distribution;

/// Relative slack on `‖u‖ ≤ u_max` and `x^T W x ≤ 1`.
pub const CONSTRAINT_TOL: f64 = 1e-6;
/// Relative slack on `V_{k+1} ≤ V_k`.
pub const MONOTONICITY_TOL: f64 = 1e-9;

/// How initial states are drawn.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialSampler {
    Fixed(DVector<f64>),
    /// Uniform (Dirichlet(1, …, 1)) convex combinations of the vertices.
    Hull(Vec<DVector<f64>>),
    /// Uniform inside `{x : x^T S(i)^{-1} x ≤ 1}` for the initial mode `i`.
    Ellipsoids(ModeIndexedSet),
}

impl InitialSampler {
    pub fn dim(&self) -> usize {
        match self {
            InitialSampler::Fixed(x) => x.len(),
            InitialSampler::Hull(v) => v.first().map_or(0, |x| x.len()),
            InitialSampler::Ellipsoids(s) => s.dim(),
        }
    }

    fn validate(&self, n_x: usize, modes: usize) -> Result<()> {
        let ok = match self {
            InitialSampler::Fixed(x) => x.len() == n_x,
            InitialSampler::Hull(v) => !v.is_empty() && v.iter().all(|x| x.len() == n_x),
            InitialSampler::Ellipsoids(s) => {
                if s.dim() != n_x || s.num_modes() != modes {
                    false
                } else {
                    for (i, m) in s.iter().enumerate() {
                        if m.clone().cholesky().is_none() {
                            return Err(Error::Precondition(format!(
                                "initial ellipsoid {i} is not positive definite"
                            )));
                        }
                    }
                    true
                }
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "initial-state sampler does not match n_x = {n_x}, {modes} modes"
            )))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, mode: usize, rng: &mut R) -> DVector<f64> {
        match self {
            InitialSampler::Fixed(x) => x.clone(),
            InitialSampler::Hull(vertices) => {
                if vertices.len() == 1 {
                    return vertices[0].clone();
                }
                let w: Vec<f64> = vertices.iter().map(|_| Exp1.sample(rng)).collect();
                let total: f64 = w.iter().sum();
                let mut x = DVector::zeros(vertices[0].len());
                for (v, wi) in vertices.iter().zip(&w) {
                    x.axpy(wi / total, v, 1.0);
                }
                x
            }
            InitialSampler::Ellipsoids(shapes) => {
                let n = shapes.dim();
                let mut z = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
                let norm = z.norm();
                let radius = rng.random::<f64>().powf(1.0 / n as f64);
                if norm > 0.0 {
                    z *= radius / norm;
                }
                let l = shapes[mode].clone().cholesky().expect("validated").unpack();
                l * z
            }
        }
    }

    /// `E[x_0 x_0^T 1{ω_0 = i}]` under initial-mode distribution `rho`.
    pub fn second_moment(&self, rho: &[f64]) -> Result<ModeIndexedSet> {
        let n = self.dim();
        let entries = match self {
            InitialSampler::Fixed(x) => {
                let outer = x * x.transpose();
                rho.iter().map(|r| &outer * *r).collect()
            }
            InitialSampler::Hull(vertices) => {
                // E[w_a w_b] = (1 + δ_ab) / (l (l + 1)) for flat Dirichlet weights
                let l = vertices.len() as f64;
                let mut sum = DVector::zeros(n);
                let mut outer = Matrix::zeros(n, n);
                for v in vertices {
                    sum += v;
                    outer += v * v.transpose();
                }
                let m = (outer + &sum * sum.transpose()) / (l * (l + 1.0));
                rho.iter().map(|r| &m * *r).collect()
            }
            InitialSampler::Ellipsoids(shapes) => shapes
                .iter()
                .zip(rho)
                .map(|(s, r)| s * (*r / (n as f64 + 2.0)))
                .collect(),
        };
        ModeIndexedSet::new(entries)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub horizon: usize,
    pub n_trajectories: usize,
    pub seed: u64,
    pub initial: InitialSampler,
    pub rho: Vec<f64>,
    pub execution: Execution,
}

impl SimulationConfig {
    pub fn validate(&self, cl: &ClosedLoopSystem) -> Result<()> {
        if self.horizon == 0 || self.n_trajectories == 0 {
            return Err(Error::Precondition(
                "horizon and trajectory count must be at least 1".into(),
            ));
        }
        validate_distribution(&self.rho, cl.num_modes())?;
        self.initial.validate(cl.n_x(), cl.num_modes())
    }

    /// The generator for trajectory `index`.
    pub fn trajectory_rng(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        rng
    }
}

/// `ω_0 ~ rho`, `ω_{k+1} ~ P[ω_k, ·]`; returns `horizon + 1` modes.
pub fn sample_mode_chain<R: Rng + ?Sized>(
    transition: &Matrix,
    rho: &[f64],
    horizon: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let initial = WeightedIndex::new(rho)
        .map_err(|e| Error::InvalidProblem(format!("initial distribution: {e}")))?;
    let rows = (0..transition.nrows())
        .map(|i| {
            WeightedIndex::new(transition.row(i).iter().copied())
                .map_err(|e| Error::InvalidProblem(format!("transition row {i}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut modes = Vec::with_capacity(horizon + 1);
    let mut current = initial.sample(rng);
    modes.push(current);
    for _ in 0..horizon {
        current = rows[current].sample(rng);
        modes.push(current);
    }
    Ok(modes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    /// `ω_0 … ω_H`
    pub modes: Vec<usize>,
    /// `x_0 … x_H`
    pub states: Vec<DVector<f64>>,
    /// `u_0 … u_{H-1}`
    pub controls: Vec<DVector<f64>>,
    /// `V_k = x_k^T P_k(ω_k) x_k` when a certificate is supplied.
    pub lyapunov_values: Option<Vec<f64>>,
}

impl TrajectoryRecord {
    pub fn horizon(&self) -> usize {
        self.states.len() - 1
    }
}

/// `x_{k+1} = φ_k(ω_k) x_k`, recording `u_k = K_k(ω_k) x_k` beforehand.
///
/// Without gains the controls are recorded as empty vectors.
pub fn simulate_trajectory(
    cl: &ClosedLoopSystem,
    gains: Option<&ControllerGains>,
    x0: &DVector<f64>,
    modes: &[usize],
    certificate: Option<&LyapunovCertificate>,
) -> Result<TrajectoryRecord> {
    if modes.is_empty() {
        return Err(Error::Precondition("mode sequence is empty".into()));
    }
    if x0.len() != cl.n_x() {
        return Err(Error::Shape(format!(
            "initial state has {} entries, expected {}",
            x0.len(),
            cl.n_x()
        )));
    }
    if let Some(&bad) = modes.iter().find(|&&m| m >= cl.num_modes()) {
        return Err(Error::ModeOutOfRange {
            index: bad,
            modes: cl.num_modes(),
        });
    }
    let horizon = modes.len() - 1;
    let mut states = Vec::with_capacity(horizon + 1);
    let mut controls = Vec::with_capacity(horizon);
    states.push(x0.clone());
    for k in 0..horizon {
        let x = &states[k];
        controls.push(match gains {
            Some(g) => g.gain(k, modes[k]) * x,
            None => DVector::zeros(0),
        });
        let next = cl.phi(k, modes[k]) * x;
        states.push(next);
    }
    let lyapunov_values = certificate.map(|c| {
        states
            .iter()
            .zip(modes)
            .enumerate()
            .map(|(k, (x, &m))| c.value(k, m, x))
            .collect()
    });
    Ok(TrajectoryRecord {
        modes: modes.to_vec(),
        states,
        controls,
        lyapunov_values,
    })
}

/// `Φ(k1, k0) = φ_{k1-1}(ω_{k1-1}) ⋯ φ_{k0}(ω_{k0})`.
pub fn state_transition(cl: &ClosedLoopSystem, modes: &[usize], k0: usize, k1: usize) -> Matrix {
    let mut phi = Matrix::identity(cl.n_x(), cl.n_x());
    for (k, &mode) in modes.iter().enumerate().take(k1).skip(k0) {
        phi = cl.phi(k, mode) * phi;
    }
    phi
}

/// Constraints and costs checked on every sampled path.
#[derive(Debug, Clone, Default)]
pub struct ConstraintAudit {
    pub u_max: Option<Vec<f64>>,
    /// `w[k][i]`, period-indexed.
    pub w: Option<Vec<ModeIndexedSet>>,
    /// `(Q, R)` for the accumulated cost `Σ x^T Q x + u^T R u`.
    pub cost: Option<(ModeIndexedSet, ModeIndexedSet)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Quantiles {
    pub q05: Vec<f64>,
    pub q50: Vec<f64>,
    pub q95: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostStatistics {
    pub mean: f64,
    pub std_error: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloSummary {
    pub n_trajectories: usize,
    pub horizon: usize,
    pub seed: u64,
    /// Empirical `E[‖x_k‖²]`, `k = 0 … H`.
    pub mean_square_norm: Vec<f64>,
    pub mean_square_std_error: Vec<f64>,
    pub mean_norm: Vec<f64>,
    pub state_norm_quantiles: Quantiles,
    pub control_norm_quantiles: Quantiles,
    /// Empirical `E[x_k x_k^T]`.
    #[serde(skip)]
    pub second_moment: Vec<Matrix>,
    pub control_checks: usize,
    pub control_violations: usize,
    /// `max ‖u_k‖ / u_max(ω_k)`.
    pub max_control_ratio: Option<f64>,
    pub state_checks: usize,
    pub state_violations: usize,
    /// `max x_k^T W_k(ω_k) x_k`.
    pub max_state_level: Option<f64>,
    pub lyapunov_checks: usize,
    pub lyapunov_increases: usize,
    /// `max V_{k+1} / V_k` over steps with `V_k > 0`.
    pub max_lyapunov_ratio: Option<f64>,
    pub cost: Option<CostStatistics>,
    /// Per-period decay ratio of the mean square norm over the second half.
    pub decay_ratio: Option<f64>,
}

struct PathStats {
    sq_norms: Vec<f64>,
    control_norms: Vec<f64>,
    control_violations: usize,
    max_control_ratio: f64,
    state_violations: usize,
    max_state_level: f64,
    lyapunov_increases: usize,
    max_lyapunov_ratio: f64,
    cost: f64,
}

fn path_stats(record: &TrajectoryRecord, audit: &ConstraintAudit) -> PathStats {
    let horizon = record.horizon();
    let mut stats = PathStats {
        sq_norms: record.states.iter().map(|x| x.norm_squared()).collect(),
        control_norms: record.controls.iter().map(|u| u.norm()).collect(),
        control_violations: 0,
        max_control_ratio: 0.0,
        state_violations: 0,
        max_state_level: 0.0,
        lyapunov_increases: 0,
        max_lyapunov_ratio: 0.0,
        cost: 0.0,
    };
    for k in 0..horizon {
        let mode = record.modes[k];
        if let Some(u_max) = &audit.u_max {
            let ratio = stats.control_norms[k] / u_max[mode];
            stats.max_control_ratio = stats.max_control_ratio.max(ratio);
            if ratio > 1.0 + CONSTRAINT_TOL {
                stats.control_violations += 1;
            }
        }
        if let Some((q, r)) = &audit.cost {
            let x = &record.states[k];
            let u = &record.controls[k];
            stats.cost += (x.transpose() * &q[mode] * x)[(0, 0)];
            if u.len() == r.dim() {
                stats.cost += (u.transpose() * &r[mode] * u)[(0, 0)];
            }
        }
    }
    if let Some(w) = &audit.w {
        for (k, x) in record.states.iter().enumerate() {
            let level = (x.transpose() * &w[k % w.len()][record.modes[k]] * x)[(0, 0)];
            stats.max_state_level = stats.max_state_level.max(level);
            if level > 1.0 + CONSTRAINT_TOL {
                stats.state_violations += 1;
            }
        }
    }
    if let Some(v) = &record.lyapunov_values {
        for pair in v.windows(2) {
            if pair[1] > pair[0] * (1.0 + MONOTONICITY_TOL) {
                stats.lyapunov_increases += 1;
            }
            if pair[0] > 0.0 {
                stats.max_lyapunov_ratio = stats.max_lyapunov_ratio.max(pair[1] / pair[0]);
            }
        }
    }
    stats
}

fn run_one(
    cl: &ClosedLoopSystem,
    gains: Option<&ControllerGains>,
    config: &SimulationConfig,
    certificate: Option<&LyapunovCertificate>,
    index: usize,
) -> Result<TrajectoryRecord> {
    let mut rng = config.trajectory_rng(index);
    let modes = sample_mode_chain(cl.transition(), &config.rho, config.horizon, &mut rng)?;
    let x0 = config.initial.sample(modes[0], &mut rng);
    simulate_trajectory(cl, gains, &x0, &modes, certificate)
}

/// Draws the `index`-th trajectory of a batch exactly as [`monte_carlo`] does.
pub fn batch_trajectory(
    cl: &ClosedLoopSystem,
    gains: Option<&ControllerGains>,
    config: &SimulationConfig,
    certificate: Option<&LyapunovCertificate>,
    index: usize,
) -> Result<TrajectoryRecord> {
    config.validate(cl)?;
    run_one(cl, gains, config, certificate, index)
}

/// Runs the batch, auditing every path; with `csv` set, writes one row per
/// `(trajectory, step)` in trajectory order.
pub fn monte_carlo(
    cl: &ClosedLoopSystem,
    gains: Option<&ControllerGains>,
    config: &SimulationConfig,
    audit: &ConstraintAudit,
    certificate: Option<&LyapunovCertificate>,
    mut csv: Option<&mut dyn Write>,
) -> Result<MonteCarloSummary> {
    config.validate(cl)?;
    if let Some(g) = gains {
        if g.period() != cl.period() {
            return Err(Error::Shape(
                "gains do not match the closed-loop period".into(),
            ));
        }
    }
    if let Some(u) = &audit.u_max {
        if u.len() != cl.num_modes() {
            return Err(Error::Shape("u_max does not match the mode count".into()));
        }
    }
    let (n, horizon, count) = (cl.n_x(), config.horizon, config.n_trajectories);
    let keep = csv.is_some();
    let results = map_indexed(count, config.execution, |t| {
        run_one(cl, gains, config, certificate, t).map(|rec| {
            let stats = path_stats(&rec, audit);
            let outer: Vec<Matrix> = rec.states.iter().map(|x| x * x.transpose()).collect();
            (stats, outer, keep.then_some(rec))
        })
    });

    if let Some(out) = csv.as_deref_mut() {
        write_trajectory_header(out, n)?;
    }
    let mut sum_sq = vec![0.0; horizon + 1];
    let mut sum_sq2 = vec![0.0; horizon + 1];
    let mut sum_norm = vec![0.0; horizon + 1];
    let mut second = vec![Matrix::zeros(n, n); horizon + 1];
    let mut state_norms = vec![Vec::with_capacity(count); horizon + 1];
    let mut control_norms = vec![Vec::with_capacity(count); horizon];
    let (mut control_violations, mut state_violations, mut lyapunov_increases) = (0, 0, 0);
    let (mut max_control, mut max_state, mut max_lyap) = (0.0_f64, 0.0_f64, 0.0_f64);
    let (mut cost_sum, mut cost_sq, mut cost_max) = (0.0, 0.0, f64::NEG_INFINITY);
    for (t, result) in results.into_iter().enumerate() {
        let (stats, outer, record) = result?;
        for k in 0..=horizon {
            let s = stats.sq_norms[k];
            sum_sq[k] += s;
            sum_sq2[k] += s * s;
            sum_norm[k] += s.sqrt();
            second[k] += &outer[k];
            state_norms[k].push(s.sqrt());
        }
        for (k, u) in stats.control_norms.iter().enumerate() {
            control_norms[k].push(*u);
        }
        control_violations += stats.control_violations;
        state_violations += stats.state_violations;
        lyapunov_increases += stats.lyapunov_increases;
        max_control = max_control.max(stats.max_control_ratio);
        max_state = max_state.max(stats.max_state_level);
        max_lyap = max_lyap.max(stats.max_lyapunov_ratio);
        cost_sum += stats.cost;
        cost_sq += stats.cost * stats.cost;
        cost_max = cost_max.max(stats.cost);
        if let (Some(out), Some(rec)) = (csv.as_deref_mut(), record) {
            write_trajectory_rows(out, t, &rec)?;
        }
    }
    let m = count as f64;
    let mean_square_norm: Vec<f64> = sum_sq.iter().map(|s| s / m).collect();
    let mean_square_std_error = sum_sq2
        .iter()
        .zip(&mean_square_norm)
        .map(|(s2, mean)| std_error(*s2, *mean, m))
        .collect();
    let cost = audit.cost.as_ref().map(|_| {
        let mean = cost_sum / m;
        CostStatistics {
            mean,
            std_error: std_error(cost_sq, mean, m),
            max: cost_max,
        }
    });
    let decay_ratio = decay_ratio(&mean_square_norm, cl.period());
    Ok(MonteCarloSummary {
        n_trajectories: count,
        horizon,
        seed: config.seed,
        mean_square_std_error,
        mean_norm: sum_norm.iter().map(|s| s / m).collect(),
        state_norm_quantiles: quantiles(state_norms),
        control_norm_quantiles: quantiles(control_norms),
        second_moment: second.into_iter().map(|s| s / m).collect(),
        control_checks: if audit.u_max.is_some() {
            count * horizon
        } else {
            0
        },
        control_violations,
        max_control_ratio: audit.u_max.as_ref().map(|_| max_control),
        state_checks: if audit.w.is_some() {
            count * (horizon + 1)
        } else {
            0
        },
        state_violations,
        max_state_level: audit.w.as_ref().map(|_| max_state),
        lyapunov_checks: if certificate.is_some() {
            count * horizon
        } else {
            0
        },
        lyapunov_increases,
        max_lyapunov_ratio: certificate.map(|_| max_lyap),
        cost,
        decay_ratio,
        mean_square_norm,
    })
}

fn std_error(sum_sq: f64, mean: f64, m: f64) -> f64 {
    if m < 2.0 {
        return 0.0;
    }
    let var = ((sum_sq - m * mean * mean) / (m - 1.0)).max(0.0);
    (var / m).sqrt()
}

fn quantiles(mut columns: Vec<Vec<f64>>) -> Quantiles {
    let pick = |sorted: &[f64], q: f64| {
        if sorted.is_empty() {
            return 0.0;
        }
        let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
        sorted[idx]
    };
    let mut out = Quantiles {
        q05: Vec::with_capacity(columns.len()),
        q50: Vec::with_capacity(columns.len()),
        q95: Vec::with_capacity(columns.len()),
    };
    for col in &mut columns {
        col.sort_by(f64::total_cmp);
        out.q05.push(pick(col, 0.05));
        out.q50.push(pick(col, 0.5));
        out.q95.push(pick(col, 0.95));
    }
    out
}

/// Least-squares slope of `log E‖x_k‖²` over the second half of the horizon,
/// converted to a per-period factor. `None` when the horizon is shorter than
/// four periods; `Some(0.0)` once the mean square norm has vanished.
pub fn decay_ratio(mean_square_norm: &[f64], period: usize) -> Option<f64> {
    let horizon = mean_square_norm.len().checked_sub(1)?;
    if horizon < 4 * period {
        return None;
    }
    let window: Vec<(f64, f64)> = (horizon / 2..=horizon)
        .map(|k| (k as f64, mean_square_norm[k]))
        .collect();
    if window.iter().any(|&(_, v)| v <= f64::MIN_POSITIVE) {
        return Some(0.0);
    }
    let logs: Vec<(f64, f64)> = window.iter().map(|&(k, v)| (k, v.ln())).collect();
    let n = logs.len() as f64;
    let mean_k = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_v = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = logs.iter().map(|&(k, v)| (k - mean_k) * (v - mean_v)).sum();
    let var: f64 = logs.iter().map(|&(k, _)| (k - mean_k).powi(2)).sum();
    Some((cov / var * period as f64).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayCheck {
    pub ratio: f64,
    pub decaying: bool,
}

/// Empirical mean-square decay over the second half of the horizon.
///
/// One-sided: when the second moment is carried by rare mode sequences (a
/// system that is almost surely but not mean-square stable) a finite batch
/// sees only the decaying typical paths and reports `decaying`. Use
/// [`crate::stability::check_mss_ltvpm`] for the actual test.
pub fn mss_empirical_check(cl: &ClosedLoopSystem, config: &SimulationConfig) -> Result<DecayCheck> {
    if config.horizon < 4 * cl.period() {
        return Err(Error::Precondition(format!(
            "horizon {} is shorter than four periods ({})",
            config.horizon,
            4 * cl.period()
        )));
    }
    let summary = monte_carlo(cl, None, config, &ConstraintAudit::default(), None, None)?;
    let ratio = summary.decay_ratio.expect("horizon checked");
    Ok(DecayCheck {
        ratio,
        decaying: ratio < 1.0,
    })
}

/// `X_k(i) = E[x_k x_k^T 1{ω_k = i}]` and derived quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSeries {
    pub per_mode: Vec<ModeIndexedSet>,
    /// `X_k = Σ_i X_k(i)`
    pub aggregate: Vec<Matrix>,
    /// `3 sqrt(diag X_k)` per component.
    pub sigma_envelope: Vec<Vec<f64>>,
}

impl CovarianceSeries {
    pub fn traces(&self) -> Vec<f64> {
        self.aggregate.iter().map(|x| x.trace()).collect()
    }
}

/// Exact recursion `X_{k+1} = T_k(X_k)` for `horizon` steps.
pub fn propagate_covariance(
    cl: &ClosedLoopSystem,
    x0: &ModeIndexedSet,
    horizon: usize,
) -> Result<CovarianceSeries> {
    if x0.num_modes() != cl.num_modes() || x0.dim() != cl.n_x() {
        return Err(Error::Shape(
            "initial second moments do not match the system".into(),
        ));
    }
    for (i, m) in x0.iter().enumerate() {
        if min_eigenvalue(m) < -1e-10 * max_abs(m).max(1.0) {
            return Err(Error::Precondition(format!(
                "initial second moment {i} is not positive semidefinite"
            )));
        }
    }
    let mut per_mode = Vec::with_capacity(horizon + 1);
    per_mode.push(x0.clone());
    for k in 0..horizon {
        let next = t_step(&per_mode[k], cl, k)?;
        per_mode.push(next);
    }
    let aggregate: Vec<Matrix> = per_mode.iter().map(ModeIndexedSet::sum).collect();
    let sigma_envelope = aggregate
        .iter()
        .map(|x| {
            x.diagonal()
                .iter()
                .map(|d| 3.0 * d.max(0.0).sqrt())
                .collect()
        })
        .collect();
    Ok(CovarianceSeries {
        per_mode,
        aggregate,
        sigma_envelope,
    })
}

pub fn write_trajectory_header(out: &mut dyn Write, n_x: usize) -> Result<()> {
    let states: Vec<String> = (0..n_x).map(|j| format!("x_{j}")).collect();
    writeln!(out, "traj_id,k,mode,{},u_norm,lyap_value", states.join(","))?;
    Ok(())
}

/// One row per step; `u_norm` is empty at the final step and `lyap_value`
/// empty without a certificate.
pub fn write_trajectory_rows(
    out: &mut dyn Write,
    traj_id: usize,
    rec: &TrajectoryRecord,
) -> Result<()> {
    for (k, x) in rec.states.iter().enumerate() {
        let mut line = format!("{traj_id},{k},{}", rec.modes[k]);
        for v in x.iter() {
            line.push_str(&format!(",{v}"));
        }
        match rec.controls.get(k) {
            Some(u) => line.push_str(&format!(",{}", u.norm())),
            None => line.push(','),
        }
        match rec.lyapunov_values.as_ref().map(|v| v[k]) {
            Some(v) => line.push_str(&format!(",{v}")),
            None => line.push(','),
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn write_covariance_csv(out: &mut dyn Write, series: &CovarianceSeries) -> Result<()> {
    let n = series.aggregate.first().map_or(0, |x| x.nrows());
    let cols: Vec<String> = (0..n).map(|j| format!("sigma3_{j}")).collect();
    writeln!(out, "k,trace_X,{}", cols.join(","))?;
    for (k, (x, env)) in series
        .aggregate
        .iter()
        .zip(&series.sigma_envelope)
        .enumerate()
    {
        let env: Vec<String> = env.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{k},{},{}", x.trace(), env.join(","))?;
    }
    Ok(())
}
