//! Plant, controller and closed-loop descriptions of a T-periodic Markov
//! jump linear system
//!
//! ```text
//! x_{k+1} = A_k(ω_k) x_k + B_k(ω_k) u_k,    u_k = K_k(ω_k) x_k
//! ```
//!
//! where ω_k is a homogeneous Markov chain over `N` modes with row-stochastic
//! transition matrix `P` (`p_ij = Pr[ω_{k+1} = j | ω_k = i]`). Time indices are
//! always reduced modulo the period through [`periodic_index`].
//!
//! Modes and time steps are zero-based throughout the API.
//!
//! # Interchange format
//!
//! Models are stored as JSON with matrices flattened **row-major**:
//!
//! ```json
//! { "n_x": 2, "n_u": 1, "num_modes": 2, "period": 10,
//!   "A": [[[a00, a01, a10, a11], ...N], ...T],
//!   "B": [[[b00, b10], ...N], ...T],
//!   "transition_matrix": [[0.8, 0.2], [0.9, 0.1]] }
//! ```
//!
//! Gains files hold `"K"`: `T × N` row-major `n_u × n_x` arrays.

use std::fs;
use std::ops::Index;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{asymmetry, from_row_major, to_row_major, Matrix};

pub const STOCHASTIC_TOL: f64 = 1e-9;
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Reduces a time index modulo the period.
#[inline]
pub fn periodic_index(k: usize, period: usize) -> usize {
    k % period
}

/// `N` square matrices of a common dimension, one per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeIndexedSet {
    entries: Vec<Matrix>,
}

impl ModeIndexedSet {
    pub fn new(entries: Vec<Matrix>) -> Result<Self> {
        let Some(first) = entries.first() else {
            return Err(Error::Shape(
                "a mode-indexed set needs at least one mode".into(),
            ));
        };
        let d = first.nrows();
        for (i, m) in entries.iter().enumerate() {
            if m.nrows() != d || m.ncols() != d {
                return Err(Error::DimensionMismatch {
                    k: 0,
                    i,
                    detail: format!("expected {d}x{d}, found {}x{}", m.nrows(), m.ncols()),
                });
            }
        }
        Ok(Self { entries })
    }

    /// Like [`ModeIndexedSet::new`] but also requires every entry to be
    /// symmetric within 1e-12.
    pub fn new_symmetric(entries: Vec<Matrix>) -> Result<Self> {
        let set = Self::new(entries)?;
        for m in &set.entries {
            let asym = asymmetry(m);
            if asym > SYMMETRY_TOL {
                return Err(Error::NotSymmetric { asymmetry: asym });
            }
        }
        Ok(set)
    }

    pub fn zeros(num_modes: usize, dim: usize) -> Self {
        Self {
            entries: vec![Matrix::zeros(dim, dim); num_modes],
        }
    }

    pub fn identity(num_modes: usize, dim: usize) -> Self {
        Self {
            entries: vec![Matrix::identity(dim, dim); num_modes],
        }
    }

    pub fn num_modes(&self) -> usize {
        self.entries.len()
    }

    pub fn dim(&self) -> usize {
        self.entries[0].nrows()
    }

    pub fn get(&self, i: usize) -> Result<&Matrix> {
        self.entries.get(i).ok_or(Error::ModeOutOfRange {
            index: i,
            modes: self.entries.len(),
        })
    }

    pub fn entries(&self) -> &[Matrix] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<Matrix> {
        self.entries
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Matrix> {
        self.entries.iter()
    }

    pub fn map<F: FnMut(&Matrix) -> Matrix>(&self, f: F) -> Self {
        Self {
            entries: self.entries.iter().map(f).collect(),
        }
    }

    pub fn sum(&self) -> Matrix {
        let d = self.dim();
        self.entries
            .iter()
            .fold(Matrix::zeros(d, d), |acc, m| acc + m)
    }
}

impl Index<usize> for ModeIndexedSet {
    type Output = Matrix;

    fn index(&self, i: usize) -> &Matrix {
        &self.entries[i]
    }
}

/// Checks row-stochasticity of a transition matrix.
pub fn validate_transition(p: &Matrix) -> Result<()> {
    if p.nrows() != p.ncols() || p.nrows() == 0 {
        return Err(Error::Shape(format!(
            "transition matrix must be square and non-empty, found {}x{}",
            p.nrows(),
            p.ncols()
        )));
    }
    for row in 0..p.nrows() {
        for col in 0..p.ncols() {
            let value = p[(row, col)];
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::InvalidProbability { row, col, value });
            }
        }
        let sum: f64 = p.row(row).iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::NotStochastic { row, sum });
        }
    }
    Ok(())
}

/// The plant: `A_k(i)`, `B_k(i)` for `k ∈ 0..T`, `i ∈ 0..N`, and the
/// transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicMjlsModel {
    pub n_x: usize,
    pub n_u: usize,
    pub num_modes: usize,
    pub period: usize,
    /// `a[k][i]`, `n_x × n_x`.
    pub a: Vec<Vec<Matrix>>,
    /// `b[k][i]`, `n_x × n_u`.
    pub b: Vec<Vec<Matrix>>,
    pub transition: Matrix,
}

impl PeriodicMjlsModel {
    pub fn a(&self, k: usize, i: usize) -> &Matrix {
        &self.a[periodic_index(k, self.period)][i]
    }

    pub fn b(&self, k: usize, i: usize) -> &Matrix {
        &self.b[periodic_index(k, self.period)][i]
    }

    pub fn validate(&self) -> Result<()> {
        if self.period == 0 {
            return Err(Error::Shape("period must be at least 1".into()));
        }
        if self.num_modes == 0 || self.n_x == 0 {
            return Err(Error::Shape(
                "model needs at least one mode and one state".into(),
            ));
        }
        check_grid(
            &self.a,
            self.period,
            self.num_modes,
            self.n_x,
            self.n_x,
            "A",
        )?;
        check_grid(
            &self.b,
            self.period,
            self.num_modes,
            self.n_x,
            self.n_u,
            "B",
        )?;
        if self.transition.nrows() != self.num_modes {
            return Err(Error::Shape(format!(
                "transition matrix has {} rows for {} modes",
                self.transition.nrows(),
                self.num_modes
            )));
        }
        validate_transition(&self.transition)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.into_model()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            n_x: self.n_x,
            n_u: self.n_u,
            num_modes: self.num_modes,
            period: self.period,
            a: grid_to_rows(&self.a),
            b: grid_to_rows(&self.b),
            transition_matrix: (0..self.transition.nrows())
                .map(|r| self.transition.row(r).iter().copied().collect())
                .collect(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(&self.to_file())?)?;
        Ok(())
    }
}

fn check_grid(
    grid: &[Vec<Matrix>],
    period: usize,
    modes: usize,
    rows: usize,
    cols: usize,
    name: &str,
) -> Result<()> {
    if grid.len() != period {
        return Err(Error::Shape(format!(
            "{name} has {} time entries, expected period {period}",
            grid.len()
        )));
    }
    for (k, per_mode) in grid.iter().enumerate() {
        if per_mode.len() != modes {
            return Err(Error::Shape(format!(
                "{name}[{k}] has {} mode entries, expected {modes}",
                per_mode.len()
            )));
        }
        for (i, m) in per_mode.iter().enumerate() {
            if m.nrows() != rows || m.ncols() != cols {
                return Err(Error::DimensionMismatch {
                    k,
                    i,
                    detail: format!(
                        "{name} is {}x{}, expected {rows}x{cols}",
                        m.nrows(),
                        m.ncols()
                    ),
                });
            }
        }
    }
    Ok(())
}

/// Verifies every model invariant and hands the model back unchanged.
pub fn validate_model(raw: PeriodicMjlsModel) -> Result<PeriodicMjlsModel> {
    raw.validate()?;
    Ok(raw)
}

/// Mode-dependent periodic feedback gains `K_k(i)` (`n_u × n_x`).
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerGains {
    pub k: Vec<Vec<Matrix>>,
}

impl ControllerGains {
    pub fn zeros(model: &PeriodicMjlsModel) -> Self {
        Self {
            k: vec![vec![Matrix::zeros(model.n_u, model.n_x); model.num_modes]; model.period],
        }
    }

    pub fn period(&self) -> usize {
        self.k.len()
    }

    pub fn gain(&self, k: usize, i: usize) -> &Matrix {
        &self.k[periodic_index(k, self.k.len())][i]
    }

    pub fn validate_for(&self, model: &PeriodicMjlsModel) -> Result<()> {
        check_grid(
            &self.k,
            model.period,
            model.num_modes,
            model.n_u,
            model.n_x,
            "K",
        )
    }

    pub fn from_json_str(text: &str, model: &PeriodicMjlsModel) -> Result<Self> {
        let file: GainsFile = serde_json::from_str(text)?;
        let k = rows_to_grid(&file.k, model.n_u, model.n_x, "K")?;
        let gains = Self { k };
        gains.validate_for(model)?;
        Ok(gains)
    }

    pub fn load(path: impl AsRef<Path>, model: &PeriodicMjlsModel) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?, model)
    }

    pub fn to_file(&self) -> GainsFile {
        GainsFile {
            k: grid_to_rows(&self.k),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(&self.to_file())?)?;
        Ok(())
    }
}

/// Closed-loop matrices `φ_k(i) = A_k(i) + B_k(i) K_k(i)` with the chain's
/// transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopSystem {
    phi: Vec<Vec<Matrix>>,
    transition: Matrix,
}

impl ClosedLoopSystem {
    /// Builds a closed loop directly from `phi[k][i]`.
    pub fn from_modes(phi: Vec<Vec<Matrix>>, transition: Matrix) -> Result<Self> {
        let period = phi.len();
        if period == 0 {
            return Err(Error::Shape(
                "closed loop needs at least one time step".into(),
            ));
        }
        let modes = transition.nrows();
        let n = phi[0].first().map(|m| m.nrows()).unwrap_or(0);
        if n == 0 {
            return Err(Error::Shape(
                "closed loop needs a nonzero state dimension".into(),
            ));
        }
        check_grid(&phi, period, modes, n, n, "phi")?;
        validate_transition(&transition)?;
        Ok(Self { phi, transition })
    }

    /// A time-invariant (T = 1) closed loop.
    pub fn time_invariant(modes: &ModeIndexedSet, transition: Matrix) -> Result<Self> {
        Self::from_modes(vec![modes.entries().to_vec()], transition)
    }

    pub fn phi(&self, k: usize, i: usize) -> &Matrix {
        &self.phi[periodic_index(k, self.phi.len())][i]
    }

    pub fn phi_grid(&self) -> &[Vec<Matrix>] {
        &self.phi
    }

    pub fn transition(&self) -> &Matrix {
        &self.transition
    }

    pub fn period(&self) -> usize {
        self.phi.len()
    }

    pub fn num_modes(&self) -> usize {
        self.transition.nrows()
    }

    pub fn n_x(&self) -> usize {
        self.phi[0][0].nrows()
    }
}

pub fn close_loop(model: &PeriodicMjlsModel, gains: &ControllerGains) -> Result<ClosedLoopSystem> {
    gains.validate_for(model)?;
    let phi = (0..model.period)
        .map(|k| {
            (0..model.num_modes)
                .map(|i| model.a(k, i) + model.b(k, i) * gains.gain(k, i))
                .collect()
        })
        .collect();
    Ok(ClosedLoopSystem {
        phi,
        transition: model.transition.clone(),
    })
}

/// The two-mode, period-10 benchmark plant whose second mode has lost all
/// actuation (`B_k(2) = 0`).
pub fn benchmark_system() -> PeriodicMjlsModel {
    let period = 10;
    let mut a = Vec::with_capacity(period);
    let mut b = Vec::with_capacity(period);
    for k in 0..period {
        let angle = 0.2 * std::f64::consts::PI * k as f64;
        let a1 = Matrix::from_row_slice(2, 2, &[-0.5, 2.0, -0.4, 0.8 * angle.sin()]);
        let a2 = Matrix::from_row_slice(2, 2, &[0.5 * angle.cos(), 0.5, 0.8, 0.5]);
        a.push(vec![a1, a2]);
        b.push(vec![
            Matrix::from_row_slice(2, 1, &[1.0, 1.0]),
            Matrix::zeros(2, 1),
        ]);
    }
    PeriodicMjlsModel {
        n_x: 2,
        n_u: 1,
        num_modes: 2,
        period,
        a,
        b,
        transition: Matrix::from_row_slice(2, 2, &[0.8, 0.2, 0.9, 0.1]),
    }
}

/// Time-invariant two-mode system whose modes are individually Schur stable
/// but whose jump dynamics are not mean-square stable.
pub fn switching_unstable_example() -> (ModeIndexedSet, Matrix) {
    let a1 = Matrix::from_row_slice(2, 2, &[-0.5, 2.0, -0.5, 0.5]);
    let a2 = Matrix::from_row_slice(2, 2, &[-0.5, 0.1, 1.0, 0.3]);
    let p = Matrix::from_row_slice(2, 2, &[0.6, 0.4, 0.5, 0.5]);
    (ModeIndexedSet::new(vec![a1, a2]).expect("2x2 modes"), p)
}

/// JSON form of [`PeriodicMjlsModel`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub n_x: usize,
    pub n_u: usize,
    pub num_modes: usize,
    pub period: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<Vec<f64>>>,
    pub transition_matrix: Vec<Vec<f64>>,
}

impl ModelFile {
    pub fn into_model(self) -> Result<PeriodicMjlsModel> {
        let a = rows_to_grid(&self.a, self.n_x, self.n_x, "A")?;
        let b = rows_to_grid(&self.b, self.n_x, self.n_u, "B")?;
        let n = self.transition_matrix.len();
        let mut flat = Vec::with_capacity(n * n);
        for (r, row) in self.transition_matrix.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Shape(format!(
                    "transition_matrix row {r} has {} entries, expected {n}",
                    row.len()
                )));
            }
            flat.extend_from_slice(row);
        }
        validate_model(PeriodicMjlsModel {
            n_x: self.n_x,
            n_u: self.n_u,
            num_modes: self.num_modes,
            period: self.period,
            a,
            b,
            transition: Matrix::from_row_slice(n, n, &flat),
        })
    }
}

/// JSON form of [`ControllerGains`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsFile {
    #[serde(rename = "K")]
    pub k: Vec<Vec<Vec<f64>>>,
}

pub(crate) fn rows_to_grid(
    data: &[Vec<Vec<f64>>],
    rows: usize,
    cols: usize,
    name: &str,
) -> Result<Vec<Vec<Matrix>>> {
    data.iter()
        .enumerate()
        .map(|(k, per_mode)| {
            per_mode
                .iter()
                .enumerate()
                .map(|(i, flat)| {
                    from_row_major(rows, cols, flat).map_err(|_| Error::DimensionMismatch {
                        k,
                        i,
                        detail: format!(
                            "{name} has {} entries, expected {rows}x{cols} = {}",
                            flat.len(),
                            rows * cols
                        ),
                    })
                })
                .collect()
        })
        .collect()
}

pub(crate) fn grid_to_rows(grid: &[Vec<Matrix>]) -> Vec<Vec<Vec<f64>>> {
    grid.iter()
        .map(|per_mode| per_mode.iter().map(to_row_major).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;

    fn scalar(v: f64) -> Matrix {
        Matrix::from_element(1, 1, v)
    }

    fn scalar_model(a: f64, b: f64) -> PeriodicMjlsModel {
        PeriodicMjlsModel {
            n_x: 1,
            n_u: 1,
            num_modes: 1,
            period: 1,
            a: vec![vec![scalar(a)]],
            b: vec![vec![scalar(b)]],
            transition: scalar(1.0),
        }
    }

    #[test]
    fn benchmark_system_is_valid() {
        let m = benchmark_system();
        let m = validate_model(m).unwrap();
        assert_eq!((m.n_x, m.n_u, m.num_modes, m.period), (2, 1, 2, 10));
        assert_eq!(
            m.transition,
            Matrix::from_row_slice(2, 2, &[0.8, 0.2, 0.9, 0.1])
        );
    }

    #[test]
    fn benchmark_system_entries() {
        let m = benchmark_system();
        assert_eq!(
            *m.a(0, 0),
            Matrix::from_row_slice(2, 2, &[-0.5, 2.0, -0.4, 0.0])
        );
        assert_eq!(
            *m.a(0, 1),
            Matrix::from_row_slice(2, 2, &[0.5, 0.5, 0.8, 0.5])
        );
        assert!(m.a(5, 0)[(1, 1)].abs() < 1e-12);
        assert_eq!(m.b(3, 1), &Matrix::zeros(2, 1));
        // periodic extension
        assert_eq!(m.a(13, 0), m.a(3, 0));
    }

    #[test]
    fn row_sum_violation_is_reported() {
        let mut m = scalar_model(0.5, 1.0);
        m.num_modes = 2;
        m.a = vec![vec![scalar(0.5), scalar(0.5)]];
        m.b = vec![vec![scalar(1.0), scalar(1.0)]];
        m.transition = Matrix::from_row_slice(2, 2, &[0.5, 0.6, 0.5, 0.5]);
        match validate_model(m) {
            Err(Error::NotStochastic { row, sum }) => {
                assert_eq!(row, 0);
                assert!((sum - 1.1).abs() < 1e-12);
            }
            other => panic!("expected stochasticity error, got {other:?}"),
        }
    }

    #[test]
    fn negative_probability_rejected() {
        let p = Matrix::from_row_slice(2, 2, &[1.2, -0.2, 0.5, 0.5]);
        assert!(matches!(
            validate_transition(&p),
            Err(Error::InvalidProbability { row: 0, col: 0, .. })
        ));
    }

    #[test]
    fn degenerate_lti_model_is_valid() {
        let m = scalar_model(0.5, 1.0);
        assert!(validate_model(m).is_ok());
    }

    #[test]
    fn dimension_mismatch_names_entry() {
        let mut m = benchmark_system();
        m.a[3][1] = Matrix::zeros(3, 2);
        match m.validate() {
            Err(Error::DimensionMismatch { k, i, .. }) => assert_eq!((k, i), (3, 1)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn validate_is_idempotent() {
        let m = benchmark_system();
        let once = validate_model(m.clone()).unwrap();
        let twice = validate_model(once.clone()).unwrap();
        assert_eq!(once, twice);
        assert_eq!(once, m);
    }

    #[test]
    fn zero_gain_closes_to_open_loop() {
        let m = benchmark_system();
        let cl = close_loop(&m, &ControllerGains::zeros(&m)).unwrap();
        for k in 0..m.period {
            for i in 0..m.num_modes {
                assert_eq!(cl.phi(k, i), m.a(k, i));
            }
        }
    }

    #[test]
    fn failed_actuator_mode_ignores_gain() {
        let m = benchmark_system();
        let mut g = ControllerGains::zeros(&m);
        for k in 0..m.period {
            g.k[k][1] = Matrix::from_row_slice(1, 2, &[3.0, -7.0]);
        }
        let cl = close_loop(&m, &g).unwrap();
        for k in 0..m.period {
            assert_eq!(cl.phi(k, 1), m.a(k, 1));
        }
    }

    #[test]
    fn deadbeat_scalar() {
        let m = scalar_model(1.0, 1.0);
        let g = ControllerGains {
            k: vec![vec![scalar(-1.0)]],
        };
        let cl = close_loop(&m, &g).unwrap();
        assert_eq!(cl.phi(0, 0)[(0, 0)], 0.0);
    }

    #[test]
    fn close_loop_recovers_open_loop() {
        let m = benchmark_system();
        let mut g = ControllerGains::zeros(&m);
        for k in 0..m.period {
            g.k[k][0] = Matrix::from_row_slice(1, 2, &[0.3 * k as f64, -1.7]);
        }
        let cl = close_loop(&m, &g).unwrap();
        for k in 0..m.period {
            for i in 0..2 {
                let back = cl.phi(k, i) - m.b(k, i) * g.gain(k, i);
                assert!(max_abs(&(back - m.a(k, i))) <= 1e-14);
            }
        }
    }

    #[test]
    fn gain_dimension_mismatch() {
        let m = benchmark_system();
        let mut g = ControllerGains::zeros(&m);
        g.k[2][0] = Matrix::zeros(2, 2);
        assert!(matches!(
            close_loop(&m, &g),
            Err(Error::DimensionMismatch { k: 2, i: 0, .. })
        ));
    }

    #[test]
    fn json_round_trip() {
        let m = benchmark_system();
        let text = serde_json::to_string(&m.to_file()).unwrap();
        let back = PeriodicMjlsModel::from_json_str(&text).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn json_rejects_wrong_flat_length() {
        let text = r#"{"n_x":1,"n_u":1,"num_modes":1,"period":1,
            "A":[[[0.5, 1.0]]],"B":[[[1.0]]],"transition_matrix":[[1.0]]}"#;
        assert!(matches!(
            PeriodicMjlsModel::from_json_str(text),
            Err(Error::DimensionMismatch { k: 0, i: 0, .. })
        ));
    }

    #[test]
    fn symmetric_set_rejects_asymmetry() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(
            ModeIndexedSet::new_symmetric(vec![m]),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn mode_set_rejects_mixed_dims() {
        assert!(ModeIndexedSet::new(vec![Matrix::zeros(2, 2), Matrix::zeros(3, 3)]).is_err());
        let s = ModeIndexedSet::identity(2, 3);
        assert!(matches!(
            s.get(2),
            Err(Error::ModeOutOfRange { index: 2, modes: 2 })
        ));
    }
}
