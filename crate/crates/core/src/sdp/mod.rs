//! LMI problem representation and the conic-solver boundary.
//!
//! A problem is a vector of scalar coordinates `x`, a linear objective
//! `c^T x`, and LMI blocks `F_0 + Σ_j x_j F_j ⪰ 0`. Symmetric matrix
//! variables own `d(d+1)/2` coordinates (their lower triangle, row by row);
//! free matrix variables own one coordinate per entry, row-major.
//!
//! Backends receive the problem in standard conic form
//!
//! ```text
//! minimize c^T x   subject to   A x + s = b,   s ∈ K
//! ```
//!
//! where each LMI block contributes `s = svec(F_0 + Σ x_j F_j)` to a PSD cone
//! (1×1 blocks become nonnegative-orthant rows) and equalities contribute
//! zero-cone rows. [`solve`] re-checks every block at the returned point
//! and never reports `Optimal` when the worst violation exceeds
//! [`MAX_VIOLATION`].
//!
//! # Plain-text dump
//!
//! [`SdpProblem::write_dump`] emits one record per line:
//!
//! ```text
//! var  <coord> <name>                     coordinate → variable entry
//! obj  <coord> <coeff>                    objective coefficient
//! lmi  <block> <dim> <name>               block header
//! <block> <var> <row> <col> <coeff>       lower-triangle entry of F_var
//! eq   <id> <coord> <coeff> | eqrhs <id> <rhs>
//! ```
//!
//! `var` ids in block entries are `0` for the constant `F_0` and `coord + 1`
//! for coefficient matrices. Rows and columns are zero-based.

mod clarabel_backend;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::linalg::{asymmetry, min_eigenvalue, Matrix};

pub use clarabel_backend::ClarabelBackend;

/// Largest admissible LMI violation (negative minimum eigenvalue) at a
/// point reported optimal.
pub const MAX_VIOLATION: f64 = 1e-6;
const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VariableKind {
    Scalar,
    Symmetric { dim: usize },
    Free { rows: usize, cols: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub kind: VariableKind,
    /// First coordinate owned by the variable.
    pub offset: usize,
}

impl Variable {
    pub fn len(&self) -> usize {
        match self.kind {
            VariableKind::Scalar => 1,
            VariableKind::Symmetric { dim } => dim * (dim + 1) / 2,
            VariableKind::Free { rows, cols } => rows * cols,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn coord_label(&self, local: usize) -> String {
        match self.kind {
            VariableKind::Scalar => self.name.clone(),
            VariableKind::Symmetric { .. } => {
                let (r, c) = tri_index(local);
                format!("{}[{r},{c}]", self.name)
            }
            VariableKind::Free { cols, .. } => {
                format!("{}[{},{}]", self.name, local / cols, local % cols)
            }
        }
    }
}

/// Row and column of the `idx`-th lower-triangular entry in row-major order.
fn tri_index(idx: usize) -> (usize, usize) {
    let mut r = 0;
    while (r + 1) * (r + 2) / 2 <= idx {
        r += 1;
    }
    (r, idx - r * (r + 1) / 2)
}

/// An affine matrix-valued expression `C + Σ_j x_j M_j` over problem
/// coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineExpr {
    rows: usize,
    cols: usize,
    constant: Matrix,
    terms: BTreeMap<usize, Matrix>,
}

impl AffineExpr {
    pub fn constant(m: Matrix) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            constant: m,
            terms: BTreeMap::new(),
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(Matrix::zeros(rows, cols))
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn map(&self, rows: usize, cols: usize, f: impl Fn(&Matrix) -> Matrix) -> Self {
        Self {
            rows,
            cols,
            constant: f(&self.constant),
            terms: self.terms.iter().map(|(&j, m)| (j, f(m))).collect(),
        }
    }

    /// `L · self`.
    pub fn left_mul(&self, l: &Matrix) -> Self {
        assert_eq!(l.ncols(), self.rows, "left factor shape");
        self.map(l.nrows(), self.cols, |m| l * m)
    }

    /// `self · R`.
    pub fn right_mul(&self, r: &Matrix) -> Self {
        assert_eq!(r.nrows(), self.cols, "right factor shape");
        self.map(self.rows, r.ncols(), |m| m * r)
    }

    pub fn transpose(&self) -> Self {
        self.map(self.cols, self.rows, |m| m.transpose())
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(self.rows, self.cols, |m| m * s)
    }

    /// `self ⊗ I_n` for a 1×1 expression (a scalar times the identity).
    pub fn times_identity(&self, n: usize) -> Self {
        assert_eq!(
            (self.rows, self.cols),
            (1, 1),
            "times_identity needs a 1x1 expression"
        );
        self.map(n, n, |m| Matrix::identity(n, n) * m[(0, 0)])
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(
            self.shape(),
            other.shape(),
            "adding expressions of different shapes"
        );
        let mut out = self.clone();
        out.constant += &other.constant;
        for (&j, m) in &other.terms {
            out.terms
                .entry(j)
                .and_modify(|e| *e += m)
                .or_insert_with(|| m.clone());
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn add_constant(&self, m: &Matrix) -> Self {
        let mut out = self.clone();
        out.constant += m;
        out
    }

    pub fn evaluate(&self, x: &[f64]) -> Matrix {
        let mut out = self.constant.clone();
        for (&j, m) in &self.terms {
            out += m * x[j];
        }
        out
    }
}

/// Assembles a symmetric block matrix from lower-triangular sub-blocks.
#[derive(Debug, Clone)]
pub struct BlockLmi {
    sizes: Vec<usize>,
    blocks: BTreeMap<(usize, usize), AffineExpr>,
}

impl BlockLmi {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            sizes: sizes.to_vec(),
            blocks: BTreeMap::new(),
        }
    }

    /// Places `expr` at block position `(r, c)` with `r >= c`; the upper
    /// triangle is filled by transposition.
    pub fn set(&mut self, r: usize, c: usize, expr: AffineExpr) -> &mut Self {
        assert!(r >= c, "only lower-triangular blocks are set explicitly");
        assert_eq!(
            expr.shape(),
            (self.sizes[r], self.sizes[c]),
            "block ({r},{c}) shape"
        );
        self.blocks.insert((r, c), expr);
        self
    }

    pub fn dim(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// Builds the block, subtracting `shift · I` from the constant so the
    /// constraint reads `F(x) ⪰ shift · I`.
    pub fn build(&self, name: impl Into<String>, shift: f64) -> LmiBlock {
        let d = self.dim();
        let starts: Vec<usize> = self
            .sizes
            .iter()
            .scan(0, |acc, &s| {
                let start = *acc;
                *acc += s;
                Some(start)
            })
            .collect();
        let mut constant = Matrix::identity(d, d) * -shift;
        let mut terms: BTreeMap<usize, Matrix> = BTreeMap::new();
        let place = |target: &mut Matrix, r: usize, c: usize, m: &Matrix| {
            let (r0, c0) = (starts[r], starts[c]);
            let mut lower = target.view_mut((r0, c0), m.shape());
            lower += m;
            if r != c {
                let mut upper = target.view_mut((c0, r0), (m.ncols(), m.nrows()));
                upper += &m.transpose();
            }
        };
        for (&(r, c), expr) in &self.blocks {
            place(&mut constant, r, c, &expr.constant);
            for (&j, m) in &expr.terms {
                let entry = terms.entry(j).or_insert_with(|| Matrix::zeros(d, d));
                place(entry, r, c, m);
            }
        }
        LmiBlock {
            name: name.into(),
            dim: d,
            constant,
            terms: terms.into_iter().collect(),
        }
    }
}

/// `F_0 + Σ_j x_j F_j ⪰ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiBlock {
    pub name: String,
    pub dim: usize,
    pub constant: Matrix,
    pub terms: Vec<(usize, Matrix)>,
}

impl LmiBlock {
    pub fn evaluate(&self, x: &[f64]) -> Matrix {
        let mut out = self.constant.clone();
        for (j, m) in &self.terms {
            out += m * x[*j];
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearEquality {
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SdpProblem {
    variables: Vec<Variable>,
    n_coords: usize,
    objective: BTreeMap<usize, f64>,
    blocks: Vec<LmiBlock>,
    equalities: Vec<LinearEquality>,
}

impl SdpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, name: String, kind: VariableKind) -> VarId {
        let var = Variable {
            name,
            kind,
            offset: self.n_coords,
        };
        self.n_coords += var.len();
        self.variables.push(var);
        VarId(self.variables.len() - 1)
    }

    pub fn add_scalar(&mut self, name: impl Into<String>) -> VarId {
        self.push(name.into(), VariableKind::Scalar)
    }

    pub fn add_symmetric(&mut self, name: impl Into<String>, dim: usize) -> VarId {
        self.push(name.into(), VariableKind::Symmetric { dim })
    }

    pub fn add_free(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> VarId {
        self.push(name.into(), VariableKind::Free { rows, cols })
    }

    pub fn variable(&self, id: VarId) -> &Variable {
        &self.variables[id.0]
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn num_coords(&self) -> usize {
        self.n_coords
    }

    pub fn blocks(&self) -> &[LmiBlock] {
        &self.blocks
    }

    pub fn equalities(&self) -> &[LinearEquality] {
        &self.equalities
    }

    /// The matrix-valued expression of a variable (1×1 for scalars).
    pub fn expr(&self, id: VarId) -> AffineExpr {
        let var = &self.variables[id.0];
        let mut terms = BTreeMap::new();
        let (rows, cols) = match var.kind {
            VariableKind::Scalar => {
                terms.insert(var.offset, Matrix::from_element(1, 1, 1.0));
                (1, 1)
            }
            VariableKind::Symmetric { dim } => {
                for idx in 0..var.len() {
                    let (r, c) = tri_index(idx);
                    let mut m = Matrix::zeros(dim, dim);
                    m[(r, c)] = 1.0;
                    m[(c, r)] = 1.0;
                    terms.insert(var.offset + idx, m);
                }
                (dim, dim)
            }
            VariableKind::Free { rows, cols } => {
                for idx in 0..var.len() {
                    let mut m = Matrix::zeros(rows, cols);
                    m[(idx / cols, idx % cols)] = 1.0;
                    terms.insert(var.offset + idx, m);
                }
                (rows, cols)
            }
        };
        AffineExpr {
            rows,
            cols,
            constant: Matrix::zeros(rows, cols),
            terms,
        }
    }

    /// Adds `coeff · x` to the objective for a scalar variable.
    pub fn add_objective_scalar(&mut self, id: VarId, coeff: f64) {
        let var = &self.variables[id.0];
        assert_eq!(
            var.kind,
            VariableKind::Scalar,
            "objective term on non-scalar"
        );
        *self.objective.entry(var.offset).or_insert(0.0) += coeff;
    }

    /// Adds `coeff · tr(S)` to the objective for a symmetric variable.
    pub fn add_objective_trace(&mut self, id: VarId, coeff: f64) {
        let var = &self.variables[id.0];
        let VariableKind::Symmetric { dim } = var.kind else {
            panic!("trace objective on a non-symmetric variable");
        };
        for r in 0..dim {
            *self
                .objective
                .entry(var.offset + r * (r + 1) / 2 + r)
                .or_insert(0.0) += coeff;
        }
    }

    pub fn add_lmi(&mut self, block: LmiBlock) {
        self.blocks.push(block);
    }

    pub fn add_equality(&mut self, eq: LinearEquality) {
        self.equalities.push(eq);
    }

    pub fn objective_vector(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.n_coords];
        for (&j, &v) in &self.objective {
            c[j] = v;
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        for (b, block) in self.blocks.iter().enumerate() {
            let mats = std::iter::once(&block.constant).chain(block.terms.iter().map(|(_, m)| m));
            for m in mats {
                if m.nrows() != block.dim || m.ncols() != block.dim {
                    return Err(Error::InvalidProblem(format!(
                        "block {b} ({}) has a {}x{} coefficient, expected {}",
                        block.name,
                        m.nrows(),
                        m.ncols(),
                        block.dim
                    )));
                }
                let asym = asymmetry(m);
                if asym > SYMMETRY_TOL {
                    return Err(Error::InvalidProblem(format!(
                        "block {b} ({}) has an asymmetric coefficient ({asym:e})",
                        block.name
                    )));
                }
            }
            if let Some((j, _)) = block.terms.iter().find(|(j, _)| *j >= self.n_coords) {
                return Err(Error::InvalidProblem(format!(
                    "block {b} ({}) references undeclared coordinate {j}",
                    block.name
                )));
            }
        }
        for (e, eq) in self.equalities.iter().enumerate() {
            if let Some((j, _)) = eq.terms.iter().find(|(j, _)| *j >= self.n_coords) {
                return Err(Error::InvalidProblem(format!(
                    "equality {e} references undeclared coordinate {j}"
                )));
            }
        }
        Ok(())
    }

    /// Standard conic form `A x + s = b, s ∈ K`.
    pub fn to_conic_form(&self) -> Result<ConicForm> {
        self.validate()?;
        let mut triplets = Vec::new();
        let mut b = Vec::new();
        let mut cones = Vec::new();
        let mut row = 0;
        if !self.equalities.is_empty() {
            for eq in &self.equalities {
                for &(j, v) in &eq.terms {
                    if v != 0.0 {
                        triplets.push((row, j, v));
                    }
                }
                b.push(eq.rhs);
                row += 1;
            }
            cones.push(Cone::Zero(self.equalities.len()));
        }
        for block in &self.blocks {
            let base = svec_unchecked(&block.constant);
            for (j, m) in &block.terms {
                for (r, v) in svec_unchecked(m).into_iter().enumerate() {
                    if v != 0.0 {
                        triplets.push((row + r, *j, -v));
                    }
                }
            }
            row += base.len();
            b.extend(base);
            cones.push(if block.dim == 1 {
                Cone::Nonnegative(1)
            } else {
                Cone::Psd(block.dim)
            });
        }
        triplets.sort_by_key(|&(r, c, _)| (c, r));
        Ok(ConicForm {
            n_vars: self.n_coords,
            n_rows: row,
            c: self.objective_vector(),
            a: triplets,
            b,
            cones,
        })
    }

    /// Plain-text sparse dump (format in the module docs).
    pub fn write_dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# mjls sdp dump v1");
        let _ = writeln!(
            out,
            "# coords {} blocks {} equalities {}",
            self.n_coords,
            self.blocks.len(),
            self.equalities.len()
        );
        for var in &self.variables {
            for local in 0..var.len() {
                let _ = writeln!(out, "var {} {}", var.offset + local, var.coord_label(local));
            }
        }
        for (&j, &v) in &self.objective {
            let _ = writeln!(out, "obj {j} {v}");
        }
        for (b, block) in self.blocks.iter().enumerate() {
            let _ = writeln!(out, "lmi {b} {} {}", block.dim, block.name);
            let mats = std::iter::once((0, &block.constant))
                .chain(block.terms.iter().map(|(j, m)| (j + 1, m)));
            for (var, m) in mats {
                for r in 0..block.dim {
                    for c in 0..=r {
                        let v = m[(r, c)];
                        if v != 0.0 {
                            let _ = writeln!(out, "{b} {var} {r} {c} {v}");
                        }
                    }
                }
            }
        }
        for (e, eq) in self.equalities.iter().enumerate() {
            for &(j, v) in &eq.terms {
                let _ = writeln!(out, "eq {e} {j} {v}");
            }
            let _ = writeln!(out, "eqrhs {e} {}", eq.rhs);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cone {
    Zero(usize),
    Nonnegative(usize),
    /// PSD cone of `d × d` matrices in svec coordinates.
    Psd(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicForm {
    pub n_vars: usize,
    pub n_rows: usize,
    pub c: Vec<f64>,
    /// `(row, col, value)` sorted column-major.
    pub a: Vec<(usize, usize, f64)>,
    pub b: Vec<f64>,
    pub cones: Vec<Cone>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendStatus {
    Solved,
    Infeasible,
    Failed,
}

#[derive(Debug, Clone)]
pub struct BackendOutput {
    pub status: BackendStatus,
    pub x: Vec<f64>,
    pub iterations: usize,
    pub message: String,
}

/// A conic solver able to handle zero, nonnegative and PSD cones.
pub trait SdpBackend {
    fn name(&self) -> &str;

    fn solve_conic(&self, form: &ConicForm) -> Result<BackendOutput>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SolveStatus,
    /// Coordinate vector.
    pub values: Vec<f64>,
    pub objective_value: f64,
    /// Worst `max(0, -λ_min)` over blocks and `|residual|` over equalities.
    pub max_constraint_violation: f64,
    pub block_min_eigenvalues: Vec<f64>,
    pub iterations: usize,
    pub solve_time: Duration,
    pub diagnostics: String,
}

impl SdpSolution {
    pub fn scalar(&self, problem: &SdpProblem, id: VarId) -> f64 {
        self.values[problem.variable(id).offset]
    }

    /// Value of a symmetric or free matrix variable (1×1 for scalars).
    pub fn matrix(&self, problem: &SdpProblem, id: VarId) -> Matrix {
        problem.expr(id).evaluate(&self.values)
    }
}

/// Solves through `backend`, then independently re-checks every block.
pub fn solve(problem: &SdpProblem, backend: &dyn SdpBackend) -> Result<SdpSolution> {
    let form = problem.to_conic_form()?;
    let start = Instant::now();
    let output =
        std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| backend.solve_conic(&form)));
    let solve_time = start.elapsed();
    let output = match output {
        Ok(Ok(out)) => out,
        Ok(Err(e)) => failed_output(
            form.n_vars,
            format!("{} backend error: {e}", backend.name()),
        ),
        Err(_) => failed_output(form.n_vars, format!("{} backend panicked", backend.name())),
    };
    let x = if output.x.len() == form.n_vars {
        output.x
    } else {
        vec![f64::NAN; form.n_vars]
    };

    let block_min_eigenvalues: Vec<f64> = problem
        .blocks
        .iter()
        .map(|b| min_eigenvalue(&b.evaluate(&x)))
        .collect();
    let mut violation = block_min_eigenvalues.iter().fold(0.0_f64, |acc, &e| {
        acc.max(if e.is_nan() { f64::INFINITY } else { -e })
    });
    for eq in &problem.equalities {
        let lhs: f64 = eq.terms.iter().map(|&(j, v)| v * x[j]).sum();
        violation = violation.max((lhs - eq.rhs).abs());
    }
    let objective_value = form.c.iter().zip(&x).map(|(c, v)| c * v).sum();

    let mut diagnostics = output.message;
    let status = match output.status {
        BackendStatus::Solved if violation <= MAX_VIOLATION => SolveStatus::Optimal,
        BackendStatus::Solved => {
            let _ = write!(
                diagnostics,
                "; re-check found constraint violation {violation:e} > {MAX_VIOLATION:e}"
            );
            SolveStatus::NumericalFailure
        }
        BackendStatus::Infeasible => SolveStatus::Infeasible,
        BackendStatus::Failed => SolveStatus::NumericalFailure,
    };
    log::debug!(
        "sdp solve: {} coords, {} blocks, status {status:?}, violation {violation:e}, {:?}",
        form.n_vars,
        problem.blocks.len(),
        solve_time
    );
    Ok(SdpSolution {
        status,
        values: x,
        objective_value,
        max_constraint_violation: violation,
        block_min_eigenvalues,
        iterations: output.iterations,
        solve_time,
        diagnostics,
    })
}

fn failed_output(n: usize, message: String) -> BackendOutput {
    BackendOutput {
        status: BackendStatus::Failed,
        x: vec![f64::NAN; n],
        iterations: 0,
        message,
    }
}

fn svec_unchecked(s: &Matrix) -> Vec<f64> {
    let d = s.nrows();
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for r in 0..d {
        for c in 0..=r {
            out.push(if r == c {
                s[(r, c)]
            } else {
                s[(r, c)] * std::f64::consts::SQRT_2
            });
        }
    }
    out
}

/// Scaled lower-triangular stacking (row by row, off-diagonals × √2), so
/// that `⟨svec A, svec B⟩ = tr(AB)`. The ordering coincides with the
/// column-major upper triangle.
pub fn svec(s: &Matrix) -> Result<Vec<f64>> {
    if s.nrows() != s.ncols() {
        return Err(Error::Shape(format!(
            "svec of a {}x{} matrix",
            s.nrows(),
            s.ncols()
        )));
    }
    let asym = asymmetry(s);
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    Ok(svec_unchecked(s))
}

/// Inverse of [`svec`].
pub fn smat(v: &[f64]) -> Result<Matrix> {
    let disc = ((8 * v.len() + 1) as f64).sqrt().round() as usize;
    if disc * disc != 8 * v.len() + 1 {
        return Err(Error::Shape(format!(
            "{} is not a triangular number",
            v.len()
        )));
    }
    let d = (disc - 1) / 2;
    let mut m = Matrix::zeros(d, d);
    let mut idx = 0;
    for r in 0..d {
        for c in 0..=r {
            let val = if r == c {
                v[idx]
            } else {
                v[idx] / std::f64::consts::SQRT_2
            };
            m[(r, c)] = val;
            m[(c, r)] = val;
            idx += 1;
        }
    }
    Ok(m)
}
