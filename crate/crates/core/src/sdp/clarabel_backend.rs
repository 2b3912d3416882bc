use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use super::{BackendOutput, BackendStatus, Cone, ConicForm, SdpBackend};
use crate::error::{Error, Result};

// links the system OpenBLAS used by clarabel's PSD cone
extern crate openblas_src as _;

/// Interior-point backend built on the Clarabel conic solver.
#[derive(Debug, Clone)]
pub struct ClarabelBackend {
    pub max_iter: u32,
    pub tol_gap_abs: f64,
    pub tol_gap_rel: f64,
    pub tol_feas: f64,
    pub verbose: bool,
}

impl Default for ClarabelBackend {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol_gap_abs: 1e-9,
            tol_gap_rel: 1e-9,
            tol_feas: 1e-9,
            verbose: false,
        }
    }
}

impl ClarabelBackend {
    fn settings(&self) -> Result<DefaultSettings<f64>> {
        DefaultSettingsBuilder::default()
            .verbose(self.verbose)
            .max_iter(self.max_iter)
            .tol_gap_abs(self.tol_gap_abs)
            .tol_gap_rel(self.tol_gap_rel)
            .tol_feas(self.tol_feas)
            .build()
            .map_err(|e| Error::NumericalFailure(format!("clarabel settings: {e}")))
    }
}

fn csc(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> CscMatrix<f64> {
    // triplets arrive sorted column-major
    let mut colptr = vec![0usize; cols + 1];
    for &(_, c, _) in triplets {
        colptr[c + 1] += 1;
    }
    for c in 0..cols {
        colptr[c + 1] += colptr[c];
    }
    let rowval = triplets.iter().map(|t| t.0).collect();
    let nzval = triplets.iter().map(|t| t.2).collect();
    CscMatrix::new(rows, cols, colptr, rowval, nzval)
}

impl SdpBackend for ClarabelBackend {
    fn name(&self) -> &str {
        "clarabel"
    }

    fn solve_conic(&self, form: &ConicForm) -> Result<BackendOutput> {
        let p = CscMatrix::<f64>::zeros((form.n_vars, form.n_vars));
        let a = csc(form.n_rows, form.n_vars, &form.a);
        let cones: Vec<SupportedConeT<f64>> = form
            .cones
            .iter()
            .map(|c| match *c {
                Cone::Zero(n) => SupportedConeT::ZeroConeT(n),
                Cone::Nonnegative(n) => SupportedConeT::NonnegativeConeT(n),
                Cone::Psd(d) => SupportedConeT::PSDTriangleConeT(d),
            })
            .collect();
        let mut solver = DefaultSolver::new(&p, &form.c, &a, &form.b, &cones, self.settings()?)
            .map_err(|e| Error::NumericalFailure(format!("clarabel setup: {e:?}")))?;
        solver.solve();
        let sol = &solver.solution;
        let status = match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => BackendStatus::Solved,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                BackendStatus::Infeasible
            }
            _ => BackendStatus::Failed,
        };
        Ok(BackendOutput {
            status,
            x: sol.x.clone(),
            iterations: sol.iterations as usize,
            message: format!(
                "clarabel {:?} after {} iterations (primal residual {:e}, dual residual {:e})",
                sol.status, sol.iterations, sol.r_prim, sol.r_dual
            ),
        })
    }
}
