use serde::Serialize;

use super::load_loop;
use crate::args::{Problem, SynthesizeArgs};
use crate::files;
use crate::manifest::{sibling_manifest, Run};
use crate::status::{classify, ExitStatus};
use mjls_core::sdp::ClarabelBackend;
use mjls_core::stability::verify_certificate;
use mjls_core::synthesis::{
    synthesize_p1, synthesize_p2, RegionEllipsoid, SynthesisOutcome, SynthesisResult,
    VerificationChecks,
};

#[derive(Debug, Serialize)]
pub struct CertificateSummary {
    pub min_residual: f64,
    pub min_p_eigenvalue: f64,
    pub certified: bool,
}

#[derive(Debug, Serialize)]
pub struct SolvedReport {
    pub objective: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(rename = "spectral_radius_GT")]
    pub spectral_radius_gt: f64,
    pub region: Vec<RegionEllipsoid>,
    pub region_trace: f64,
    /// Margins of the solved inequalities, in the solver's state units.
    pub checks: VerificationChecks,
    pub certificate: CertificateSummary,
    pub state_scale: f64,
    pub solve_time_ms: f64,
    pub iterations: usize,
}

#[derive(Debug, Serialize)]
pub struct SynthesisReport {
    /// `solved`, `infeasible` or `numerical_failure`.
    pub status: &'static str,
    pub problem: &'static str,
    pub epsilon: f64,
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    pub solved: Option<SolvedReport>,
    pub diagnostics: String,
}

fn solved_report(
    result: &SynthesisResult,
    closed: &mjls_core::model::ClosedLoopSystem,
) -> anyhow::Result<SolvedReport> {
    let mut cert = result.certificate.clone();
    let residuals = verify_certificate(&mut cert, closed)?;
    Ok(SolvedReport {
        objective: result.objective,
        beta: result.beta,
        spectral_radius_gt: result.closed_loop_radius,
        region: result.region.clone(),
        region_trace: result.region_trace,
        checks: result.checks.clone(),
        certificate: CertificateSummary {
            min_residual: residuals.min_residual,
            min_p_eigenvalue: residuals.min_p_eigenvalue,
            certified: residuals.certified,
        },
        state_scale: result.state_scale,
        solve_time_ms: result.solve_time.as_secs_f64() * 1e3,
        iterations: result.iterations,
    })
}

pub fn run(args: &SynthesizeArgs, run: &mut Run) -> anyhow::Result<ExitStatus> {
    run.manifest_hint = Some(sibling_manifest(&args.out_report));
    let problem = match args.problem {
        Problem::P1 => "p1",
        Problem::P2 => "p2",
    };
    run.param("problem", problem);
    run.param("epsilon", args.eps);
    let model = load_loop(&args.model, None, run)?.model;
    run.input("spec", &args.spec);
    let backend = ClarabelBackend::default();
    let outcome = match args.problem {
        Problem::P1 => {
            let spec = files::load_p1_spec(&args.spec, &model)?;
            synthesize_p1(&model, &spec, args.eps, &backend)
        }
        Problem::P2 => {
            let spec = files::load_p2_spec(&args.spec, &model)?;
            synthesize_p2(&model, &spec, args.eps, &backend)
        }
    };
    let mut report = SynthesisReport {
        status: "solved",
        problem,
        epsilon: args.eps,
        solved: None,
        diagnostics: String::new(),
    };
    let status = match outcome {
        Ok(SynthesisOutcome::Solved(result)) => {
            let closed = result.closed_loop(&model)?;
            report.solved = Some(solved_report(&result, &closed)?);
            report.diagnostics = result.solver_diagnostics.clone();
            result.gains.save(&args.out_gains)?;
            run.output(&args.out_gains);
            if let Some(path) = &args.out_certificate {
                result.certificate.save(path)?;
                run.output(path);
            }
            ExitStatus::Success
        }
        Ok(SynthesisOutcome::Infeasible { diagnostics }) => {
            report.status = "infeasible";
            report.diagnostics = diagnostics;
            ExitStatus::Uncertified
        }
        Err(err) => {
            let err = anyhow::Error::new(err);
            if classify(&err) != ExitStatus::NumericalFailure {
                return Err(err);
            }
            report.status = "numerical_failure";
            report.diagnostics = format!("{err:#}");
            ExitStatus::NumericalFailure
        }
    };
    files::write_json(&args.out_report, &report)?;
    run.output(&args.out_report);
    files::print_json(&report)?;
    Ok(status)
}
