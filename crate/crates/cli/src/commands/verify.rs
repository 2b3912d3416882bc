use serde::Serialize;

use super::load_loop;
use crate::args::VerifyArgs;
use crate::files;
use crate::manifest::{sibling_manifest, Run};
use crate::status::ExitStatus;
use mjls_core::sdp::ClarabelBackend;
use mjls_core::stability::{
    check_mss_ltvpm, lyapunov_feasibility, verify_certificate, ResidualReport,
};

#[derive(Debug, Serialize)]
pub struct VerifyReport {
    /// `certified` or `uncertified`.
    pub status: &'static str,
    /// `provided` or `solved`.
    pub source: &'static str,
    #[serde(rename = "spectral_radius_GT")]
    pub spectral_radius_gt: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residuals: Option<ResidualReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

pub fn run(args: &VerifyArgs, run: &mut Run) -> anyhow::Result<ExitStatus> {
    if let Some(out) = &args.out {
        run.manifest_hint = Some(sibling_manifest(out));
    }
    let lp = load_loop(&args.model, args.gains.as_deref(), run)?;
    let radius = check_mss_ltvpm(&lp.closed)?.spectral_radius;

    let (source, cert) = match &args.certificate {
        Some(path) => {
            run.input("certificate", path);
            (
                "provided",
                Some(files::load_certificate(path, lp.model.n_x)?),
            )
        }
        None => {
            run.param("epsilon", args.eps);
            let found = lyapunov_feasibility(&lp.closed, args.eps, &ClarabelBackend::default())?;
            ("solved", found.certificate())
        }
    };
    let report = match cert {
        Some(mut cert) => {
            let residuals = verify_certificate(&mut cert, &lp.closed)?;
            if let (Some(path), "solved") = (&args.out_certificate, source) {
                cert.save(path)?;
                run.output(path);
            }
            VerifyReport {
                status: if residuals.certified {
                    "certified"
                } else {
                    "uncertified"
                },
                source,
                spectral_radius_gt: radius,
                residuals: Some(residuals),
                message: None,
            }
        }
        None => VerifyReport {
            status: "uncertified",
            source,
            spectral_radius_gt: radius,
            residuals: None,
            message: Some("the Lyapunov feasibility problem is infeasible".into()),
        },
    };
    files::print_json(&report)?;
    if let Some(path) = &args.out {
        files::write_json(path, &report)?;
        run.output(path);
    }
    Ok(if report.status == "certified" {
        ExitStatus::Success
    } else {
        ExitStatus::Uncertified
    })
}
