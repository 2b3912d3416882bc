use std::time::Instant;

use serde::Serialize;

use super::load_loop;
use crate::args::AnalyzeArgs;
use crate::files;
use crate::manifest::{sibling_manifest, Run};
use crate::status::ExitStatus;
use mjls_core::stability::check_mss_ltvpm;

#[derive(Debug, Serialize)]
pub struct AnalyzeReport {
    pub closed_loop: bool,
    pub mss: bool,
    #[serde(rename = "spectral_radius_GT")]
    pub spectral_radius_gt: f64,
    /// Largest singular value of each mode's monodromy matrix.
    pub monodromy_norms: Vec<f64>,
    pub monodromy_radii: Vec<f64>,
    pub method: String,
    pub elapsed_ms: f64,
}

pub fn run(args: &AnalyzeArgs, run: &mut Run) -> anyhow::Result<ExitStatus> {
    if let Some(out) = &args.out {
        run.manifest_hint = Some(sibling_manifest(out));
    }
    let start = Instant::now();
    let lp = load_loop(&args.model, args.gains.as_deref(), run)?;
    let report = check_mss_ltvpm(&lp.closed)?;
    let out = AnalyzeReport {
        closed_loop: lp.gains.is_some(),
        mss: report.mss,
        spectral_radius_gt: report.spectral_radius,
        monodromy_norms: report.per_mode_norms,
        monodromy_radii: report.per_mode_radii,
        method: report.method,
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    files::print_json(&out)?;
    if let Some(path) = &args.out {
        files::write_json(path, &out)?;
        run.output(path);
    }
    Ok(ExitStatus::Success)
}
