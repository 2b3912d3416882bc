use std::fs::{self, File};
use std::io::{BufWriter, Write};

use anyhow::{bail, Context};
use nalgebra::DVector;
use serde::Serialize;

use super::load_loop;
use crate::args::SimulateArgs;
use crate::files::{self, AnySpec};
use crate::manifest::Run;
use crate::status::ExitStatus;
use mjls_core::linalg::spd_inverse;
use mjls_core::model::ModeIndexedSet;
use mjls_core::simulate::{
    monte_carlo, propagate_covariance, write_covariance_csv, ConstraintAudit, InitialSampler,
    MonteCarloSummary, SimulationConfig,
};

pub const TRAJECTORY_CSV: &str = "trajectories.csv";
pub const COVARIANCE_CSV: &str = "covariance.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const MANIFEST_JSON: &str = "manifest.json";

/// The counts printed to stdout; the full summary goes to `summary.json`.
#[derive(Debug, Serialize)]
struct Digest<'a> {
    n_trajectories: usize,
    horizon: usize,
    seed: u64,
    initial_states: &'a str,
    control_violations: usize,
    state_violations: usize,
    lyapunov_increases: usize,
    decay_ratio: Option<f64>,
    mean_cost: Option<f64>,
    out: &'a std::path::Path,
}

pub fn run(args: &SimulateArgs, run: &mut Run) -> anyhow::Result<ExitStatus> {
    run.manifest_hint = Some(args.out.join(MANIFEST_JSON));
    run.param("trajectories", args.trajectories);
    run.param("horizon", args.horizon);
    run.param("seed", args.seed);
    run.param("execution", format!("{:?}", args.execution).to_lowercase());
    let lp = load_loop(&args.model, args.gains.as_deref(), run)?;
    let modes = lp.model.num_modes;

    let spec = match &args.spec {
        Some(path) => {
            run.input("spec", path);
            Some(files::load_any_spec(path, &lp.model)?)
        }
        None => None,
    };
    let certificate = match &args.certificate {
        Some(path) => {
            run.input("certificate", path);
            let cert = files::load_certificate(path, lp.model.n_x)?;
            if cert.period() != lp.model.period || cert.p[0].num_modes() != modes {
                bail!("certificate {} does not match the model", path.display());
            }
            Some(cert)
        }
        None => None,
    };

    let mut audit = ConstraintAudit::default();
    let mut spec_rho = None;
    match &spec {
        Some(AnySpec::P1(s)) => {
            audit.u_max = Some(s.u_max.clone());
            audit.w = s.w.clone();
            audit.cost = Some((s.q.clone(), s.r.clone()));
        }
        Some(AnySpec::P2(s)) => {
            audit.u_max = Some(s.u_max.clone());
            audit.w = Some(s.w.clone());
            spec_rho = Some(s.rho.clone());
        }
        None => {}
    }
    if audit.u_max.is_some() && lp.gains.is_none() {
        bail!("a control audit needs --gains");
    }

    let (initial, initial_label) = if let Some(x0) = &args.x0 {
        (
            InitialSampler::Fixed(DVector::from_vec(x0.clone())),
            "fixed",
        )
    } else if let Some(AnySpec::P1(s)) = &spec {
        (InitialSampler::Hull(s.hull_vertices.clone()), "hull")
    } else if let Some(cert) = &certificate {
        // sublevel set {x : x^T P_0(i) x ≤ 1}
        let shapes = cert.p[0]
            .iter()
            .map(spd_inverse)
            .collect::<mjls_core::Result<Vec<_>>>()
            .context("certificate P_0 is not positive definite")?;
        (
            InitialSampler::Ellipsoids(ModeIndexedSet::new(shapes)?),
            "certificate ellipsoids",
        )
    } else {
        bail!("no initial states: pass --x0, a p1 spec with hull vertices, or --certificate");
    };
    let rho = args
        .rho
        .clone()
        .or(spec_rho)
        .unwrap_or_else(|| vec![1.0 / modes as f64; modes]);
    run.param("rho", &rho);
    run.param("initial_states", initial_label);

    let config = SimulationConfig {
        horizon: args.horizon,
        n_trajectories: args.trajectories,
        seed: args.seed,
        initial,
        rho,
        execution: args.execution.into(),
    };
    config.validate(&lp.closed)?;

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let traj_path = args.out.join(TRAJECTORY_CSV);
    let mut csv = BufWriter::new(
        File::create(&traj_path).with_context(|| format!("creating {}", traj_path.display()))?,
    );
    let summary: MonteCarloSummary = monte_carlo(
        &lp.closed,
        lp.gains.as_ref(),
        &config,
        &audit,
        certificate.as_ref(),
        Some(&mut csv),
    )?;
    csv.flush()?;
    run.output(&traj_path);

    let series = propagate_covariance(
        &lp.closed,
        &config.initial.second_moment(&config.rho)?,
        config.horizon,
    )?;
    let cov_path = args.out.join(COVARIANCE_CSV);
    let mut cov = BufWriter::new(File::create(&cov_path)?);
    write_covariance_csv(&mut cov, &series)?;
    cov.flush()?;
    run.output(&cov_path);

    let summary_path = args.out.join(SUMMARY_JSON);
    files::write_json(&summary_path, &summary)?;
    run.output(&summary_path);

    files::print_json(&Digest {
        n_trajectories: summary.n_trajectories,
        horizon: summary.horizon,
        seed: summary.seed,
        initial_states: initial_label,
        control_violations: summary.control_violations,
        state_violations: summary.state_violations,
        lyapunov_increases: summary.lyapunov_increases,
        decay_ratio: summary.decay_ratio,
        mean_cost: summary.cost.as_ref().map(|c| c.mean),
        out: &args.out,
    })?;
    Ok(ExitStatus::Success)
}
