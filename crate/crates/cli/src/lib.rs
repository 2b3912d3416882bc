//! Command implementations behind the `mjls` binary.

pub mod args;
pub mod commands;
pub mod files;
pub mod manifest;
pub mod status;

pub use args::{Cli, Command};
pub use manifest::{Run, RunManifest};
pub use status::ExitStatus;

/// Runs one parsed command and writes its manifest.
pub fn execute(cli: &Cli, argv: Vec<String>) -> ExitStatus {
    let mut run = Run::new(cli.command.name(), argv);
    let result = match &cli.command {
        Command::Analyze(a) => commands::analyze::run(a, &mut run),
        Command::Synthesize(a) => commands::synthesize::run(a, &mut run),
        Command::Simulate(a) => commands::simulate::run(a, &mut run),
        Command::Verify(a) => commands::verify::run(a, &mut run),
    };
    let status = match result {
        Ok(status) => status,
        Err(err) => {
            let status = status::classify(&err);
            eprintln!("error: {err:#}");
            run.error = Some(format!("{err:#}"));
            status
        }
    };
    let path = cli
        .manifest
        .clone()
        .unwrap_or_else(|| run.default_manifest_path());
    if let Err(err) = run.finish(status).save(&path) {
        eprintln!(
            "warning: could not write run manifest {}: {err:#}",
            path.display()
        );
    }
    status
}
