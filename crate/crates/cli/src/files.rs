//! Input loading with file context, and JSON output helpers.

use std::fs;
use std::io::{ErrorKind, Write};
use std::path::Path;

use anyhow::Context;
use mjls_core::model::{ControllerGains, ModelFile, PeriodicMjlsModel};
use mjls_core::stability::{CertificateFile, LyapunovCertificate};
use mjls_core::synthesis::{SpecFileP1, SpecFileP2, SynthesisSpecP1, SynthesisSpecP2};
use serde::de::DeserializeOwned;
use serde::Serialize;

fn read(path: &Path, what: &str) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {what} {}", path.display()))
}

fn parse<T: DeserializeOwned>(path: &Path, what: &str) -> anyhow::Result<T> {
    let text = read(path, what)?;
    serde_json::from_str(&text).with_context(|| format!("parsing {what} {}", path.display()))
}

pub fn load_model(path: &Path) -> anyhow::Result<PeriodicMjlsModel> {
    let file: ModelFile = parse(path, "model")?;
    file.into_model()
        .with_context(|| format!("invalid model {}", path.display()))
}

pub fn load_gains(path: &Path, model: &PeriodicMjlsModel) -> anyhow::Result<ControllerGains> {
    let text = read(path, "gains")?;
    ControllerGains::from_json_str(&text, model)
        .with_context(|| format!("invalid gains {}", path.display()))
}

pub fn load_certificate(path: &Path, n_x: usize) -> anyhow::Result<LyapunovCertificate> {
    let file: CertificateFile = parse(path, "certificate")?;
    file.into_certificate(n_x)
        .with_context(|| format!("invalid certificate {}", path.display()))
}

pub fn load_p1_spec(path: &Path, model: &PeriodicMjlsModel) -> anyhow::Result<SynthesisSpecP1> {
    let file: SpecFileP1 = parse(path, "p1 spec")?;
    SynthesisSpecP1::from_file(file, model)
        .with_context(|| format!("invalid p1 spec {}", path.display()))
}

pub fn load_p2_spec(path: &Path, model: &PeriodicMjlsModel) -> anyhow::Result<SynthesisSpecP2> {
    let file: SpecFileP2 = parse(path, "p2 spec")?;
    SynthesisSpecP2::from_file(file, model)
        .with_context(|| format!("invalid p2 spec {}", path.display()))
}

/// A spec file of either kind.
#[derive(Debug, Clone)]
pub enum AnySpec {
    P1(SynthesisSpecP1),
    P2(SynthesisSpecP2),
}

/// Tries both schemas; both reject unknown fields, so at most one matches.
pub fn load_any_spec(path: &Path, model: &PeriodicMjlsModel) -> anyhow::Result<AnySpec> {
    let text = read(path, "spec")?;
    if let Ok(file) = serde_json::from_str::<SpecFileP1>(&text) {
        return Ok(AnySpec::P1(
            SynthesisSpecP1::from_file(file, model)
                .with_context(|| format!("invalid p1 spec {}", path.display()))?,
        ));
    }
    match serde_json::from_str::<SpecFileP2>(&text) {
        Ok(file) => Ok(AnySpec::P2(
            SynthesisSpecP2::from_file(file, model)
                .with_context(|| format!("invalid p2 spec {}", path.display()))?,
        )),
        Err(e) => Err(anyhow::Error::new(e)
            .context(format!("{} is neither a p1 nor a p2 spec", path.display()))),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

/// Prints to stdout; a closed pipe is not an error.
pub fn print_json<T: Serialize>(value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}
