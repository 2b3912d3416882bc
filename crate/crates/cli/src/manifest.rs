use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::status::ExitStatus;

/// Record of one invocation, enough to repeat it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub inputs: BTreeMap<String, PathBuf>,
    /// Every resolved parameter, defaults included.
    pub parameters: BTreeMap<String, Value>,
    pub outputs: Vec<PathBuf>,
    pub status: String,
    pub exit_code: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Manifest under construction while a command runs.
#[derive(Debug, Clone)]
pub struct Run {
    command: String,
    argv: Vec<String>,
    inputs: BTreeMap<String, PathBuf>,
    parameters: BTreeMap<String, Value>,
    outputs: Vec<PathBuf>,
    /// Where the manifest goes unless `--manifest` overrides it.
    pub manifest_hint: Option<PathBuf>,
    pub error: Option<String>,
}

impl Run {
    pub fn new(command: &str, argv: Vec<String>) -> Self {
        Self {
            command: command.to_string(),
            argv,
            inputs: BTreeMap::new(),
            parameters: BTreeMap::new(),
            outputs: Vec::new(),
            manifest_hint: None,
            error: None,
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) {
        self.inputs.insert(role.to_string(), path.to_path_buf());
    }

    pub fn param(&mut self, name: &str, value: impl Serialize) {
        let value = serde_json::to_value(value).unwrap_or(Value::Null);
        self.parameters.insert(name.to_string(), value);
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn default_manifest_path(&self) -> PathBuf {
        self.manifest_hint
            .clone()
            .unwrap_or_else(|| PathBuf::from(format!("mjls-{}.manifest.json", self.command)))
    }

    pub fn finish(self, status: ExitStatus) -> RunManifest {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: self.command,
            argv: self.argv,
            inputs: self.inputs,
            parameters: self.parameters,
            outputs: self.outputs,
            status: status.label().to_string(),
            exit_code: status.code(),
            error: self.error,
        }
    }
}

/// `report.json` → `report.manifest.json`.
pub fn sibling_manifest(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    path.with_file_name(format!("{stem}.manifest.json"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sibling_name() {
        assert_eq!(
            sibling_manifest(Path::new("out/report.json")),
            PathBuf::from("out/report.manifest.json")
        );
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut run = Run::new("analyze", vec!["mjls".into(), "analyze".into()]);
        run.input("model", Path::new("m.json"));
        run.param("epsilon", 1e-6);
        run.output(Path::new("r.json"));
        let m = run.finish(ExitStatus::Uncertified);
        let path = dir.path().join("sub/m.manifest.json");
        m.save(&path).unwrap();
        let back = RunManifest::load(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.exit_code, 3);
        assert_eq!(back.status, "uncertified");
    }
}
