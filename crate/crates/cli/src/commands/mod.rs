pub mod analyze;
pub mod simulate;
pub mod synthesize;
pub mod verify;

use std::path::Path;

use mjls_core::model::{close_loop, ClosedLoopSystem, ControllerGains, PeriodicMjlsModel};

use crate::files;
use crate::manifest::Run;

/// Model plus gains (zero gains for the open loop).
pub(crate) struct LoadedLoop {
    pub model: PeriodicMjlsModel,
    pub gains: Option<ControllerGains>,
    pub closed: ClosedLoopSystem,
}

pub(crate) fn load_loop(
    model: &Path,
    gains: Option<&Path>,
    run: &mut Run,
) -> anyhow::Result<LoadedLoop> {
    run.input("model", model);
    let m = files::load_model(model)?;
    let g = match gains {
        Some(path) => {
            run.input("gains", path);
            Some(files::load_gains(path, &m)?)
        }
        None => None,
    };
    let closed = close_loop(&m, g.as_ref().unwrap_or(&ControllerGains::zeros(&m)))?;
    Ok(LoadedLoop {
        model: m,
        gains: g,
        closed,
    })
}
