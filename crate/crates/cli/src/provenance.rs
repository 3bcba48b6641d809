//! Config echo and provenance stamp written beside every command's output.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::LoadedConfig;
use crate::error::{CliError, CliResult};

pub const CONFIG_ECHO: &str = "config.toml";
pub const PROVENANCE: &str = "provenance.txt";

pub fn version() -> String {
    format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::Data(format!("cannot create {}: {e}", path.display())))
}

pub fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

/// Writes the verbatim config and a provenance file with the seed, version,
/// command-specific `details` and the resolved configuration. Nothing
/// time-dependent goes in, so reruns reproduce the files exactly.
/// `prefix` separates the stamps of commands sharing a directory.
pub fn stamp(
    dir: &Path,
    command: &str,
    cfg: &LoadedConfig,
    seed: u64,
    deterministic: bool,
    details: &[(String, String)],
    prefix: &str,
) -> CliResult<()> {
    create_dir(dir)?;
    write_file(&dir.join(format!("{prefix}{CONFIG_ECHO}")), &cfg.text)?;
    let mut s = String::new();
    let _ = writeln!(s, "version = {}", version());
    let _ = writeln!(s, "command = {command}");
    let _ = writeln!(s, "seed = {seed}");
    let _ = writeln!(s, "deterministic = {deterministic}");
    for (k, v) in details {
        let _ = writeln!(s, "{k} = {v}");
    }
    s.push_str("\n# resolved configuration\n");
    s.push_str(&cfg.config.resolved_toml());
    write_file(&dir.join(format!("{prefix}{PROVENANCE}")), &s)
}
