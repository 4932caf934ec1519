//! Configuration-driven experiments behind the `hkflow` binary.
//!
//! Each verb reads a JSON config, writes its reports atomically into the
//! output directory and finishes with `manifest.json`, which records the
//! effective config hash, seed, tolerance scale and a SHA-256 of every
//! report so the directory can be re-validated later.
//!
//! Exit codes: 0 success, 1 an asserted inequality failed, 2 malformed input,
//! 3 solver failure.

mod cli;
pub mod config;
mod verbs;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use cli::{main_with_args, Cli, Verb};
pub use verbs::{run_verb, Status, VerbOutput};

pub const MANIFEST: &str = "manifest.json";
pub const DEFAULT_SEED: u64 = 0;

/// Formats with 12 significant digits.
pub fn fmt_float(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    format!("{:.11e}", v)
}

/// Exit code of an error: malformed input 2, solver failure 3.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidInput(_) | Error::DomainMismatch(_) | Error::Json(_) | Error::Io(_) => 2,
        Error::Solver(_) | Error::SupportTooLarge { .. } => 3,
    }
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub verb: String,
    pub version: String,
    /// SHA-256 of the effective config after flag overrides.
    pub config_sha256: String,
    pub effective_config: serde_json::Value,
    pub seed: u64,
    pub default_seed: u64,
    pub tol_scale: f64,
    /// Report file name to SHA-256.
    pub files: BTreeMap<String, String>,
    pub wall_time_s: f64,
    pub exit_code: i32,
    pub message: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifestCheck {
    pub checked: usize,
    pub mismatched: Vec<String>,
    pub missing: Vec<String>,
}

impl ManifestCheck {
    pub fn ok(&self) -> bool {
        self.mismatched.is_empty() && self.missing.is_empty()
    }
}

/// Recomputes every file hash listed in `dir/manifest.json`.
pub fn validate_manifest(dir: &Path) -> Result<ManifestCheck> {
    let m: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST))?)?;
    let mut check = ManifestCheck { checked: 0, mismatched: Vec::new(), missing: Vec::new() };
    for (name, want) in &m.files {
        match std::fs::read(dir.join(name)) {
            Ok(bytes) => {
                check.checked += 1;
                if &sha256_hex(&bytes) != want {
                    check.mismatched.push(name.clone());
                }
            }
            Err(_) => check.missing.push(name.clone()),
        }
    }
    Ok(check)
}

/// Flags shared by every verb.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub tol_scale: f64,
}

impl RunContext {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    /// Directory that relative paths inside the config are resolved against.
    pub fn config_dir(&self) -> PathBuf {
        self.config
            .as_deref()
            .and_then(Path::parent)
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    }
}

/// Runs a verb, writes its reports and manifest, and returns the exit code.
pub fn execute(ctx: &RunContext, verb: &Verb) -> i32 {
    let start = std::time::Instant::now();
    let name = verb.name();
    let result = (|| -> Result<(VerbOutput, serde_json::Value)> {
        if !(ctx.tol_scale > 0.0 && ctx.tol_scale.is_finite()) {
            return crate::error::invalid("--tol-scale must be positive");
        }
        let (out, effective) = run_verb(ctx, verb)?;
        std::fs::create_dir_all(&ctx.out)?;
        Ok((out, effective))
    })();
    let (out, effective) = match result {
        Ok(v) => v,
        Err(e) => {
            log::debug!("{name}: {e}");
            eprintln!("hkflow {name}: {e}");
            return exit_code(&e);
        }
    };
    let code = match &out.status {
        Status::Pass => 0,
        Status::AssertionFailed(_) => 1,
        Status::SolverFailed(_) => 3,
    };
    let message = match &out.status {
        Status::Pass => None,
        Status::AssertionFailed(m) | Status::SolverFailed(m) => Some(m.clone()),
    };
    let write = || -> Result<()> {
        let mut files = BTreeMap::new();
        for (file, bytes) in &out.files {
            write_atomic(&ctx.out.join(file), bytes)?;
            files.insert(file.clone(), sha256_hex(bytes));
        }
        let manifest = Manifest {
            verb: name.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: sha256_hex(&serde_json::to_vec(&effective)?),
            effective_config: effective.clone(),
            seed: ctx.seed(),
            default_seed: DEFAULT_SEED,
            tol_scale: ctx.tol_scale,
            files,
            wall_time_s: start.elapsed().as_secs_f64(),
            exit_code: code,
            message: message.clone(),
        };
        write_atomic(&ctx.out.join(MANIFEST), &serde_json::to_vec_pretty(&manifest)?)
    };
    if let Err(e) = write() {
        eprintln!("hkflow {name}: writing reports failed: {e}");
        return 2;
    }
    if let Some(m) = message {
        eprintln!("hkflow {name}: {m}");
    }
    code
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_has_twelve_digits() {
        assert_eq!(fmt_float(1.0 / 3.0), "3.33333333333e-1");
        assert_eq!(fmt_float(0.0), "0");
        assert_eq!(fmt_float(-2.5e10), "-2.50000000000e10");
    }

    #[test]
    fn atomic_write_and_manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        write_atomic(&dir.path().join("a.txt"), b"hello").unwrap();
        assert_eq!(std::fs::read(dir.path().join("a.txt")).unwrap(), b"hello");
        let m = Manifest {
            verb: "x".into(),
            version: "0".into(),
            config_sha256: String::new(),
            effective_config: serde_json::Value::Null,
            seed: 0,
            default_seed: 0,
            tol_scale: 1.0,
            files: [("a.txt".to_string(), sha256_hex(b"hello"))].into_iter().collect(),
            wall_time_s: 0.0,
            exit_code: 0,
            message: None,
        };
        write_atomic(&dir.path().join(MANIFEST), &serde_json::to_vec(&m).unwrap()).unwrap();
        assert!(validate_manifest(dir.path()).unwrap().ok());
        std::fs::write(dir.path().join("a.txt"), b"changed").unwrap();
        assert_eq!(validate_manifest(dir.path()).unwrap().mismatched, vec!["a.txt".to_string()]);
    }
}
