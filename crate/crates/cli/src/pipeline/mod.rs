//! End-to-end experiment drivers.
//!
//! Both pipelines run every block through the same path a deployment
//! would: encode, store, decompress in the store, then decode as each
//! consumer class.

pub mod image;
pub mod smartmeter;

use std::path::PathBuf;

use mpcc_core::{KeyError, MasterKey};
use mpcc_sparse::{DecompressedBlock, Diagnostics, RecoveryError, SolverOptions, DEFAULT_SOLVER};
use mpcc_store::{Decompressed, StoreError};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::config::Config;
use crate::error::{CliError, Result};

pub const DEFAULT_PHI_SEED: u64 = 1;
pub const DEFAULT_OUT_DIR: &str = "mpcc-out";

/// Settings shared by both pipelines.
#[derive(Debug, Clone)]
pub struct CommonConfig {
    pub phi_seed: u64,
    pub levels: u32,
    pub solver: String,
    pub options: SolverOptions,
    /// Where store logs and artifacts go.
    pub out_dir: PathBuf,
}

impl CommonConfig {
    /// Reads `seed`, `levels`, `solver`, `max_iters`, `rel_tol`, `abs_tol`,
    /// `rho`, `debias` and `out`, starting from `defaults` for the solver.
    pub fn from_config(cfg: &Config, defaults: SolverOptions) -> Result<Self> {
        let levels = cfg.get_or("levels", mpcc_core::DEFAULT_LEVELS)?;
        if levels == 0 {
            return Err(CliError::Usage("levels must be >= 1".into()));
        }
        let options = SolverOptions {
            max_iters: cfg.get_or("max_iters", defaults.max_iters)?,
            rel_tol: cfg.get_or("rel_tol", defaults.rel_tol)?,
            abs_tol: cfg.get_or("abs_tol", defaults.abs_tol)?,
            rho: cfg.get_or("rho", defaults.rho)?,
            debias: cfg.get_or("debias", defaults.debias)?,
            ..defaults
        };
        options.validate()?;
        Ok(Self {
            phi_seed: cfg.get_or("seed", DEFAULT_PHI_SEED)?,
            levels,
            solver: cfg.get_or("solver", DEFAULT_SOLVER.to_string())?,
            options,
            out_dir: cfg.get_or("out", PathBuf::from(DEFAULT_OUT_DIR))?,
        })
    }
}

/// The master key from `key_file`, else from the environment, else a
/// fixed demonstration key derived from `demo_key_seed` (default 0).
pub fn master_key(cfg: &Config) -> Result<MasterKey> {
    if let Some(path) = cfg.get("key_file") {
        return Ok(MasterKey::load_file(path.as_ref())?);
    }
    match MasterKey::from_env() {
        Ok(k) => return Ok(k),
        Err(KeyError::MissingEnv(_)) => {}
        Err(e) => return Err(e.into()),
    }
    let seed: u64 = cfg.get_or("demo_key_seed", 0)?;
    log::warn!(
        "no key file or {} set; using the demonstration key",
        mpcc_core::keys::MASTER_KEY_ENV
    );
    Ok(demo_master_key(seed))
}

/// Deterministic, publicly known key for reproducible experiments.
pub fn demo_master_key(seed: u64) -> MasterKey {
    let mut bytes = [0u8; 32];
    ChaCha20Rng::seed_from_u64(seed ^ 0x6d70_6363_6465_6d6f).fill_bytes(&mut bytes);
    MasterKey::from_bytes(bytes)
}

/// Accepts a partial solution when the solver ran out of iterations.
pub(crate) fn accept_partial(
    result: std::result::Result<Decompressed, StoreError>,
    index: u64,
) -> Result<(DecompressedBlock, Diagnostics)> {
    match result {
        Ok(d) => Ok((d.block, d.diagnostics)),
        Err(StoreError::Recovery(RecoveryError::NotConverged(partial))) => {
            log::debug!("block {index}: using unconverged solution");
            Ok((
                DecompressedBlock::new(index, partial.z),
                partial.diagnostics,
            ))
        }
        Err(e) => Err(e.into()),
    }
}

pub(crate) fn ensure_dir(dir: &std::path::Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(crate::error::file_err(dir))
}

/// Store log path for a run, removing any log left by an earlier run.
pub(crate) fn fresh_log(dir: &std::path::Path, name: &str) -> Result<PathBuf> {
    ensure_dir(dir)?;
    let path = dir.join(name);
    match std::fs::remove_file(&path) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) => return Err(CliError::File { path, source: e }),
    }
    Ok(path)
}
