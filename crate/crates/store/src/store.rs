//! Append-only record log with an in-memory index and a decompression
//! cache.
//!
//! The log is a plain concatenation of encoded records. Opening a log scans
//! it from the start, rebuilding the index; a partially written record at
//! the end is cut off. Re-putting an index appends a new record and the
//! index points at the newest one.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock, RwLock};

use mpcc_sparse::{
    DecompressedBlock, Diagnostics, PreparedRecovery, RecoveryError, SensingMatrix, Solution,
    SolverOptions, SolverRegistry, DEFAULT_SOLVER,
};
use thiserror::Error;

use crate::record::{CiphertextRecord, Geometry, RecordError, HEADER_LEN};

/// Slack allowed over `epsilon` when re-checking solver output.
pub const FEASIBILITY_SLACK: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("corrupt record: {0}")]
    CorruptRecord(#[from] RecordError),
    #[error("corrupt log at byte {offset}: {source}")]
    CorruptLog { offset: u64, source: RecordError },
    #[error("record geometry {found:?} does not match store geometry {expected:?}")]
    DimensionMismatch { expected: Geometry, found: Geometry },
    #[error("payload has {found} values, header says {expected}")]
    PayloadLength { expected: usize, found: usize },
    #[error("no record for block {0}")]
    NotFound(u64),
    #[error("store is empty and has no geometry yet")]
    NoGeometry,
    #[error("decompression failed: {0}")]
    Recovery(#[from] RecoveryError),
    #[error("solution violates the residual bound: {residual:.3e} > {bound:.3e}")]
    Infeasible { residual: f64, bound: f64 },
    #[error("cannot bind {addr}: {source}")]
    BindFailure { addr: String, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// How solver options are chosen for a stored block.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptionsPolicy {
    pub base: SolverOptions,
    /// When set, `epsilon = factor * ||y||_2` for each block.
    pub relative_epsilon: Option<f64>,
}

impl OptionsPolicy {
    pub fn resolve(&self, y: &[f64]) -> SolverOptions {
        let mut opts = self.base.clone();
        if let Some(factor) = self.relative_epsilon {
            opts.epsilon = factor * y.iter().map(|v| v * v).sum::<f64>().sqrt();
        }
        opts
    }
}

#[derive(Debug, Clone)]
pub struct StoreConfig {
    /// Required when creating a new log; checked against an existing one.
    pub geometry: Option<Geometry>,
    pub solver: String,
    pub policy: OptionsPolicy,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            geometry: None,
            solver: DEFAULT_SOLVER.to_string(),
            policy: OptionsPolicy::default(),
        }
    }
}

/// Result of a decompression request.
#[derive(Debug, Clone, PartialEq)]
pub struct Decompressed {
    pub block: DecompressedBlock,
    pub diagnostics: Diagnostics,
    /// False for the request that ran the solver.
    pub cached: bool,
}

type CacheKey = (u64, u64);
type CacheCell = Arc<OnceLock<Result<Arc<Solution>, RecoveryError>>>;

struct Engine {
    phi: SensingMatrix,
    solver: Box<dyn PreparedRecovery>,
}

pub struct Store {
    path: PathBuf,
    geometry: OnceLock<Geometry>,
    solver_name: String,
    registry: SolverRegistry,
    policy: OptionsPolicy,
    writer: Mutex<File>,
    reader: Mutex<File>,
    index: RwLock<HashMap<u64, u64>>,
    cache: Mutex<HashMap<CacheKey, CacheCell>>,
    engine: OnceLock<Result<Engine, RecoveryError>>,
    solver_runs: AtomicU64,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store")
            .field("path", &self.path)
            .field("geometry", &self.geometry.get())
            .field("solver", &self.solver_name)
            .field("records", &self.len())
            .finish()
    }
}

type ScanResult = (HashMap<u64, u64>, Option<Geometry>, u64);

/// Scans a log, returning the index, the geometry of the first record and
/// the length of the valid prefix.
fn scan(file: &mut File) -> Result<ScanResult, StoreError> {
    let mut bytes = Vec::new();
    file.seek(SeekFrom::Start(0))?;
    file.read_to_end(&mut bytes)?;
    let mut index = HashMap::new();
    let mut geometry: Option<Geometry> = None;
    let mut offset = 0usize;
    while offset < bytes.len() {
        let rest = &bytes[offset..];
        let len = match CiphertextRecord::peek_len(rest) {
            Ok(len) => len,
            Err(RecordError::Truncated { .. }) => break,
            Err(source) => {
                return Err(StoreError::CorruptLog {
                    offset: offset as u64,
                    source,
                })
            }
        };
        if rest.len() < len {
            break;
        }
        let rec =
            CiphertextRecord::decode(&rest[..len]).map_err(|source| StoreError::CorruptLog {
                offset: offset as u64,
                source,
            })?;
        match geometry {
            None => geometry = Some(rec.geometry),
            Some(g) if g != rec.geometry => {
                return Err(StoreError::DimensionMismatch {
                    expected: g,
                    found: rec.geometry,
                })
            }
            Some(_) => {}
        }
        index.insert(rec.index, offset as u64);
        offset += len;
    }
    if offset < bytes.len() {
        log::warn!(
            "dropping {} bytes of incomplete record at end of log",
            bytes.len() - offset
        );
    }
    Ok((index, geometry, offset as u64))
}

impl Store {
    pub fn open(path: impl AsRef<Path>, config: StoreConfig) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let registry = SolverRegistry::with_builtins();
        registry.get(&config.solver)?;

        let mut writer = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)?;
        let (index, found, valid_len) = scan(&mut writer)?;
        if writer.metadata()?.len() > valid_len {
            writer.set_len(valid_len)?;
        }
        let geometry = OnceLock::new();
        match (found, config.geometry) {
            (Some(f), Some(g)) if f != g => {
                return Err(StoreError::DimensionMismatch {
                    expected: g,
                    found: f,
                })
            }
            (Some(g), _) | (None, Some(g)) => {
                geometry.set(g).expect("fresh cell");
            }
            (None, None) => {}
        }
        let reader = File::open(&path)?;
        log::info!(
            "opened store {} with {} blocks",
            path.display(),
            index.len()
        );
        Ok(Self {
            path,
            geometry,
            solver_name: config.solver,
            registry,
            policy: config.policy,
            writer: Mutex::new(writer),
            reader: Mutex::new(reader),
            index: RwLock::new(index),
            cache: Mutex::new(HashMap::new()),
            engine: OnceLock::new(),
            solver_runs: AtomicU64::new(0),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn geometry(&self) -> Option<Geometry> {
        self.geometry.get().copied()
    }

    pub fn policy(&self) -> &OptionsPolicy {
        &self.policy
    }

    /// Number of distinct block indices stored.
    pub fn len(&self) -> usize {
        self.index.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn indices(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self.index.read().unwrap().keys().copied().collect();
        v.sort_unstable();
        v
    }

    /// How many times a solver has been run by this process.
    pub fn solver_runs(&self) -> u64 {
        self.solver_runs.load(Ordering::SeqCst)
    }

    /// Validates and appends an encoded record.
    pub fn put_bytes(&self, bytes: &[u8]) -> Result<(), StoreError> {
        let rec = CiphertextRecord::decode(bytes)?;
        self.check_geometry(&rec)?;
        self.append(rec.index, bytes)
    }

    pub fn put_record(&self, rec: &CiphertextRecord) -> Result<(), StoreError> {
        if rec.payload.len() != rec.geometry.m as usize {
            return Err(StoreError::PayloadLength {
                expected: rec.geometry.m as usize,
                found: rec.payload.len(),
            });
        }
        self.check_geometry(rec)?;
        self.append(rec.index, &rec.encode())
    }

    fn check_geometry(&self, rec: &CiphertextRecord) -> Result<(), StoreError> {
        let g = *self.geometry.get_or_init(|| rec.geometry);
        if g != rec.geometry {
            return Err(StoreError::DimensionMismatch {
                expected: g,
                found: rec.geometry,
            });
        }
        Ok(())
    }

    fn append(&self, index: u64, bytes: &[u8]) -> Result<(), StoreError> {
        let mut w = self.writer.lock().unwrap();
        let offset = w.seek(SeekFrom::End(0))?;
        if let Err(e) = w.write_all(bytes) {
            // drop whatever part of the record made it out
            let _ = w.set_len(offset);
            return Err(e.into());
        }
        self.index.write().unwrap().insert(index, offset);
        drop(w);
        self.cache.lock().unwrap().retain(|(i, _), _| *i != index);
        Ok(())
    }

    /// Flushes the log to stable storage.
    pub fn sync(&self) -> Result<(), StoreError> {
        self.writer.lock().unwrap().sync_data()?;
        Ok(())
    }

    /// The stored record bytes, exactly as they were put.
    pub fn get_raw(&self, index: u64) -> Result<Vec<u8>, StoreError> {
        let offset = *self
            .index
            .read()
            .unwrap()
            .get(&index)
            .ok_or(StoreError::NotFound(index))?;
        let mut r = self.reader.lock().unwrap();
        r.seek(SeekFrom::Start(offset))?;
        let mut header = [0u8; HEADER_LEN];
        r.read_exact(&mut header)?;
        let len = CiphertextRecord::peek_len(&header)?;
        let mut bytes = header.to_vec();
        bytes.resize(len, 0);
        r.read_exact(&mut bytes[HEADER_LEN..])?;
        Ok(bytes)
    }

    pub fn get_record(&self, index: u64) -> Result<CiphertextRecord, StoreError> {
        Ok(CiphertextRecord::decode(&self.get_raw(index)?)?)
    }

    fn engine(&self) -> Result<&Engine, StoreError> {
        let g = self.geometry().ok_or(StoreError::NoGeometry)?;
        let engine = self.engine.get_or_init(|| {
            let phi =
                SensingMatrix::generate(g.phi_seed, g.m as usize, g.n as usize).map_err(|e| {
                    RecoveryError::Unsupported {
                        solver: "store",
                        reason: e.to_string(),
                    }
                })?;
            let solver = self.registry.get(&self.solver_name)?.prepare(&phi)?;
            Ok(Engine { phi, solver })
        });
        engine.as_ref().map_err(|e| StoreError::Recovery(e.clone()))
    }

    /// Decompresses with options chosen by the store's policy.
    pub fn decompress(&self, index: u64) -> Result<Decompressed, StoreError> {
        let rec = self.get_record(index)?;
        let opts = self.policy.resolve(&rec.payload);
        self.get_decompressed(index, &opts)
    }

    /// Recovers `z` for a stored block. Results are cached per
    /// `(index, options)`; concurrent requests for the same key share one
    /// solver run.
    pub fn get_decompressed(
        &self,
        index: u64,
        opts: &SolverOptions,
    ) -> Result<Decompressed, StoreError> {
        if !self.index.read().unwrap().contains_key(&index) {
            return Err(StoreError::NotFound(index));
        }
        let engine = self.engine()?;
        let key = (index, opts.fingerprint());
        let cell = self.cache.lock().unwrap().entry(key).or_default().clone();

        let mut ran = false;
        let outcome = cell.get_or_init(|| {
            ran = true;
            self.solver_runs.fetch_add(1, Ordering::SeqCst);
            let rec = match self.get_record(index) {
                Ok(r) => r,
                Err(e) => {
                    return Err(RecoveryError::Unsupported {
                        solver: "store",
                        reason: e.to_string(),
                    })
                }
            };
            let solved = engine.solver.solve(&rec.payload, opts).map(Arc::new);
            match &solved {
                Ok(s) => log::debug!(
                    "block {index}: solved in {} iterations",
                    s.diagnostics.iterations
                ),
                Err(e) => log::warn!("block {index}: {e}"),
            }
            solved
        });
        let solution = outcome.clone()?;

        let rec = self.get_record(index)?;
        let phiz = engine
            .phi
            .measure(&solution.z)
            .map_err(|e| RecoveryError::Unsupported {
                solver: "store",
                reason: e.to_string(),
            })?;
        let residual = phiz
            .iter()
            .zip(&rec.payload)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let bound = opts.epsilon + FEASIBILITY_SLACK;
        if residual > bound {
            return Err(StoreError::Infeasible { residual, bound });
        }
        Ok(Decompressed {
            block: DecompressedBlock::new(index, solution.z.clone()),
            diagnostics: solution.diagnostics.clone(),
            cached: !ran,
        })
    }
}
