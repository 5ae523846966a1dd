//! Block encryption at the encoder and the two consumer decryptions.
//!
//! A block is concealed as `c = r ⊙ P v` and measured as `y = Phi c`. In
//! canonical mode `v` is the raw signal. In transform mode `v = Psi^T x`, and
//! the permutation is applied only to blocks flagged sensitive.
//!
//! * superuser: `P^-1 (r^-1 ⊙ z)`, then synthesis in transform mode
//! * semi-authorized user: `r^-1 ⊙ z`, a permutation of `v`

use mpcc_sparse::{DecompressedBlock, SensingError, SensingMatrix};
use thiserror::Error;

use crate::keys::{gen_mask, gen_permutation, Key, MaskVector, Permutation, SubKeys};
use crate::transform::{OrthoBasis, TransformError};

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("transform-mode block needs a basis")]
    MissingBasis,
    #[error("canonical block must not be given a basis")]
    UnexpectedBasis,
    #[error("blocks must have at least one value")]
    EmptyBlock,
    #[error("histogram needs lo < hi and at least one bin")]
    BadHistogram,
    #[error(transparent)]
    Sensing(#[from] SensingError),
    #[error(transparent)]
    Transform(#[from] TransformError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// Sparse as sampled.
    Canonical,
    /// Sparse in a basis `Psi`.
    Transform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlainBlock {
    values: Vec<f64>,
    index: u64,
    kind: BlockKind,
    sensitive: bool,
}

impl PlainBlock {
    pub fn new(
        index: u64,
        values: Vec<f64>,
        kind: BlockKind,
        sensitive: bool,
    ) -> Result<Self, CodecError> {
        if values.is_empty() {
            return Err(CodecError::EmptyBlock);
        }
        Ok(Self {
            values,
            index,
            kind,
            sensitive,
        })
    }

    /// Canonical blocks are always permuted, so they count as sensitive.
    pub fn canonical(index: u64, values: Vec<f64>) -> Result<Self, CodecError> {
        Self::new(index, values, BlockKind::Canonical, true)
    }

    pub fn transform(index: u64, values: Vec<f64>, sensitive: bool) -> Result<Self, CodecError> {
        Self::new(index, values, BlockKind::Transform, sensitive)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn kind(&self) -> BlockKind {
        self.kind
    }

    pub fn sensitive(&self) -> bool {
        self.sensitive
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of nonzero values.
    pub fn l0(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct CipherFlags {
    pub sensitive: bool,
    pub transform: bool,
}

impl CipherFlags {
    pub const SENSITIVE: u8 = 0b01;
    pub const TRANSFORM: u8 = 0b10;

    pub fn bits(self) -> u8 {
        ((self.sensitive as u8) * Self::SENSITIVE) | ((self.transform as u8) * Self::TRANSFORM)
    }

    /// Unknown bits are ignored.
    pub fn from_bits(bits: u8) -> Self {
        Self {
            sensitive: bits & Self::SENSITIVE != 0,
            transform: bits & Self::TRANSFORM != 0,
        }
    }

    /// Whether the encoder applied the permutation.
    pub fn permuted(self) -> bool {
        !self.transform || self.sensitive
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CipherBlock {
    pub measurements: Vec<f64>,
    pub index: u64,
    pub flags: CipherFlags,
}

/// The per-block secrets derived from the subkeys.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSecrets {
    pub permutation: Permutation,
    pub mask: MaskVector,
}

impl BlockSecrets {
    pub fn derive(subkeys: &SubKeys, index: u64, n: usize, levels: u32) -> Self {
        Self {
            permutation: gen_permutation(&subkeys.k_p, index, n),
            mask: gen_mask(&subkeys.k_r, index, n, levels),
        }
    }

    /// Identity permutation and all-ones mask.
    pub fn trivial(n: usize) -> Self {
        Self {
            permutation: Permutation::identity(n),
            mask: MaskVector::ones(n),
        }
    }
}

/// Ciphertext plus the floating-point operations spent producing it.
#[derive(Debug, Clone, PartialEq)]
pub struct TracedCipher {
    pub block: CipherBlock,
    pub flops: u64,
}

fn check_basis(
    kind: BlockKind,
    basis: Option<&OrthoBasis>,
) -> Result<Option<&OrthoBasis>, CodecError> {
    match (kind, basis) {
        (BlockKind::Canonical, None) => Ok(None),
        (BlockKind::Canonical, Some(_)) => Err(CodecError::UnexpectedBasis),
        (BlockKind::Transform, Some(b)) => Ok(Some(b)),
        (BlockKind::Transform, None) => Err(CodecError::MissingBasis),
    }
}

fn check_len(expected: usize, found: usize) -> Result<(), CodecError> {
    if expected != found {
        return Err(CodecError::DimensionMismatch { expected, found });
    }
    Ok(())
}

fn flags_of(block: &PlainBlock) -> CipherFlags {
    CipherFlags {
        sensitive: block.sensitive,
        transform: block.kind == BlockKind::Transform,
    }
}

fn conceal_counted(
    secrets: &BlockSecrets,
    block: &PlainBlock,
    basis: Option<&OrthoBasis>,
) -> Result<(Vec<f64>, u64), CodecError> {
    let basis = check_basis(block.kind, basis)?;
    let n = block.len();
    check_len(n, secrets.mask.len())?;
    check_len(n, secrets.permutation.len())?;
    let mut flops = 0;
    let v = match basis {
        Some(b) => {
            flops += b.apply_flops();
            b.analyze(&block.values)?
        }
        None => block.values.clone(),
    };
    let v = if flags_of(block).permuted() {
        secrets.permutation.apply(&v)
    } else {
        v
    };
    flops += n as u64;
    Ok((secrets.mask.apply(&v), flops))
}

/// The vector the sensing matrix is applied to: `r ⊙ P v` or `r ⊙ v`.
pub fn conceal(
    secrets: &BlockSecrets,
    block: &PlainBlock,
    basis: Option<&OrthoBasis>,
) -> Result<Vec<f64>, CodecError> {
    conceal_counted(secrets, block, basis).map(|(v, _)| v)
}

/// Encrypts with explicitly supplied per-block secrets.
pub fn enc_block_with(
    secrets: &BlockSecrets,
    phi: &SensingMatrix,
    block: &PlainBlock,
    basis: Option<&OrthoBasis>,
) -> Result<TracedCipher, CodecError> {
    check_len(phi.n(), block.len())?;
    let (concealed, flops) = conceal_counted(secrets, block, basis)?;
    let measurements = phi.measure(&concealed)?;
    Ok(TracedCipher {
        block: CipherBlock {
            measurements,
            index: block.index,
            flags: flags_of(block),
        },
        flops: flops + phi.measure_flops(),
    })
}

pub fn enc_block(
    subkeys: &SubKeys,
    phi: &SensingMatrix,
    block: &PlainBlock,
    basis: Option<&OrthoBasis>,
    levels: u32,
) -> Result<CipherBlock, CodecError> {
    check_len(phi.n(), block.len())?;
    let secrets = BlockSecrets::derive(subkeys, block.index, block.len(), levels);
    enc_block_with(&secrets, phi, block, basis).map(|t| t.block)
}

fn finish(
    index: u64,
    v: Vec<f64>,
    basis: Option<&OrthoBasis>,
    sensitive: bool,
) -> Result<PlainBlock, CodecError> {
    match basis {
        Some(b) => PlainBlock::transform(index, b.synthesize(&v)?, sensitive),
        None => PlainBlock::canonical(index, v),
    }
}

/// Superuser decryption with explicit secrets.
pub fn dec_super_with(
    secrets: &BlockSecrets,
    z: &DecompressedBlock,
    basis: Option<&OrthoBasis>,
    was_sensitive: bool,
) -> Result<PlainBlock, CodecError> {
    if z.z.is_empty() {
        return Err(CodecError::EmptyBlock);
    }
    check_len(secrets.mask.len(), z.z.len())?;
    check_len(secrets.permutation.len(), z.z.len())?;
    let unmasked = secrets.mask.apply_inverse(&z.z);
    let flags = CipherFlags {
        sensitive: was_sensitive,
        transform: basis.is_some(),
    };
    let v = if flags.permuted() {
        secrets.permutation.apply_inverse(&unmasked)
    } else {
        unmasked
    };
    finish(z.index, v, basis, was_sensitive)
}

pub fn dec_super(
    subkeys: &SubKeys,
    z: &DecompressedBlock,
    basis: Option<&OrthoBasis>,
    was_sensitive: bool,
    levels: u32,
) -> Result<PlainBlock, CodecError> {
    let secrets = BlockSecrets::derive(subkeys, z.index, z.z.len(), levels);
    dec_super_with(&secrets, z, basis, was_sensitive)
}

/// Semi-authorized decryption with an explicit mask.
pub fn dec_semi_with(
    mask: &MaskVector,
    z: &DecompressedBlock,
    basis: Option<&OrthoBasis>,
    was_sensitive: bool,
) -> Result<PlainBlock, CodecError> {
    if z.z.is_empty() {
        return Err(CodecError::EmptyBlock);
    }
    check_len(mask.len(), z.z.len())?;
    finish(z.index, mask.apply_inverse(&z.z), basis, was_sensitive)
}

/// Needs only `K_r`. Sensitive transform blocks come out garbled.
pub fn dec_semi(
    k_r: &Key,
    z: &DecompressedBlock,
    basis: Option<&OrthoBasis>,
    was_sensitive: bool,
    levels: u32,
) -> Result<PlainBlock, CodecError> {
    let mask = gen_mask(k_r, z.index, z.z.len(), levels);
    dec_semi_with(&mask, z, basis, was_sensitive)
}

/// Equal-width bins over `[lo, hi)`; values outside are clamped into the
/// first or last bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramSpec {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl HistogramSpec {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self, CodecError> {
        if bins == 0 || !lo.is_finite() || !hi.is_finite() || lo >= hi {
            return Err(CodecError::BadHistogram);
        }
        Ok(Self { lo, hi, bins })
    }

    pub fn bin_of(&self, v: f64) -> usize {
        let pos = (v - self.lo) / (self.hi - self.lo) * self.bins as f64;
        if pos.is_nan() || pos < 0.0 {
            0
        } else {
            (pos as usize).min(self.bins - 1)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockStats {
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
    pub histogram: Vec<u64>,
}

/// Statistics that do not depend on the order of `values`.
///
/// Sums run over the sorted values so that any reordering of the input
/// gives bit-identical results.
pub fn permuted_stats(values: &[f64], spec: &HistogramSpec) -> BlockStats {
    let mut histogram = vec![0u64; spec.bins];
    for &v in values {
        histogram[spec.bin_of(v)] += 1;
    }
    if values.is_empty() {
        return BlockStats {
            mean: f64::NAN,
            variance: f64::NAN,
            histogram,
        };
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let variance = sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    BlockStats {
        mean,
        variance,
        histogram,
    }
}
