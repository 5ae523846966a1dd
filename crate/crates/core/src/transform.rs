//! Orthonormal sparsifying bases: fixed DCT-II and data-trained KLT.
//!
//! Basis vectors are the matrix columns, so `analyze` computes `Psi^T x`
//! and `synthesize` computes `Psi theta`.
//!
//! Binary layout (all little-endian):
//!
//! | bytes      | field                                   |
//! |------------|-----------------------------------------|
//! | 1          | kind (0 = DCT, 1 = KLT)                 |
//! | 4          | `n` as u32                              |
//! | `8 n^2`    | matrix entries as f64, column-major     |
//! | 4          | CRC-32 (IEEE) over all preceding bytes  |

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

/// Ridge added to the sample covariance before decomposition.
const COVARIANCE_JITTER: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("training covariance is identically zero")]
    DegenerateCovariance,
    #[error("need at least {needed} training blocks, got {got}")]
    TooFewBlocks { needed: usize, got: usize },
    #[error("basis length must be >= 1")]
    EmptyBasis,
    #[error("malformed basis file: {0}")]
    Format(String),
    #[error("basis file checksum mismatch")]
    Checksum,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    Dct,
    Klt,
}

impl BasisKind {
    fn code(self) -> u8 {
        match self {
            BasisKind::Dct => 0,
            BasisKind::Klt => 1,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(BasisKind::Dct),
            1 => Some(BasisKind::Klt),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrthoBasis {
    kind: BasisKind,
    matrix: DMatrix<f64>,
}

impl OrthoBasis {
    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Frobenius norm of `Psi^T Psi - I`.
    pub fn orthonormality_error(&self) -> f64 {
        let n = self.n();
        (self.matrix.tr_mul(&self.matrix) - DMatrix::<f64>::identity(n, n)).norm()
    }

    /// `theta = Psi^T x`.
    pub fn analyze(&self, x: &[f64]) -> Result<Vec<f64>, TransformError> {
        self.check(x.len())?;
        Ok(self
            .matrix
            .tr_mul(&DVector::from_column_slice(x))
            .as_slice()
            .to_vec())
    }

    /// `x = Psi theta`.
    pub fn synthesize(&self, theta: &[f64]) -> Result<Vec<f64>, TransformError> {
        self.check(theta.len())?;
        Ok((&self.matrix * DVector::from_column_slice(theta))
            .as_slice()
            .to_vec())
    }

    /// Floating-point operations of one analyze or synthesize call.
    pub fn apply_flops(&self) -> u64 {
        2 * (self.n() as u64).pow(2)
    }

    fn check(&self, len: usize) -> Result<(), TransformError> {
        if len != self.n() {
            return Err(TransformError::DimensionMismatch {
                expected: self.n(),
                found: len,
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.n();
        let mut out = Vec::with_capacity(1 + 4 + 8 * n * n + 4);
        out.push(self.kind.code());
        out.extend_from_slice(&(n as u32).to_le_bytes());
        for v in self.matrix.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TransformError> {
        if bytes.len() < 9 {
            return Err(TransformError::Format(format!(
                "{} bytes is too short",
                bytes.len()
            )));
        }
        let kind = BasisKind::from_code(bytes[0])
            .ok_or_else(|| TransformError::Format(format!("unknown basis kind {}", bytes[0])))?;
        let n = u32::from_le_bytes(bytes[1..5].try_into().unwrap()) as usize;
        if n == 0 {
            return Err(TransformError::EmptyBasis);
        }
        let body_len = n
            .checked_mul(n)
            .and_then(|v| v.checked_mul(8))
            .ok_or_else(|| TransformError::Format("basis size overflows".into()))?;
        let expected = 5 + body_len + 4;
        if bytes.len() != expected {
            return Err(TransformError::Format(format!(
                "expected {expected} bytes for n={n}, got {}",
                bytes.len()
            )));
        }
        let (payload, crc_bytes) = bytes.split_at(expected - 4);
        if crc32fast::hash(payload) != u32::from_le_bytes(crc_bytes.try_into().unwrap()) {
            return Err(TransformError::Checksum);
        }
        let values = payload[5..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        Ok(Self {
            kind,
            matrix: DMatrix::from_iterator(n, n, values),
        })
    }

    pub fn save<W: Write>(&self, mut w: W) -> Result<(), TransformError> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self, TransformError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

/// Orthonormal DCT-II: column `k` is `c_k cos(pi (2i + 1) k / 2n)`.
pub fn dct_basis(n: usize) -> Result<OrthoBasis, TransformError> {
    if n == 0 {
        return Err(TransformError::EmptyBasis);
    }
    let nf = n as f64;
    let matrix = DMatrix::from_fn(n, n, |i, k| {
        let c = if k == 0 {
            (1.0 / nf).sqrt()
        } else {
            (2.0 / nf).sqrt()
        };
        c * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2.0 * nf)).cos()
    });
    Ok(OrthoBasis {
        kind: BasisKind::Dct,
        matrix,
    })
}

/// Principal axes of mean-removed training blocks, strongest first.
///
/// Each eigenvector's first component above `1e-12` in magnitude is made
/// positive.
pub fn klt_train(blocks: &[Vec<f64>]) -> Result<OrthoBasis, TransformError> {
    if blocks.len() < 2 {
        return Err(TransformError::TooFewBlocks {
            needed: 2,
            got: blocks.len(),
        });
    }
    let n = blocks[0].len();
    if n == 0 {
        return Err(TransformError::EmptyBasis);
    }
    if let Some(bad) = blocks.iter().find(|b| b.len() != n) {
        return Err(TransformError::DimensionMismatch {
            expected: n,
            found: bad.len(),
        });
    }
    if blocks.len() < n {
        log::debug!("training KLT of size {n} on only {} blocks", blocks.len());
    }

    let count = blocks.len() as f64;
    let mut mean = DVector::<f64>::zeros(n);
    for b in blocks {
        mean += DVector::from_column_slice(b);
    }
    mean /= count;

    let centered = DMatrix::from_fn(n, blocks.len(), |i, j| blocks[j][i] - mean[i]);
    let mut cov = &centered * centered.transpose() / (count - 1.0);
    if cov.iter().all(|v| *v == 0.0) {
        return Err(TransformError::DegenerateCovariance);
    }
    for i in 0..n {
        cov[(i, i)] += COVARIANCE_JITTER;
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });

    let mut matrix = DMatrix::<f64>::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        col /= col.norm();
        if let Some(first) = col.iter().find(|v| v.abs() > 1e-12) {
            if *first < 0.0 {
                col.neg_mut();
            }
        }
        matrix.set_column(dst, &col);
    }
    Ok(OrthoBasis {
        kind: BasisKind::Klt,
        matrix,
    })
}
