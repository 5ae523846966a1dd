//! Public Gaussian sensing matrices and the linear measurement model.
//!
//! A sensing matrix is fully determined by `(seed, m, n)`, so devices, the
//! cloud and data consumers regenerate it locally instead of exchanging
//! `m * n` floats.
//!
//! # Generator
//!
//! The generator is pinned so that every party derives the same matrix:
//!
//! 1. `key = SHA-256("mpcc-phi/v1" || seed as u64 LE)`.
//! 2. Keystream: ChaCha20 (original 64-bit nonce variant), that key, nonce
//!    of eight zero bytes, starting at byte offset 0.
//! 3. Every 16 keystream bytes are read as two little-endian `u64` words
//!    `a`, `b`; `u1 = ((a >> 11) + 1) * 2^-53` lies in `(0, 1]` and
//!    `u2 = (b >> 11) * 2^-53` lies in `[0, 1)`.
//! 4. Box-Muller: `r = sqrt(-2 ln u1)`, emitting `r cos(2 pi u2)` then
//!    `r sin(2 pi u2)`. Transcendentals come from `libm` so results do not
//!    depend on the platform's C library.
//! 5. Samples are scaled by `1 / sqrt(m)` and fill the matrix row-major.

use chacha20::cipher::{KeyIvInit, StreamCipher};
use chacha20::ChaCha20Legacy;
use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};
use thiserror::Error;

const PHI_DOMAIN: &[u8] = b"mpcc-phi/v1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensingError {
    #[error("bad sensing dimensions m={m}, n={n} (need 1 <= m <= n)")]
    BadDimensions { m: usize, n: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// An `m x n` measurement operator.
#[derive(Clone, Debug, PartialEq)]
pub struct SensingMatrix {
    data: DMatrix<f64>,
    seed: Option<u64>,
}

impl SensingMatrix {
    /// Generates the seeded Gaussian matrix with entries `N(0, 1/m)`.
    ///
    /// `m == n` is accepted so that full-rate pipelines can use a square,
    /// directly invertible operator.
    pub fn generate(seed: u64, m: usize, n: usize) -> Result<Self, SensingError> {
        if m == 0 || m > n {
            return Err(SensingError::BadDimensions { m, n });
        }
        let mut stream = GaussianStream::new(seed);
        let scale = 1.0 / (m as f64).sqrt();
        let data =
            DMatrix::from_row_iterator(m, n, (0..m * n).map(|_| stream.next_sample() * scale));
        Ok(Self {
            data,
            seed: Some(seed),
        })
    }

    /// Wraps an explicit matrix. Such matrices have no seed and cannot be
    /// referenced from ciphertext records.
    pub fn from_matrix(data: DMatrix<f64>) -> Result<Self, SensingError> {
        let (m, n) = data.shape();
        if m == 0 || n == 0 {
            return Err(SensingError::BadDimensions { m, n });
        }
        Ok(Self { data, seed: None })
    }

    /// Builds an unseeded matrix from row slices.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self, SensingError> {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.len());
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(SensingError::DimensionMismatch {
                expected: n,
                found: bad.len(),
            });
        }
        Self::from_matrix(DMatrix::from_row_iterator(
            m,
            n,
            rows.iter().flat_map(|r| r.iter().copied()),
        ))
    }

    pub fn m(&self) -> usize {
        self.data.nrows()
    }

    pub fn n(&self) -> usize {
        self.data.ncols()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.data.column(j).iter().copied().collect()
    }

    /// `y = Phi z`.
    pub fn measure(&self, z: &[f64]) -> Result<Vec<f64>, SensingError> {
        if z.len() != self.n() {
            return Err(SensingError::DimensionMismatch {
                expected: self.n(),
                found: z.len(),
            });
        }
        let y = &self.data * DVector::from_column_slice(z);
        Ok(y.as_slice().to_vec())
    }

    /// Floating-point operations performed by one [`measure`](Self::measure)
    /// call: one multiply and one add per matrix entry.
    pub fn measure_flops(&self) -> u64 {
        2 * self.m() as u64 * self.n() as u64
    }
}

/// Convenience wrapper over [`SensingMatrix::generate`].
pub fn gen_sensing_matrix(seed: u64, m: usize, n: usize) -> Result<SensingMatrix, SensingError> {
    SensingMatrix::generate(seed, m, n)
}

struct GaussianStream {
    cipher: ChaCha20Legacy,
    spare: Option<f64>,
}

impl GaussianStream {
    fn new(seed: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(PHI_DOMAIN);
        hasher.update(seed.to_le_bytes());
        let key: [u8; 32] = hasher.finalize().into();
        let nonce = [0u8; 8];
        Self {
            cipher: ChaCha20Legacy::new(&key.into(), &nonce.into()),
            spare: None,
        }
    }

    fn next_sample(&mut self) -> f64 {
        if let Some(s) = self.spare.take() {
            return s;
        }
        let mut buf = [0u8; 16];
        self.cipher.apply_keystream(&mut buf);
        let a = u64::from_le_bytes(buf[..8].try_into().unwrap());
        let b = u64::from_le_bytes(buf[8..].try_into().unwrap());
        const INV_2_53: f64 = 1.0 / (1u64 << 53) as f64;
        let u1 = ((a >> 11) + 1) as f64 * INV_2_53;
        let u2 = (b >> 11) as f64 * INV_2_53;
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * libm::sin(theta));
        r * libm::cos(theta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bitwise_identical() {
        let a = SensingMatrix::generate(42, 16, 40).unwrap();
        let b = SensingMatrix::generate(42, 16, 40).unwrap();
        assert!(a
            .matrix()
            .iter()
            .zip(b.matrix().iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = SensingMatrix::generate(43, 16, 40).unwrap();
        assert_ne!(a.matrix(), c.matrix());
    }

    #[test]
    fn moments_match_gaussian_with_variance_one_over_m() {
        let (m, n) = (64, 256);
        let phi = SensingMatrix::generate(7, m, n).unwrap();
        let count = (m * n) as f64;
        let mean = phi.matrix().iter().sum::<f64>() / count;
        let var = phi.matrix().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1.0);
        let target_var = 1.0 / m as f64;
        // standard error of the mean is sqrt(var / count)
        assert!(
            mean.abs() < 4.0 * (target_var / count).sqrt(),
            "mean {mean}"
        );
        assert!((var - target_var).abs() < 0.05 * target_var, "var {var}");

        let avg_col_norm_sq = (0..n)
            .map(|j| phi.matrix().column(j).norm_squared())
            .sum::<f64>()
            / n as f64;
        assert!((avg_col_norm_sq - 1.0).abs() < 0.05, "{avg_col_norm_sq}");
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert_eq!(
            SensingMatrix::generate(1, 0, 4),
            Err(SensingError::BadDimensions { m: 0, n: 4 })
        );
        assert_eq!(
            SensingMatrix::generate(1, 5, 4),
            Err(SensingError::BadDimensions { m: 5, n: 4 })
        );
        assert!(SensingMatrix::generate(1, 4, 4).is_ok());
    }

    #[test]
    fn hand_matrix_product() {
        let phi = SensingMatrix::from_rows(&[&[1.0, 0.0, 2.0], &[0.0, 1.0, -1.0]]).unwrap();
        assert_eq!(phi.measure(&[3.0, 4.0, 5.0]).unwrap(), vec![13.0, -1.0]);
        assert_eq!(phi.measure(&[0.0; 3]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(
            phi.measure(&[1.0, 2.0]),
            Err(SensingError::DimensionMismatch {
                expected: 3,
                found: 2
            })
        );
    }

    #[test]
    fn measure_is_linear() {
        let phi = SensingMatrix::generate(3, 10, 30).unwrap();
        let z1: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
        let z2: Vec<f64> = (0..30).map(|i| (i as f64 * 1.1).cos()).collect();
        let (alpha, beta) = (2.5, -0.75);
        let combo: Vec<f64> = z1
            .iter()
            .zip(&z2)
            .map(|(a, b)| alpha * a + beta * b)
            .collect();
        let lhs = phi.measure(&combo).unwrap();
        let y1 = phi.measure(&z1).unwrap();
        let y2 = phi.measure(&z2).unwrap();
        for i in 0..10 {
            assert!((lhs[i] - (alpha * y1[i] + beta * y2[i])).abs() < 1e-10);
        }
    }
}
