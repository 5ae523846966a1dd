//! Desk-scale checks of the scheme's security arguments.
//!
//! Two separate regimes are covered. Over a prime field, multiplying by a
//! uniform nonzero key is a perfectly secret cipher for nonzero messages,
//! and this is checked by exhaustive enumeration. Over signed real levels,
//! the work of guessing positions and mask values is counted exactly. The
//! counts say how much work a brute-force search needs; they do not prove
//! that no shortcut exists.

use num_bigint::BigUint;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SecurityError {
    #[error("{0} is not prime")]
    NotPrime(u64),
    #[error("invalid arguments: {0}")]
    BadArgs(String),
}

/// A prime field `F_p`; the key space is `1..p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldSpec {
    p: u64,
}

impl FieldSpec {
    pub fn new(p: u64) -> Result<Self, SecurityError> {
        if !is_prime(p) {
            return Err(SecurityError::NotPrime(p));
        }
        if p > u32::MAX as u64 {
            return Err(SecurityError::BadArgs(format!(
                "p = {p} is too large to tabulate"
            )));
        }
        Ok(Self { p })
    }

    pub fn p(&self) -> u64 {
        self.p
    }

    pub fn encrypt(&self, r: u64, m: u64) -> u64 {
        r * m % self.p
    }
}

impl Default for FieldSpec {
    fn default() -> Self {
        Self { p: 5 }
    }
}

pub fn is_prime(p: u64) -> bool {
    if p < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= p {
        if p.is_multiple_of(d) {
            return false;
        }
        d += 1;
    }
    true
}

/// Row `r - 1`, column `m - 1` holds `r m mod p`.
pub fn secrecy_table(p: u64) -> Result<Vec<Vec<u64>>, SecurityError> {
    let f = FieldSpec::new(p)?;
    Ok((1..p)
        .map(|r| (1..p).map(|m| f.encrypt(r, m)).collect())
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecrecyReport {
    pub p: u64,
    pub holds: bool,
    /// `keys_per_pair[m - 1][c - 1]`: number of keys mapping `m` to `c`.
    pub keys_per_pair: Vec<Vec<u64>>,
    /// `Pr(c | m)` under a uniform key, same layout.
    pub probabilities: Vec<Vec<f64>>,
}

/// Checks that every nonzero `(m, c)` pair is linked by exactly one key.
pub fn verify_perfect_secrecy(p: u64) -> Result<SecrecyReport, SecurityError> {
    let f = FieldSpec::new(p)?;
    let size = (p - 1) as usize;
    let mut keys_per_pair = vec![vec![0u64; size]; size];
    for m in 1..p {
        for r in 1..p {
            let c = f.encrypt(r, m);
            if c == 0 {
                continue;
            }
            keys_per_pair[(m - 1) as usize][(c - 1) as usize] += 1;
        }
    }
    let holds = keys_per_pair.iter().flatten().all(|&k| k == 1);
    let probabilities = keys_per_pair
        .iter()
        .map(|row| row.iter().map(|&k| k as f64 / size as f64).collect())
        .collect();
    Ok(SecrecyReport {
        p,
        holds,
        keys_per_pair,
        probabilities,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceCounts {
    /// Ordered choices of `k` positions out of `n`: `n! / (n - k)!`.
    pub index_count: BigUint,
    /// `(n - k + 1)^k`.
    pub lower_bound: BigUint,
    /// `k (log2(2t) + log2(n))`.
    pub cloud_count_log2: f64,
}

pub fn brute_force_counts(n: u64, k: u64, t: u64) -> Result<BruteForceCounts, SecurityError> {
    if k > n {
        return Err(SecurityError::BadArgs(format!("k = {k} exceeds n = {n}")));
    }
    if n == 0 || t == 0 {
        return Err(SecurityError::BadArgs("n and t must be >= 1".into()));
    }
    let index_count = ((n - k + 1)..=n).fold(BigUint::from(1u8), |acc, f| acc * f);
    let lower_bound = BigUint::from(n - k + 1).pow(k as u32);
    let cloud_count_log2 = k as f64 * ((2 * t) as f64).log2() + k as f64 * (n as f64).log2();
    Ok(BruteForceCounts {
        index_count,
        lower_bound,
        cloud_count_log2,
    })
}
