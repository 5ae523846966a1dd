//! Text and CSV output for the security checks.

use std::io::Write;
use std::path::{Path, PathBuf};

use mpcc_core::security::is_prime;
use mpcc_core::{brute_force_counts, secrecy_table, verify_perfect_secrecy};

use crate::error::{CliError, Result};
use crate::pipeline::ensure_dir;

/// `(n, k, t)` rows of the count table.
pub const COUNT_CASES: [(u64, u64, u64); 5] = [
    (4, 2, 16),
    (64, 8, 16),
    (256, 30, 16),
    (512, 70, 16),
    (1024, 102, 16),
];

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    /// Field shown as a full table.
    pub table_prime: u64,
    /// Secrecy is checked for every prime up to this bound.
    pub max_prime: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            table_prime: 5,
            max_prime: 31,
        }
    }
}

pub fn write_text(cfg: &BenchConfig, mut out: impl Write) -> Result<()> {
    let p = cfg.table_prime;
    let table = secrecy_table(p).map_err(|e| CliError::Usage(e.to_string()))?;
    writeln!(out, "c = r * m mod {p}")?;
    write!(out, "{:>5} |", "r\\m")?;
    for m in 1..p {
        write!(out, "{m:>4}")?;
    }
    writeln!(out)?;
    writeln!(out, "{}", "-".repeat(7 + 4 * (p as usize - 1)))?;
    for (i, row) in table.iter().enumerate() {
        write!(out, "{:>5} |", i + 1)?;
        for c in row {
            write!(out, "{c:>4}")?;
        }
        writeln!(out)?;
    }

    writeln!(out, "\nperfect secrecy")?;
    for q in (2..=cfg.max_prime).filter(|&q| is_prime(q)) {
        let report = verify_perfect_secrecy(q).map_err(|e| CliError::Usage(e.to_string()))?;
        let verdict = if report.holds { "holds" } else { "FAILS" };
        writeln!(out, "  p = {q:>3}: {verdict}, Pr(c) = 1/{}", q - 1)?;
    }

    writeln!(out, "\nbrute-force counts")?;
    writeln!(
        out,
        "{:>6} {:>5} {:>4}  {:>12} {:>12} {:>10}",
        "n", "k", "t", "log2 n!/(n-k)!", "log2 bound", "cloud log2"
    )?;
    for (n, k, t) in COUNT_CASES {
        let c = brute_force_counts(n, k, t).map_err(|e| CliError::Usage(e.to_string()))?;
        writeln!(
            out,
            "{n:>6} {k:>5} {t:>4}  {:>14.2} {:>12.2} {:>10.2}",
            log2_big(&c.index_count),
            log2_big(&c.lower_bound),
            c.cloud_count_log2
        )?;
    }
    Ok(())
}

/// Writes `bench_secrecy.csv` and `bench_counts.csv`.
pub fn write_csv(cfg: &BenchConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let secrecy = dir.join("bench_secrecy.csv");
    let mut w = csv::Writer::from_path(&secrecy)?;
    w.write_record(["p", "holds", "min_keys_per_pair", "max_keys_per_pair"])?;
    for q in (2..=cfg.max_prime).filter(|&q| is_prime(q)) {
        let r = verify_perfect_secrecy(q).map_err(|e| CliError::Usage(e.to_string()))?;
        let flat = r.keys_per_pair.iter().flatten();
        let (lo, hi) = flat.fold((u64::MAX, 0), |(lo, hi), &k| (lo.min(k), hi.max(k)));
        w.write_record([
            q.to_string(),
            r.holds.to_string(),
            lo.to_string(),
            hi.to_string(),
        ])?;
    }
    w.flush()?;

    let counts = dir.join("bench_counts.csv");
    let mut w = csv::Writer::from_path(&counts)?;
    w.write_record([
        "n",
        "k",
        "t",
        "index_count",
        "lower_bound",
        "cloud_count_log2",
    ])?;
    for (n, k, t) in COUNT_CASES {
        let c = brute_force_counts(n, k, t).map_err(|e| CliError::Usage(e.to_string()))?;
        w.write_record([
            n.to_string(),
            k.to_string(),
            t.to_string(),
            c.index_count.to_string(),
            c.lower_bound.to_string(),
            c.cloud_count_log2.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(vec![secrecy, counts])
}

fn log2_big(v: &impl std::fmt::Display) -> f64 {
    let digits = v.to_string();
    let lead: f64 = digits[..digits.len().min(15)].parse().unwrap_or(0.0);
    lead.log2() + (digits.len() - digits.len().min(15)) as f64 * 10f64.log2()
}
