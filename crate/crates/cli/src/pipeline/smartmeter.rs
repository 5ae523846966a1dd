//! Smart-meter pipeline.
//!
//! Each frame is a canonical block, so it is always permuted. The cloud
//! only ever sees `r ⊙ P x` after decompression; semi-authorized users see
//! `P x` and can still compute order-free statistics.

use std::io::Write;
use std::path::{Path, PathBuf};

use mpcc_core::{
    dec_semi, dec_super, derive_subkeys, enc_block, permuted_stats, HistogramSpec, MasterKey,
    PlainBlock, SensingMatrix, SubKeys,
};
use mpcc_sparse::SolverOptions;
use mpcc_store::{CiphertextRecord, Geometry, OptionsPolicy, Store, StoreConfig};
use rayon::prelude::*;

use super::{accept_partial, ensure_dir, fresh_log, CommonConfig};
use crate::config::Config;
use crate::error::{CliError, Result};
use crate::meter::{MeterFrame, FRAME_LEN};
use crate::plot::line_chart;

pub const DEFAULT_MEASUREMENTS: usize = 256;
pub const LOG_NAME: &str = "smartmeter.log";

#[derive(Debug, Clone)]
pub struct SmartMeterConfig {
    pub common: CommonConfig,
    /// Measurements per frame.
    pub m: usize,
    pub histogram: HistogramSpec,
}

impl SmartMeterConfig {
    /// `m` wins over `rate`; without either, `m` is 256.
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let common = CommonConfig::from_config(cfg, SolverOptions::default())?;
        let m = match (cfg.get_opt::<usize>("m")?, cfg.get_opt::<f64>("rate")?) {
            (Some(m), _) => m,
            (None, Some(rate)) => measurements_for(rate, FRAME_LEN)?,
            (None, None) => DEFAULT_MEASUREMENTS,
        };
        if m == 0 || m > FRAME_LEN {
            return Err(CliError::Usage(format!(
                "m must be in 1..={FRAME_LEN}, got {m}"
            )));
        }
        let histogram = HistogramSpec::new(
            cfg.get_or("hist_lo", 0.0)?,
            cfg.get_or("hist_hi", 8.0)?,
            cfg.get_or("hist_bins", 32)?,
        )?;
        Ok(Self {
            common,
            m,
            histogram,
        })
    }
}

/// `round(rate * n)`, rejecting rates outside `(0, 1]`.
pub fn measurements_for(rate: f64, n: usize) -> Result<usize> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(CliError::Usage(format!(
            "rate must be in (0, 1], got {rate}"
        )));
    }
    Ok(((rate * n as f64).round() as usize).max(1))
}

/// What each party learns about one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutcome {
    pub slot: u32,
    pub true_mean: f64,
    pub true_variance: f64,
    /// Mean of the decompressed ciphertext, all the cloud can compute.
    pub cloud_mean: f64,
    pub semi_mean: f64,
    pub semi_variance: f64,
    pub super_mean: f64,
    /// `||x_hat - x|| / ||x||` for the superuser.
    pub super_rel_error: f64,
    pub histogram_match: bool,
    pub iterations: usize,
    pub converged: bool,
}

impl FrameOutcome {
    /// `|cloud - true| / |true|`.
    pub fn cloud_mean_deviation(&self) -> f64 {
        (self.cloud_mean - self.true_mean).abs() / self.true_mean.abs()
    }
}

/// The four views of a single frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Traces {
    pub slot: u32,
    pub original: Vec<f64>,
    pub cloud: Vec<f64>,
    pub semi: Vec<f64>,
    pub superuser: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmartMeterReport {
    pub m: usize,
    pub frames: Vec<FrameOutcome>,
    /// Views of the first frame.
    pub traces: Option<Traces>,
}

impl SmartMeterReport {
    pub fn not_converged(&self) -> usize {
        self.frames.iter().filter(|f| !f.converged).count()
    }

    /// Writes `smartmeter_frames.csv`, `smartmeter_traces.csv` and
    /// `smartmeter_means.pgm` into `dir`.
    pub fn write_artifacts(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        ensure_dir(dir)?;
        let frames_path = dir.join("smartmeter_frames.csv");
        let mut w = csv::Writer::from_path(&frames_path)?;
        w.write_record([
            "slot",
            "true_mean",
            "cloud_mean",
            "semi_mean",
            "super_mean",
            "true_variance",
            "semi_variance",
            "super_rel_error",
            "histogram_match",
            "iterations",
            "converged",
        ])?;
        for f in &self.frames {
            w.write_record([
                f.slot.to_string(),
                f.true_mean.to_string(),
                f.cloud_mean.to_string(),
                f.semi_mean.to_string(),
                f.super_mean.to_string(),
                f.true_variance.to_string(),
                f.semi_variance.to_string(),
                f.super_rel_error.to_string(),
                f.histogram_match.to_string(),
                f.iterations.to_string(),
                f.converged.to_string(),
            ])?;
        }
        w.flush()?;
        let mut written = vec![frames_path];

        if let Some(t) = &self.traces {
            let traces_path = dir.join("smartmeter_traces.csv");
            let mut w = csv::Writer::from_path(&traces_path)?;
            w.write_record(["position", "original", "cloud", "semi", "super"])?;
            for i in 0..t.original.len() {
                w.write_record([
                    i.to_string(),
                    t.original[i].to_string(),
                    t.cloud[i].to_string(),
                    t.semi[i].to_string(),
                    t.superuser[i].to_string(),
                ])?;
            }
            w.flush()?;
            written.push(traces_path);
        }

        let means_path = dir.join("smartmeter_means.pgm");
        let series: [Vec<f64>; 3] = [
            self.frames.iter().map(|f| f.true_mean).collect(),
            self.frames.iter().map(|f| f.cloud_mean).collect(),
            self.frames.iter().map(|f| f.semi_mean).collect(),
        ];
        line_chart(640, 320, &[&series[0], &series[1], &series[2]]).write_pgm(&means_path)?;
        written.push(means_path);
        Ok(written)
    }

    pub fn summary(&self, mut out: impl Write) -> std::io::Result<()> {
        let n = self.frames.len();
        let recovered = self
            .frames
            .iter()
            .filter(|f| f.super_rel_error < 1e-3)
            .count();
        let hist = self.frames.iter().filter(|f| f.histogram_match).count();
        let hidden = self
            .frames
            .iter()
            .filter(|f| f.cloud_mean_deviation() > 0.5)
            .count();
        writeln!(
            out,
            "frames                {n} (M = {}, N = {FRAME_LEN})",
            self.m
        )?;
        writeln!(out, "superuser rel < 1e-3  {recovered}/{n}")?;
        writeln!(out, "histogram match       {hist}/{n}")?;
        writeln!(out, "cloud mean off > 50%  {hidden}/{n}")?;
        writeln!(out, "not converged         {}", self.not_converged())
    }
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (
        mean,
        v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n,
    )
}

fn rel_error(estimate: &[f64], truth: &[f64]) -> f64 {
    let num: f64 = estimate
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let den: f64 = truth.iter().map(|b| b * b).sum();
    (num / den).sqrt()
}

/// Encrypts each frame as canonical block `i`, where `i` is its position
/// in `frames`.
pub fn encode_frames(
    frames: &[MeterFrame],
    subkeys: &SubKeys,
    phi: &SensingMatrix,
    geometry: Geometry,
    levels: u32,
) -> Result<Vec<CiphertextRecord>> {
    frames
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let block = PlainBlock::canonical(i as u64, f.readings.clone())?;
            let c = enc_block(subkeys, phi, &block, None, levels)?;
            Ok(CiphertextRecord::new(
                c.index,
                c.flags.bits(),
                geometry,
                c.measurements,
            ))
        })
        .collect()
}

/// Encrypts, stores, decompresses and decodes every frame. The store log
/// is `out_dir/smartmeter.log`, recreated on each run.
pub fn run_smartmeter(
    frames: &[MeterFrame],
    master: &MasterKey,
    cfg: &SmartMeterConfig,
) -> Result<SmartMeterReport> {
    let common = &cfg.common;
    let subkeys = derive_subkeys(master);
    let phi = SensingMatrix::generate(common.phi_seed, cfg.m, FRAME_LEN)?;
    let geometry = Geometry {
        m: cfg.m as u32,
        n: FRAME_LEN as u32,
        phi_seed: common.phi_seed,
    };
    let store = Store::open(
        fresh_log(&common.out_dir, LOG_NAME)?,
        StoreConfig {
            geometry: Some(geometry),
            solver: common.solver.clone(),
            policy: OptionsPolicy {
                base: common.options.clone(),
                relative_epsilon: None,
            },
        },
    )?;

    let records = encode_frames(frames, &subkeys, &phi, geometry, common.levels)?;
    for rec in &records {
        store.put_record(rec)?;
    }
    store.sync()?;

    let outcomes: Vec<(FrameOutcome, Option<Traces>)> = frames
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let index = i as u64;
            let (z, diag) = accept_partial(store.decompress(index), index)?;
            let semi = dec_semi(&subkeys.k_r, &z, None, true, common.levels)?;
            let sup = dec_super(&subkeys, &z, None, true, common.levels)?;
            let (true_mean, true_variance) = mean_var(&f.readings);
            let truth = permuted_stats(&f.readings, &cfg.histogram);
            let semi_stats = permuted_stats(semi.values(), &cfg.histogram);
            let outcome = FrameOutcome {
                slot: f.slot,
                true_mean,
                true_variance,
                cloud_mean: mean_var(&z.z).0,
                semi_mean: semi_stats.mean,
                semi_variance: semi_stats.variance,
                super_mean: mean_var(sup.values()).0,
                super_rel_error: rel_error(sup.values(), &f.readings),
                histogram_match: semi_stats.histogram == truth.histogram,
                iterations: diag.iterations,
                converged: diag.converged,
            };
            let traces = (i == 0).then(|| Traces {
                slot: f.slot,
                original: f.readings.clone(),
                cloud: z.z.clone(),
                semi: semi.values().to_vec(),
                superuser: sup.values().to_vec(),
            });
            Ok((outcome, traces))
        })
        .collect::<Result<_>>()?;

    let mut traces = None;
    let mut report = Vec::with_capacity(outcomes.len());
    for (o, t) in outcomes {
        traces = traces.or(t);
        report.push(o);
    }
    let report = SmartMeterReport {
        m: cfg.m,
        frames: report,
        traces,
    };
    if report.not_converged() > 0 {
        log::warn!("{} frames did not converge", report.not_converged());
    }
    Ok(report)
}
