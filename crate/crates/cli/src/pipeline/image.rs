//! Image pipeline.
//!
//! The image is cut into `b x b` blocks. Every block goes through the
//! basis; blocks touching a sensitive rectangle are also permuted, so the
//! semi-authorized user gets them back scrambled while the rest of the
//! frame decodes normally.

use std::io::Write;
use std::path::{Path, PathBuf};

use mpcc_core::{
    dct_basis, dec_semi, dec_super, derive_subkeys, enc_block, klt_train, MasterKey, OrthoBasis,
    PlainBlock, SensingMatrix, SubKeys,
};
use mpcc_sparse::SolverOptions;
use mpcc_store::{CiphertextRecord, Geometry, OptionsPolicy, Store, StoreConfig};
use rayon::prelude::*;

use super::smartmeter::measurements_for;
use super::{accept_partial, ensure_dir, fresh_log, CommonConfig};
use crate::config::Config;
use crate::error::{CliError, Result};
use crate::image::{capped, psnr, psnr_masked, GrayImage, Rect};
use crate::scene;

pub const DEFAULT_BLOCK: usize = 32;
pub const DEFAULT_RATES: [f64; 6] = [0.2, 0.3, 0.4, 0.5, 0.6, 0.7];
/// Step between training windows.
pub const TRAINING_STRIDE: usize = 8;
/// Blocks are only compressible, so the residual bound scales with `||y||`.
pub const RELATIVE_EPSILON: f64 = 1e-6;
pub const DEFAULT_REL_TOL: f64 = 1e-4;
/// Solver used when every coefficient is measured.
pub const FULL_RATE_SOLVER: &str = "direct";

/// Sampling rate of a single-rate encode when none is configured.
pub const DEFAULT_ENCODE_RATE: f64 = 0.3;

/// Measurements per block for a single-rate encode of `n`-pixel blocks.
pub fn measurements_default(cfg: &Config, n: usize) -> Result<usize> {
    measurements_for(cfg.get_or("rate", DEFAULT_ENCODE_RATE)?, n)
}

/// Trains a KLT on all `b x b` windows of `training` at the given stride.
pub fn train_basis(training: &GrayImage, b: usize, stride: usize) -> Result<OrthoBasis> {
    if b == 0 || stride == 0 || b > training.width() || b > training.height() {
        return Err(CliError::Usage(format!(
            "cannot train {b}x{b} blocks with stride {stride}"
        )));
    }
    let mut windows = Vec::new();
    for r in (0..=training.height() - b).step_by(stride) {
        for c in (0..=training.width() - b).step_by(stride) {
            windows.push(training.window(r, c, b));
        }
    }
    Ok(klt_train(&windows)?)
}

/// Where the basis comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum BasisSource {
    Dct,
    File(PathBuf),
    /// Train a KLT on this image.
    Train(PathBuf),
    /// Train a KLT on the generated background frame.
    Scene,
}

impl BasisSource {
    /// `basis = dct | scene | <file>` or `train = <pgm>`. Unset means
    /// `None`; the caller decides the fallback.
    pub fn from_config(cfg: &Config) -> Result<Option<Self>> {
        if let Some(p) = cfg.get("train") {
            return Ok(Some(BasisSource::Train(p.into())));
        }
        Ok(cfg.get("basis").map(|b| match b {
            "dct" => BasisSource::Dct,
            "scene" => BasisSource::Scene,
            file => BasisSource::File(file.into()),
        }))
    }

    pub fn load(&self, b: usize) -> Result<OrthoBasis> {
        match self {
            BasisSource::Dct => Ok(dct_basis(b * b)?),
            BasisSource::File(p) => {
                let f = std::fs::File::open(p).map_err(crate::error::file_err(p))?;
                Ok(OrthoBasis::load(std::io::BufReader::new(f))?)
            }
            BasisSource::Train(p) => train_basis(&GrayImage::read_pgm(p)?, b, TRAINING_STRIDE),
            BasisSource::Scene => train_basis(
                &scene::training_scene(scene::SCENE_SIZE),
                b,
                TRAINING_STRIDE,
            ),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ImageConfig {
    pub common: CommonConfig,
    pub block: usize,
    /// Strictly increasing sampling rates in `(0, 1]`.
    pub rates: Vec<f64>,
    pub sensitive: Vec<Rect>,
}

impl ImageConfig {
    /// Reads `blocksize`, `rates` (or a single `rate`), `sensitive`
    /// rectangles and the solver settings. Without `sensitive`, the region
    /// around the person in the generated scene is used.
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let defaults = SolverOptions {
            rel_tol: DEFAULT_REL_TOL,
            ..SolverOptions::default()
        };
        let common = CommonConfig::from_config(cfg, defaults)?;
        let block = cfg.get_or("blocksize", DEFAULT_BLOCK)?;
        let rates = match (cfg.get_list::<f64>("rates")?, cfg.get_opt::<f64>("rate")?) {
            (Some(r), _) => r,
            (None, Some(r)) => vec![r],
            (None, None) => DEFAULT_RATES.to_vec(),
        };
        let sensitive = match cfg.get("sensitive") {
            Some(s) => Rect::parse_list(s)?,
            None => vec![scene::sensitive_region(scene::SCENE_SIZE)],
        };
        let c = Self {
            common,
            block,
            rates,
            sensitive,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.block == 0 {
            return Err(CliError::Usage("blocksize must be >= 1".into()));
        }
        if self.rates.is_empty() {
            return Err(CliError::Usage("no sampling rates".into()));
        }
        for r in &self.rates {
            measurements_for(*r, 1)?;
        }
        if self.rates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CliError::Usage("rates must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// Which blocks of a `rows x cols` grid touch a sensitive rectangle.
pub fn sensitive_blocks(rows: usize, cols: usize, b: usize, rects: &[Rect]) -> Vec<bool> {
    (0..rows * cols)
        .map(|i| {
            let (br, bc) = (i / cols, i % cols);
            rects.iter().any(|r| r.intersects(bc * b, br * b, b, b))
        })
        .collect()
}

/// Pixel mask covering the sensitive blocks.
pub fn pixel_mask(width: usize, b: usize, cols: usize, blocks: &[bool]) -> Vec<bool> {
    let height = blocks.len() / cols * b;
    (0..width * height)
        .map(|p| {
            let (r, c) = (p / width, p % width);
            blocks[(r / b) * cols + c / b]
        })
        .collect()
}

/// One row of the PSNR table, in dB.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsnrRow {
    pub rate: f64,
    pub semi_sensitive: f64,
    pub semi_complete: f64,
    pub super_sensitive: f64,
    pub super_complete: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PsnrReport {
    pub rows: Vec<PsnrRow>,
}

impl PsnrReport {
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record([
            "rate",
            "semi_sensitive_db",
            "semi_complete_db",
            "super_sensitive_db",
            "super_complete_db",
        ])?;
        for r in &self.rows {
            w.write_record([
                format!("{:.2}", r.rate),
                format!("{:.2}", capped(r.semi_sensitive)),
                format!("{:.2}", capped(r.semi_complete)),
                format!("{:.2}", capped(r.super_sensitive)),
                format!("{:.2}", capped(r.super_complete)),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_table(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(
            w,
            "{:>6}  {:>10} {:>10}  {:>10} {:>10}",
            "", "semi", "", "super", ""
        )?;
        writeln!(
            w,
            "{:>6}  {:>10} {:>10}  {:>10} {:>10}",
            "rate", "sensitive", "complete", "sensitive", "complete"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{:>6.2}  {:>10.2} {:>10.2}  {:>10.2} {:>10.2}",
                r.rate,
                capped(r.semi_sensitive),
                capped(r.semi_complete),
                capped(r.super_sensitive),
                capped(r.super_complete)
            )?;
        }
        Ok(())
    }
}

/// Everything produced at one sampling rate.
#[derive(Debug, Clone)]
pub struct RateOutcome {
    pub rate: f64,
    pub m: usize,
    /// Decompressed coefficients laid out block by block.
    pub cloud: GrayImage,
    pub semi: GrayImage,
    pub superuser: GrayImage,
    /// `(block index, semi-authorized PSNR)` for each sensitive block.
    pub semi_block_psnr: Vec<(u64, f64)>,
    pub not_converged: usize,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct ImageReport {
    pub rates: Vec<RateOutcome>,
    pub psnr: PsnrReport,
}

impl ImageReport {
    /// Writes the three images per rate, `image_psnr.csv` and
    /// `image_blocks.csv` into `dir`.
    pub fn write_artifacts(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        ensure_dir(dir)?;
        let mut written = Vec::new();
        for r in &self.rates {
            for (name, img) in [
                ("cloud", &r.cloud),
                ("semi", &r.semi),
                ("super", &r.superuser),
            ] {
                let p = dir.join(format!("image_{name}_r{:.2}.pgm", r.rate));
                img.write_pgm(&p)?;
                written.push(p);
            }
        }
        let p = dir.join("image_psnr.csv");
        self.psnr
            .write_csv(std::fs::File::create(&p).map_err(crate::error::file_err(&p))?)?;
        written.push(p);

        let p = dir.join("image_blocks.csv");
        let mut w = csv::Writer::from_path(&p)?;
        w.write_record(["rate", "block", "semi_db"])?;
        for r in &self.rates {
            for (block, db) in &r.semi_block_psnr {
                w.write_record([
                    format!("{:.2}", r.rate),
                    block.to_string(),
                    format!("{:.2}", capped(*db)),
                ])?;
            }
        }
        w.flush()?;
        written.push(p);
        Ok(written)
    }
}

/// Cuts `image` into transform blocks, numbered row by row, flagging
/// those that touch a sensitive rectangle. Also returns the grid shape.
pub fn image_blocks(
    image: &GrayImage,
    b: usize,
    rects: &[Rect],
) -> Result<(Vec<PlainBlock>, usize, usize)> {
    let (rows, cols) = image.block_grid(b)?;
    let sensitive = sensitive_blocks(rows, cols, b, rects);
    let blocks = (0..rows * cols)
        .map(|i| PlainBlock::transform(i as u64, image.block(i / cols, i % cols, b), sensitive[i]))
        .collect::<std::result::Result<_, _>>()?;
    Ok((blocks, rows, cols))
}

pub fn encode_blocks(
    blocks: &[PlainBlock],
    subkeys: &SubKeys,
    phi: &SensingMatrix,
    basis: &OrthoBasis,
    geometry: Geometry,
    levels: u32,
) -> Result<Vec<CiphertextRecord>> {
    blocks
        .par_iter()
        .map(|blk| {
            let c = enc_block(subkeys, phi, blk, Some(basis), levels)?;
            Ok(CiphertextRecord::new(
                c.index,
                c.flags.bits(),
                geometry,
                c.measurements,
            ))
        })
        .collect()
}

struct BlockResult {
    cloud: Vec<f64>,
    semi: Vec<f64>,
    superuser: Vec<f64>,
    converged: bool,
    iterations: usize,
}

/// Runs the image through the scheme at every configured rate. Each rate
/// gets its own store log under `out_dir`.
pub fn run_image(
    image: &GrayImage,
    basis: &OrthoBasis,
    master: &MasterKey,
    cfg: &ImageConfig,
) -> Result<ImageReport> {
    cfg.validate()?;
    let b = cfg.block;
    let n = b * b;
    if basis.n() != n {
        return Err(CliError::Usage(format!(
            "basis has size {}, blocks have {n} pixels",
            basis.n()
        )));
    }
    let (blocks, _, cols) = image_blocks(image, b, &cfg.sensitive)?;
    let sensitive: Vec<bool> = blocks.iter().map(PlainBlock::sensitive).collect();
    let mask = pixel_mask(image.width(), b, cols, &sensitive);
    let have_sensitive = sensitive.iter().any(|s| *s);
    let subkeys = derive_subkeys(master);
    let common = &cfg.common;
    let original = image.quantized();

    let mut outcomes = Vec::with_capacity(cfg.rates.len());
    for &rate in &cfg.rates {
        let m = measurements_for(rate, n)?;
        log::info!("rate {rate:.2}: M = {m}, {} blocks", blocks.len());
        let phi = SensingMatrix::generate(common.phi_seed, m, n)?;
        let geometry = Geometry {
            m: m as u32,
            n: n as u32,
            phi_seed: common.phi_seed,
        };
        let solver = if m == n {
            FULL_RATE_SOLVER
        } else {
            common.solver.as_str()
        };
        let store = Store::open(
            fresh_log(&common.out_dir, &format!("image_r{rate:.2}.log"))?,
            StoreConfig {
                geometry: Some(geometry),
                solver: solver.to_string(),
                policy: OptionsPolicy {
                    base: common.options.clone(),
                    relative_epsilon: Some(RELATIVE_EPSILON),
                },
            },
        )?;
        let records = encode_blocks(&blocks, &subkeys, &phi, basis, geometry, common.levels)?;
        for rec in &records {
            store.put_record(rec)?;
        }
        store.sync()?;

        let results: Vec<BlockResult> = blocks
            .par_iter()
            .map(|blk| {
                let index = blk.index();
                let (z, diag) = accept_partial(store.decompress(index), index)?;
                let semi = dec_semi(
                    &subkeys.k_r,
                    &z,
                    Some(basis),
                    blk.sensitive(),
                    common.levels,
                )?;
                let sup = dec_super(&subkeys, &z, Some(basis), blk.sensitive(), common.levels)?;
                Ok(BlockResult {
                    cloud: z.z,
                    semi: semi.into_values(),
                    superuser: sup.into_values(),
                    converged: diag.converged,
                    iterations: diag.iterations,
                })
            })
            .collect::<Result<_>>()?;

        let mut cloud = GrayImage::filled(image.width(), image.height(), 0.0);
        let mut semi = cloud.clone();
        let mut superuser = cloud.clone();
        let mut semi_block_psnr = Vec::new();
        for (i, r) in results.iter().enumerate() {
            let (br, bc) = (i / cols, i % cols);
            cloud.set_block(br, bc, b, &r.cloud);
            semi.set_block(br, bc, b, &r.semi);
            superuser.set_block(br, bc, b, &r.superuser);
            if sensitive[i] {
                let truth = GrayImage::new(b, b, original.block(br, bc, b))?;
                let got = GrayImage::new(b, b, r.semi.clone())?.quantized();
                semi_block_psnr.push((i as u64, psnr(&truth, &got)?));
            }
        }
        let (semi_q, super_q) = (semi.quantized(), superuser.quantized());
        let region = |img: &GrayImage| -> Result<f64> {
            if have_sensitive {
                Ok(psnr_masked(&original, img, &mask)?)
            } else {
                Ok(f64::NAN)
            }
        };
        let row = PsnrRow {
            rate,
            semi_sensitive: region(&semi_q)?,
            semi_complete: psnr(&original, &semi_q)?,
            super_sensitive: region(&super_q)?,
            super_complete: psnr(&original, &super_q)?,
        };
        log::info!(
            "rate {rate:.2}: super {:.2} dB, semi {:.2} dB",
            row.super_complete,
            row.semi_complete
        );
        outcomes.push((
            row,
            RateOutcome {
                rate,
                m,
                cloud,
                semi,
                superuser,
                semi_block_psnr,
                not_converged: results.iter().filter(|r| !r.converged).count(),
                iterations: results.iter().map(|r| r.iterations).sum(),
            },
        ));
    }
    let (rows, rates): (Vec<PsnrRow>, Vec<RateOutcome>) = outcomes.into_iter().unzip();
    Ok(ImageReport {
        rates,
        psnr: PsnrReport { rows },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sensitive_blocks_follow_rectangles() {
        let rects = [Rect {
            x: 3,
            y: 0,
            w: 2,
            h: 2,
        }];
        let s = sensitive_blocks(2, 3, 4, &rects);
        assert_eq!(s, vec![true, true, false, false, false, false]);
        let mask = pixel_mask(12, 4, 3, &s);
        assert_eq!(mask.len(), 96);
        assert!(mask[0] && mask[7] && !mask[8] && !mask[4 * 12]);
    }

    #[test]
    fn rates_must_increase() {
        let mut cfg = Config::default();
        cfg.set("rates", "0.3,0.2");
        assert!(ImageConfig::from_config(&cfg).is_err());
        cfg.set("rates", "0.2,0.3");
        assert_eq!(
            ImageConfig::from_config(&cfg).unwrap().rates,
            vec![0.2, 0.3]
        );
        cfg.set("rates", "0,0.3");
        assert!(ImageConfig::from_config(&cfg).is_err());
    }

    #[test]
    fn training_window_count() {
        let img = GrayImage::from_fn(16, 16, |r, c| ((r * 3 + c * 5) % 17) as f64);
        let basis = train_basis(&img, 4, 4).unwrap();
        assert_eq!(basis.n(), 16);
        assert!(basis.orthonormality_error() < 1e-9);
    }
}
