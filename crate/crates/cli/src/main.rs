use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use mpcc_cli::bench::{self, BenchConfig};
use mpcc_cli::blockfile::BlockFile;
use mpcc_cli::image::{capped, psnr, psnr_masked, GrayImage, Rect};
use mpcc_cli::meter::{ingest_meter_csv, MeterFrame, SyntheticMeter, DEFAULT_SYNTHETIC_SEED};
use mpcc_cli::pipeline::image::{
    encode_blocks, image_blocks, measurements_default, pixel_mask, run_image, sensitive_blocks,
    BasisSource, ImageConfig,
};
use mpcc_cli::pipeline::smartmeter::{encode_frames, run_smartmeter, SmartMeterConfig};
use mpcc_cli::pipeline::{master_key, CommonConfig};
use mpcc_cli::{scene, CliError, Config, Result};
use mpcc_core::{
    dec_semi, dec_super, derive_subkeys, gen_mask, permuted_stats, DecompressedBlock,
    HistogramSpec, Key, MasterKey, OrthoBasis, SensingMatrix,
};
use mpcc_sparse::SolverOptions;
use mpcc_store::server::workers_from_env;
use mpcc_store::{Client, Geometry, Op, OptionsPolicy, Query, Server, Status, Store, StoreConfig};
use rand::RngCore;

/// Multi-class privacy-preserving compressive sensing.
///
/// Every setting can also come from a `key = value` config file; flags
/// override the file and `--set key=value` overrides anything.
#[derive(Debug, Parser)]
#[command(name = "mpcc", version)]
struct Cli {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed of the public sensing matrix.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Sampling rate M/N in (0, 1].
    #[arg(long, global = true)]
    rate: Option<f64>,
    /// Image block side in pixels.
    #[arg(long, global = true)]
    blocksize: Option<usize>,
    /// Mask magnitude levels T; entries are drawn from ±{1..T}.
    #[arg(long, global = true)]
    levels: Option<u32>,
    /// Hex master key file (else MPCC_MASTER_KEY, else the demo key).
    #[arg(long, global = true)]
    key_file: Option<PathBuf>,
    /// Extra setting, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// More logging; repeat for debug output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum QueryOp {
    Decompressed,
    Raw,
    Count,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a fresh random master key as hex.
    Keygen {
        #[arg(long)]
        out: PathBuf,
        /// Replace an existing file.
        #[arg(long)]
        force: bool,
    },
    /// Encrypt an image or meter readings into a store log.
    Encode {
        #[arg(long)]
        log: PathBuf,
        /// PGM image; blocks touching `sensitive` rectangles are permuted.
        #[arg(long, conflicts_with_all = ["dataset", "synthetic"])]
        image: Option<PathBuf>,
        /// Meter CSV, one column per apartment.
        #[arg(long, conflicts_with = "synthetic")]
        dataset: Option<PathBuf>,
        /// Number of generated meter frames.
        #[arg(long)]
        synthetic: Option<usize>,
    },
    /// Serve a store log over TCP.
    Serve {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7070")]
        listen: String,
    },
    /// Ask a server for one block and write the reply payload.
    Query {
        #[arg(long, default_value = "127.0.0.1:7070")]
        addr: String,
        #[arg(long, default_value_t = 0)]
        index: u64,
        #[arg(long, value_enum, default_value = "decompressed")]
        op: QueryOp,
        /// Output block file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decode a decompressed block with both subkeys.
    DecodeSuper(DecodeArgs),
    /// Decode a decompressed block with the mask key only.
    DecodeSemi(DecodeArgs),
    /// Order-free statistics of a canonical block, semi-authorized.
    Stats {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        index: Option<u64>,
    },
    /// Run the smart-meter pipeline and write its CSVs and chart.
    RunSmartmeter {
        #[arg(long, conflicts_with = "synthetic")]
        dataset: Option<PathBuf>,
        /// Number of generated frames (default 50).
        #[arg(long)]
        synthetic: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the image pipeline over the configured rates.
    RunImage {
        /// PGM image; the generated street scene when absent.
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// PSNR of a reconstruction against the original.
    Psnr {
        original: PathBuf,
        reconstructed: PathBuf,
        /// Also report PSNR over blocks touching these `x,y,w,h;...`.
        #[arg(long)]
        sensitive: Option<String>,
    },
    /// Print the finite-field secrecy table and brute-force counts.
    BenchSecurity {
        #[arg(long, default_value_t = 5)]
        p: u64,
        #[arg(long, default_value_t = 31)]
        max_prime: u64,
        /// Also write CSVs into this directory.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Debug, clap::Args)]
struct DecodeArgs {
    /// Block file from `query`.
    #[arg(long)]
    input: PathBuf,
    /// Block index; read from the file header when absent.
    #[arg(long)]
    index: Option<u64>,
    /// The block was flagged sensitive at encode time.
    #[arg(long)]
    sensitive: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(v) = cli.seed {
        cfg.set("seed", v.to_string());
    }
    if let Some(v) = cli.rate {
        cfg.set("rate", v.to_string());
    }
    if let Some(v) = cli.blocksize {
        cfg.set("blocksize", v.to_string());
    }
    if let Some(v) = cli.levels {
        cfg.set("levels", v.to_string());
    }
    if let Some(v) = &cli.key_file {
        cfg.set("key_file", v.display().to_string());
    }
    for pair in &cli.set {
        cfg.set_pair(pair)?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Keygen { out, force } => keygen(&out, force),
        Command::Encode {
            log,
            image,
            dataset,
            synthetic,
        } => encode(&cfg, &log, image, dataset, synthetic),
        Command::Serve { log, listen } => serve(&cfg, &log, &listen),
        Command::Query {
            addr,
            index,
            op,
            out,
        } => query(&addr, index, op, out.as_deref()),
        Command::DecodeSuper(args) => decode(&cfg, &args, true),
        Command::DecodeSemi(args) => decode(&cfg, &args, false),
        Command::Stats { input, index } => stats(&cfg, &input, index),
        Command::RunSmartmeter {
            dataset,
            synthetic,
            out,
        } => {
            if let Some(out) = out {
                cfg.set("out", out.display().to_string());
            }
            let frames = meter_frames(&cfg, dataset, synthetic.or(Some(50)))?;
            let sm = SmartMeterConfig::from_config(&cfg)?;
            let report = run_smartmeter(&frames, &master_key(&cfg)?, &sm)?;
            for p in report.write_artifacts(&sm.common.out_dir)? {
                println!("wrote {}", p.display());
            }
            report.summary(std::io::stdout())?;
            Ok(())
        }
        Command::RunImage { image, out } => {
            if let Some(out) = out {
                cfg.set("out", out.display().to_string());
            }
            let ic = ImageConfig::from_config(&cfg)?;
            let (img, default_basis) = match image {
                Some(p) => (GrayImage::read_pgm(&p)?, None),
                None => (
                    scene::test_scene(scene::SCENE_SIZE),
                    Some(BasisSource::Scene),
                ),
            };
            let basis = BasisSource::from_config(&cfg)?
                .or(default_basis)
                .ok_or(CliError::BasisMissing)?
                .load(ic.block)?;
            let report = run_image(&img, &basis, &master_key(&cfg)?, &ic)?;
            for p in report.write_artifacts(&ic.common.out_dir)? {
                println!("wrote {}", p.display());
            }
            let basis_path = ic.common.out_dir.join("basis.bin");
            let f = std::fs::File::create(&basis_path).map_err(|e| CliError::File {
                path: basis_path.clone(),
                source: e,
            })?;
            basis.save(std::io::BufWriter::new(f))?;
            println!("wrote {}", basis_path.display());
            report.psnr.write_table(std::io::stdout())?;
            Ok(())
        }
        Command::Psnr {
            original,
            reconstructed,
            sensitive,
        } => {
            let (a, b) = (
                GrayImage::read_pgm(&original)?,
                GrayImage::read_pgm(&reconstructed)?,
            );
            println!("complete  {:.2} dB", capped(psnr(&a, &b)?));
            if let Some(s) = sensitive {
                let block: usize =
                    cfg.get_or("blocksize", mpcc_cli::pipeline::image::DEFAULT_BLOCK)?;
                let (rows, cols) = a.block_grid(block)?;
                let blocks = sensitive_blocks(rows, cols, block, &Rect::parse_list(&s)?);
                let mask = pixel_mask(a.width(), block, cols, &blocks);
                println!("sensitive {:.2} dB", capped(psnr_masked(&a, &b, &mask)?));
            }
            Ok(())
        }
        Command::BenchSecurity { p, max_prime, csv } => {
            let bc = BenchConfig {
                table_prime: p,
                max_prime,
            };
            bench::write_text(&bc, std::io::stdout())?;
            if let Some(dir) = csv {
                for p in bench::write_csv(&bc, &dir)? {
                    println!("wrote {}", p.display());
                }
            }
            Ok(())
        }
    }
}

fn keygen(out: &Path, force: bool) -> Result<()> {
    if out.exists() && !force {
        return Err(CliError::Usage(format!(
            "{} exists; pass --force to replace it",
            out.display()
        )));
    }
    let mut bytes = [0u8; 32];
    rand::rng().fill_bytes(&mut bytes);
    let hex = MasterKey::from_bytes(bytes).to_hex() + "\n";
    let mut opts = std::fs::OpenOptions::new();
    opts.write(true).create(true).truncate(true);
    #[cfg(unix)]
    {
        use std::os::unix::fs::OpenOptionsExt;
        opts.mode(0o600);
    }
    let mut f = opts.open(out).map_err(|e| CliError::File {
        path: out.to_path_buf(),
        source: e,
    })?;
    f.write_all(hex.as_bytes())?;
    println!("wrote {}", out.display());
    Ok(())
}

fn meter_frames(
    cfg: &Config,
    dataset: Option<PathBuf>,
    synthetic: Option<usize>,
) -> Result<Vec<MeterFrame>> {
    if let Some(p) = dataset.or_else(|| cfg.get("dataset").map(PathBuf::from)) {
        return Ok(ingest_meter_csv(&p)?);
    }
    let count = synthetic.ok_or_else(|| CliError::Usage("give --dataset or --synthetic".into()))?;
    let generator = SyntheticMeter {
        seed: cfg.get_or("synthetic_seed", DEFAULT_SYNTHETIC_SEED)?,
        ..SyntheticMeter::default()
    };
    Ok(generator.frames(count)?)
}

fn open_store(path: &Path, geometry: Geometry, solver: &str) -> Result<Store> {
    Ok(Store::open(
        path,
        StoreConfig {
            geometry: Some(geometry),
            solver: solver.to_string(),
            ..StoreConfig::default()
        },
    )?)
}

fn encode(
    cfg: &Config,
    log: &Path,
    image: Option<PathBuf>,
    dataset: Option<PathBuf>,
    synthetic: Option<usize>,
) -> Result<()> {
    let subkeys = derive_subkeys(&master_key(cfg)?);
    let (records, geometry) = match image {
        Some(path) => {
            let ic = ImageConfig::from_config(cfg)?;
            let img = GrayImage::read_pgm(&path)?;
            let basis = BasisSource::from_config(cfg)?
                .ok_or(CliError::BasisMissing)?
                .load(ic.block)?;
            let n = ic.block * ic.block;
            let m = measurements_default(cfg, n)?;
            let geometry = Geometry {
                m: m as u32,
                n: n as u32,
                phi_seed: ic.common.phi_seed,
            };
            let phi = SensingMatrix::generate(geometry.phi_seed, m, n)?;
            let (blocks, _, _) = image_blocks(&img, ic.block, &ic.sensitive)?;
            (
                encode_blocks(&blocks, &subkeys, &phi, &basis, geometry, ic.common.levels)?,
                geometry,
            )
        }
        None => {
            let frames = meter_frames(cfg, dataset, synthetic)?;
            let sm = SmartMeterConfig::from_config(cfg)?;
            let n = mpcc_cli::meter::FRAME_LEN;
            let geometry = Geometry {
                m: sm.m as u32,
                n: n as u32,
                phi_seed: sm.common.phi_seed,
            };
            let phi = SensingMatrix::generate(geometry.phi_seed, sm.m, n)?;
            (
                encode_frames(&frames, &subkeys, &phi, geometry, sm.common.levels)?,
                geometry,
            )
        }
    };
    let store = open_store(log, geometry, mpcc_sparse::DEFAULT_SOLVER)?;
    for rec in &records {
        store.put_record(rec)?;
    }
    store.sync()?;
    println!(
        "encoded {} blocks into {} (M = {}, N = {}, seed {})",
        records.len(),
        log.display(),
        geometry.m,
        geometry.n,
        geometry.phi_seed
    );
    Ok(())
}

fn serve(cfg: &Config, log: &Path, listen: &str) -> Result<()> {
    let common = CommonConfig::from_config(cfg, SolverOptions::default())?;
    let store = Store::open(
        log,
        StoreConfig {
            geometry: None,
            solver: common.solver,
            policy: OptionsPolicy {
                base: common.options,
                relative_epsilon: cfg.get_opt("relative_epsilon")?,
            },
        },
    )?;
    let server = Server::bind(listen, Arc::new(store))?.with_workers(workers_from_env());
    println!("serving {} on {}", log.display(), server.local_addr()?);
    server.run()?;
    Ok(())
}

fn query(addr: &str, index: u64, op: QueryOp, out: Option<&Path>) -> Result<()> {
    let op = match op {
        QueryOp::Decompressed => Op::FetchDecompressed,
        QueryOp::Raw => Op::FetchRaw,
        QueryOp::Count => Op::StatCount,
    };
    let mut client = Client::connect(addr)?;
    let reply = client
        .request(&Query::new(op, index))
        .map_err(|e| CliError::Usage(format!("query failed: {e}")))?;
    if reply.status != Status::Ok {
        return Err(CliError::Usage(format!(
            "server answered {:?} for block {index}",
            reply.status
        )));
    }
    if op == Op::StatCount {
        println!("{}", reply.payload.first().copied().unwrap_or(0.0) as u64);
        return Ok(());
    }
    let file = BlockFile {
        index: Some(reply.index),
        values: reply.payload,
    };
    match out {
        Some(p) => file.write(p),
        None => {
            print!("{}", file.render());
            Ok(())
        }
    }
}

fn read_block(input: &Path, index: Option<u64>) -> Result<DecompressedBlock> {
    let file = BlockFile::read(input)?;
    let index = index
        .or(file.index)
        .ok_or_else(|| CliError::Usage("block index missing; pass --index".into()))?;
    Ok(DecompressedBlock::new(index, file.values))
}

/// The configured basis, or `None` for canonical blocks.
fn decode_basis(cfg: &Config, n: usize) -> Result<Option<OrthoBasis>> {
    let Some(source) = BasisSource::from_config(cfg)? else {
        return Ok(None);
    };
    let side = (n as f64).sqrt().round() as usize;
    if side * side != n {
        return Err(CliError::Usage(format!(
            "a basis needs a square block, got {n} values"
        )));
    }
    Ok(Some(source.load(side)?))
}

/// `K_r` from `kr_file` (hex) or derived from the master key.
fn mask_key(cfg: &Config) -> Result<Key> {
    match cfg.get("kr_file") {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::File {
                path: p.into(),
                source: e,
            })?;
            Ok(Key::from_hex(text.trim())?)
        }
        None => Ok(derive_subkeys(&master_key(cfg)?).k_r),
    }
}

fn decode(cfg: &Config, args: &DecodeArgs, superuser: bool) -> Result<()> {
    let z = read_block(&args.input, args.index)?;
    let basis = decode_basis(cfg, z.z.len())?;
    let levels = cfg.get_or("levels", mpcc_core::DEFAULT_LEVELS)?;
    let sensitive = args.sensitive || basis.is_none();
    let block = if superuser {
        dec_super(
            &derive_subkeys(&master_key(cfg)?),
            &z,
            basis.as_ref(),
            sensitive,
            levels,
        )?
    } else {
        dec_semi(&mask_key(cfg)?, &z, basis.as_ref(), sensitive, levels)?
    };
    let file = BlockFile {
        index: Some(z.index),
        values: block.into_values(),
    };
    match &args.out {
        Some(p) => file.write(p),
        None => {
            print!("{}", file.render());
            Ok(())
        }
    }
}

fn stats(cfg: &Config, input: &Path, index: Option<u64>) -> Result<()> {
    let z = read_block(input, index)?;
    let levels = cfg.get_or("levels", mpcc_core::DEFAULT_LEVELS)?;
    let mask = gen_mask(&mask_key(cfg)?, z.index, z.z.len(), levels);
    let permuted = mask.apply_inverse(&z.z);
    let spec = HistogramSpec::new(
        cfg.get_or("hist_lo", 0.0)?,
        cfg.get_or("hist_hi", 8.0)?,
        cfg.get_or("hist_bins", 32)?,
    )?;
    let s = permuted_stats(&permuted, &spec);
    println!("block     {}", z.index);
    println!("mean      {}", s.mean);
    println!("variance  {}", s.variance);
    let width = (spec.hi - spec.lo) / spec.bins as f64;
    for (i, count) in s.histogram.iter().enumerate() {
        let lo = spec.lo + i as f64 * width;
        println!("[{lo:>8.3}, {:>8.3})  {count}", lo + width);
    }
    Ok(())
}
