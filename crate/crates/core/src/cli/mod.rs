//! The `fdfm` command line.

pub mod config;
pub mod verify;

use std::ffi::OsString;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use ndarray::{ArrayD, IxDyn};

pub use config::{ConfigError, RunConfig};

use crate::error::Error;
use crate::fpxt;
use crate::sampler::sample;
use crate::schedules::FreqWeights;
use crate::trainer::{fit_to_dir, run_sweep, write_sweep_csv, Checkpoint, SweepCell};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub const LOCK_FILE: &str = ".fdfm.lock";

#[derive(Debug, Parser)]
#[command(
    name = "fdfm",
    version,
    about = "Frequency-heterogeneous flow matching on toy image data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Overrides `seed` from the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write a checkpoint and metrics.
    Train(Common),
    /// Draw samples from a checkpoint.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory; overrides `checkpoint` from the configuration.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write schedule and weight curves as CSV.
    Curves(Common),
    /// Train, sample and score every cell of the exponent/weighting grid.
    Sweep(Common),
    /// Run the built-in consistency checks.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

/// A failure together with the exit code it maps to.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NonFinite { .. } | Error::Singularity { .. } | Error::UndefinedEstimate | Error::StaleTape => {
                EXIT_NUMERIC
            }
            _ => EXIT_INPUT,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure {
            code: EXIT_INPUT,
            message: format!("configuration error: {e}"),
        }
    }
}

fn input(message: String) -> Failure {
    Failure {
        code: EXIT_INPUT,
        message,
    }
}

/// Exclusive hold on a run directory, released on drop.
struct RunLock {
    path: PathBuf,
}

impl RunLock {
    fn acquire(dir: &Path) -> Result<Self, Failure> {
        std::fs::create_dir_all(dir).map_err(|e| input(format!("{}: {e}", dir.display())))?;
        let path = dir.join(LOCK_FILE);
        let mut f = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| input(format!("run directory {} is locked ({e})", dir.display())))?;
        let _ = writeln!(f, "{}", std::process::id());
        Ok(Self { path })
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg = cfg.with_seed(s);
    }
    Ok(cfg)
}

fn configure_threads() -> Result<(), Failure> {
    if let Ok(v) = std::env::var("FDFM_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| input(format!("FDFM_THREADS must be a positive integer, got `{v}`")))?;
        // a pool may already exist when called twice in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| input(format!("{}: {e}", path.display())))
}

fn cmd_train(common: &Common) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let _lock = RunLock::acquire(&common.out)?;
    let (_, metrics) = fit_to_dir(&cfg.train, &common.out)?;
    println!(
        "trained {} steps, final loss {}, wrote {}",
        metrics.losses.len(),
        metrics.losses.last().map_or("n/a".into(), |l| l.total.to_string()),
        common.out.display()
    );
    Ok(())
}

fn cmd_sample(common: &Common, checkpoint: Option<&Path>) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let dir = checkpoint
        .map(Path::to_path_buf)
        .or_else(|| cfg.checkpoint.clone())
        .ok_or_else(|| input("sample needs a checkpoint (`--checkpoint DIR` or `checkpoint = DIR`)".into()))?;
    cfg.sample.validate()?;
    let ck = Checkpoint::load(&dir)?;
    let model = ck.sampling_model()?;
    let shape = model.config().shape;
    if cfg.explicit_shape && cfg.train.dataset.shape != shape {
        return Err(Error::Dimension(format!(
            "configuration asks for {} but the checkpoint holds {shape}",
            cfg.train.dataset.shape
        ))
        .into());
    }
    let _lock = RunLock::acquire(&common.out)?;
    let start = Instant::now();
    let mut sampling = cfg.sample.clone();
    sampling.t_max = ck.t_max;
    let out = sample(&model, cfg.num_samples, &sampling, &ck.schedule, cfg.cond)?;
    let (c, h, w) = shape.dims();
    let mut flat = Vec::with_capacity(out.len() * shape.len());
    for s in &out {
        flat.extend_from_slice(s.as_slice());
    }
    let tensor =
        ArrayD::from_shape_vec(IxDyn(&[out.len(), c, h, w]), flat).map_err(|e| Error::Dimension(e.to_string()))?;
    fpxt::save(&common.out.join("samples.fpxt"), &tensor)?;
    let manifest = serde_json::json!({
        "tensor": "samples.fpxt",
        "shape": [out.len(), c, h, w],
        "checkpoint_config_hash": ck.config_hash,
        "seed": sampling.seed,
        "steps": sampling.steps,
        "variant": sampling.variant.name(),
        "t_max": sampling.t_max,
        "cfg_scale": sampling.cfg_scale,
        "cfg_interval": [sampling.cfg_interval.0, sampling.cfg_interval.1],
        "timeshift": sampling.timeshift,
        "cond": cfg.cond,
        "timing": { "wall_time_secs": start.elapsed().as_secs_f64() },
    });
    let path = common.out.join("samples.json");
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&manifest).unwrap_or_default() + "\n",
    )
    .map_err(|e| input(format!("{}: {e}", path.display())))?;
    println!("wrote {} samples to {}", out.len(), common.out.display());
    Ok(())
}

fn cmd_curves(common: &Common) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let sch = cfg.train.schedule()?;
    let weights = FreqWeights::new(cfg.train.omega)?;
    if cfg.curve_points < 2 {
        return Err(input("curve_points must be at least 2".into()));
    }
    let _lock = RunLock::acquire(&common.out)?;
    let path = common.out.join("curves.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record([
        "t",
        "g_low",
        "g_high",
        "gdot_low",
        "gdot_high",
        "lambda_low",
        "lambda_high",
    ])
    .map_err(Error::from)?;
    let n = cfg.curve_points - 1;
    for i in 0..=n {
        let t = i as f64 / n as f64;
        let c = sch.eval(t)?;
        let (ll, lh) = weights.lambdas(t);
        let row = [t, c.g_low, c.g_high, c.gdot_low, c.gdot_high, ll, lh].map(|v| v.to_string());
        w.write_record(&row).map_err(Error::from)?;
    }
    w.flush().map_err(|e| input(format!("{}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_sweep(common: &Common) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    cfg.train.validate()?;
    cfg.sample.validate()?;
    let _lock = RunLock::acquire(&common.out)?;
    let seeds = match common.seed {
        Some(s) => vec![s],
        None => cfg.sweep_seeds.clone(),
    };
    let mut rows = Vec::new();
    for seed in seeds {
        let mut base = cfg.train.clone();
        base.seed = seed;
        let mut sampling = cfg.sample.clone();
        sampling.seed = seed;
        rows.extend(run_sweep(&base, &SweepCell::full_grid(), &sampling, cfg.eval_samples)?);
    }
    let path = common.out.join("sweep.csv");
    write_sweep_csv(create(&path)?, &rows)?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    println!(
        "wrote {} rows ({failed} failed cells) to {}",
        rows.len(),
        path.display()
    );
    Ok(())
}

fn cmd_verify(common: &Common, fault: Option<&str>) -> Result<bool, Failure> {
    if let Some(p) = &common.config {
        RunConfig::load(p)?;
    }
    let tp = match fault {
        None => verify::TransformPair::haar(),
        Some("haar-normalization") => verify::TransformPair::unnormalised(),
        Some(other) => return Err(input(format!("unknown fault `{other}`"))),
    };
    let results = verify::run_checks(&tp, |o| println!("{o}"));
    Ok(results.iter().all(|r| r.passed))
}

/// Runs the tool on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    if let Err(f) = configure_threads() {
        eprintln!("error: {}", f.message);
        return f.code;
    }
    let result = match &cli.command {
        Command::Train(c) => cmd_train(c).map(|_| true),
        Command::Sample { common, checkpoint } => cmd_sample(common, checkpoint.as_deref()).map(|_| true),
        Command::Curves(c) => cmd_curves(c).map(|_| true),
        Command::Sweep(c) => cmd_sweep(c).map(|_| true),
        Command::Verify { common, inject_fault } => cmd_verify(common, inject_fault.as_deref()),
    };
    match result {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_CHECK_FAILED,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
