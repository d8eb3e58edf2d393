//! Command-line front end. Every subcommand writes into a run directory:
//!
//! ```text
//! config.resolved   metrics.csv   ckpt.bin   img/NNN_*.pgm   report/*.json|csv
//! ```

mod checkpoint;
mod config;
mod pgm;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, MAGIC,
    VERSION,
};
pub use config::{parse_config, parse_config_onto, read_config_file};
pub use pgm::{decode_pgm, encode_pgm, quantize, read_pgm, write_pgm};

use std::io;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::clustering::{
    adjusted_rand_index, closest_pairs, cut_k, gaussian_mixture, pairs_csv, ward_agglomerate,
    ClusterError,
};
use crate::generators::{GenError, Image, ImageError};
use crate::imaging::{
    downsample, mse, project, psnr, reconstruct, resize_bilinear, resolution_sweep, super_resolve,
    ImagingError,
};
use crate::models::{projector_loss_grad_check, ModelError, Network, NetworkSpec, ParameterStore};
use crate::numcore::{primitive_grad_checks, set_worker_threads};
use crate::rng::SplitMix64;
use crate::training::{
    finetune_reconstruction, metrics_csv, prefixed, train_joint_adversarial,
    train_projection, train_supervised_baseline, BackendChoice, ProjectionRun, TrainConfig,
    TrainError, World,
};

/// Worker-thread cap; unset means one thread.
pub const THREADS_ENV: &str = "LATENT_INVERT_THREADS";
/// Largest relative error a gradient check may report.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Images per row in preview grids.
const GRID_COLS: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CliError {
    #[error("cannot read config file {path}: {reason}")]
    MissingConfig { path: String, reason: String },
    #[error("config line {line} is not key=value: {text:?}")]
    ConfigSyntax { line: usize, text: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("duplicate config key {0:?}")]
    DuplicateKey(String),
    #[error("cannot parse {value:?} for config key {key:?}")]
    BadValue { key: String, value: String },
    #[error("malformed PGM: {0}")]
    Pgm(String),
    #[error("truncated PGM: expected {expected} pixel bytes, got {got}")]
    PgmTruncated { expected: usize, got: usize },
    #[error("not a checkpoint (bad magic)")]
    CheckpointMagic,
    #[error("unsupported checkpoint version {found} (this build reads version {supported})")]
    CheckpointVersion { found: u32, supported: u32 },
    #[error("truncated checkpoint while reading {0}")]
    CheckpointTruncated(&'static str),
    #[error("corrupt checkpoint: {0}")]
    CheckpointCorrupt(String),
    #[error("missing checkpoint {path}: {reason}")]
    MissingCheckpoint { path: String, reason: String },
    #[error("missing checkpoint: `{0}` needs --ckpt <path to ckpt.bin>")]
    NoCheckpoint(&'static str),
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

impl CliError {
    pub fn io(path: &Path, e: io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), reason: e.to_string() }
    }
}

#[derive(Parser, Debug)]
#[command(name = "latent-invert", about = "Train and probe projection networks for frozen generators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// key=value config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory (default runs/<subcommand>)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    /// procedural or neural
    #[arg(long)]
    backend: Option<String>,
    /// Any config key, repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug, Clone, Default)]
struct WithCkpt {
    #[command(flatten)]
    common: Common,
    /// Checkpoint holding the projector (p/...) and optionally g/... tensors
    #[arg(long)]
    ckpt: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train P on the unsupervised latent objective
    Train(Common),
    /// Train P through the frozen generator on pixel reconstruction
    Baseline(Common),
    /// Continue training with an added OOD reconstruction term
    Finetune(WithCkpt),
    /// Adversarial joint training of P and the neural decoder
    Joint(WithCkpt),
    /// Super-resolve held-out images or one PGM file
    Superres {
        #[command(flatten)]
        c: WithCkpt,
        #[arg(long, default_value_t = 4)]
        factor: usize,
        /// Low-resolution square PGM to super-resolve
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        images: usize,
    },
    /// Reconstruction vs bilinear PSNR over downsampling factors
    Sweep {
        #[command(flatten)]
        c: WithCkpt,
        #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 2, 4, 8])]
        factors: Vec<usize>,
        #[arg(long, default_value_t = 64)]
        images: usize,
    },
    /// Compare reconstruction error in and out of distribution
    OodEval {
        #[command(flatten)]
        c: WithCkpt,
        #[arg(long, default_value_t = 64)]
        images: usize,
    },
    /// Ward clustering of embeddings of a four-component latent mixture
    Cluster {
        #[command(flatten)]
        c: WithCkpt,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, default_value_t = 200)]
        images: usize,
    },
    /// Closest embedding pairs among held-out images
    Pairs {
        #[command(flatten)]
        c: WithCkpt,
        #[arg(long, default_value_t = 10)]
        m: usize,
        #[arg(long, default_value_t = 200)]
        images: usize,
    },
    /// Finite-difference check of every primitive and the projector loss
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
    /// Render sample images from the generator
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 8)]
        n: usize,
        /// Use the out-of-distribution renderer
        #[arg(long)]
        ood: bool,
    },
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn threads_from_env() -> Result<usize, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}

fn dispatch(command: Command) -> Result<i32, CliError> {
    set_worker_threads(threads_from_env()?);
    match command {
        Command::Train(c) => cmd_train(&c, false),
        Command::Baseline(c) => cmd_train(&c, true),
        Command::Finetune(c) => cmd_finetune(&c),
        Command::Joint(c) => cmd_joint(&c),
        Command::Superres { c, factor, input, images } => cmd_superres(&c, factor, input, images),
        Command::Sweep { c, factors, images } => cmd_sweep(&c, &factors, images),
        Command::OodEval { c, images } => cmd_ood_eval(&c, images),
        Command::Cluster { c, k, images } => cmd_cluster(&c, k, images),
        Command::Pairs { c, m, images } => cmd_pairs(&c, m, images),
        Command::Gradcheck { common, seeds } => cmd_gradcheck(&common, seeds),
        Command::Render { common, n, ood } => cmd_render(&common, n, ood),
    }
}

/// Resolves defaults, then the checkpoint's config echo, then the config
/// file, then flags. The run directory defaults to `runs/<subcommand>`.
fn resolve_config(
    common: &Common,
    ckpt: Option<&Checkpoint>,
    subcommand: &str,
) -> Result<TrainConfig, CliError> {
    let mut cfg = match ckpt {
        Some(ck) => parse_config_onto(TrainConfig::default(), &ck.config)?.0,
        None => TrainConfig::default(),
    };
    let mut explicit_out = false;
    if let Some(path) = &common.config {
        let (c, keys) = parse_config_onto(cfg, &read_config_file(path)?)?;
        cfg = c;
        explicit_out = keys.contains("out_dir");
    }
    let mut set = |key: &str, value: String| -> Result<(), CliError> {
        cfg.set(key, &value).map_err(|e| match e {
            TrainError::Value { key, value } => CliError::BadValue { key, value },
            TrainError::UnknownKey(k) => CliError::UnknownKey(k),
            other => other.into(),
        })
    };
    if let Some(v) = common.seed {
        set("seed", v.to_string())?;
    }
    if let Some(v) = common.steps {
        set("steps", v.to_string())?;
    }
    if let Some(v) = common.lr {
        set("lr", v.to_string())?;
    }
    if let Some(v) = common.batch_size {
        set("batch_size", v.to_string())?;
    }
    if let Some(v) = common.eval_every {
        set("eval_every", v.to_string())?;
    }
    if let Some(v) = &common.backend {
        set("backend", v.clone())?;
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        if k.trim() == "out_dir" {
            explicit_out = true;
        }
        set(k.trim(), v.trim().to_string())?;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    } else if !explicit_out {
        cfg.out_dir = PathBuf::from("runs").join(subcommand);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Output directory with a running image counter.
struct RunDir {
    root: PathBuf,
    images: usize,
}

impl RunDir {
    fn create(cfg: &TrainConfig) -> Result<Self, CliError> {
        let root = cfg.out_dir.clone();
        for sub in ["img", "report"] {
            let p = root.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| CliError::io(&p, e))?;
        }
        let dir = Self { root, images: 0 };
        dir.write("config.resolved", cfg.to_text().as_bytes())?;
        Ok(dir)
    }

    fn write(&self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let p = self.root.join(rel);
        std::fs::write(&p, bytes).map_err(|e| CliError::io(&p, e))
    }

    fn report(&self, name: &str, text: &str) -> Result<(), CliError> {
        self.write(&format!("report/{name}"), text.as_bytes())
    }

    fn json(&self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).expect("serializable report");
        self.report(name, &(text + "\n"))
    }

    fn image(&mut self, name: &str, img: &Image) -> Result<(), CliError> {
        let rel = format!("img/{:03}_{name}.pgm", self.images);
        self.images += 1;
        self.write(&rel, &encode_pgm(img))
    }

    /// One grid row per entry, at most [`GRID_COLS`] images each.
    fn grid(&mut self, name: &str, rows: &[&[Image]]) -> Result<(), CliError> {
        let rows: Vec<Vec<Image>> =
            rows.iter().map(|r| r.iter().take(GRID_COLS).cloned().collect()).collect();
        self.image(name, &Image::grid(&rows)?)
    }

    fn checkpoint(&self, tensors: ParameterStore, cfg: &TrainConfig) -> Result<(), CliError> {
        save_checkpoint(&Checkpoint { tensors, config: cfg.to_text() }, &self.root.join("ckpt.bin"))
    }
}

fn require_ckpt(c: &WithCkpt, subcommand: &'static str) -> Result<Checkpoint, CliError> {
    match &c.ckpt {
        Some(p) => load_checkpoint(p),
        None => Err(CliError::NoCheckpoint(subcommand)),
    }
}

/// The projector stored under `p/` in `ck`, checked against `cfg`.
fn projector_from(ck: &Checkpoint, cfg: &TrainConfig) -> Result<Network, CliError> {
    let stored = ck.tensors.with_prefix_stripped("p/");
    if stored.is_empty() {
        return Err(CliError::CheckpointCorrupt("no projector tensors (p/...)".into()));
    }
    let mut p = Network::new(NetworkSpec::projector(cfg.resolution, cfg.w_dim), 0)?;
    if stored.names() != p.params.names() {
        return Err(CliError::CheckpointCorrupt(format!(
            "projector tensors {:?} do not match the configured architecture",
            stored.names()
        )));
    }
    for (name, t) in stored.iter() {
        p.params.set(name, t.clone())?;
    }
    Ok(p)
}

/// World for `cfg`, with a trained decoder from `g/` when the checkpoint has one.
fn world_from(ck: Option<&Checkpoint>, cfg: &TrainConfig) -> Result<World, CliError> {
    let mut world = World::new(cfg)?;
    if let Some(ck) = ck {
        let g = ck.tensors.with_prefix_stripped("g/");
        if !g.is_empty() {
            if cfg.backend != BackendChoice::Neural {
                return Err(CliError::Usage(
                    "checkpoint holds decoder weights; use backend=neural".into(),
                ));
            }
            world.generator = world.generator.with_decoder_params(g)?;
        }
    }
    Ok(world)
}

fn decoder_tensors(world: &World) -> Result<ParameterStore, CliError> {
    match world.generator.decoder() {
        Some(d) => Ok(prefixed("g/", &d.params)?),
        None => Ok(ParameterStore::new()),
    }
}

fn merge(stores: &[ParameterStore]) -> Result<ParameterStore, CliError> {
    let mut out = ParameterStore::new();
    for s in stores {
        for (name, t) in s.iter() {
            out.insert(name, t.clone())?;
        }
    }
    Ok(out)
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n.max(1) as f64
}

fn mean_psnr(a: &[Image], b: &[Image]) -> Result<f64, CliError> {
    let v = a.iter().zip(b).map(|(x, y)| psnr(x, y)).collect::<Result<Vec<_>, _>>()?;
    Ok(mean(v))
}

fn mean_mse(a: &[Image], b: &[Image]) -> Result<f64, CliError> {
    let v = a.iter().zip(b).map(|(x, y)| mse(x, y)).collect::<Result<Vec<_>, _>>()?;
    Ok(mean(v))
}

/// Images in the held-out evaluation sets.
const HELDOUT: usize = 64;

#[derive(Serialize)]
struct TrainSummary {
    objective: &'static str,
    steps: usize,
    loss_first_100: f64,
    loss_last_100: f64,
    loss_ratio: f64,
    heldout_images: usize,
    heldout_latent_mse: f64,
    heldout_psnr: f64,
}

fn summarize(
    run: &ProjectionRun,
    world: &World,
    cfg: &TrainConfig,
    objective: &'static str,
) -> Result<(TrainSummary, Vec<Image>, Vec<Image>), CliError> {
    let n = run.losses.len();
    let w = 100.min(n);
    let first = mean(run.losses[..w].iter().copied());
    let last = mean(run.losses[n - w..].iter().copied());
    let (lat, imgs) = world.heldout(cfg.seed, HELDOUT)?;
    let pred = project(&run.projector, &imgs)?;
    let latent = mean(
        lat.iter()
            .zip(&pred)
            .flat_map(|(a, b)| a.values().iter().zip(b.values()).map(|(x, y)| (x - y) * (x - y))),
    );
    let recon = world.generator.render(&pred)?;
    let summary = TrainSummary {
        objective,
        steps: n,
        loss_first_100: first,
        loss_last_100: last,
        loss_ratio: last / first,
        heldout_images: imgs.len(),
        heldout_latent_mse: latent,
        heldout_psnr: mean_psnr(&recon, &imgs)?,
    };
    Ok((summary, imgs, recon))
}

fn cmd_train(c: &Common, supervised: bool) -> Result<i32, CliError> {
    let name = if supervised { "baseline" } else { "train" };
    let cfg = resolve_config(c, None, name)?;
    let world = World::new(&cfg)?;
    let mut dir = RunDir::create(&cfg)?;
    let run = if supervised {
        train_supervised_baseline(&world, &cfg, None)?
    } else {
        train_projection(&world, &cfg, None)?
    };
    dir.write("metrics.csv", metrics_csv(&run.metrics).as_bytes())?;
    dir.checkpoint(prefixed("p/", &run.projector.params)?, &cfg)?;
    let objective = if supervised { "reconstruction" } else { "latent" };
    let (summary, imgs, recon) = summarize(&run, &world, &cfg, objective)?;
    dir.grid("heldout_original_vs_reconstruction", &[&imgs, &recon])?;
    dir.json(&format!("{name}.json"), &summary)?;
    println!(
        "{name}: {} steps, loss {:.6} -> {:.6} (ratio {:.4}), held-out PSNR {:.2} dB -> {}",
        summary.steps,
        summary.loss_first_100,
        summary.loss_last_100,
        summary.loss_ratio,
        summary.heldout_psnr,
        cfg.out_dir.display()
    );
    Ok(0)
}

fn cmd_finetune(c: &WithCkpt) -> Result<i32, CliError> {
    let ck = require_ckpt(c, "finetune")?;
    let cfg = resolve_config(&c.common, Some(&ck), "finetune")?;
    let world = world_from(Some(&ck), &cfg)?;
    let p = projector_from(&ck, &cfg)?;
    let mut dir = RunDir::create(&cfg)?;
    let probe = world.heldout_ood(cfg.seed, GRID_COLS)?;
    let before = reconstruct(&p, &world.generator, &probe)?;
    let ft = finetune_reconstruction(&world, &cfg, p)?;
    let after = reconstruct(&ft.run.projector, &world.generator, &probe)?;
    dir.write("metrics.csv", metrics_csv(&ft.run.metrics).as_bytes())?;
    dir.checkpoint(merge(&[prefixed("p/", &ft.run.projector.params)?, decoder_tensors(&world)?])?, &cfg)?;
    dir.grid("ood_original_before_after", &[&probe, &before, &after])?;
    dir.json("smoothing.json", &ft.report)?;
    println!(
        "finetune: OOD MSE {:.6} -> {:.6}, Laplacian energy ratio {:.4} -> {}",
        ft.report.ood_mse_before,
        ft.report.ood_mse_after,
        ft.report.laplacian_ratio,
        cfg.out_dir.display()
    );
    Ok(0)
}

fn cmd_joint(c: &WithCkpt) -> Result<i32, CliError> {
    let ck = require_ckpt(c, "joint")?;
    let cfg = resolve_config(&c.common, Some(&ck), "joint")?;
    let world = world_from(Some(&ck), &cfg)?;
    let p = projector_from(&ck, &cfg)?;
    let mut dir = RunDir::create(&cfg)?;
    let run = train_joint_adversarial(&world, &cfg, p)?;
    dir.write("metrics.csv", metrics_csv(&run.metrics).as_bytes())?;
    let g = run.generator.decoder().expect("joint training keeps the decoder");
    dir.checkpoint(
        merge(&[
            prefixed("p/", &run.projector.params)?,
            prefixed("g/", &g.params)?,
            prefixed("d/", &run.discriminator.params)?,
        ])?,
        &cfg,
    )?;
    let mut csv = String::from("step,diversity\n");
    for r in &run.collapse {
        csv.push_str(&format!("{},{}\n", r.step, r.diversity));
    }
    dir.report("collapse.csv", &csv)?;
    let real = world.heldout_ood(cfg.seed, GRID_COLS)?;
    let fake = reconstruct(&run.projector, &run.generator, &real)?;
    dir.grid("ood_real_vs_fake", &[&real, &fake])?;
    let last = run.collapse.last().map_or(f64::NAN, |r| r.diversity);
    println!("joint: {} steps, final fake diversity {last:.6} -> {}", cfg.steps, cfg.out_dir.display());
    Ok(0)
}

#[derive(Serialize)]
struct SuperresSummary {
    factor: usize,
    images: usize,
    mean_psnr_reconstruction: f64,
    mean_psnr_bilinear: f64,
}

fn cmd_superres(
    c: &WithCkpt,
    factor: usize,
    input: Option<PathBuf>,
    images: usize,
) -> Result<i32, CliError> {
    let ck = require_ckpt(c, "superres")?;
    let cfg = resolve_config(&c.common, Some(&ck), "superres")?;
    let world = world_from(Some(&ck), &cfg)?;
    let p = projector_from(&ck, &cfg)?;
    let mut dir = RunDir::create(&cfg)?;
    if let Some(path) = input {
        let low = read_pgm(&path)?;
        if !low.is_square() {
            return Err(CliError::Usage(format!("{} is not square", path.display())));
        }
        let sr = super_resolve(&p, &world.generator, &low)?;
        dir.image("input", &low)?;
        dir.image("bilinear", &resize_bilinear(&low, cfg.resolution))?;
        dir.image("superres", &sr)?;
        println!("superres: {} -> {}", path.display(), cfg.out_dir.display());
        return Ok(0);
    }
    if images == 0 {
        return Err(CliError::Usage("--images must be >= 1".into()));
    }
    let (_, orig) = world.heldout(cfg.seed, images)?;
    let low = orig.iter().map(|x| downsample(x, factor)).collect::<Result<Vec<_>, _>>()?;
    let bil: Vec<Image> = low.iter().map(|l| resize_bilinear(l, cfg.resolution)).collect();
    let rec = reconstruct(&p, &world.generator, &bil)?;
    let summary = SuperresSummary {
        factor,
        images,
        mean_psnr_reconstruction: mean_psnr(&rec, &orig)?,
        mean_psnr_bilinear: mean_psnr(&bil, &orig)?,
    };
    dir.grid("original_bilinear_superres", &[&orig, &bil, &rec])?;
    dir.json("superres.json", &summary)?;
    println!(
        "superres x{factor}: reconstruction {:.2} dB, bilinear {:.2} dB -> {}",
        summary.mean_psnr_reconstruction,
        summary.mean_psnr_bilinear,
        cfg.out_dir.display()
    );
    Ok(0)
}

fn cmd_sweep(c: &WithCkpt, factors: &[usize], images: usize) -> Result<i32, CliError> {
    let ck = require_ckpt(c, "sweep")?;
    let cfg = resolve_config(&c.common, Some(&ck), "sweep")?;
    let world = world_from(Some(&ck), &cfg)?;
    let p = projector_from(&ck, &cfg)?;
    let mut dir = RunDir::create(&cfg)?;
    let (_, orig) = world.heldout(cfg.seed, images)?;
    let report = resolution_sweep(&p, &world.generator, &orig, factors)?;
    dir.report("sweep.csv", &report.to_csv())?;
    let mut rows =
        String::from("factor,low_resolution,mean_psnr_reconstruction,mean_psnr_bilinear,win_rate\n");
    let mut grid: Vec<Vec<Image>> = vec![orig.iter().take(GRID_COLS).cloned().collect()];
    for r in &report.rows {
        rows.push_str(&format!(
            "{},{},{},{},{}\n",
            r.factor, r.low_resolution, r.mean_psnr_reconstruction, r.mean_psnr_bilinear, r.win_rate
        ));
        let mut row = Vec::new();
        for x in orig.iter().take(GRID_COLS) {
            row.push(super_resolve(&p, &world.generator, &downsample(x, r.factor)?)?);
        }
        grid.push(row);
        println!(
            "factor {}: {}x{} reconstruction {:.2} dB, bilinear {:.2} dB, win rate {:.2}",
            r.factor,
            r.low_resolution,
            r.low_resolution,
            r.mean_psnr_reconstruction,
            r.mean_psnr_bilinear,
            r.win_rate
        );
    }
    dir.report("sweep_rows.csv", &rows)?;
    let refs: Vec<&[Image]> = grid.iter().map(Vec::as_slice).collect();
    dir.grid("original_then_superres_by_factor", &refs)?;
    Ok(0)
}

#[derive(Serialize)]
struct OodSummary {
    images: usize,
    mse_in_distribution: f64,
    mse_ood: f64,
    ratio: f64,
}

fn cmd_ood_eval(c: &WithCkpt, images: usize) -> Result<i32, CliError> {
    let ck = require_ckpt(c, "ood-eval")?;
    let cfg = resolve_config(&c.common, Some(&ck), "ood-eval")?;
    let world = world_from(Some(&ck), &cfg)?;
    let p = projector_from(&ck, &cfg)?;
    let mut dir = RunDir::create(&cfg)?;
    let (_, ind) = world.heldout(cfg.seed, images)?;
    let ood = world.heldout_ood(cfg.seed, images)?;
    let rec_in = reconstruct(&p, &world.generator, &ind)?;
    let rec_ood = reconstruct(&p, &world.generator, &ood)?;
    let (m_in, m_ood) = (mean_mse(&rec_in, &ind)?, mean_mse(&rec_ood, &ood)?);
    let s = OodSummary { images, mse_in_distribution: m_in, mse_ood: m_ood, ratio: m_ood / m_in };
    dir.grid("ood_original_vs_reconstruction", &[&ood, &rec_ood])?;
    dir.json("ood.json", &s)?;
    println!("ood-eval: MSE in {m_in:.6}, OOD {m_ood:.6}, ratio {:.2}", s.ratio);
    Ok(0)
}

#[derive(Serialize)]
struct ClusterSummary {
    images: usize,
    k: usize,
    ari: f64,
    cluster_sizes: Vec<usize>,
}

/// Stream id for the clustering mixture draw.
const MIXTURE_STREAM: u64 = 20;

fn cmd_cluster(c: &WithCkpt, k: usize, images: usize) -> Result<i32, CliError> {
    let ck = require_ckpt(c, "cluster")?;
    let cfg = resolve_config(&c.common, Some(&ck), "cluster")?;
    let world = world_from(Some(&ck), &cfg)?;
    let p = projector_from(&ck, &cfg)?;
    let mut dir = RunDir::create(&cfg)?;
    let mut rng = SplitMix64::stream(cfg.seed, MIXTURE_STREAM);
    let (w, truth) = gaussian_mixture(&mut rng, images, cfg.w_dim);
    let imgs = world.generator.render(&w)?;
    let emb = project(&p, &imgs)?;
    let tree = ward_agglomerate(&emb)?;
    let labels = cut_k(&tree, k)?;
    let ari = adjusted_rand_index(&labels, &truth)?;
    dir.report("dendrogram.json", &(tree.to_json() + "\n"))?;
    let mut csv = String::from("index,cluster,component\n");
    for (i, (l, t)) in labels.labels().iter().zip(truth.labels()).enumerate() {
        csv.push_str(&format!("{i},{l},{t}\n"));
    }
    dir.report("labels.csv", &csv)?;
    let mut sizes = vec![0; k];
    let mut rows: Vec<Vec<Image>> = vec![Vec::new(); k];
    for (i, &l) in labels.labels().iter().enumerate() {
        sizes[l] += 1;
        rows[l].push(imgs[i].clone());
    }
    let refs: Vec<&[Image]> = rows.iter().map(Vec::as_slice).collect();
    dir.grid("clusters", &refs)?;
    dir.json("cluster.json", &ClusterSummary { images, k, ari, cluster_sizes: sizes })?;
    println!("cluster: {images} images, k={k}, ARI vs mixture components {ari:.4}");
    Ok(0)
}

fn cmd_pairs(c: &WithCkpt, m: usize, images: usize) -> Result<i32, CliError> {
    let ck = require_ckpt(c, "pairs")?;
    let cfg = resolve_config(&c.common, Some(&ck), "pairs")?;
    let world = world_from(Some(&ck), &cfg)?;
    let p = projector_from(&ck, &cfg)?;
    let mut dir = RunDir::create(&cfg)?;
    let (_, imgs) = world.heldout(cfg.seed, images)?;
    let emb = project(&p, &imgs)?;
    let pairs = closest_pairs(&emb, m)?;
    dir.report("pairs.csv", &pairs_csv(&pairs))?;
    if !pairs.is_empty() {
        let rows: Vec<Vec<Image>> =
            pairs.iter().map(|q| vec![imgs[q.i].clone(), imgs[q.j].clone()]).collect();
        dir.image("closest_pairs", &Image::grid(&rows)?)?;
    }
    println!("pairs: {} closest of {} images -> {}", pairs.len(), images, cfg.out_dir.display());
    Ok(0)
}

fn cmd_gradcheck(c: &Common, seeds: u64) -> Result<i32, CliError> {
    let cfg = resolve_config(c, None, "gradcheck")?;
    let dir = RunDir::create(&cfg)?;
    let mut csv = String::from("check,seed,max_rel_error\n");
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        let mut rng = SplitMix64::new(seed);
        for (name, err) in primitive_grad_checks(&mut rng) {
            csv.push_str(&format!("{name},{seed},{err}\n"));
            worst = worst.max(err);
        }
        for (name, report) in projector_loss_grad_check(16, cfg.w_dim, seed)? {
            csv.push_str(&format!("projector_loss:{name},{seed},{}\n", report.max_rel_error));
            worst = worst.max(report.max_rel_error);
        }
    }
    dir.report("gradcheck.csv", &csv)?;
    let ok = worst < GRADCHECK_TOLERANCE;
    println!(
        "gradcheck: {seeds} seeds, worst relative error {worst:e} ({})",
        if ok { "pass" } else { "FAIL" }
    );
    Ok(if ok { 0 } else { 1 })
}

fn cmd_render(c: &Common, n: usize, ood: bool) -> Result<i32, CliError> {
    let cfg = resolve_config(c, None, "render")?;
    let world = World::new(&cfg)?;
    let mut dir = RunDir::create(&cfg)?;
    let imgs = if ood { world.heldout_ood(cfg.seed, n)? } else { world.heldout(cfg.seed, n)?.1 };
    let rows: Vec<Vec<Image>> = imgs.chunks(GRID_COLS).map(<[Image]>::to_vec).collect();
    dir.image(if ood { "ood_samples" } else { "samples" }, &Image::grid(&rows)?)?;
    println!("render: {n} images -> {}", cfg.out_dir.display());
    Ok(0)
}
