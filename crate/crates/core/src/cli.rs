//! Command-line front end.
//!
//! Every subcommand writes its outputs plus a `<command>_config.json` echo of
//! all effective parameters into `--out`. Failures print one JSON line to
//! stderr, `{"error": <kind>, "message": <text>, "exit_code": <n>}`, and exit
//! with the code for that kind.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use crate::conditional::{Axis, ExtentMode};
use crate::data::checkpoint::{load_checkpoint, save_checkpoint};
use crate::data::export::{save_png, save_raw_f32};
use crate::data::manifest::{load_dataset, DatasetManifest};
use crate::data::phantom::{make_phantom, PhantomKind};
use crate::data::slices::{extract_slices, split_dataset, SliceDataset};
use crate::data::volume::{load_volume, save_volume};
use crate::error::{Error, Result};
use crate::gaussian::{init_grid_cloud, GaussianCloud};
use crate::raster::{render, Method, RasterSettings, SliceSpec};
use crate::simulation::{run_selection_benchmark, SimulationConfig};
use crate::training::{evaluate_test_slices, train_from, TrainConfig, TrainObserver};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_FORMAT: i32 = 4;
pub const EXIT_CONFIG: i32 = 5;
pub const EXIT_TRAINING: i32 = 6;
pub const EXIT_CONTRACT: i32 = 7;
pub const EXIT_DEGENERATE: i32 = 8;

const EXIT_CODES_HELP: &str = "\
Exit codes:
  0  success
  2  usage error (unknown flag, bad value)
  3  I/O error (missing or unwritable file)
  4  malformed input file (IGV1, IGS1, manifest, config JSON)
  5  invalid configuration
  6  training aborted (non-finite loss, empty cloud)
  7  contract violation (shape mismatch, bad input)
  8  degenerate input (zero quaternion)

Errors are printed to stderr as a single JSON line:
  {\"error\":\"<kind>\",\"message\":\"...\",\"exit_code\":<n>}";

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } => EXIT_IO,
        Error::Format { .. } => EXIT_FORMAT,
        Error::InvalidConfig(_) => EXIT_CONFIG,
        Error::Training(_) => EXIT_TRAINING,
        Error::Contract(_) => EXIT_CONTRACT,
        Error::Degenerate(_) => EXIT_DEGENERATE,
    }
}

#[derive(Debug, Parser)]
#[command(name = "slicegs", version, about = "Fit 3D Gaussian clouds to axis-aligned volume slices", after_help = EXIT_CODES_HELP)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// JSON config file for the subcommand; flags override its values
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, created if absent
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores); 1 gives bitwise determinism
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Candidate selection method
    #[arg(long, global = true, value_enum)]
    pub method: Option<MethodArg>,
    /// Density threshold for candidate selection, in (0, 1)
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    /// Slicing axes, e.g. `x,y,z` or `z`
    #[arg(long, global = true)]
    pub axes: Option<String>,
    /// Fraction of slices per axis held out for testing, in (0, 0.5)
    #[arg(long, global = true)]
    pub test_fraction: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    M1,
    M2,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::M1 => Method::M1,
            MethodArg::M2 => Method::M2,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    NestedEllipsoids,
    CheckerShells,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Exact,
    Capped3sigma,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic phantom volume (IGV1)
    Phantom {
        #[arg(long, value_enum, default_value = "nested-ellipsoids")]
        kind: KindArg,
        /// Edge length, or `nx,ny,nz`
        #[arg(long, default_value = "64")]
        dims: String,
    },
    /// Cut a volume into slices, split train/test, write dataset.json and PNGs
    Slice {
        #[arg(long)]
        volume: PathBuf,
        /// Skip the PNG previews
        #[arg(long)]
        no_png: bool,
    },
    /// Fit a Gaussian cloud to a slice dataset
    Train {
        /// dataset.json written by `slice`
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        max_steps: Option<usize>,
        /// Initial grid resolution per axis
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        slices_per_step: Option<usize>,
        #[arg(long)]
        checkpoint_interval: Option<usize>,
        #[arg(long)]
        ssim_weight: Option<f64>,
        /// Disable pruning and densification
        #[arg(long)]
        no_refine: bool,
        /// Resume from an IGS1 checkpoint instead of a fresh grid
        #[arg(long)]
        init_checkpoint: Option<PathBuf>,
    },
    /// Render slices at arbitrary depths from a checkpoint
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "z")]
        axis: String,
        /// Depth(s) along the axis in voxel units; repeat or comma-separate
        #[arg(long = "t", value_delimiter = ',', required = true, allow_negative_numbers = true)]
        t: Vec<f64>,
    },
    /// Score a checkpoint on the dataset's held-out slices
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Benchmark candidate selection on random Gaussians
    Simulate {
        #[arg(long)]
        repetitions: Option<usize>,
        #[arg(long)]
        num_gaussians: Option<usize>,
        #[arg(long)]
        volume_size: Option<usize>,
        /// Box variant(s) for the conditional method
        #[arg(long, value_enum, value_delimiter = ',')]
        mode: Option<Vec<ModeArg>>,
        #[arg(long)]
        timing_rounds: Option<usize>,
    },
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            let msg = e.to_string();
            let first = msg.lines().find(|l| !l.trim().is_empty()).unwrap_or("usage error");
            eprintln!(
                "{}",
                json!({"error": "usage", "message": first.trim_start_matches("error: "), "exit_code": EXIT_USAGE})
            );
            return EXIT_USAGE;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("{}", json!({"error": e.kind(), "message": e.to_string(), "exit_code": code}));
            code
        }
    }
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::InvalidConfig("--threads must be at least 1".into()));
        }
        // Ignore the error when a pool already exists (repeated in-process runs).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_slice(&bytes).map_err(|e| Error::format(0, format!("{}: invalid config: {e}", p.display())))
        }
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_axes(s: &str) -> Result<Vec<Axis>> {
    Axis::parse_set(s).ok_or_else(|| Error::InvalidConfig(format!("invalid axis list {s:?}, expected e.g. x,y,z")))
}

fn parse_dims(s: &str) -> Result<[usize; 3]> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidConfig(format!("invalid dims {s:?}")))?;
    match parts[..] {
        [n] => Ok([n; 3]),
        [x, y, z] => Ok([x, y, z]),
        _ => Err(Error::InvalidConfig(format!("dims must be N or NX,NY,NZ, got {s:?}"))),
    }
}

fn relative_or_absolute(target: &Path, base: &Path) -> String {
    let target = fs::canonicalize(target).unwrap_or_else(|_| target.to_path_buf());
    let base = fs::canonicalize(base).unwrap_or_else(|_| base.to_path_buf());
    match target.strip_prefix(&base) {
        Ok(rel) => rel.display().to_string(),
        Err(_) => target.display().to_string(),
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    configure_threads(g.threads)?;
    fs::create_dir_all(&g.out).map_err(|e| Error::io(&g.out, e))?;
    match &cli.command {
        Command::Phantom { kind, dims } => cmd_phantom(g, *kind, dims),
        Command::Slice { volume, no_png } => cmd_slice(g, volume, *no_png),
        Command::Train { .. } => cmd_train(g, &cli.command),
        Command::Render { checkpoint, axis, t } => cmd_render(g, checkpoint, axis, t),
        Command::Eval { checkpoint, dataset } => cmd_eval(g, checkpoint, dataset),
        Command::Simulate { .. } => cmd_simulate(g, &cli.command),
    }
}

fn cmd_phantom(g: &GlobalOpts, kind: KindArg, dims: &str) -> Result<()> {
    let dims = parse_dims(dims)?;
    let kind = match kind {
        KindArg::NestedEllipsoids => PhantomKind::NestedEllipsoids,
        KindArg::CheckerShells => PhantomKind::CheckerShells,
    };
    let seed = g.seed.unwrap_or(0);
    let volume = make_phantom(kind, dims, seed)?;
    let path = g.out.join("phantom.igv");
    save_volume(&volume, &path)?;
    write_json(
        &g.out.join("phantom_config.json"),
        &json!({"command": "phantom", "kind": kind, "dims": dims, "seed": seed, "output": "phantom.igv"}),
    )?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_slice(g: &GlobalOpts, volume_path: &Path, no_png: bool) -> Result<()> {
    let volume = load_volume(volume_path)?;
    let axes = parse_axes(g.axes.as_deref().unwrap_or("x,y,z"))?;
    let test_fraction = g.test_fraction.unwrap_or(0.05);
    let seed = g.seed.unwrap_or(0);
    let dataset = split_dataset(&extract_slices(&volume, &axes)?, test_fraction, seed)?;
    let volume_ref = relative_or_absolute(volume_path, &g.out);
    let mut manifest = DatasetManifest::describe(&dataset, &volume_ref, test_fraction, seed);
    if !no_png {
        let dir = g.out.join("slices");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (e, m) in dataset.entries.iter().zip(manifest.slices.iter_mut()) {
            let name = format!("slices/{}.png", e.id());
            save_png(g.out.join(&name), e.spec.width, e.spec.height, &e.image_f64())?;
            m.png = Some(name);
        }
    }
    write_json(&g.out.join("dataset.json"), &manifest)?;
    write_json(
        &g.out.join("slice_config.json"),
        &json!({
            "command": "slice",
            "volume": volume_ref,
            "axes": axes,
            "test_fraction": test_fraction,
            "seed": seed,
            "png": !no_png,
            "train_slices": dataset.train().count(),
            "test_slices": dataset.test().count(),
        }),
    )?;
    println!(
        "{} slices ({} train, {} test) -> {}",
        dataset.entries.len(),
        dataset.train().count(),
        dataset.test().count(),
        g.out.join("dataset.json").display()
    );
    Ok(())
}

struct CheckpointWriter {
    dir: PathBuf,
    interval: usize,
    written: Vec<String>,
}

impl TrainObserver for CheckpointWriter {
    fn after_step(&mut self, step: usize, cloud: &GaussianCloud) -> Result<()> {
        if step.is_multiple_of(self.interval) {
            fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
            let name = format!("step_{step:06}.igs");
            save_checkpoint(cloud, self.dir.join(&name))?;
            self.written.push(format!("checkpoints/{name}"));
        }
        Ok(())
    }
}

fn apply_selection_flags(g: &GlobalOpts, sel: &mut crate::raster::Selection) {
    if let Some(m) = g.method {
        sel.method = m.into();
    }
    if let Some(e) = g.epsilon {
        sel.epsilon = e;
    }
}

fn cmd_train(g: &GlobalOpts, cmd: &Command) -> Result<()> {
    let Command::Train {
        dataset,
        max_steps,
        grid,
        slices_per_step,
        checkpoint_interval,
        ssim_weight,
        no_refine,
        init_checkpoint,
    } = cmd
    else {
        unreachable!()
    };
    let mut config: TrainConfig = read_config(g.config.as_deref())?;
    if let Some(s) = g.seed {
        config.seed = s;
    }
    apply_selection_flags(g, &mut config.selection);
    if let Some(v) = *max_steps {
        config.max_steps = v;
    }
    if let Some(v) = *grid {
        config.grid_resolution = v;
    }
    if slices_per_step.is_some() {
        config.slices_per_step = *slices_per_step;
    }
    if let Some(v) = *checkpoint_interval {
        config.checkpoint_interval = v;
    }
    if let Some(v) = *ssim_weight {
        config.ssim_weight = v;
    }
    if *no_refine {
        config.refine_enabled = false;
    }
    config.validate()?;
    let (_, data) = load_dataset(dataset)?;
    let cloud = match init_checkpoint {
        Some(p) => load_checkpoint(p)?,
        None => init_grid_cloud(config.grid_resolution, data.bounds(), &config.init)?,
    };
    write_json(
        &g.out.join("train_config.json"),
        &json!({"command": "train", "dataset": dataset, "init_checkpoint": init_checkpoint, "train": config}),
    )?;
    let mut writer = CheckpointWriter {
        dir: g.out.join("checkpoints"),
        interval: config.checkpoint_interval,
        written: Vec::new(),
    };
    let (cloud, report) = train_from(cloud, &data, &config, &mut writer)?;
    let ckpt = g.out.join("checkpoint.igs");
    save_checkpoint(&cloud, &ckpt)?;
    write_json(&g.out.join("train_report.json"), &report)?;
    println!(
        "{} steps ({:?}), {} Gaussians, final loss {} -> {}",
        report.steps,
        report.stop_reason,
        report.final_gaussians,
        report.losses.last().map_or("n/a".into(), |l| format!("{l:.6}")),
        ckpt.display()
    );
    Ok(())
}

/// Slice geometry covering the cloud's bounds at one pixel per unit.
pub fn slice_for_bounds(bounds: &crate::gaussian::Bounds, axis: Axis, t: f64) -> Result<SliceSpec> {
    let p = axis.permutation();
    let ext = bounds.extent();
    let (w, h) = (ext[p[0]].round() as usize, ext[p[1]].round() as usize);
    if w == 0 || h == 0 {
        return Err(Error::InvalidConfig(format!("bounds {bounds:?} are too small to render")));
    }
    let spec = SliceSpec::new(axis, t, w, h, [bounds.min[p[0]] + 0.5, bounds.min[p[1]] + 0.5], 1.0);
    spec.validate()?;
    Ok(spec)
}

fn render_settings(g: &GlobalOpts, base: RasterSettings) -> RasterSettings {
    let mut s = base;
    apply_selection_flags(g, &mut s.selection);
    s
}

fn cmd_render(g: &GlobalOpts, checkpoint: &Path, axis: &str, ts: &[f64]) -> Result<()> {
    let axis = Axis::parse(axis).ok_or_else(|| Error::InvalidConfig(format!("invalid axis {axis:?}")))?;
    let settings = render_settings(g, read_config(g.config.as_deref())?);
    let cloud = load_checkpoint(checkpoint)?;
    let mut outputs = Vec::new();
    for &t in ts {
        if !t.is_finite() {
            return Err(Error::InvalidConfig(format!("depth {t} is not finite")));
        }
        let spec = slice_for_bounds(&cloud.bounds(), axis, t)?;
        let img = render(&cloud, &spec, &settings)?;
        let stem = format!("render_{axis}_{t:.3}");
        save_png(g.out.join(format!("{stem}.png")), img.width, img.height, &img.image)?;
        save_raw_f32(g.out.join(format!("{stem}.f32")), &img.image)?;
        outputs.push(json!({"axis": axis, "t": t, "width": img.width, "height": img.height,
            "png": format!("{stem}.png"), "raw_f32": format!("{stem}.f32")}));
        println!("{}", g.out.join(format!("{stem}.png")).display());
    }
    write_json(
        &g.out.join("render_config.json"),
        &json!({"command": "render", "checkpoint": checkpoint, "raster": settings, "outputs": outputs}),
    )
}

fn cmd_eval(g: &GlobalOpts, checkpoint: &Path, dataset: &Path) -> Result<()> {
    let settings = render_settings(g, read_config(g.config.as_deref())?);
    let cloud = load_checkpoint(checkpoint)?;
    let (_, data): (_, SliceDataset) = load_dataset(dataset)?;
    let raw = evaluate_test_slices(&cloud, &data, &settings, false)?;
    let normalized = evaluate_test_slices(&cloud, &data, &settings, true)?;
    write_json(
        &g.out.join("metric_report.json"),
        &json!({"psnr_peak": raw.psnr_peak, "raw": raw, "affine_normalized": normalized}),
    )?;
    write_text(&g.out.join("metric_report.csv"), &raw.to_csv())?;
    write_text(&g.out.join("metric_report_normalized.csv"), &normalized.to_csv())?;
    write_json(
        &g.out.join("eval_config.json"),
        &json!({"command": "eval", "checkpoint": checkpoint, "dataset": dataset, "raster": settings}),
    )?;
    println!(
        "PSNR {:.3} dB  SSIM {:.4}  (affine-normalized: {:.3} dB, {:.4}) over {} slices",
        raw.overall.psnr, raw.overall.ssim, normalized.overall.psnr, normalized.overall.ssim, raw.overall.count
    );
    Ok(())
}

fn cmd_simulate(g: &GlobalOpts, cmd: &Command) -> Result<()> {
    let Command::Simulate {
        repetitions,
        num_gaussians,
        volume_size,
        mode,
        timing_rounds,
    } = cmd
    else {
        unreachable!()
    };
    let mut config: SimulationConfig = read_config(g.config.as_deref())?;
    if let Some(s) = g.seed {
        config.seed = s;
    }
    if let Some(e) = g.epsilon {
        config.epsilon = e;
    }
    if let Some(a) = &g.axes {
        config.axes = parse_axes(a)?;
    }
    if let Some(v) = *repetitions {
        config.repetitions = v;
    }
    if let Some(v) = *num_gaussians {
        config.num_gaussians = v;
    }
    if let Some(v) = *volume_size {
        config.volume_size = v;
        if g.config.is_none() {
            // Keep the default mean range proportional to the volume.
            let n = v as f64;
            config.mean_range = [0.25 * n, 0.75 * n];
        }
    }
    if let Some(m) = mode {
        config.m2_modes = m
            .iter()
            .map(|m| match m {
                ModeArg::Exact => ExtentMode::Exact,
                ModeArg::Capped3sigma => ExtentMode::Capped3Sigma,
            })
            .collect();
    }
    if let Some(v) = *timing_rounds {
        config.timing_rounds = v;
    }
    let report = run_selection_benchmark(&config)?;
    write_json(&g.out.join("simulate_config.json"), &json!({"command": "simulate", "simulation": config}))?;
    write_json(&g.out.join("simulation_report.json"), &report)?;
    write_text(&g.out.join("simulation_report.csv"), &report.to_csv())?;
    print!("{}", report.table());
    Ok(())
}
