use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use dllab_core::autodiff::{evaluate, NetObjective};
use dllab_core::data::{gen_blobs, gen_spirals, load_dataset, save_dataset, stratified_subsample, Split};
use dllab_core::experiments::{
    output_root, parse_config, run_barrier_velocity, run_linearization_sweep, run_megaplot, run_plane, smooth_report,
    ExperimentConfig, PlaneSource, Report,
};
use dllab_core::metrics::{
    centroid_alignment, centroid_hessian_overlap, error_barrier, escape_threshold, export_predictions,
    function_distance, hessian_spectral_norm, kernel_distance, kernel_velocity, relu_distance, weight_distance,
};
use dllab_core::params::ParamVector;
use dllab_core::trainer::{Checkpoint, Run, Trainer};
use dllab_core::{Error, Result};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "dllab", version, about = "Training-dynamics laboratory for small ReLU networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or inspect DLDS dataset files.
    #[command(subcommand)]
    Data(DataCommand),
    /// Train parent runs for every configured seed.
    Train(TrainArgs),
    /// Branch children off a saved parent run.
    Spawn(SpawnArgs),
    /// Continue a saved run from one of its checkpoints.
    Resume(ResumeArgs),
    /// Compute a single metric between saved checkpoints.
    Metric(MetricArgs),
    /// Learning curves, barriers, distance heatmaps and child distances.
    Megaplot(PipelineArgs),
    /// Child barriers against parent kernel velocity.
    BarrierVelocity(PipelineArgs),
    /// 2-D error landscape through a spawn point and two children.
    Plane(PlaneArgs),
    /// Linearized training and low learning rate baselines over base epochs.
    LinSweep(LinSweepArgs),
    /// Post-process a written report.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Spirals,
    Blobs,
}

#[derive(Subcommand)]
enum DataCommand {
    Gen {
        #[arg(long, value_enum, default_value = "spirals")]
        kind: GenKind,
        #[arg(long, default_value_t = 1200)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        /// Spiral noise.
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        /// Blob dimension.
        #[arg(long, default_value_t = 2)]
        dim: usize,
        /// Blob center separation.
        #[arg(long, default_value_t = 5.0)]
        separation: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        out: PathBuf,
    },
    Inspect { path: PathBuf },
}

#[derive(Args)]
struct ConfigArg {
    /// Experiment configuration file.
    #[arg(long, short)]
    config: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Train only this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory that receives one subdirectory per run.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SpawnArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Saved parent run directory.
    #[arg(long)]
    parent: PathBuf,
    #[arg(long)]
    epoch: f64,
    #[arg(long)]
    children: Option<usize>,
    /// Explicit child seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ResumeArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Saved run directory.
    #[arg(long)]
    run: PathBuf,
    /// Checkpoint to resume from; the latest when absent.
    #[arg(long)]
    epoch: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricName {
    KernelDistance,
    KernelVelocity,
    Barrier,
    ReluDistance,
    FunctionDistance,
    WeightDistance,
    CentroidAlignment,
    SpectralNorm,
    CentroidOverlap,
    EscapeThreshold,
    Predictions,
}

#[derive(Args)]
struct MetricArgs {
    #[arg(value_enum)]
    name: MetricName,
    #[command(flatten)]
    config: ConfigArg,
    /// First network: a run directory or `.dlck` file, optionally `@epoch`.
    #[arg(long)]
    a: String,
    /// Second network, for pairwise metrics.
    #[arg(long)]
    b: Option<String>,
    /// Velocity time step; defaults to `[metrics] dt`.
    #[arg(long)]
    dt: Option<f64>,
    /// Step size for the escape threshold.
    #[arg(long)]
    lr: Option<f64>,
    /// Output file for predictions.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args)]
struct PlaneArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Grid points per axis; defaults to `[metrics] plane_grid`.
    #[arg(long)]
    grid: Option<usize>,
    /// Saved runs to scan instead of training new ones.
    #[arg(long, requires_all = ["child_a", "child_b"])]
    parent: Option<PathBuf>,
    #[arg(long, requires = "child_b")]
    child_a: Option<PathBuf>,
    #[arg(long, requires = "child_a")]
    child_b: Option<PathBuf>,
}

#[derive(Args)]
struct LinSweepArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Overrides `[linearized] base_epochs`.
    #[arg(long, value_delimiter = ',')]
    base_epochs: Vec<f64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Experiment directory.
    dir: PathBuf,
    /// Write `±W` epoch moving averages to `panels_smoothed/`.
    #[arg(long)]
    smooth: Option<f64>,
}

/// Successful outcome; `diverged` maps to exit code 3.
struct Outcome {
    diverged: bool,
}

impl Outcome {
    fn ok() -> Self {
        Outcome { diverged: false }
    }
}

fn print(v: &Value) {
    use std::io::Write;
    let text = serde_json::to_string_pretty(v).expect("json values serialize");
    // a closed pipe (e.g. `| head`) is not an error
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn load_config(arg: &ConfigArg) -> Result<ExperimentConfig> {
    parse_config(&arg.config)
}

fn run_root(cfg: &ExperimentConfig, out: &Option<PathBuf>) -> PathBuf {
    out.clone().unwrap_or_else(|| output_root(cfg).join(&cfg.output.name).join("runs"))
}

fn save_runs(runs: &[Run], root: &Path) -> Result<Outcome> {
    let mut rows = Vec::new();
    for run in runs {
        let dir = root.join(&run.run_id);
        run.save(&dir)?;
        rows.push(json!({
            "run_id": run.run_id,
            "dir": dir,
            "status": run.status,
            "checkpoints": run.checkpoints.len(),
            "final_test_err": run.series.values("test_err").last().map(|v| v.1),
        }));
    }
    print(&json!(rows));
    Ok(Outcome { diverged: runs.iter().any(|r| r.status.is_diverged()) })
}

fn data(cmd: DataCommand) -> Result<Outcome> {
    match cmd {
        DataCommand::Gen { kind, n, classes, noise, dim, separation, seed, out } => {
            let ds = match kind {
                GenKind::Spirals => gen_spirals(seed, n, classes, noise)?,
                GenKind::Blobs => gen_blobs(seed, n, classes, dim, separation)?,
            };
            save_dataset(&ds.examples, &out)?;
            print(&json!({ "path": out, "examples": ds.len(), "provenance": ds.provenance }));
        }
        DataCommand::Inspect { path } => {
            let ds = load_dataset(&path, Split::Full)?;
            print(&json!({
                "path": path,
                "examples": ds.len(),
                "input_dim": ds.input_dim(),
                "classes": ds.classes(),
                "class_counts": ds.examples.class_counts(),
            }));
        }
    }
    Ok(Outcome::ok())
}

fn train(args: TrainArgs) -> Result<Outcome> {
    let cfg = load_config(&args.config)?;
    let (tr, te) = cfg.datasets()?;
    let tc = cfg.train_config()?;
    let trainer = Trainer::new(&tc, &tr, Some(&te))?;
    let seeds = args.seed.map_or_else(|| cfg.train.seeds.clone(), |s| vec![s]);
    let runs = seeds.iter().map(|&s| trainer.train(s)).collect::<Result<Vec<_>>>()?;
    save_runs(&runs, &run_root(&cfg, &args.out))
}

fn spawn(args: SpawnArgs) -> Result<Outcome> {
    let cfg = load_config(&args.config)?;
    let (tr, te) = cfg.datasets()?;
    let parent = Run::load(&args.parent)?;
    let trainer = Trainer::new(&parent.config, &tr, Some(&te))?;
    let n = args.children.unwrap_or(if args.seeds.is_empty() { cfg.spawn.children } else { args.seeds.len() });
    let seeds = (!args.seeds.is_empty()).then_some(args.seeds.as_slice());
    let children = trainer.spawn_children(&parent, args.epoch, n, seeds)?;
    save_runs(&children, &run_root(&cfg, &args.out))
}

fn resume(args: ResumeArgs) -> Result<Outcome> {
    let cfg = load_config(&args.config)?;
    let (tr, te) = cfg.datasets()?;
    let run = Run::load(&args.run)?;
    let start = match args.epoch {
        Some(e) => run.checkpoint_at(e)?,
        None => run.final_checkpoint(),
    };
    let trainer = Trainer::new(&run.config, &tr, Some(&te))?;
    let resumed = trainer.resume(start)?;
    let dir = args.out.unwrap_or_else(|| {
        let mut name = args.run.file_name().unwrap_or_default().to_os_string();
        name.push(format!(".resumed_{}", start.iteration));
        args.run.with_file_name(name)
    });
    resumed.save(&dir)?;
    print(&json!({
        "run_id": resumed.run_id,
        "dir": dir,
        "from_epoch": start.epoch,
        "status": resumed.status,
        "checkpoints": resumed.checkpoints.len(),
    }));
    Ok(Outcome { diverged: resumed.status.is_diverged() })
}

/// `path[@epoch]`: a run directory (latest checkpoint unless an epoch is
/// given) or a single checkpoint file.
fn load_point(cfg: &ExperimentConfig, arg: &str) -> Result<(ParamVector, Option<Run>, f64)> {
    let spec = cfg.network_spec();
    let (path, epoch) = match arg.rsplit_once('@') {
        Some((p, e)) => {
            let e: f64 = e.parse().map_err(|_| Error::invalid(format!("bad epoch in `{arg}`")))?;
            (p, Some(e))
        }
        None => (arg, None),
    };
    let path = Path::new(path);
    if path.is_dir() {
        let run = Run::load(path)?;
        let c = match epoch {
            Some(e) => run.checkpoint_at(e)?,
            None => run.final_checkpoint(),
        };
        let (p, e) = (c.params(&spec)?, c.epoch);
        Ok((p, Some(run), e))
    } else {
        let c = Checkpoint::load(path)?;
        Ok((c.params(&spec)?, None, c.epoch))
    }
}

fn metric(args: MetricArgs) -> Result<Outcome> {
    let cfg = load_config(&args.config)?;
    let spec = cfg.network_spec();
    let loss = cfg.optim.loss;
    let (tr, te) = cfg.datasets()?;
    let sub = stratified_subsample(&tr, cfg.metrics.kernel_subsample, cfg.data.seed);
    let kxs = tr.inputs.select_rows(&sub);
    let kidx: Vec<usize> = (0..sub.len()).collect();
    let hess_batch = tr.select(&sub);
    let (a, run_a, epoch_a) = load_point(&cfg, &args.a)?;
    let b = || -> Result<ParamVector> {
        let arg = args.b.as_deref().ok_or_else(|| Error::invalid("this metric needs --b"))?;
        Ok(load_point(&cfg, arg)?.0)
    };
    let value = match args.name {
        MetricName::KernelDistance => json!(kernel_distance(&spec, &a, &b()?, &kxs, &kidx)?),
        MetricName::KernelVelocity => {
            let run = run_a.ok_or_else(|| Error::invalid("kernel velocity needs a run directory"))?;
            let dt = args.dt.unwrap_or(cfg.metrics.dt);
            json!(kernel_velocity(&run, epoch_a, dt, &kxs, &kidx)?)
        }
        MetricName::Barrier => serde_json::to_value(error_barrier(&spec, &a, &b()?, &tr, &te, loss, cfg.metrics.alphas)?)?,
        MetricName::ReluDistance => json!(relu_distance(&spec, &a, &b()?, &te.inputs)?),
        MetricName::FunctionDistance => json!(function_distance(&spec, &a, &b()?, &te)?),
        MetricName::WeightDistance => json!(weight_distance(a.values(), b()?.values())?),
        MetricName::CentroidAlignment => json!(centroid_alignment(&spec, &a, &b()?, &hess_batch.inputs)?),
        MetricName::SpectralNorm => {
            let s = hessian_spectral_norm(&spec, &a, &hess_batch, loss)?;
            json!({ "lambda": s.lambda, "iterations": s.iterations, "converged": s.converged })
        }
        MetricName::CentroidOverlap => {
            let o = centroid_hessian_overlap(&spec, &a, &hess_batch, loss)?;
            json!({ "overlap": o.overlap, "eigenvalue": o.eigenvalue, "iterations": o.iterations, "converged": o.converged })
        }
        MetricName::EscapeThreshold => {
            let eta = args.lr.unwrap_or(cfg.optim.lr);
            let bv = b()?;
            let delta: Vec<f64> = bv.values().iter().zip(a.values()).map(|(x, y)| x - y).collect();
            let obj = NetObjective::new(&spec, &hess_batch, loss);
            json!(escape_threshold(&obj, a.values(), eta, &delta)?)
        }
        MetricName::Predictions => {
            let out = args.out.clone().ok_or_else(|| Error::invalid("predictions need --out"))?;
            let probs = export_predictions(&spec, &a, &te, &out)?;
            let ev = evaluate(&spec, &a, &te, loss)?;
            json!({ "path": out, "examples": probs.rows(), "test_err": ev.error })
        }
    };
    print(&json!({ "metric": args.name_str(), "epoch": epoch_a, "value": value }));
    Ok(Outcome::ok())
}

impl MetricArgs {
    fn name_str(&self) -> String {
        self.name.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default()
    }
}

fn finish(report: Report) -> Result<Outcome> {
    let dir = report.write()?;
    for f in &report.failures {
        eprintln!("warning: {} cell at epoch {} ({}): {}", f.panel, f.epoch, f.run_id, f.error);
    }
    print(&json!({ "dir": dir, "panels": report.panels.keys().collect::<Vec<_>>(), "failures": report.failures.len() }));
    Ok(Outcome { diverged: report.diverged_only() })
}

fn plane(args: PlaneArgs) -> Result<Outcome> {
    let cfg = load_config(&args.config)?;
    let source = match (args.child_a, args.child_b) {
        (Some(a), Some(b)) => PlaneSource::Runs {
            parent: args.parent.as_ref().map(Run::load).transpose()?,
            child_a: Run::load(a)?,
            child_b: Run::load(b)?,
        },
        _ => PlaneSource::Spawn,
    };
    finish(run_plane(&cfg, source, args.grid)?)
}

fn lin_sweep(args: LinSweepArgs) -> Result<Outcome> {
    let mut cfg = load_config(&args.config)?;
    if !args.base_epochs.is_empty() {
        cfg.linearized.base_epochs = args.base_epochs;
    }
    finish(run_linearization_sweep(&cfg)?)
}

fn report(args: ReportArgs) -> Result<Outcome> {
    let mut out = json!({ "dir": args.dir });
    if let Some(w) = args.smooth {
        out["smoothed"] = json!(smooth_report(&args.dir, w)?);
    }
    let summary: Value = serde_json::from_slice(&std::fs::read(args.dir.join("summary.json"))?)?;
    out["summary"] = summary;
    print(&out);
    Ok(Outcome::ok())
}

fn dispatch(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Data(c) => data(c),
        Command::Train(a) => train(a),
        Command::Spawn(a) => spawn(a),
        Command::Resume(a) => resume(a),
        Command::Metric(a) => metric(a),
        Command::Megaplot(a) => finish(run_megaplot(&load_config(&a.config)?)?),
        Command::BarrierVelocity(a) => finish(run_barrier_velocity(&load_config(&a.config)?)?),
        Command::Plane(a) => plane(a),
        Command::LinSweep(a) => lin_sweep(a),
        Command::Report(a) => report(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(Outcome { diverged: false }) => ExitCode::SUCCESS,
        Ok(Outcome { diverged: true }) => {
            eprintln!("error: a run diverged");
            ExitCode::from(EXIT_DIVERGED)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                ref e if e.is_config() => EXIT_CONFIG,
                Error::Diverged(_) => EXIT_DIVERGED,
                _ => EXIT_FAILURE,
            })
        }
    }
}
