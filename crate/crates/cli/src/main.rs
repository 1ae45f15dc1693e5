//! `pcflow` command-line front end.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure or
//! training divergence (the latter becomes 0 with `--allow-divergence`).

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use pcflow::dataio::{self, ColumnSchema, RawSeries};
use pcflow::eval::{self, EvalOptions, Window};
use pcflow::toy::{self, ModelKind, ToyShape};
use pcflow::train::Divergence;
use pcflow::{modelfile, ErrorClass, FlowArch, ScalingMode, ScenarioSet, TrainConfig, TrainLog, Truncation};

#[derive(Debug, thiserror::Error)]
enum Failure {
    #[error(transparent)]
    Core(#[from] pcflow::Error),
    #[error("{0}")]
    Usage(String),
    #[error("training diverged ({}) at epoch {}; rerun with --allow-divergence to accept", .0.kind.name(), .0.epoch)]
    Diverged(Divergence),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Diverged(_) => 4,
            Failure::Core(e) => match e.class() {
                ErrorClass::Usage => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numeric => 4,
            },
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

#[derive(Debug, Parser)]
#[command(name = "pcflow", version, about = "Principal component flows for daily time-series scenarios")]
#[command(args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Shared {
    /// Master seed; expanded into separate init, shuffle, sample, split and data streams.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for all outputs (created if missing).
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// key=value file whose entries override the command-line flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Leave out the timestamp line at the top of written CSVs.
    #[arg(long)]
    no_timestamp: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Slice a raw time series into daily scenarios scaled to [0, 1].
    Prepare(PrepareArgs),
    /// Fit a PCF or full-space flow to a prepared scenario set.
    Train(TrainArgs),
    /// Draw scenarios from a trained model.
    Sample(SampleArgs),
    /// Compare a generated set against a historical one.
    Eval(EvalArgs),
    /// Train on a synthetic manifold and measure how far samples stray from it.
    Toy(ToyArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScalingArg {
    /// Capacity factor when a capacity column is given, min/max otherwise.
    Auto,
    Minmax,
    Capacity,
    None,
}

#[derive(Debug, Args)]
struct PrepareArgs {
    /// Raw CSV with a header row.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "timestamp")]
    time_col: String,
    #[arg(long)]
    value_col: String,
    #[arg(long)]
    capacity_col: Option<String>,
    #[arg(long, value_enum, default_value_t = ScalingArg::Auto)]
    scaling: ScalingArg,
    /// Steps per scenario; defaults to one day at the series resolution.
    #[arg(long)]
    period_length: Option<usize>,
    /// First day to keep (YYYY-MM-DD).
    #[arg(long)]
    start: Option<NaiveDate>,
    /// Last day to keep (YYYY-MM-DD), inclusive.
    #[arg(long)]
    end: Option<NaiveDate>,
    /// Name of the scenario file inside the output directory.
    #[arg(long, default_value = "scenarios.csv")]
    output: String,
    #[command(flatten)]
    shared: Shared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Pcf,
    Fsnf,
}

#[derive(Debug, Args)]
struct ArchArgs {
    /// Number of coupling layers.
    #[arg(long, default_value_t = 5)]
    layers: usize,
    /// Hidden layers per conditioner network.
    #[arg(long, default_value_t = 2)]
    hidden_layers: usize,
    /// Hidden width; defaults to the flow dimension.
    #[arg(long)]
    hidden_width: Option<usize>,
}

impl ArchArgs {
    fn arch(&self) -> Result<FlowArch, Failure> {
        if self.layers == 0 || self.hidden_layers == 0 || self.hidden_width == Some(0) {
            return Err(Failure::Usage("layer counts and widths must be at least 1".into()));
        }
        Ok(FlowArch {
            n_layers: self.layers,
            hidden_layers: self.hidden_layers,
            hidden_width: self.hidden_width,
        })
    }
}

#[derive(Debug, Args)]
struct TrainingArgs {
    #[arg(long, default_value_t = 1000)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    /// Epochs without validation improvement before stopping.
    #[arg(long, default_value_t = 50)]
    patience: usize,
    #[arg(long, default_value_t = 0.2)]
    validation_fraction: f64,
    /// Exit 0 even if training diverged; the flag stays in the log.
    #[arg(long)]
    allow_divergence: bool,
}

impl TrainingArgs {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            early_stop_patience: self.patience,
            validation_fraction: self.validation_fraction,
            seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Args)]
struct TruncationArgs {
    /// Cumulative explained variance the PCA must retain.
    #[arg(long, conflicts_with = "components")]
    cev: Option<f64>,
    /// Explicit number of principal components.
    #[arg(long)]
    components: Option<usize>,
}

impl TruncationArgs {
    fn truncation(&self) -> Result<Truncation, Failure> {
        Ok(Truncation::from_options(self.cev.or(self.components.is_none().then_some(0.99)), self.components)?)
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Prepared scenario CSV (with its .meta sidecar).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Pcf)]
    mode: Mode,
    #[command(flatten)]
    truncation: TruncationArgs,
    #[command(flatten)]
    arch: ArchArgs,
    #[command(flatten)]
    training: TrainingArgs,
    #[command(flatten)]
    shared: Shared,
}

#[derive(Debug, Args)]
struct SampleArgs {
    /// Model file written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Number of scenarios to draw.
    #[arg(long, short = 'n', default_value_t = 1000)]
    count: usize,
    #[command(flatten)]
    shared: Shared,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum WindowArg {
    Hann,
    Rectangular,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Historical scenario CSV.
    #[arg(long)]
    historical: PathBuf,
    /// Generated scenario CSV, in the same scaling as the historical set.
    #[arg(long)]
    generated: PathBuf,
    /// Fixed KDE bandwidth instead of Silverman's rule.
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long, default_value_t = eval::KDE_GRID_POINTS)]
    grid_points: usize,
    /// Welch segment length; defaults to half the scenario length.
    #[arg(long)]
    segment_length: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    overlap: f64,
    #[arg(long, value_enum, default_value_t = WindowArg::Hann)]
    window: WindowArg,
    /// Clock window for the marginal table, as HH:MM-HH:MM.
    #[arg(long, default_value = "00:00-04:00")]
    clock_window: String,
    #[command(flatten)]
    shared: Shared,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ShapeArg {
    Curve1d,
    Kite2d,
}

#[derive(Debug, Args)]
struct ToyArgs {
    #[arg(long, value_enum)]
    shape: ShapeArg,
    #[arg(long, value_enum, default_value_t = Mode::Fsnf)]
    mode: Mode,
    #[command(flatten)]
    truncation: TruncationArgs,
    #[arg(long, default_value_t = toy::TOY_SAMPLES)]
    samples: usize,
    #[command(flatten)]
    arch: ArchArgs,
    #[command(flatten)]
    training: TrainingArgs,
    #[command(flatten)]
    shared: Shared,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = match config::expand_args(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Prepare(a) => prepare(a),
        Command::Train(a) => train(a),
        Command::Sample(a) => sample(a),
        Command::Eval(a) => evaluate(a),
        Command::Toy(a) => run_toy(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

impl Shared {
    fn header(&self, what: &str) -> String {
        let mut h = format!("pcflow {} {what} seed={}", env!("CARGO_PKG_VERSION"), self.seed);
        if !self.no_timestamp {
            h.push_str(&format!(" written={}", chrono::Utc::now().format("%Y-%m-%dT%H:%M:%SZ")));
        }
        h
    }

    fn out(&self, name: &str) -> Result<PathBuf, Failure> {
        fs::create_dir_all(&self.out_dir).map_err(|e| pcflow::Error::io(&self.out_dir, e))?;
        Ok(self.out_dir.join(name))
    }
}

fn write(path: &Path, text: &str) -> Outcome {
    fs::write(path, text).map_err(|e| pcflow::Error::io(path, e))?;
    Ok(())
}

fn prepare(a: &PrepareArgs) -> Outcome {
    let mut schema = ColumnSchema::new(&a.time_col, &a.value_col);
    if let Some(c) = &a.capacity_col {
        schema = schema.with_capacity(c);
    }
    let raw = dataio::load_csv(&a.input, &schema)?;
    let raw = restrict_days(raw, a.start, a.end)?;
    let period = match a.period_length {
        Some(p) => p,
        None => {
            let step = raw.interval_minutes();
            if 1440 % step != 0 {
                return Err(Failure::Usage(format!(
                    "a {step}-minute series does not tile a day; pass --period-length"
                )));
            }
            (1440 / step) as usize
        }
    };
    let sliced = dataio::clean_and_slice(&raw, period)?;
    let mode = match (a.scaling, raw.capacity().is_some()) {
        (ScalingArg::Auto, true) | (ScalingArg::Capacity, true) => ScalingMode::CapacityFactor,
        (ScalingArg::Capacity, false) => {
            return Err(Failure::Usage("--scaling capacity needs --capacity-col".into()))
        }
        (ScalingArg::Auto, false) | (ScalingArg::Minmax, _) => ScalingMode::MinMax,
        (ScalingArg::None, _) => ScalingMode::None,
    };
    let set = dataio::scale(&sliced, mode, raw.capacity())?;
    let path = a.shared.out(&a.output)?;
    dataio::save_scenarios(&set, &path, Some(&a.shared.header("prepare")))?;
    log::info!(
        "wrote {} scenarios of {} steps ({}) to {}",
        set.n_rows(),
        set.period_length(),
        set.scaling().name(),
        path.display()
    );
    Ok(())
}

fn restrict_days(raw: RawSeries, start: Option<NaiveDate>, end: Option<NaiveDate>) -> Result<RawSeries, Failure> {
    if start.is_none() && end.is_none() {
        return Ok(raw);
    }
    let keep: Vec<usize> = raw
        .timestamps()
        .iter()
        .enumerate()
        .filter(|(_, t)| start.is_none_or(|s| t.date() >= s) && end.is_none_or(|e| t.date() <= e))
        .map(|(i, _)| i)
        .collect();
    if keep.len() < 2 {
        return Err(pcflow::Error::InsufficientData { surviving: keep.len() }.into());
    }
    let pick = |v: &[Option<f64>]| keep.iter().map(|&i| v[i]).collect::<Vec<_>>();
    Ok(RawSeries::new(
        keep.iter().map(|&i| raw.timestamps()[i]).collect(),
        pick(raw.values()),
        raw.capacity().map(pick),
    )?)
}

/// Checks the divergence flag after the outputs have been written.
fn judge(log: &TrainLog, allow: bool) -> Outcome {
    match log.divergence {
        Some(d) if !allow => Err(Failure::Diverged(d)),
        Some(d) => {
            log::warn!("training diverged ({}) at epoch {}; accepted", d.kind.name(), d.epoch);
            Ok(())
        }
        None => Ok(()),
    }
}

fn train(a: &TrainArgs) -> Outcome {
    let set = dataio::load_scenarios(&a.data)?;
    let config = a.training.config(a.shared.seed);
    config.validate()?;
    let arch = a.arch.arch()?;
    let (train, val) = dataio::split(&set, config.validation_fraction, config.split_seed())?;
    let (model, log) = match a.mode {
        Mode::Pcf => pcflow::fit_pcf(&train, &val, a.truncation.truncation()?, &arch, &config)?,
        Mode::Fsnf => {
            if a.truncation.cev.is_some() || a.truncation.components.is_some() {
                return Err(Failure::Usage("--cev/--components only apply to --mode pcf".into()));
            }
            pcflow::fit_fsnf(&train, &val, &arch, &config)?
        }
    };
    let model_path = a.shared.out("model.pcf")?;
    modelfile::save(&model, &model_path)?;
    // The sidecar carries the scaling so that `sample` can map back to units.
    let meta_src = dataio::metadata_path(&a.data);
    let meta_dst = dataio::metadata_path(&model_path);
    fs::copy(&meta_src, &meta_dst).map_err(|e| pcflow::Error::io(&meta_dst, e))?;
    write(&a.shared.out("train_log.csv")?, &log.to_csv(Some(&a.shared.header("train"))))?;
    log::info!(
        "{} epochs, best validation NLL {:.4} at epoch {}, flow dimension {}",
        log.epochs(),
        log.best_val(),
        log.best_epoch,
        model.flow_dim()
    );
    judge(&log, a.training.allow_divergence)
}

fn sample(a: &SampleArgs) -> Outcome {
    if a.count == 0 {
        return Err(Failure::Usage("--count must be at least 1".into()));
    }
    let model = modelfile::load(&a.model)?;
    let meta_path = dataio::metadata_path(&a.model);
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| pcflow::Error::io(&meta_path, e))?;
    let meta = dataio::parse_metadata(&meta_text)?;
    let config = TrainConfig {
        seed: a.shared.seed,
        ..TrainConfig::default()
    };
    let drawn = model.sample(a.count, config.sample_seed(), meta.interval_minutes)?;
    // Draws may leave [0, 1], so they are stored as an unscaled set in the
    // model's units; the original-unit copy applies the recorded scaling.
    let header = a.shared.header(&format!("sample units={}", meta.scaling.name()));
    dataio::save_scenarios(&drawn, a.shared.out("samples.csv")?, Some(&header))?;
    if !matches!(meta.scaling, pcflow::Scaling::None) {
        let original = drawn.data().iter().map(|&v| meta.scaling.invert(v)).collect();
        let original = ScenarioSet::new(original, drawn.period_length(), meta.interval_minutes, pcflow::Scaling::None)?;
        let header = a.shared.header("sample units=original");
        dataio::save_scenarios(&original, a.shared.out("samples_original_units.csv")?, Some(&header))?;
    }
    log::info!("wrote {} scenarios to {}", a.count, a.shared.out_dir.display());
    Ok(())
}

fn parse_clock(s: &str) -> Result<(u32, u32), Failure> {
    let bad = || Failure::Usage(format!("clock window '{s}' is not HH:MM-HH:MM"));
    let minutes = |t: &str| -> Result<u32, Failure> {
        let (h, m) = t.trim().split_once(':').ok_or_else(bad)?;
        let (h, m): (u32, u32) = (h.parse().map_err(|_| bad())?, m.parse().map_err(|_| bad())?);
        if m >= 60 || h * 60 + m > 1440 {
            return Err(bad());
        }
        Ok(h * 60 + m)
    };
    let (a, b) = s.split_once('-').ok_or_else(bad)?;
    Ok((minutes(a)?, minutes(b)?))
}

fn evaluate(a: &EvalArgs) -> Outcome {
    let historical = dataio::load_scenarios(&a.historical)?;
    let generated = dataio::load_scenarios(&a.generated)?;
    let options = EvalOptions {
        bandwidth: a.bandwidth,
        grid_points: a.grid_points,
        segment_length: a.segment_length,
        overlap_fraction: a.overlap,
        window: match a.window {
            WindowArg::Hann => Window::Hann,
            WindowArg::Rectangular => Window::Rectangular,
        },
        clock_window: parse_clock(&a.clock_window)?,
    };
    let report = eval::evaluate(&historical, &generated, &options)?;
    fs::create_dir_all(&a.shared.out_dir).map_err(|e| pcflow::Error::io(&a.shared.out_dir, e))?;
    report.write_dir(&a.shared.out_dir, Some(&a.shared.header("eval")))?;
    log::info!(
        "KS D = {:.4}, p = {:.4}; report in {}",
        report.ks.statistic,
        report.ks.p_value,
        a.shared.out_dir.display()
    );
    Ok(())
}

fn run_toy(a: &ToyArgs) -> Outcome {
    let shape = match a.shape {
        ShapeArg::Curve1d => ToyShape::Curve1d,
        ShapeArg::Kite2d => ToyShape::Kite2d,
    };
    let kind = match a.mode {
        Mode::Pcf => ModelKind::Pcf(a.truncation.truncation()?),
        Mode::Fsnf => ModelKind::Fsnf,
    };
    let config = a.training.config(a.shared.seed);
    let out = toy::run_toy(shape, kind, &a.arch.arch()?, &config, a.samples)?;
    let header = a.shared.header(&format!("toy {}", shape.name()));
    dataio::save_scenarios(&out.data, a.shared.out("toy_data.csv")?, Some(&header))?;
    dataio::save_scenarios(&out.samples, a.shared.out("toy_samples.csv")?, Some(&header))?;
    write(&a.shared.out("train_log.csv")?, &out.log.to_csv(Some(&header)))?;
    let summary = format!(
        "shape={}\nmode={}\nflow_dim={}\nsamples={}\ntolerance={}\non_manifold_fraction={}\nmean_distance={}\nbest_epoch={}\nepochs={}\ndiverged={}\n",
        shape.name(),
        if a.mode == Mode::Pcf { "pcf" } else { "fsnf" },
        out.model.flow_dim(),
        a.samples,
        toy::ON_MANIFOLD_TOLERANCE,
        out.on_manifold,
        out.mean_distance,
        out.log.best_epoch,
        out.log.epochs(),
        out.log.divergence.map_or("none", |d| d.kind.name()),
    );
    write(&a.shared.out("toy_summary.txt")?, &summary)?;
    print!("{summary}");
    // The toy exists to expose divergence, so a flagged run is still a success.
    Ok(())
}
