use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use wavefis_core::datagen::{self, GenConfig};
use wavefis_core::metrics::{self, DaiSweep, HouseholdScores, DAI_SLOPE_WINDOW};
use wavefis_core::model::{ModelConfig, ModelState};
use wavefis_core::series::{RegressionTarget, Task, WindowGroup};
use wavefis_core::training::{self, TrainConfig, TrainReport};
use wavefis_core::WaveletKind;

use crate::config::{self, TrainFile};
use crate::dataset::{self, Dataset};
use crate::model_io;

#[derive(Debug, Parser)]
#[command(name = "wavefis", version, about = "Wavelet + attention + fuzzy-rule models for household panels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic household panel CSV.
    Generate(GenerateArgs),
    /// Train a model on a panel CSV.
    Train(TrainArgs),
    /// Score a panel CSV and write ROC, DAI and summary metrics.
    Eval(EvalArgs),
    /// Write one score per window.
    Predict(PredictArgs),
    /// Print the rule base of a model.
    Explain(ExplainArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// TOML generator config; missing keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub households: Option<usize>,
    #[arg(long)]
    pub days: Option<usize>,
    #[arg(long)]
    pub fraud_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with [training], [model] and [attention] tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<Task>,
    #[arg(long, conflicts_with = "basis_sweep")]
    pub basis: Option<WaveletKind>,
    /// Try every wavelet basis and keep the best on validation.
    #[arg(long)]
    pub basis_sweep: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub ridge_lambda: Option<f64>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub rules: Option<usize>,
    #[arg(long)]
    pub d_k: Option<usize>,
    #[arg(long)]
    pub d_v: Option<usize>,
    /// Channel the regression target is computed from.
    #[arg(long)]
    pub target_channel: Option<String>,
    #[arg(long)]
    pub regression_target: Option<RegressionTarget>,
    /// Per-epoch loss CSV (default: <out>.report.csv).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// JSON training summary (default: <out>.summary.json).
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for roc.csv, dai.csv and metrics.json.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Days of balance history on each side of a flag.
    #[arg(long, default_value_t = DAI_SLOPE_WINDOW)]
    pub slope_window: usize,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Optional panel CSV for per-rule activation statistics.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

/// Failure classes, mapped to exit codes 1 and 2.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Data(e.into())
    }
}

/// Parses `argv` and runs the command, returning the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Generate(args) => generate(args),
        Command::Train(args) => train(args),
        Command::Eval(args) => eval(args),
        Command::Predict(args) => predict(args),
        Command::Explain(args) => explain(args),
    }
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

pub fn read_dataset(path: &Path) -> anyhow::Result<Dataset> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Dataset::read(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn generate(args: GenerateArgs) -> Result<(), CliError> {
    let mut cfg = match &args.config {
        Some(path) => config::load_gen_config(path)?,
        None => GenConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.households {
        cfg.n_households = n;
    }
    if let Some(n) = args.days {
        cfg.n_days = n;
    }
    if let Some(r) = args.fraud_rate {
        cfg.fraud_rate = r;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let panels = datagen::generate(&cfg)?;
    let dataset = Dataset::from_panels(&panels)?;
    let mut out = create(&args.out)?;
    dataset.write(&mut out)?;
    out.flush()?;
    Ok(())
}

/// Merges flags, the optional config file and defaults.
pub fn resolve_train_config(args: &TrainArgs, file: &TrainFile, channels: &[String]) -> Result<TrainConfig, CliError> {
    let defaults = TrainConfig::default();
    let model_defaults = ModelConfig::default();
    let t = &file.training;
    let task = args
        .task
        .or(t.task)
        .ok_or_else(|| CliError::Usage("--task is required (regression or classification)".into()))?;
    let basis_candidates = if args.basis_sweep {
        WaveletKind::ALL.to_vec()
    } else if let Some(b) = args.basis {
        vec![b]
    } else {
        t.basis_candidates.clone().unwrap_or(defaults.basis_candidates)
    };
    let regression_target = args
        .regression_target
        .or(file.model.regression_target)
        .unwrap_or(RegressionTarget::Volatility);
    let default_horizon = match (task, regression_target) {
        (Task::Regression, RegressionTarget::Volatility) => 7,
        _ => 1,
    };
    let target_name = args.target_channel.as_ref().or(file.model.target_channel.as_ref());
    let target_channel = match target_name {
        Some(name) => channels
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| CliError::Usage(format!("unknown target channel {name:?}")))?,
        None => channels.iter().position(|c| c == "spend_total").unwrap_or(0),
    };
    Ok(TrainConfig {
        task,
        epochs: args.epochs.or(t.epochs).unwrap_or(defaults.epochs),
        learning_rate: args.learning_rate.or(t.learning_rate).unwrap_or(defaults.learning_rate),
        batch_size: args.batch_size.or(t.batch_size).unwrap_or(defaults.batch_size),
        ridge_lambda: args.ridge_lambda.or(t.ridge_lambda).unwrap_or(defaults.ridge_lambda),
        seed: args.seed.or(t.seed).unwrap_or(defaults.seed),
        basis_candidates,
        validation_fraction: t.validation_fraction.unwrap_or(defaults.validation_fraction),
        early_stop_patience: t.early_stop_patience.unwrap_or(defaults.early_stop_patience),
        model: ModelConfig {
            window: args.window.or(file.model.window).unwrap_or(model_defaults.window),
            horizon: args.horizon.or(file.model.horizon).unwrap_or(default_horizon),
            depth: args.depth.or(file.model.depth).unwrap_or(model_defaults.depth),
            rules: args.rules.or(file.model.rules).unwrap_or(model_defaults.rules),
            d_k: args.d_k.or(file.attention.d_k).unwrap_or(model_defaults.d_k),
            d_v: args.d_v.or(file.attention.d_v).unwrap_or(model_defaults.d_v),
        },
        target_channel,
        regression_target,
    })
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn write_loss_curve<W: Write>(report: &TrainReport, mut out: W) -> std::io::Result<()> {
    writeln!(out, "epoch,train_loss,val_loss")?;
    for (i, (t, v)) in report.train_loss.iter().zip(&report.val_loss).enumerate() {
        writeln!(out, "{},{t},{v}", i + 1)?;
    }
    out.flush()
}

fn train(args: TrainArgs) -> Result<(), CliError> {
    let file = match &args.config {
        Some(path) => config::load_train_file(path)?,
        None => TrainFile::default(),
    };
    let data = read_dataset(&args.data)?;
    let cfg = resolve_train_config(&args, &file, &data.channels)?;
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let spec = wavefis_core::series::WindowSpec {
        window: cfg.model.window,
        horizon: cfg.model.horizon,
        depth: cfg.model.depth,
        task: cfg.task,
        target_channel: cfg.target_channel,
        regression_target: cfg.regression_target,
    };
    let groups = data.windows(&spec)?;
    let started = Instant::now();
    let (model, mut report) = training::train(&groups, &cfg)?;
    report.wall_clock_seconds = Some(started.elapsed().as_secs_f64());
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    model_io::save_model(&model, &args.out)?;
    let report_path = args.report.clone().unwrap_or_else(|| with_suffix(&args.out, ".report.csv"));
    write_loss_curve(&report, create(&report_path)?)?;
    let summary_path = args.summary.clone().unwrap_or_else(|| with_suffix(&args.out, ".summary.json"));
    let mut summary = create(&summary_path)?;
    serde_json::to_writer_pretty(&mut summary, &report)?;
    writeln!(summary)?;
    summary.flush()?;
    Ok(())
}

fn load_for_scoring(model_path: &Path, data_path: &Path) -> anyhow::Result<(ModelState, Dataset, Vec<WindowGroup>)> {
    let model = model_io::load_model(model_path)?;
    let data = read_dataset(data_path)?;
    data.check_channels(&model.channels)?;
    let groups = data.windows(&model.window_spec())?;
    if groups.iter().all(|g| g.windows.is_empty()) {
        return Err(anyhow!("no household is long enough for one window"));
    }
    Ok((model, data, groups))
}

/// Model scores for every window, grouped by household.
pub fn score_groups(model: &ModelState, groups: &[WindowGroup]) -> anyhow::Result<Vec<HouseholdScores>> {
    groups
        .iter()
        .map(|g| {
            let scores = g
                .windows
                .iter()
                .map(|w| Ok((w.end_index(), model.predict(w.input.values())?)))
                .collect::<anyhow::Result<_>>()?;
            Ok(HouseholdScores {
                household_id: g.id,
                scores,
            })
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct EvalSummary {
    pub task: Task,
    pub basis: WaveletKind,
    pub n_windows: usize,
    pub n_households: usize,
    pub rmse: Option<f64>,
    /// RMSE of predicting the mean target everywhere.
    pub mean_predictor_rmse: Option<f64>,
    pub auc: Option<f64>,
    pub f1_at_0_5: Option<f64>,
    pub dai: Option<DaiSweep>,
    pub notes: Vec<String>,
}

pub fn write_dai_csv<W: Write>(sweep: &DaiSweep, mut out: W) -> std::io::Result<()> {
    writeln!(out, "threshold,dai,n_flagged")?;
    for ((t, d), n) in sweep.thresholds.iter().zip(&sweep.dai_values).zip(&sweep.n_flagged) {
        match d {
            Some(d) => writeln!(out, "{t},{d},{n}")?,
            None => writeln!(out, "{t},NA,{n}")?,
        }
    }
    out.flush()
}

fn eval(args: EvalArgs) -> Result<(), CliError> {
    let (model, data, groups) = load_for_scoring(&args.model, &args.data)?;
    fs::create_dir_all(&args.out_dir).with_context(|| format!("cannot create {}", args.out_dir.display()))?;
    let scored = score_groups(&model, &groups)?;
    let preds: Vec<f64> = scored.iter().flat_map(|h| h.scores.iter().map(|s| s.1)).collect();
    let targets: Vec<f64> = groups.iter().flat_map(|g| g.windows.iter().map(|w| w.target)).collect();
    let mut summary = EvalSummary {
        task: model.task,
        basis: model.basis,
        n_windows: preds.len(),
        n_households: groups.len(),
        rmse: None,
        mean_predictor_rmse: None,
        auc: None,
        f1_at_0_5: None,
        dai: None,
        notes: Vec::new(),
    };
    match model.task {
        Task::Regression => {
            let mean = targets.iter().sum::<f64>() / targets.len() as f64;
            summary.rmse = Some(metrics::rmse(&preds, &targets)?);
            summary.mean_predictor_rmse = Some(metrics::rmse(&vec![mean; targets.len()], &targets)?);
        }
        Task::Classification => {
            match metrics::roc_auc(&preds, &targets) {
                Ok(curve) => {
                    let mut out = create(&args.out_dir.join("roc.csv"))?;
                    writeln!(out, "fpr,tpr,threshold")?;
                    for p in &curve.points {
                        writeln!(out, "{},{},{}", p.fpr, p.tpr, p.threshold)?;
                    }
                    out.flush()?;
                    summary.auc = Some(curve.auc);
                    summary.f1_at_0_5 = Some(metrics::f1(&preds, &targets, 0.5)?);
                }
                Err(e) => summary.notes.push(format!("ROC skipped: {e}")),
            }
            match data.balances() {
                Some(balances) => {
                    let histories = dataset::balance_histories(&balances);
                    let sweep = metrics::dai_sweep_balances(
                        &histories,
                        &scored,
                        &metrics::default_thresholds(),
                        args.slope_window,
                    )
                    .map_err(|e| CliError::Usage(e.to_string()))?;
                    write_dai_csv(&sweep, create(&args.out_dir.join("dai.csv"))?)?;
                    summary.dai = Some(sweep);
                }
                None => summary.notes.push("DAI skipped: no revolving_balance channel".into()),
            }
        }
    }
    let mut out = create(&args.out_dir.join("metrics.json"))?;
    serde_json::to_writer_pretty(&mut out, &summary)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn predict(args: PredictArgs) -> Result<(), CliError> {
    let (model, _, groups) = load_for_scoring(&args.model, &args.data)?;
    let scored = score_groups(&model, &groups)?;
    let mut out = create(&args.out)?;
    writeln!(out, "household_id,window_end,score")?;
    for h in &scored {
        for (end, score) in &h.scores {
            writeln!(out, "{},{end},{score}", h.household_id)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

/// Human-readable rule report; with `usage`, each rule's mean normalized
/// firing and the share of windows where it fires most.
pub fn rule_report(model: &ModelState, usage: Option<(&[f64], &[f64])>) -> String {
    let rules = &model.rules;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "task {:?}, basis {}, depth {}, window {}, horizon {}",
        model.task, model.basis, model.depth, model.window, model.horizon
    );
    let _ = writeln!(s, "channels: {}", model.channels.join(", "));
    let _ = writeln!(
        s,
        "attention: d' = {}, d_k = {}, d_v = {}; {} rules",
        model.attention.input_dim(),
        model.attention.d_k(),
        model.attention.d_v(),
        rules.rules()
    );
    let _ = writeln!(
        s,
        "fingerprint: seed {}, config {}",
        model.fingerprint.seed, model.fingerprint.config_hash
    );
    for i in 0..rules.rules() {
        let _ = writeln!(s, "rule {}:", i + 1);
        let _ = writeln!(s, "  if h ~ N(center {}, spread {})", fmt_vec(rules.centers.row(i)), fmt_vec(rules.spreads.row(i)));
        let _ = writeln!(s, "  then y = {} . h + {:.4}", fmt_vec(rules.weights.row(i)), rules.biases[i]);
        if let Some((mean, top)) = usage {
            let _ = writeln!(s, "  mean firing {:.4}, strongest in {:.1}% of windows", mean[i], 100.0 * top[i]);
        }
    }
    s
}

fn explain(args: ExplainArgs) -> Result<(), CliError> {
    let model = model_io::load_model(&args.model)?;
    let usage = match &args.data {
        Some(path) => {
            let data = read_dataset(path)?;
            data.check_channels(&model.channels)?;
            let groups = data.windows(&model.window_spec())?;
            let r = model.rules.rules();
            let (mut mean, mut top, mut n) = (vec![0.0; r], vec![0.0; r], 0usize);
            for w in groups.iter().flat_map(|g| &g.windows) {
                let fwd = model.forward(w.input.values()).map_err(anyhow::Error::from)?;
                let weights = &fwd.inference.normalized;
                for (m, a) in mean.iter_mut().zip(weights) {
                    *m += a;
                }
                let best = (0..r).max_by(|&a, &b| weights[a].total_cmp(&weights[b])).unwrap_or(0);
                top[best] += 1.0;
                n += 1;
            }
            if n > 0 {
                mean.iter_mut().chain(top.iter_mut()).for_each(|v| *v /= n as f64);
            }
            Some((mean, top))
        }
        None => None,
    };
    print!("{}", rule_report(&model, usage.as_ref().map(|(m, t)| (m.as_slice(), t.as_slice()))));
    Ok(())
}
