//! Command-line front end: run configuration, subcommands and their JSON
//! outputs.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::ctensor::{self, Matrix, Tape};
use crate::data::{self, Dataset, FrequencyTag, NormalizationMode, Split, SplitRatios, SynthSpec, WindowSpec};
use crate::error::{Result, SpectfError};
use crate::model::{self, ActivationConfig, FusionMode, Mode, ModelConfig, SpecTfModel};
use crate::spectral;
use crate::textenc::{self, TextRecord};
use crate::train::{self, AdamConfig, Metrics, RunReport, TrainConfig};
use crate::verify;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

pub const RUN_CONFIG_FILE: &str = "config.json";
pub const REPORT_FILE: &str = "report.json";
pub const LEDGER_FILE: &str = "ledger.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolType {
    #[default]
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Hash the JSON-lines text file with the built-in toy encoder.
    #[default]
    Toy,
    /// Read precomputed embeddings from a binary embedding file.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextEncoderConfig {
    pub kind: EncoderKind,
    pub dim: usize,
    pub seed: u64,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        Self { kind: EncoderKind::Toy, dim: 32, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Series CSV.
    pub series: Option<PathBuf>,
    /// JSON-lines text file, for the toy encoder.
    pub text: Option<PathBuf>,
    /// Binary embedding file, for the file encoder.
    pub embeddings: Option<PathBuf>,
    /// Dataset name used in run ids; defaults to the series file stem.
    pub name: Option<String>,
}

/// The full run configuration. Unknown keys are rejected; every default is
/// written out in the resolved copy saved with each run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub frequency: FrequencyTag,
    pub seq_len: usize,
    pub horizon: usize,
    pub stride: usize,
    pub split: SplitRatios,
    pub normalization: NormalizationMode,
    pub d_model: usize,
    pub d_k: usize,
    pub dropout: f64,
    pub prior_weight: f64,
    pub activations: ActivationConfig,
    pub pool_type: PoolType,
    pub text_encoder: TextEncoderConfig,
    pub batch_size: usize,
    pub train_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub grad_clip: Option<f64>,
    pub mode: FusionMode,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        Self {
            data: DataConfig::default(),
            frequency: FrequencyTag::None,
            seq_len: m.seq_len,
            horizon: m.horizon,
            stride: 1,
            split: SplitRatios::default(),
            normalization: NormalizationMode::Instance,
            d_model: m.d_model,
            d_k: m.d_k,
            dropout: m.dropout,
            prior_weight: m.prior_weight,
            activations: m.activations,
            pool_type: PoolType::Avg,
            text_encoder: TextEncoderConfig::default(),
            batch_size: t.batch_size,
            train_epochs: t.epochs,
            patience: t.patience,
            learning_rate: t.learning_rate,
            adam: t.adam,
            grad_clip: t.grad_clip,
            mode: FusionMode::Full,
            seed: m.seed,
        }
    }
}

impl RunConfig {
    /// Strict parse; errors name the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de)
            .map_err(|e| SpectfError::config(format!("{}: {}", e.path(), e.inner())))
    }

    /// Load a config file and resolve its data paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_json(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data.series, &mut cfg.data.text, &mut cfg.data.embeddings].into_iter().flatten() {
            if p.is_relative() {
                *p = std::path::absolute(base.join(&*p))?;
            }
        }
        Ok(cfg)
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            seq_len: self.seq_len,
            horizon: self.horizon,
            d_model: self.d_model,
            d_k: self.d_k,
            dropout: self.dropout,
            prior_weight: self.prior_weight,
            activations: self.activations.clone(),
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            epochs: self.train_epochs,
            patience: self.patience,
            learning_rate: self.learning_rate,
            adam: self.adam,
            grad_clip: self.grad_clip,
            seed: self.seed,
        }
    }

    pub fn window_spec(&self) -> WindowSpec {
        WindowSpec { seq_len: self.seq_len, horizon: self.horizon, stride: self.stride }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.train_config().validate()?;
        self.split.validate()?;
        if self.stride < 1 {
            return Err(SpectfError::config("stride must be >= 1"));
        }
        if self.text_encoder.dim < 1 {
            return Err(SpectfError::config("text_encoder.dim must be >= 1"));
        }
        Ok(())
    }

    pub fn dataset_name(&self) -> String {
        self.data.name.clone().unwrap_or_else(|| {
            self.data
                .series
                .as_ref()
                .and_then(|p| p.file_stem())
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into())
        })
    }

    /// Text records and their dimension for the configured encoder.
    pub fn load_texts(&self) -> Result<(usize, Vec<TextRecord>)> {
        match self.text_encoder.kind {
            EncoderKind::Toy => {
                let dim = self.text_encoder.dim;
                let records = match &self.data.text {
                    Some(p) => textenc::encode_lines(&textenc::read_text_lines(p)?, dim, self.text_encoder.seed),
                    None => Vec::new(),
                };
                Ok((dim, records))
            }
            EncoderKind::File => {
                let path = self.data.embeddings.as_ref().ok_or_else(|| {
                    SpectfError::config("data.embeddings is required when text_encoder.kind is \"file\"")
                })?;
                let (dim, records) = textenc::load_embeddings(path)?;
                if dim != self.text_encoder.dim {
                    return Err(SpectfError::config(format!(
                        "text_encoder.dim is {} but {} holds {dim}-dimensional embeddings",
                        self.text_encoder.dim,
                        path.display()
                    )));
                }
                Ok((dim, records))
            }
        }
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        let series = self.data.series.as_ref().ok_or_else(|| SpectfError::config("data.series is required"))?;
        let mut table = data::load_csv(series)?;
        table.frequency = self.frequency;
        let (d_lm, texts) = self.load_texts()?;
        data::build_dataset(
            &self.dataset_name(),
            &table,
            &texts,
            d_lm,
            &self.window_spec(),
            &self.split,
            self.normalization,
        )
    }
}

#[derive(Debug, Parser)]
#[command(name = "spectf", version, about = "Frequency-domain fusion of text and time series")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// Output directory.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic regime dataset.
    Synth {
        /// Synthetic dataset description (JSON).
        #[arg(long)]
        spec: PathBuf,
    },
    /// Train a model and write a run directory.
    Train {
        #[arg(long)]
        mode: Option<FusionMode>,
        /// Train once per horizon of the configured frequency.
        #[arg(long)]
        all_horizons: bool,
        #[arg(long)]
        lr: Option<f64>,
        /// Metrics ledger (CSV); defaults to <out-dir>/ledger.csv.
        #[arg(long)]
        ledger: Option<PathBuf>,
    },
    /// Evaluate a run directory (or a directory of run directories).
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Also report the lookback-mean baseline.
        #[arg(long)]
        baseline: bool,
    },
    /// Train every mode for every seed and tabulate test errors.
    Ablate {
        #[arg(long, value_delimiter = ',', default_value = "full,no_text,no_attention,no_mulfusion")]
        modes: Vec<FusionMode>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Dump spectra and attention for one window.
    Spectrum {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        window: usize,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the numerical self-checks.
    Verify,
    /// Count trainable scalars for the configuration.
    CountParams {
        /// Text embedding dimension (defaults to the configured encoder's).
        #[arg(long)]
        d_lm: Option<usize>,
    },
}

/// Output of one command: a JSON value plus human-readable lines.
pub struct Outcome {
    pub json: serde_json::Value,
    pub lines: Vec<String>,
    pub exit: i32,
}

impl Outcome {
    fn ok(json: serde_json::Value, lines: Vec<String>) -> Self {
        Self { json, lines, exit: EXIT_OK }
    }
}

fn out_dir(global: &GlobalArgs) -> PathBuf {
    global.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs"))
}

fn load_config(global: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = match &global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = global.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn metrics_line(label: &str, m: &Metrics) -> String {
    format!(
        "{label}: mse_norm={:.6} mae_norm={:.6} mse_raw={:.6} mae_raw={:.6} windows={}",
        m.mse_norm, m.mae_norm, m.mse_raw, m.mae_raw, m.windows
    )
}

pub fn cmd_synth(global: &GlobalArgs, spec_path: &Path) -> Result<Outcome> {
    let text = fs::read_to_string(spec_path)?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let spec: SynthSpec = serde_path_to_error::deserialize(de)
        .map_err(|e| SpectfError::config(format!("{}: {}", e.path(), e.inner())))?;
    let seed = global.seed.unwrap_or(0);
    let out = data::synth_generate(&spec, seed)?;
    let dir = out_dir(global);
    fs::create_dir_all(&dir)?;
    let (csv_path, text_path) = (dir.join("series.csv"), dir.join("text.jsonl"));
    data::save_csv(&out.table, &csv_path)?;
    data::write_text_lines(&out.texts, &text_path)?;
    write_json(&dir.join("spec.json"), &spec)?;
    let json = serde_json::json!({
        "series": csv_path,
        "text": text_path,
        "rows": out.table.len(),
        "channels": out.table.channels(),
        "texts": out.texts.len(),
        "seed": seed,
    });
    let lines = vec![format!(
        "wrote {} rows x {} channels and {} texts to {}",
        out.table.len(),
        out.table.channels(),
        out.texts.len(),
        dir.display()
    )];
    Ok(Outcome::ok(json, lines))
}

/// Train one configuration and write its run directory.
pub fn train_run(cfg: &RunConfig, dir: &Path, ledger: &Path) -> Result<(PathBuf, RunReport)> {
    cfg.validate()?;
    let data = cfg.load_dataset()?;
    let (model, report) =
        train::run_experiment(&data, &cfg.model_config(), &cfg.train_config(), cfg.mode, cfg.seed)?;
    let run_dir = dir.join(&report.run_id);
    model.save(&run_dir, cfg.normalization, cfg.mode)?;
    write_json(&run_dir.join(RUN_CONFIG_FILE), cfg)?;
    write_json(&run_dir.join(REPORT_FILE), &report)?;
    train::append_ledger(ledger, std::slice::from_ref(&report))?;
    Ok((run_dir, report))
}

pub fn cmd_train(
    global: &GlobalArgs,
    mode: Option<FusionMode>,
    all_horizons: bool,
    lr: Option<f64>,
    ledger: Option<PathBuf>,
) -> Result<Outcome> {
    let mut cfg = load_config(global)?;
    if let Some(m) = mode {
        cfg.mode = m;
    }
    if let Some(lr) = lr {
        cfg.learning_rate = lr;
    }
    let horizons: Vec<usize> = if all_horizons {
        let hs = cfg.frequency.horizons();
        if hs.is_empty() {
            return Err(SpectfError::config("--all-horizons needs frequency monthly, weekly or daily"));
        }
        hs.to_vec()
    } else {
        vec![cfg.horizon]
    };
    let dir = out_dir(global);
    let ledger = ledger.unwrap_or_else(|| dir.join(LEDGER_FILE));
    fs::create_dir_all(&dir)?;
    let mut runs = Vec::new();
    let mut lines = Vec::new();
    for h in horizons {
        let c = RunConfig { horizon: h, ..cfg.clone() };
        let (run_dir, report) = train_run(&c, &dir, &ledger)?;
        let t = report.test.expect("test metrics");
        lines.push(format!(
            "{} best_epoch={} epochs={} params={}",
            report.run_id,
            report.best_epoch,
            report.val_loss.len(),
            report.params
        ));
        lines.push(metrics_line("  test", &t));
        runs.push(serde_json::json!({ "run_dir": run_dir, "report": report }));
    }
    Ok(Outcome::ok(serde_json::json!({ "runs": runs, "ledger": ledger }), lines))
}

/// Load a run directory's model and its resolved configuration.
pub fn load_run(run_dir: &Path) -> Result<(SpecTfModel, model::ModelSidecar, RunConfig)> {
    let (model, sidecar) = SpecTfModel::load(run_dir)?;
    let cfg = RunConfig::from_json(&fs::read_to_string(run_dir.join(RUN_CONFIG_FILE))?)?;
    Ok((model, sidecar, cfg))
}

fn check_compatible(model: &SpecTfModel, data: &Dataset) -> Result<()> {
    if model.d_lm() != data.d_lm {
        return Err(SpectfError::config(format!(
            "checkpoint d_lm is {} but the data's text_encoder.dim is {}",
            model.d_lm(),
            data.d_lm
        )));
    }
    Ok(())
}

fn run_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    if root.join(model::SIDECAR_FILE).exists() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(model::SIDECAR_FILE).exists())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(SpectfError::config(format!("no checkpoint found under {}", root.display())));
    }
    Ok(dirs)
}

pub fn cmd_eval(global: &GlobalArgs, checkpoint: &Path, split: Split, baseline: bool) -> Result<Outcome> {
    let mut results = Vec::new();
    let mut lines = Vec::new();
    for dir in run_dirs(checkpoint)? {
        let (model, sidecar, mut cfg) = load_run(&dir)?;
        if let Some(c) = &global.config {
            // a different data source with the checkpoint's model settings
            let other = RunConfig::load(c)?;
            cfg.data = other.data;
            cfg.text_encoder = other.text_encoder;
        }
        let data = cfg.load_dataset()?;
        check_compatible(&model, &data)?;
        let windows = data.windows(split);
        let metrics = train::evaluate(&model, windows, sidecar.mode)?;
        let base = if baseline { Some(train::mean_baseline(windows)?) } else { None };
        lines.push(format!("{} horizon={} split={}", dir.display(), cfg.horizon, split.as_str()));
        lines.push(metrics_line("  model", &metrics));
        if let Some(b) = &base {
            lines.push(metrics_line("  mean baseline", b));
        }
        let entry = serde_json::json!({
            "run_dir": dir,
            "horizon": cfg.horizon,
            "split": split,
            "mode": sidecar.mode,
            "metrics": metrics,
            "baseline": base,
        });
        write_json(&dir.join(format!("eval_{}.json", split.as_str())), &entry)?;
        results.push(entry);
    }
    Ok(Outcome::ok(serde_json::json!({ "results": results }), lines))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub seeds: Vec<u64>,
    pub reports: Vec<RunReport>,
    /// Median normalized test MSE per mode.
    pub medians: Vec<(FusionMode, f64)>,
}

pub fn cmd_ablate(global: &GlobalArgs, modes: &[FusionMode], seeds: &[u64], lr: Option<f64>) -> Result<Outcome> {
    let mut cfg = load_config(global)?;
    if let Some(lr) = lr {
        cfg.learning_rate = lr;
    }
    cfg.validate()?;
    if modes.is_empty() || seeds.is_empty() {
        return Err(SpectfError::config("ablate needs at least one mode and one seed"));
    }
    let data = cfg.load_dataset()?;
    let reports = train::ablation_run(&data, &cfg.model_config(), &cfg.train_config(), modes, seeds)?;
    let medians = train::median_test_mse(&reports, modes);
    let dir = out_dir(global);
    fs::create_dir_all(&dir)?;
    train::append_ledger(dir.join(LEDGER_FILE), &reports)?;
    let summary = AblationSummary { seeds: seeds.to_vec(), reports, medians };
    write_json(&dir.join("ablation.json"), &summary)?;

    let mut lines = vec![format!("{:<14} {:>6} {:>12} {:>12}", "mode", "seed", "mse_norm", "mae_norm")];
    for r in &summary.reports {
        let t = r.test.expect("test metrics");
        lines.push(format!("{:<14} {:>6} {:>12.6} {:>12.6}", r.mode.as_str(), r.seed, t.mse_norm, t.mae_norm));
    }
    for (m, v) in &summary.medians {
        lines.push(format!("{:<14} {:>6} {:>12.6}", m.as_str(), "median", v));
    }
    Ok(Outcome::ok(serde_json::to_value(&summary)?, lines))
}

/// Spectral quantities of one window, for external plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumDump {
    pub window: usize,
    pub split: Split,
    pub channel: usize,
    /// `|rfft(normalized lookback)|`, `L/2+1` values.
    pub input: Vec<f64>,
    /// `|X_emb|` before fusion, `(L/2+1) x d`.
    pub embedded: Vec<Vec<f64>>,
    /// Amplitudes after fusion, `(L/2+1) x d`.
    pub fused: Vec<Vec<f64>>,
    /// `|rfft(normalized prediction)|`, `H/2+1` values.
    pub predicted: Vec<f64>,
    /// `|rfft(normalized target)|`, `H/2+1` values.
    pub truth: Vec<f64>,
    /// Attention weights `(L/2+1) x L`, when the mode computes attention.
    pub attention: Option<Vec<Vec<f64>>>,
}

pub fn spectrum_dump(
    model: &SpecTfModel,
    window: &data::MultimodalWindow,
    fusion: FusionMode,
    index: usize,
    split: Split,
) -> Result<SpectrumDump> {
    let mut tape = Tape::new();
    let (trace, attention) = model.trace(&mut tape, window, &mut Mode::Eval, fusion)?;
    let amp_rows = |m: &ctensor::ComplexMatrix| -> Vec<Vec<f64>> { m.magnitude().to_rows() };
    let pred = tape.value(trace.prediction).re().to_vec();
    Ok(SpectrumDump {
        window: index,
        split,
        channel: window.channel,
        input: spectral::rfft(&window.lookback)?.amplitudes(),
        embedded: amp_rows(tape.value(trace.embedded)),
        fused: amp_rows(tape.value(trace.fused)),
        predicted: spectral::rfft(&pred)?.amplitudes(),
        truth: spectral::rfft(&window.normalized_target())?.amplitudes(),
        attention: attention.as_ref().map(Matrix::to_rows),
    })
}

pub fn cmd_spectrum(
    global: &GlobalArgs,
    checkpoint: &Path,
    index: usize,
    split: Split,
    out: Option<PathBuf>,
) -> Result<Outcome> {
    let (model, sidecar, cfg) = load_run(checkpoint)?;
    let data = cfg.load_dataset()?;
    check_compatible(&model, &data)?;
    let windows = data.windows(split);
    let window = windows.get(index).ok_or_else(|| {
        SpectfError::invalid(format!("window {index} out of range: {} has {} windows", split.as_str(), windows.len()))
    })?;
    let dump = spectrum_dump(&model, window, sidecar.mode, index, split)?;
    let path = out.unwrap_or_else(|| out_dir(global).join(format!("spectrum_{}_{index}.json", split.as_str())));
    write_json(&path, &dump)?;
    let lines = vec![format!("wrote spectrum dump for {} window {index} to {}", split.as_str(), path.display())];
    Ok(Outcome::ok(serde_json::json!({ "path": path, "dump": dump }), lines))
}

pub fn cmd_verify(global: &GlobalArgs) -> Result<Outcome> {
    let results = verify::run_all(global.seed.unwrap_or(0))?;
    let lines = results.iter().map(verify::CheckResult::line).collect();
    let exit = if results.iter().all(|r| r.passed) { EXIT_OK } else { EXIT_RUNTIME };
    Ok(Outcome { json: serde_json::to_value(&results)?, lines, exit })
}

pub fn cmd_count_params(global: &GlobalArgs, d_lm: Option<usize>) -> Result<Outcome> {
    let cfg = load_config(global)?;
    cfg.validate()?;
    let d_lm = match d_lm {
        Some(d) => d,
        None => cfg.text_encoder.dim,
    };
    let count = SpecTfModel::count_parameters(&cfg.model_config(), d_lm);
    Ok(Outcome::ok(serde_json::json!({ "params": count, "d_lm": d_lm }), vec![count.to_string()]))
}

pub fn execute(cli: &Cli) -> Result<Outcome> {
    let g = &cli.global;
    match &cli.command {
        Command::Synth { spec } => cmd_synth(g, spec),
        Command::Train { mode, all_horizons, lr, ledger } => cmd_train(g, *mode, *all_horizons, *lr, ledger.clone()),
        Command::Eval { checkpoint, split, baseline } => cmd_eval(g, checkpoint, *split, *baseline),
        Command::Ablate { modes, seeds, lr } => cmd_ablate(g, modes, seeds, *lr),
        Command::Spectrum { checkpoint, window, split, out } => cmd_spectrum(g, checkpoint, *window, *split, out.clone()),
        Command::Verify => cmd_verify(g),
        Command::CountParams { d_lm } => cmd_count_params(g, *d_lm),
    }
}

/// Parse arguments, run, print, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USER } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(outcome) => {
            if cli.global.json {
                println!("{}", serde_json::to_string_pretty(&outcome.json).unwrap_or_default());
            } else {
                for l in &outcome.lines {
                    println!("{l}");
                }
            }
            outcome.exit
        }
        Err(e) => {
            if cli.global.json {
                let kind = if e.is_user_error() { "user" } else { "runtime" };
                println!("{}", serde_json::json!({ "error": e.to_string(), "kind": kind }));
            }
            eprintln!("error: {e}");
            if e.is_user_error() {
                EXIT_USER
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_reference_table() {
        let c = RunConfig::default();
        assert_eq!((c.batch_size, c.seq_len, c.train_epochs, c.patience), (32, 24, 50, 20));
        assert_eq!(c.dropout, 0.1);
        assert_eq!(c.pool_type, PoolType::Avg);
        let echoed = serde_json::to_value(RunConfig::from_json("{}").unwrap()).unwrap();
        assert_eq!(echoed["batch_size"], 32);
        assert_eq!(echoed["pool_type"], "avg");
    }

    #[test]
    fn unknown_keys_are_rejected_with_paths() {
        let e = RunConfig::from_json(r#"{"batch_sise": 3}"#).unwrap_err().to_string();
        assert!(e.contains("batch_sise"), "{e}");
        let e = RunConfig::from_json(r#"{"text_encoder": {"dims": 3}}"#).unwrap_err().to_string();
        assert!(e.contains("text_encoder"), "{e}");
        let e = RunConfig::from_json(r#"{"pool_type": "max"}"#).unwrap_err().to_string();
        assert!(e.contains("pool_type"), "{e}");
    }

    #[test]
    fn monthly_horizons() {
        assert_eq!(FrequencyTag::Monthly.horizons(), &[6, 8, 10, 12]);
        let c = RunConfig::from_json(r#"{"frequency": "weekly"}"#).unwrap();
        assert_eq!(c.frequency.horizons(), &[12, 24, 36, 48]);
    }
}
