//! Command-line surface: train models, encode/vocode utterances, score
//! intelligibility, correlate strategies, and drive full experiment grids.

use clap::{Args, Parser, Subcommand};
use electrodenet::ace::{
    ace_encode_with, elgr_to_csv, read_elgr, write_elgr, Electrodogram, EnvelopeSource,
    MappingConfig,
};
use electrodenet::config::{ChannelAllocation, StrategyConfig};
use electrodenet::corpus::{
    apply_condition, fit_ssn, gen_noise, Manifest, MixCondition, NoiseSpec, Split,
};
use electrodenet::enet::{
    build_dataset, cs_usage, electrodenet_cs_encode_with, electrodenet_encode_with,
};
use electrodenet::error::Error;
use electrodenet::metrics::{
    ncm, pair_scores, per_snr_breakdown, scores_from_csv, scores_to_csv, stoi, CorrelationReport,
    ScoreRow,
};
use electrodenet::nn::io::crc64;
use electrodenet::nn::{
    load_model_file, save_model_file, train, ArchId, NetworkModel, TargetMode, TrainConfig,
};
use electrodenet::vocoder::{carrier_defaults, vocode, OutputNormalization, VocoderConfig};
use electrodenet::wav::{read_wav, write_wav, WavFormat};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

const EXIT_USAGE: u8 = 2;
const EXIT_SAMPLE_RATE: u8 = 3;

#[derive(Parser)]
#[command(name = "electrodenet", version, about = "Cochlear-implant sound-coding toolkit")]
struct Cli {
    /// Seed for anything stochastic.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Channel-allocation table file.
    #[arg(long, global = true, env = "ELECTRODENET_CONFIG")]
    config: Option<PathBuf>,
    /// Worker-pool width for experiment cells.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Directory for multi-file outputs.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a network on ACE teacher pairs from the train split.
    Train(TrainArgs),
    /// Encode a WAV into an electrodogram.
    Encode(EncodeArgs),
    /// Resynthesize an electrodogram into a WAV.
    Vocode(VocodeArgs),
    /// Score processed speech against its clean reference.
    Score(ScoreArgs),
    /// Correlate two strategies' score tables.
    Correlate(CorrelateArgs),
    /// Run a full strategy/condition/predictor grid from a plan file.
    RunExperiment(RunExperimentArgs),
    /// Channel-selection usage statistics over electrodograms.
    CsStats(CsStatsArgs),
    /// Fit a speech-shaped-noise spectrum to a corpus.
    FitSsn(FitSsnArgs),
    /// Mix noise into clean speech at an exact SNR.
    Mix(MixArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Manifest with path<TAB>tag<TAB>split lines.
    #[arg(long)]
    manifest: PathBuf,
    /// dnn | cnn | lstm | dnn-cs | dnn-cs-vt
    #[arg(long)]
    arch: String,
    #[arg(long, default_value_t = 8)]
    n_topk: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 32)]
    seq_len: usize,
    /// m | n-of-m : train against all-channel envelopes or N-of-M frames.
    #[arg(long, default_value = "m")]
    target_mode: String,
    /// External maxima count used when target-mode is n-of-m.
    #[arg(long, default_value_t = 8)]
    n: usize,
    /// Level augmentation in ±dB per training frame (0 disables).
    #[arg(long, default_value_t = 0.0)]
    gain_jitter_db: f64,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss history CSV.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    input: PathBuf,
    /// ace | enet | enet-cs
    #[arg(long)]
    strategy: String,
    #[arg(long)]
    model: Option<PathBuf>,
    /// External maxima count (ace / enet strategies).
    #[arg(long, default_value_t = 12)]
    n: usize,
    /// elgr | csv
    #[arg(long, default_value = "elgr")]
    emit: String,
    /// pre-lgf | post-lgf amplitudes in the electrodogram.
    #[arg(long, default_value = "post-lgf")]
    envelope: String,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct VocodeArgs {
    /// Input ELGR file.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Disable output level normalization.
    #[arg(long)]
    no_normalize: bool,
    #[arg(long, default_value_t = 0.05)]
    rms: f64,
    /// pcm16 | float32
    #[arg(long, default_value = "pcm16")]
    format: String,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    clean: PathBuf,
    #[arg(long)]
    processed: PathBuf,
    /// stoi | ncm | both
    #[arg(long, default_value = "both")]
    predictor: String,
}

#[derive(Args)]
struct CorrelateArgs {
    /// Score table CSV (sentence_id,strategy,noise,snr_db,predictor,score).
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    strategy_a: String,
    #[arg(long)]
    strategy_b: String,
    /// Report CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunExperimentArgs {
    #[arg(long)]
    plan: PathBuf,
}

#[derive(Args)]
struct CsStatsArgs {
    /// ELGR files to aggregate.
    #[arg(required = true)]
    files: Vec<PathBuf>,
    #[arg(long)]
    n_topk: usize,
    /// CSV output (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitSsnArgs {
    /// WAV files of the reference corpus.
    #[arg(required = true)]
    files: Vec<PathBuf>,
    /// Noise-spec JSON output.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MixArgs {
    #[arg(long)]
    clean: PathBuf,
    /// Noise WAV, or a noise-spec JSON from fit-ssn.
    #[arg(long)]
    noise: PathBuf,
    #[arg(long)]
    snr: f64,
    #[arg(long)]
    output: PathBuf,
    /// pcm16 | float32
    #[arg(long, default_value = "float32")]
    format: String,
}

struct CliError {
    message: String,
    code: u8,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            message: message.into(),
            code: EXIT_USAGE,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::SampleRate { .. } => EXIT_SAMPLE_RATE,
            Error::InvalidArgument(_) => EXIT_USAGE,
            _ => 1,
        };
        let message = match &e {
            Error::SampleRate { .. } => format!("{e} (expected 16000 Hz mono)"),
            _ => e.to_string(),
        };
        CliError { message, code }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError {
        message: format!("{}: {e}", path.display()),
        code: 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.cmd {
        Cmd::Train(a) => cmd_train(cli, a),
        Cmd::Encode(a) => cmd_encode(cli, a),
        Cmd::Vocode(a) => cmd_vocode(cli, a),
        Cmd::Score(a) => cmd_score(a),
        Cmd::Correlate(a) => cmd_correlate(a),
        Cmd::RunExperiment(a) => cmd_run_experiment(cli, a),
        Cmd::CsStats(a) => cmd_cs_stats(a),
        Cmd::FitSsn(a) => cmd_fit_ssn(cli, a),
        Cmd::Mix(a) => cmd_mix(a),
    }
}

/// Strategy configuration with N maxima, allocation from --config if set.
fn strategy_config(cli: &Cli, n: usize) -> Result<StrategyConfig, CliError> {
    let mut cfg = StrategyConfig::new(n)?;
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        cfg.allocation = ChannelAllocation::parse(&text)?;
        cfg.num_channels = cfg.allocation.num_channels();
        cfg.validate()?;
    }
    Ok(cfg)
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<(), CliError> {
    if a.epochs == 0 {
        return Err(CliError::usage("--epochs must be at least 1"));
    }
    let arch = ArchId::parse(&a.arch)?;
    let target_mode = TargetMode::parse(&a.target_mode)?;
    let cfg = strategy_config(cli, a.n)?;
    let manifest = Manifest::load(&a.manifest)?;
    let train_paths: Vec<String> = manifest
        .paths(Split::Train)
        .into_iter()
        .map(String::from)
        .collect();
    if train_paths.is_empty() {
        return Err(CliError::usage("manifest has no train entries"));
    }
    let dataset = build_dataset(&train_paths, &cfg, "train");
    for (path, reason) in &dataset.errors {
        eprintln!("warning: skipped {path}: {reason}");
    }
    if dataset.utterances.is_empty() {
        return Err(CliError::usage("no usable training utterances"));
    }
    let mut model = NetworkModel::build(arch, a.n_topk, cli.seed, true)?;
    let tcfg = TrainConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seq_len: a.seq_len,
        seed: cli.seed,
        target_mode,
        num_maxima: a.n,
        gain_jitter_db: a.gain_jitter_db,
        ..TrainConfig::default()
    };
    let history = train(&mut model, &dataset.utterances, &tcfg)?;
    save_model_file(&a.out, &model)?;
    if let Some(path) = &a.loss_csv {
        let mut csv = String::from("epoch,loss\n");
        for (e, loss) in history.iter().enumerate() {
            csv.push_str(&format!("{},{}\n", e + 1, loss));
        }
        std::fs::write(path, csv).map_err(|e| io_err(path, e))?;
    }
    println!(
        "trained {} on {} utterances ({} frames), final loss {:.6}",
        arch.name(),
        dataset.utterances.len(),
        dataset.total_frames(),
        history.last().unwrap()
    );
    Ok(())
}

fn parse_envelope_source(s: &str) -> Result<EnvelopeSource, CliError> {
    match s {
        "pre-lgf" => Ok(EnvelopeSource::PreLgf),
        "post-lgf" => Ok(EnvelopeSource::PostLgf),
        other => Err(CliError::usage(format!("unknown envelope source `{other}`"))),
    }
}

fn encode_signal(
    signal: &[f64],
    strategy: &str,
    model: Option<&NetworkModel>,
    cfg: &StrategyConfig,
    source: EnvelopeSource,
) -> Result<Electrodogram, Error> {
    let map = MappingConfig::default();
    match strategy {
        "ace" => ace_encode_with(signal, cfg, &map, source),
        "enet" => {
            let model = model.ok_or_else(|| Error::invalid("--model required for enet"))?;
            electrodenet_encode_with(signal, model, cfg, &map, source)
        }
        "enet-cs" => {
            let model = model.ok_or_else(|| Error::invalid("--model required for enet-cs"))?;
            electrodenet_cs_encode_with(signal, model, cfg, &map, source)
        }
        other => Err(Error::invalid(format!("unknown strategy `{other}`"))),
    }
}

fn cmd_encode(cli: &Cli, a: &EncodeArgs) -> Result<(), CliError> {
    let source = parse_envelope_source(&a.envelope)?;
    let cfg = strategy_config(cli, a.n)?;
    let signal = read_wav(&a.input)?;
    let model = match &a.model {
        Some(path) => Some(load_model_file(path)?),
        None => None,
    };
    let elgr = encode_signal(&signal, &a.strategy, model.as_ref(), &cfg, source)?;
    match a.emit.as_str() {
        "elgr" => {
            let mut file = std::fs::File::create(&a.output).map_err(|e| io_err(&a.output, e))?;
            write_elgr(&mut file, &elgr).map_err(|e| io_err(&a.output, e))?;
        }
        "csv" => {
            std::fs::write(&a.output, elgr_to_csv(&elgr)).map_err(|e| io_err(&a.output, e))?;
        }
        other => return Err(CliError::usage(format!("unknown emit format `{other}`"))),
    }
    println!("{} frames -> {}", elgr.frames.len(), a.output.display());
    Ok(())
}

fn parse_wav_format(s: &str) -> Result<WavFormat, CliError> {
    match s {
        "pcm16" => Ok(WavFormat::Pcm16),
        "float32" => Ok(WavFormat::Float32),
        other => Err(CliError::usage(format!("unknown WAV format `{other}`"))),
    }
}

fn cmd_vocode(cli: &Cli, a: &VocodeArgs) -> Result<(), CliError> {
    let cfg = strategy_config(cli, 8)?;
    let bytes = std::fs::read(&a.input).map_err(|e| io_err(&a.input, e))?;
    let elgr = read_elgr(&mut bytes.as_slice())?;
    let mut vcfg = VocoderConfig::new(carrier_defaults(&cfg.allocation, cfg.bin_hz()));
    vcfg.rms_target = a.rms;
    if a.no_normalize {
        vcfg.output_normalization = OutputNormalization::None;
    }
    let samples = vocode(&elgr, &vcfg)?;
    write_wav(&a.output, &samples, parse_wav_format(&a.format)?)?;
    println!("{} samples -> {}", samples.len(), a.output.display());
    Ok(())
}

fn cmd_score(a: &ScoreArgs) -> Result<(), CliError> {
    let clean = read_wav(&a.clean)?;
    let processed = read_wav(&a.processed)?;
    let both = a.predictor == "both";
    if !(both || a.predictor == "stoi" || a.predictor == "ncm") {
        return Err(CliError::usage(format!(
            "unknown predictor `{}`",
            a.predictor
        )));
    }
    if both || a.predictor == "stoi" {
        println!("stoi {}", stoi(&clean, &processed)?);
    }
    if both || a.predictor == "ncm" {
        println!("ncm {}", ncm(&clean, &processed)?);
    }
    Ok(())
}

/// Correlation reports for every predictor present in the table: per-SNR
/// groups plus pooled, grouping labelled `predictor:snr`.
fn correlation_reports(
    rows: &[ScoreRow],
    strategy_a: &str,
    strategy_b: &str,
) -> Result<Vec<CorrelationReport>, Error> {
    let predictors: BTreeSet<String> = rows.iter().map(|r| r.predictor.clone()).collect();
    let mut reports = Vec::new();
    for pred in predictors {
        let subset: Vec<ScoreRow> = rows
            .iter()
            .filter(|r| r.predictor == pred)
            .cloned()
            .collect();
        let groups = pair_scores(&subset, strategy_a, strategy_b)?;
        for mut report in per_snr_breakdown(&groups)? {
            report.grouping = format!("{pred}:{}", report.grouping);
            reports.push(report);
        }
    }
    Ok(reports)
}

fn reports_to_csv(reports: &[CorrelationReport]) -> String {
    let mut out = String::from(CorrelationReport::csv_header());
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

fn cmd_correlate(a: &CorrelateArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&a.scores).map_err(|e| io_err(&a.scores, e))?;
    let rows = scores_from_csv(&text)?;
    let reports = correlation_reports(&rows, &a.strategy_a, &a.strategy_b)?;
    let csv = reports_to_csv(&reports);
    match &a.out {
        Some(path) => std::fs::write(path, csv).map_err(|e| io_err(path, e))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_cs_stats(a: &CsStatsArgs) -> Result<(), CliError> {
    let mut frames = Vec::new();
    for path in &a.files {
        let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
        let elgr = read_elgr(&mut bytes.as_slice())?;
        frames.extend(elgr.frames);
    }
    let combined = Electrodogram {
        frames,
        hop: 16,
        sample_rate: 16_000,
        num_maxima: a.n_topk,
    };
    let stats = cs_usage(&combined, a.n_topk);
    if stats.is_empty() {
        return Err(CliError::usage("no frames in the given electrodograms"));
    }
    let csv = stats.to_csv();
    match &a.out {
        Some(path) => std::fs::write(path, &csv).map_err(|e| io_err(path, e))?,
        None => print!("{csv}"),
    }
    eprintln!(
        "n_topk {}: {:.2}% below, {:.2}% equal, {:.2}% above",
        a.n_topk, stats.pct_below, stats.pct_equal, stats.pct_above
    );
    Ok(())
}

fn cmd_fit_ssn(cli: &Cli, a: &FitSsnArgs) -> Result<(), CliError> {
    let mut corpus = Vec::new();
    for path in &a.files {
        corpus.push(read_wav(path)?);
    }
    let spec = fit_ssn(&corpus, cli.seed)?;
    let json = serde_json::to_string_pretty(&spec)
        .map_err(|e| CliError::usage(format!("serialize noise spec: {e}")))?;
    std::fs::write(&a.out, json).map_err(|e| io_err(&a.out, e))?;
    println!("fitted SSN over {} files -> {}", corpus.len(), a.out.display());
    Ok(())
}

fn load_noise(path: &Path, length: usize) -> Result<Vec<f64>, CliError> {
    if path.extension().is_some_and(|e| e == "json") {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let spec: NoiseSpec = serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let (noise, _) = gen_noise(&spec, length)?;
        Ok(noise)
    } else {
        let mut noise = read_wav(path)?;
        if noise.len() < length {
            // Loop short noise files out to the clean length.
            let base = noise.clone();
            while noise.len() < length {
                noise.extend_from_slice(&base);
            }
        }
        Ok(noise)
    }
}

fn cmd_mix(a: &MixArgs) -> Result<(), CliError> {
    let clean = read_wav(&a.clean)?;
    let noise = load_noise(&a.noise, clean.len())?;
    let noisy = electrodenet::corpus::mix_at_snr(&clean, &noise, a.snr)?;
    write_wav(&a.output, &noisy, parse_wav_format(&a.format)?)?;
    println!("{} @ {} dB -> {}", a.clean.display(), a.snr, a.output.display());
    Ok(())
}

// ---- run-experiment ----

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StrategySpec {
    /// ace | enet | enet-cs
    name: String,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    model: Option<String>,
    /// External maxima for ace/enet.
    #[serde(default)]
    n: Option<usize>,
}

impl StrategySpec {
    fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.name.clone())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ExperimentPlan {
    /// Manifest whose test split is scored.
    manifest: String,
    strategies: Vec<StrategySpec>,
    conditions: Vec<MixCondition>,
    /// "stoi" / "ncm"
    predictors: Vec<String>,
    /// Noise generators by condition label.
    #[serde(default)]
    noises: BTreeMap<String, NoiseSpec>,
    #[serde(default)]
    out_dir: Option<String>,
    #[serde(default)]
    seed: u64,
}

impl ExperimentPlan {
    fn validate(&self) -> Result<(), CliError> {
        if self.strategies.is_empty() || self.conditions.is_empty() || self.predictors.is_empty() {
            return Err(CliError::usage(
                "plan needs strategies, conditions, and predictors",
            ));
        }
        let mut labels = BTreeSet::new();
        for s in &self.strategies {
            if !labels.insert(s.label()) {
                return Err(CliError::usage(format!(
                    "duplicate strategy label `{}`",
                    s.label()
                )));
            }
            if s.name != "ace" {
                let model = s.model.as_ref().ok_or_else(|| {
                    CliError::usage(format!("strategy `{}` needs a model file", s.label()))
                })?;
                if !Path::new(model).exists() {
                    return Err(CliError::usage(format!("model file not found: {model}")));
                }
            }
        }
        let mut conds = BTreeSet::new();
        for c in &self.conditions {
            if !conds.insert((c.noise_label.clone(), c.snr_label())) {
                return Err(CliError::usage("duplicate condition in plan"));
            }
            if c.snr_db.is_some() && !self.noises.contains_key(&c.noise_label) {
                return Err(CliError::usage(format!(
                    "no noise spec for condition `{}`",
                    c.noise_label
                )));
            }
        }
        for p in &self.predictors {
            if p != "stoi" && p != "ncm" {
                return Err(CliError::usage(format!("unknown predictor `{p}`")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct JournalRecord {
    cell: String,
    digest: String,
    scores: Vec<(String, f64)>,
}

struct Cell {
    sentence: usize,
    cond: usize,
    strategy: usize,
}

fn sentence_id(path: &str) -> String {
    Path::new(path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string())
}

fn cmd_run_experiment(cli: &Cli, a: &RunExperimentArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&a.plan).map_err(|e| io_err(&a.plan, e))?;
    let plan: ExperimentPlan = serde_json::from_str(&text)
        .map_err(|e| CliError::usage(format!("{}: {e}", a.plan.display())))?;
    plan.validate()?;
    let out_dir = plan
        .out_dir
        .clone()
        .map(PathBuf::from)
        .or_else(|| cli.out_dir.clone())
        .ok_or_else(|| CliError::usage("plan or --out-dir must name an output directory"))?;
    std::fs::create_dir_all(&out_dir).map_err(|e| io_err(&out_dir, e))?;

    let cfg = strategy_config(cli, 12)?;
    let manifest = Manifest::load(Path::new(&plan.manifest))?;
    let sentences: Vec<String> = manifest
        .paths(Split::Test)
        .into_iter()
        .map(String::from)
        .collect();
    if sentences.is_empty() {
        return Err(CliError::usage("manifest has no test entries"));
    }

    // Load everything the cells share up front.
    let mut models: Vec<Option<NetworkModel>> = Vec::new();
    let mut model_digests: Vec<u64> = Vec::new();
    for s in &plan.strategies {
        match &s.model {
            Some(path) => {
                let bytes = std::fs::read(path).map_err(|e| io_err(Path::new(path), e))?;
                model_digests.push(crc64(&bytes));
                models.push(Some(load_model_file(Path::new(path))?));
            }
            None => {
                model_digests.push(0);
                models.push(None);
            }
        }
    }
    let mut cleans: Vec<Vec<f64>> = Vec::new();
    for path in &sentences {
        cleans.push(read_wav(Path::new(path))?);
    }

    // Resume: cells already journaled with matching digests are reused.
    let journal_path = out_dir.join("journal.jsonl");
    let mut done: BTreeMap<String, JournalRecord> = BTreeMap::new();
    if let Ok(prev) = std::fs::read_to_string(&journal_path) {
        for line in prev.lines().filter(|l| !l.trim().is_empty()) {
            if let Ok(rec) = serde_json::from_str::<JournalRecord>(line) {
                done.insert(rec.cell.clone(), rec);
            }
        }
    }

    let cell_key = |s: usize, c: usize, g: usize| {
        format!(
            "{}|{}|{}|{}",
            sentence_id(&sentences[s]),
            plan.conditions[c].noise_label,
            plan.conditions[c].snr_label(),
            plan.strategies[g].label()
        )
    };
    let cell_digest = |s: usize, c: usize, g: usize| {
        let mut bytes = Vec::new();
        for v in &cleans[s] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        format!(
            "{:016x}",
            crc64(&bytes) ^ model_digests[g] ^ plan.seed.rotate_left((c as u32) % 64)
        )
    };

    let mut cells = Vec::new();
    let mut reused = 0usize;
    for s in 0..sentences.len() {
        for c in 0..plan.conditions.len() {
            for g in 0..plan.strategies.len() {
                let key = cell_key(s, c, g);
                match done.get(&key) {
                    Some(rec) if rec.digest == cell_digest(s, c, g) => reused += 1,
                    _ => cells.push(Cell {
                        sentence: s,
                        cond: c,
                        strategy: g,
                    }),
                }
            }
        }
    }

    // Pre-generate the paired noise per (sentence, condition) so every
    // strategy hears the same noise realization.
    let mut noises: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for s in 0..sentences.len() {
        for (c, cond) in plan.conditions.iter().enumerate() {
            if cond.snr_db.is_none() {
                continue;
            }
            let mut spec = plan.noises[&cond.noise_label].clone();
            spec.seed = plan.seed
                ^ crc64(format!("{}|{}", sentence_id(&sentences[s]), cond.noise_label).as_bytes());
            let (noise, _) = gen_noise(&spec, cleans[s].len())?;
            noises.insert((s, c), noise);
        }
    }

    let jobs = cli.jobs.max(1);
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, Result<Vec<(String, f64)>, String>)>();
    let vcfg = VocoderConfig::new(carrier_defaults(&cfg.allocation, cfg.bin_hz()));
    let run_cell = |cell: &Cell| -> Result<Vec<(String, f64)>, String> {
        let clean = &cleans[cell.sentence];
        let cond = &plan.conditions[cell.cond];
        let strat = &plan.strategies[cell.strategy];
        let empty = Vec::new();
        let noise = noises.get(&(cell.sentence, cell.cond)).unwrap_or(&empty);
        let noisy = apply_condition(clean, noise, cond).map_err(|e| e.to_string())?;
        let mut cell_cfg = cfg.clone();
        if let Some(n) = strat.n {
            cell_cfg.num_maxima = n;
        }
        let elgr = encode_signal(
            &noisy,
            &strat.name,
            models[cell.strategy].as_ref(),
            &cell_cfg,
            EnvelopeSource::PreLgf,
        )
        .map_err(|e| e.to_string())?;
        let resynth = vocode(&elgr, &vcfg).map_err(|e| e.to_string())?;
        let mut scores = Vec::new();
        for pred in &plan.predictors {
            let value = match pred.as_str() {
                "stoi" => stoi(clean, &resynth),
                _ => ncm(clean, &resynth),
            }
            .map_err(|e| e.to_string())?;
            scores.push((pred.clone(), value));
        }
        Ok(scores)
    };

    std::thread::scope(|scope| {
        for _ in 0..jobs {
            let tx = tx.clone();
            let next = &next;
            let cells = &cells;
            let run_cell = &run_cell;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= cells.len() {
                    break;
                }
                let _ = tx.send((i, run_cell(&cells[i])));
            });
        }
        drop(tx);

        let mut journal = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&journal_path)
            .map_err(|e| io_err(&journal_path, e))?;
        let mut failures = Vec::new();
        for (i, result) in rx {
            let cell = &cells[i];
            let key = cell_key(cell.sentence, cell.cond, cell.strategy);
            match result {
                Ok(scores) => {
                    let rec = JournalRecord {
                        cell: key.clone(),
                        digest: cell_digest(cell.sentence, cell.cond, cell.strategy),
                        scores,
                    };
                    let line = serde_json::to_string(&rec)
                        .map_err(|e| CliError::usage(e.to_string()))?;
                    writeln!(journal, "{line}").map_err(|e| io_err(&journal_path, e))?;
                    // Keep the journal's parse of the record, not the
                    // in-memory one: the JSON float roundtrip can move a
                    // score by 1 ulp, and resumed runs must rebuild
                    // byte-identical CSVs from the journal alone.
                    let rec = serde_json::from_str(&line)
                        .map_err(|e| CliError::usage(e.to_string()))?;
                    done.insert(key, rec);
                }
                Err(msg) => failures.push(format!("{key}: {msg}")),
            }
        }
        if !failures.is_empty() {
            return Err(CliError {
                message: format!("{} cells failed:\n{}", failures.len(), failures.join("\n")),
                code: 1,
            });
        }
        Ok(())
    })?;

    // Assemble the score table in deterministic grid order.
    let mut rows = Vec::new();
    for s in 0..sentences.len() {
        for (c, cond) in plan.conditions.iter().enumerate() {
            for (g, strat) in plan.strategies.iter().enumerate() {
                let rec = &done[&cell_key(s, c, g)];
                for (pred, score) in &rec.scores {
                    rows.push(ScoreRow {
                        sentence_id: sentence_id(&sentences[s]),
                        strategy: strat.label(),
                        noise: cond.noise_label.clone(),
                        snr_db: cond.snr_db,
                        predictor: pred.clone(),
                        score: *score,
                    });
                }
            }
        }
    }
    let scores_path = out_dir.join("scores.csv");
    std::fs::write(&scores_path, scores_to_csv(&rows)).map_err(|e| io_err(&scores_path, e))?;

    // Correlations: every other strategy against the first (the reference,
    // conventionally ACE).
    let reference = plan.strategies[0].label();
    let mut pooled = Vec::new();
    let mut by_snr = Vec::new();
    for strat in &plan.strategies[1..] {
        let mut reports = correlation_reports(&rows, &reference, &strat.label())?;
        for r in &mut reports {
            r.grouping = format!("{}:{}", strat.label(), r.grouping);
            if r.grouping.ends_with(":pooled") {
                pooled.push(r.clone());
            } else {
                by_snr.push(r.clone());
            }
        }
    }
    let corr_path = out_dir.join("correlation.csv");
    std::fs::write(&corr_path, reports_to_csv(&pooled)).map_err(|e| io_err(&corr_path, e))?;
    let snr_path = out_dir.join("correlation_by_snr.csv");
    std::fs::write(&snr_path, reports_to_csv(&by_snr)).map_err(|e| io_err(&snr_path, e))?;

    // Mean score per strategy/predictor/condition (figure-style data).
    let mut means: BTreeMap<(String, String, String, String), (f64, usize)> = BTreeMap::new();
    for r in &rows {
        let key = (
            r.strategy.clone(),
            r.predictor.clone(),
            r.noise.clone(),
            match r.snr_db {
                Some(db) => format!("{db}"),
                None => "quiet".to_string(),
            },
        );
        let e = means.entry(key).or_insert((0.0, 0));
        e.0 += r.score;
        e.1 += 1;
    }
    let mut mean_csv = String::from("strategy,predictor,noise,snr_db,mean_score,n\n");
    for ((strategy, pred, noise, snr), (sum, n)) in &means {
        mean_csv.push_str(&format!(
            "{strategy},{pred},{noise},{snr},{},{n}\n",
            sum / *n as f64
        ));
    }
    let mean_path = out_dir.join("mean_by_snr.csv");
    std::fs::write(&mean_path, mean_csv).map_err(|e| io_err(&mean_path, e))?;

    println!(
        "{} cells computed, {} reused; wrote {}",
        cells.len(),
        reused,
        out_dir.display()
    );
    Ok(())
}
