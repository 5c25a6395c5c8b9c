//! Command-line front end for the sequential testing engine.
//!
//! `simulate` and `multiple` run synthetic studies from a TOML config;
//! `replay`, `monitor`, `aa-check`, and `pairwise` consume event logs;
//! `synth-log` writes a synthetic log in the supported shape.

use std::fs;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use seqscore_core::family::{FamilySpec, ResponseKind};
use seqscore_core::sst::CheckpointRecord;
use seqscore_stream::{
    aa_check, generate_log, pairwise_compare, restore_state, snapshot_state, to_csv_string,
    EngineKind, EventReader, EventRecord, LogFormat, Session, SessionConfig, SynthConfig,
};

#[derive(Parser)]
#[command(
    name = "seqscore",
    about = "Sequential score testing for streaming A/B experiments",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulated experiment study from a config file.
    Simulate(SimulateArgs),
    /// Run a multiple-testing study from a config file.
    Multiple(SimulateArgs),
    /// Replay an event-log file through a sequential test.
    Replay(ReplayArgs),
    /// Monitor an event stream from standard input.
    Monitor(StreamArgs),
    /// Rerun a log under random arm relabelings to check calibration.
    AaCheck(AaArgs),
    /// All-pairs comparisons among the listed variants.
    Pairwise(PairwiseArgs),
    /// Generate a synthetic event log.
    SynthLog(SynthArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Write machine-readable line-delimited records here ('-' for stdout).
    #[arg(long)]
    records: Option<String>,
    /// Dispersion a(phi) for normal responses.
    #[arg(long, default_value_t = 1.0)]
    dispersion: f64,
}

#[derive(Args, Clone)]
struct StreamArgs {
    /// Response family of the log.
    #[arg(long, default_value = "bernoulli_logit")]
    family: String,
    /// Dispersion a(phi) for normal responses.
    #[arg(long, default_value_t = 1.0)]
    dispersion: f64,
    /// Engine to run.
    #[arg(long, default_value = "sst")]
    method: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Mixture prior scale.
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Events per checkpoint, counted across both arms.
    #[arg(long, default_value_t = 200)]
    batch: usize,
    /// Per-arm observation cap.
    #[arg(long, default_value_t = 10_000)]
    cap_n: usize,
    /// Covariate count per event; inferred from the first record if omitted.
    #[arg(long)]
    covariates: Option<usize>,
    /// Variant id treated as control (default: first seen).
    #[arg(long)]
    control: Option<String>,
    /// Abort on the first malformed record instead of skipping it.
    #[arg(long, conflicts_with = "lenient")]
    strict: bool,
    /// Skip malformed records, counting them.
    #[arg(long)]
    lenient: bool,
    /// Input format (csv, tsv, jsonl); detected from the file name if auto.
    #[arg(long, default_value = "auto")]
    format: String,
    /// Session state file for snapshot/resume.
    #[arg(long)]
    state_file: Option<PathBuf>,
    /// Write the state file every K checkpoints.
    #[arg(long)]
    snapshot_every: Option<usize>,
    /// Resume from the state file instead of starting fresh.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct ReplayArgs {
    /// Event-log file.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    stream: StreamArgs,
}

#[derive(Args)]
struct AaArgs {
    #[arg(long)]
    input: PathBuf,
    /// Number of relabeling passes.
    #[arg(long, default_value_t = 100)]
    relabelings: usize,
    /// Master seed for the relabelings.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    stream: StreamArgs,
}

#[derive(Args)]
struct PairwiseArgs {
    #[arg(long)]
    input: PathBuf,
    /// Comma-separated variant ids to compare pairwise.
    #[arg(long, value_delimiter = ',')]
    variants: Vec<String>,
    /// Per-arm observation target for each pair.
    #[arg(long)]
    stop_n: usize,
    #[command(flatten)]
    stream: StreamArgs,
}

#[derive(Args)]
struct SynthArgs {
    /// Output file; stdout when omitted. `.jsonl` selects JSON lines.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    variants: usize,
    #[arg(long, default_value_t = 10_000)]
    events: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Baseline logit effect: intercept plus four feature weights.
    #[arg(long, value_delimiter = ',', num_args = 5, default_values_t = [-1.0, 0.8, -0.5, 0.3, 0.6])]
    theta: Vec<f64>,
    /// Per-variant extra effect, repeatable: --effect-for 'v01=0.5,0,0,0,0'.
    #[arg(long = "effect-for")]
    effect_for: Vec<String>,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Multiple(args) => cmd_multiple(args),
        Command::Replay(args) => cmd_replay(args),
        Command::Monitor(args) => cmd_monitor(args),
        Command::AaCheck(args) => cmd_aa_check(args),
        Command::Pairwise(args) => cmd_pairwise(args),
        Command::SynthLog(args) => cmd_synth(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn write_records(records: &Option<String>, lines: &[String]) -> Result<()> {
    match records.as_deref() {
        None => Ok(()),
        Some("-") => {
            let mut out = io::stdout().lock();
            for line in lines {
                writeln!(out, "{line}")?;
            }
            Ok(())
        }
        Some(path) => {
            let mut f = BufWriter::new(fs::File::create(path).context("creating records file")?);
            for line in lines {
                writeln!(f, "{line}")?;
            }
            Ok(())
        }
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let config = seqscore_sim::ExperimentConfig::from_toml(&text)?;
    let report = seqscore_sim::estimate_operating_characteristics(&config, args.dispersion)?;
    print!("{}", report.render_table());
    write_records(&args.records, &[report.to_json_line()])
}

fn cmd_multiple(args: SimulateArgs) -> Result<()> {
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let config = seqscore_sim::MultipleConfig::from_toml(&text)?;
    let report = seqscore_sim::run_multiple_testing_study(&config, args.dispersion)?;
    print!("{}", report.render_table());
    write_records(&args.records, &[report.to_json_line()])
}

fn parse_family(name: &str, dispersion: f64) -> Result<FamilySpec> {
    let kind = match name {
        "bernoulli_logit" => ResponseKind::BernoulliLogit,
        "normal_identity" => ResponseKind::NormalIdentity,
        "poisson_log" => ResponseKind::PoissonLog,
        other => bail!("unknown family '{other}'"),
    };
    Ok(FamilySpec::new(kind, dispersion)?)
}

fn parse_engine(name: &str) -> Result<EngineKind> {
    match name {
        "sst" => Ok(EngineKind::Sst),
        "msprt" => Ok(EngineKind::Msprt),
        other => bail!("unknown method '{other}' (expected sst or msprt)"),
    }
}

fn parse_format(name: &str, path: Option<&Path>) -> Result<LogFormat> {
    match name {
        "auto" => Ok(path
            .map(|p| LogFormat::from_path(&p.to_string_lossy()))
            .unwrap_or(LogFormat::Csv)),
        "csv" => Ok(LogFormat::Csv),
        "tsv" => Ok(LogFormat::Tsv),
        "jsonl" => Ok(LogFormat::Jsonl),
        other => bail!("unknown format '{other}'"),
    }
}

/// Load every event eagerly (tools that need repeated passes).
fn load_events(path: &Path, args: &StreamArgs) -> Result<(Vec<EventRecord>, usize)> {
    let format = parse_format(&args.format, Some(path))?;
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let reader = EventReader::new(file, format)?;
    let strict = !args.lenient;
    let mut events = Vec::new();
    let mut skipped = 0usize;
    for (line, parsed) in reader {
        match parsed {
            Ok(e) => events.push(e),
            Err(e) => {
                if strict {
                    return Err(e.into());
                }
                let _ = line;
                skipped += 1;
            }
        }
    }
    Ok((events, skipped))
}

fn session_config(args: &StreamArgs, covariate_dim: usize) -> Result<SessionConfig> {
    Ok(SessionConfig {
        family: parse_family(&args.family, args.dispersion)?,
        engine: parse_engine(&args.method)?,
        alpha: args.alpha,
        tau: args.tau,
        batch: args.batch,
        cap_n: args.cap_n,
        covariate_dim,
        control_variant: args.control.clone(),
        aa_seed: None,
        stop_early: true,
    })
}

/// Drive a parsed event iterator through a session, emitting checkpoint
/// records as they happen and optionally writing periodic state snapshots.
fn run_session<R: Read>(
    mut session: Session,
    reader: EventReader<R>,
    args: &StreamArgs,
) -> Result<()> {
    let strict = !args.lenient;
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let mut checkpoints_emitted = 0usize;
    let mut ended_mid_batch = false;
    let skip = session.records_seen();
    let mut emit = |record: &CheckpointRecord, out: &mut BufWriter<_>| -> Result<()> {
        writeln!(out, "{}", serde_json::to_string(record)?)?;
        out.flush()?;
        Ok(())
    };

    for (record_index, (line, parsed)) in reader.enumerate() {
        if session.finished() {
            break;
        }
        // Resumed sessions have consumed this many records already.
        if record_index < skip {
            continue;
        }
        let event = match parsed {
            Ok(e) => e,
            Err(e) => {
                if strict {
                    return Err(e.into());
                }
                session.note_skipped();
                continue;
            }
        };
        match session.advance(&event, line) {
            Ok(Some(record)) => {
                emit(&record, &mut out)?;
                ended_mid_batch = false;
                checkpoints_emitted += 1;
                if let (Some(every), Some(path)) = (args.snapshot_every, args.state_file.as_ref()) {
                    if every > 0 && checkpoints_emitted % every == 0 {
                        fs::write(path, snapshot_state(&session))
                            .with_context(|| format!("writing {}", path.display()))?;
                    }
                }
            }
            Ok(None) => ended_mid_batch = true,
            Err(e) => {
                if strict {
                    return Err(e.into());
                }
                session.note_skipped();
            }
        }
    }
    let mut partial = false;
    if ended_mid_batch && !session.finished() {
        if let Some(record) = session.finish()? {
            emit(&record, &mut out)?;
            partial = true;
        }
    }
    if let Some(path) = args.state_file.as_ref() {
        fs::write(path, snapshot_state(&session))
            .with_context(|| format!("writing {}", path.display()))?;
    }

    let (n1, n0) = session.counts();
    match session.trace().decided() {
        Some(stop) => eprintln!(
            "decision: reject at checkpoint {} (n1={}, n0={}, p={:.6})",
            stop.checkpoint_index,
            stop.n1,
            stop.n0,
            session.trace().checkpoints()[stop.checkpoint_index].p_value
        ),
        None => eprintln!(
            "decision: accept (stream ended; n1={n1}, n0={n0}, p={:.6})",
            session.p_value()
        ),
    }
    if partial {
        eprintln!("note: final checkpoint covers a partial batch");
    }
    if session.skipped() > 0 {
        eprintln!("note: skipped {} malformed record(s)", session.skipped());
    }
    Ok(())
}

/// Peek the covariate dimension from the first event of a log file.
fn covariate_dim_of(path: &Path, args: &StreamArgs) -> Result<usize> {
    if let Some(d) = args.covariates {
        return Ok(d);
    }
    let format = parse_format(&args.format, Some(path))?;
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut reader = EventReader::new(file, format)?;
    match reader.next() {
        Some((_, Ok(e))) => Ok(e.covariates.len()),
        Some((line, Err(e))) => bail!("cannot infer covariate count: line {line}: {e}"),
        None => bail!("empty input; pass --covariates to fix the dimension"),
    }
}

fn cmd_replay(args: ReplayArgs) -> Result<()> {
    let stream = &args.stream;
    let session = if stream.resume {
        let path = stream
            .state_file
            .as_ref()
            .context("--resume requires --state-file")?;
        let dim = covariate_dim_of(&args.input, stream)?;
        let config = session_config(stream, dim)?;
        let blob = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        restore_state(&blob, &config)?
    } else {
        let dim = covariate_dim_of(&args.input, stream)?;
        Session::new(session_config(stream, dim)?)?
    };
    let format = parse_format(&stream.format, Some(&args.input))?;
    let file = fs::File::open(&args.input)?;
    run_session(session, EventReader::new(file, format)?, stream)
}

fn cmd_monitor(args: StreamArgs) -> Result<()> {
    if args.resume {
        bail!("monitor reads a live stream and does not support --resume; use replay");
    }
    let dim = args
        .covariates
        .context("monitor requires --covariates (the stream cannot be peeked twice)")?;
    let session = Session::new(session_config(&args, dim)?)?;
    let format = parse_format(&args.format, None)?;
    let stdin = io::stdin();
    run_session(session, EventReader::new(stdin.lock(), format)?, &args)
}

fn cmd_aa_check(args: AaArgs) -> Result<()> {
    let (events, skipped) = load_events(&args.input, &args.stream)?;
    if events.is_empty() {
        eprintln!("empty input: 0 relabelings run");
        return Ok(());
    }
    let dim = events[0].covariates.len();
    let config = session_config(&args.stream, dim)?;
    let report = aa_check(&events, &config, args.relabelings, args.seed)?;
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for (run, rejected) in report.per_run_rejected.iter().enumerate() {
        writeln!(
            out,
            "{}",
            serde_json::json!({ "run": run, "rejected": rejected })
        )?;
    }
    out.flush()?;
    eprintln!(
        "aa-check: {} rejection(s) in {} relabelings (alpha {})",
        report.rejections, report.runs, config.alpha
    );
    if skipped > 0 {
        eprintln!("note: skipped {skipped} malformed record(s)");
    }
    Ok(())
}

fn cmd_pairwise(args: PairwiseArgs) -> Result<()> {
    let (events, skipped) = load_events(&args.input, &args.stream)?;
    let dim = events
        .first()
        .map(|e| e.covariates.len())
        .or(args.stream.covariates)
        .context("empty input")?;
    let config = session_config(&args.stream, dim)?;
    let report = pairwise_compare(&events, &args.variants, args.stop_n, &config)?;
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for o in &report.outcomes {
        writeln!(out, "{}", serde_json::to_string(o)?)?;
    }
    out.flush()?;
    eprintln!(
        "pairwise: {} comparisons ({} deferred), {} rejected at alpha {}",
        report.outcomes.len(),
        report.deferred_pairs,
        report.rejected.len(),
        config.alpha
    );
    for (a, b) in &report.rejected {
        eprintln!("  reject: {a} vs {b}");
    }
    if skipped > 0 {
        eprintln!("note: skipped {skipped} malformed record(s)");
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let mut effects = vec![vec![0.0; 5]; args.variants];
    for spec in &args.effect_for {
        let (variant, values) = spec
            .split_once('=')
            .with_context(|| format!("bad --effect-for '{spec}' (expected vNN=a,b,c,d,e)"))?;
        let idx: usize = variant
            .trim_start_matches('v')
            .parse()
            .with_context(|| format!("bad variant id '{variant}'"))?;
        if idx >= args.variants {
            bail!("--effect-for variant {variant} out of range (have {})", args.variants);
        }
        let parsed: Vec<f64> = values
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("bad effect values in '{spec}'"))?;
        if parsed.len() != 5 {
            bail!("--effect-for needs 5 values, got {}", parsed.len());
        }
        effects[idx] = parsed;
    }
    let config = SynthConfig {
        variants: args.variants,
        events: args.events,
        theta: args.theta.clone(),
        effects,
        seed: args.seed,
    };
    let log = generate_log(&config)?;
    let jsonl = args
        .out
        .as_ref()
        .map(|p| matches!(LogFormat::from_path(&p.to_string_lossy()), LogFormat::Jsonl))
        .unwrap_or(false);
    let rendered = if jsonl {
        let mut s = String::new();
        for e in &log {
            s.push_str(&serde_json::to_string(e)?);
            s.push('\n');
        }
        s
    } else {
        to_csv_string(&log)
    };
    match args.out {
        Some(path) => fs::write(&path, rendered)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{rendered}"),
    }
    Ok(())
}
