mod config;

use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use log::info;
use serde::Serialize;

use sentinel_core::detect::{train_model, DetectorModel};
use sentinel_core::evaluate::{benchmark, enumerate_combinations, score, write_plot_data, Dataset, ResultsWriter};
use sentinel_core::formats::{
    load_frame, read_meta, read_readings_csv, read_verdicts_csv, save_frame, write_meta, write_readings_csv,
    write_verdicts_csv, ArtifactMeta,
};
use sentinel_core::ingest::{align_with_stats, clean, subscribe, IngestMode};
use sentinel_core::repro::config_hash;
use sentinel_core::synth::{generate, inject, reference_injections, InjectionLog, ScenarioConfig};
use sentinel_core::{load_inventory, StreamInventory};

use config::{read_toml, resolve_seed, seed_detector, IngestFile, SweepFile, SynthFile, TrainFile};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] sentinel_core::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_validation() => 2,
            _ => 1,
        }
    }
}

/// Fails with a usage error naming `path` when it does not exist.
pub fn existing(path: &Path) -> Result<&Path, CliError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::Usage(format!("no such file: {}", path.display())))
    }
}

#[derive(Parser)]
#[command(name = "sentinel", version, about = "Building-sensor anomaly detection")]
struct Cli {
    /// Log filter, e.g. `info` or `sentinel_core=debug`.
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Align recorded readings into a frame, or capture readings from a live
    /// broker.
    Ingest {
        /// TOML file with ingest settings; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Readings CSV to align (replay mode).
        #[arg(long, conflicts_with = "live")]
        replay: Option<PathBuf>,
        /// Subscribe to a broker and write the captured readings.
        #[arg(long)]
        live: bool,
        /// Broker address, e.g. `mqtt://host:1883`.
        #[arg(long)]
        broker: Option<String>,
        /// Comma-separated topics; every inventory topic when empty.
        #[arg(long, value_delimiter = ',')]
        topics: Vec<String>,
        /// Grid period in seconds.
        #[arg(long)]
        grid: Option<i64>,
        /// Longest gap, in grid steps, that is forward-filled.
        #[arg(long)]
        max_gap_fill: Option<usize>,
        /// Keep rows that still have missing cells.
        #[arg(long)]
        keep_incomplete: bool,
        /// Inventory CSV; the built-in reference deployment when absent.
        #[arg(long)]
        inventory: Option<PathBuf>,
        /// How long to listen in live mode (`90s`, `2m`, ...).
        #[arg(long, default_value = "60s", value_parser = config::parse_duration)]
        duration: Duration,
        /// Frame CSV (replay) or readings CSV (live).
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic frame, optionally with injected anomalies.
    Synth {
        /// TOML scenario file; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Random seed (falls back to the config, then SENTINEL_SEED).
        #[arg(long)]
        seed: Option<u64>,
        /// Scenario length in days.
        #[arg(long)]
        days: Option<f64>,
        /// Grid period in seconds.
        #[arg(long)]
        period: Option<i64>,
        /// Number of single-cell spikes to inject.
        #[arg(long)]
        points: Option<usize>,
        /// Number of 21:00 sound and light bursts to inject.
        #[arg(long)]
        bursts: Option<usize>,
        /// Frame CSV to write.
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth injection log (JSON) to write.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Fit a detector on a frame.
    Train {
        /// TOML file with condition, stages and detector.
        #[arg(long)]
        config: PathBuf,
        /// Training frame CSV.
        #[arg(long)]
        frame: PathBuf,
        /// Random seed (falls back to the config, then SENTINEL_SEED).
        #[arg(long)]
        seed: Option<u64>,
        /// Model JSON to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a frame with a trained model.
    Detect {
        /// Model JSON from `train`.
        #[arg(long)]
        model: PathBuf,
        /// Frame CSV to score.
        #[arg(long)]
        frame: PathBuf,
        /// Verdict CSV to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare verdicts with a ground-truth log.
    Eval {
        /// Verdict CSV from `detect`.
        #[arg(long)]
        verdicts: PathBuf,
        /// Injection log from `synth`.
        #[arg(long)]
        truth: PathBuf,
        /// Grid steps a flag may sit outside an event and still detect it.
        #[arg(long, default_value_t = 2)]
        tolerance: u32,
        /// Report JSON to write in addition to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run many train/detect configurations and record timings.
    Sweep {
        /// TOML file with `[[run]]` tables.
        #[arg(long)]
        plan: PathBuf,
        /// Training frame CSV.
        #[arg(long)]
        train: PathBuf,
        /// Frame CSV to score; the training frame when absent.
        #[arg(long)]
        test: Option<PathBuf>,
        /// Injection log for the scored frame.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Event tolerance in grid steps.
        #[arg(long, default_value_t = 2)]
        tolerance: u32,
        /// Random seed (falls back to the plan, then SENTINEL_SEED).
        #[arg(long)]
        seed: Option<u64>,
        /// Parallel runs; defaults to the plan's value or 1.
        #[arg(long)]
        workers: Option<usize>,
        /// Results CSV, appended to.
        #[arg(long)]
        results: PathBuf,
        /// Plot data, one JSON series per line.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Count stream combinations of an inventory.
    Combos {
        /// Inventory CSV; the built-in reference deployment when absent.
        #[arg(long)]
        inventory: Option<PathBuf>,
        /// Also print the first N combinations.
        #[arg(long, default_value_t = 0)]
        list: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Ingest {
            config,
            replay,
            live,
            broker,
            topics,
            grid,
            max_gap_fill,
            keep_incomplete,
            inventory,
            duration,
            out,
        } => {
            let mut file: IngestFile = match &config {
                Some(p) => read_toml(p)?,
                None => IngestFile::default(),
            };
            if live {
                file.mode = Some(IngestMode::Live);
            } else if replay.is_some() {
                file.mode = Some(IngestMode::Replay);
            }
            file.broker_uri = broker.or(file.broker_uri);
            if !topics.is_empty() {
                file.topics = Some(topics);
            }
            file.grid_period = grid.or(file.grid_period);
            file.max_gap_fill = max_gap_fill.or(file.max_gap_fill);
            if keep_incomplete {
                file.drop_incomplete_rows = Some(false);
            }
            file.inventory = inventory.or(file.inventory);
            cmd_ingest(file, replay.as_deref(), duration, &out)
        }
        Command::Synth {
            config,
            seed,
            days,
            period,
            points,
            bursts,
            out,
            truth,
        } => {
            let mut file: SynthFile = match &config {
                Some(p) => read_toml(p)?,
                None => SynthFile::default(),
            };
            file.days = days.or(file.days);
            file.grid_period = period.or(file.grid_period);
            if let Some(n) = points {
                file.inject.points = n;
            }
            if let Some(n) = bursts {
                file.inject.bursts = n;
            }
            cmd_synth(file, seed, &out, truth.as_deref())
        }
        Command::Train {
            config,
            frame,
            seed,
            out,
        } => cmd_train(&config, &frame, seed, &out),
        Command::Detect { model, frame, out } => cmd_detect(&model, &frame, &out),
        Command::Eval {
            verdicts,
            truth,
            tolerance,
            out,
        } => cmd_eval(&verdicts, &truth, tolerance, out.as_deref()),
        Command::Sweep {
            plan,
            train,
            test,
            truth,
            tolerance,
            seed,
            workers,
            results,
            plot,
        } => cmd_sweep(
            &plan,
            &train,
            test.as_deref(),
            truth.as_deref(),
            tolerance,
            seed,
            workers,
            &results,
            plot.as_deref(),
        ),
        Command::Combos { inventory, list } => cmd_combos(inventory.as_deref(), list),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer(&mut out, value).map_err(sentinel_core::Error::from)?;
    writeln!(out)?;
    Ok(())
}

fn inventory(path: Option<&Path>) -> Result<StreamInventory, CliError> {
    Ok(match path {
        Some(p) => load_inventory(existing(p)?)?,
        None => StreamInventory::reference_deployment(),
    })
}

fn cmd_combos(path: Option<&Path>, list: usize) -> Result<(), CliError> {
    let inv = inventory(path)?;
    let (intra, inter, listing) = enumerate_combinations(&inv);
    let mut out = std::io::stdout().lock();
    writeln!(out, "intra={intra}")?;
    writeln!(out, "inter={inter}")?;
    for c in listing.take(list) {
        let streams: Vec<String> = c.streams.iter().map(ToString::to_string).collect();
        let scope = match c.scope {
            sentinel_core::evaluate::CombinationScope::Intra(d) => d,
            sentinel_core::evaluate::CombinationScope::Inter => "*".into(),
        };
        writeln!(out, "{scope}\t{}", streams.join(","))?;
    }
    Ok(())
}

fn cmd_ingest(file: IngestFile, replay: Option<&Path>, duration: Duration, out: &Path) -> Result<(), CliError> {
    let (cfg, inventory_path) = file.resolve()?;
    let inv = inventory(inventory_path.as_deref())?;
    let hash = config_hash(&cfg)?;
    match cfg.mode {
        IngestMode::Replay => {
            let input = replay.ok_or_else(|| CliError::Usage("replay mode needs --replay <readings.csv>".into()))?;
            let f = std::fs::File::open(existing(input)?)?;
            let readings = read_readings_csv(BufReader::new(f))?;
            let cleaned = clean(&readings);
            let (frame, stats) = align_with_stats(&cleaned.readings, &cfg, &inv)?;
            info!("dropped {} unusable readings; {stats:?}", cleaned.dropped);
            if frame.rows() == 0 {
                log::warn!("every row had a missing stream; pass --keep-incomplete to keep them");
            }
            save_frame(out, &frame, &hash)?;
            print_json(&serde_json::json!({
                "rows": frame.rows(),
                "columns": frame.width(),
                "dropped_readings": cleaned.dropped,
                "filled_cells": stats.filled_cells,
                "dropped_rows": stats.dropped_rows,
                "config_hash": hash,
            }))
        }
        IngestMode::Live => {
            let mut cfg = cfg;
            if cfg.topics.is_empty() {
                cfg.topics = inv.streams_by_device().into_iter().flat_map(|(_, s)| s).map(|s| s.topic).collect();
                cfg.topics.sort();
                cfg.topics.dedup();
            }
            let (tx, rx) = std::sync::mpsc::channel();
            let sub = subscribe(&cfg, move |r| {
                let _ = tx.send(r);
            })?;
            std::thread::sleep(duration);
            let stats = sub.shutdown();
            info!("live: {stats:?}");
            let readings: Vec<_> = rx.try_iter().collect();
            let mut w = BufWriter::new(std::fs::File::create(out).map_err(|e| with_path(e, out))?);
            write_readings_csv(&readings, &mut w)?;
            w.flush()?;
            write_meta(
                out,
                &ArtifactMeta {
                    kind: "capture".into(),
                    config_hash: hash.clone(),
                    period_seconds: None,
                    columns: None,
                    frame_digest: None,
                },
            )?;
            print_json(&serde_json::json!({
                "readings": readings.len(),
                "messages": stats.messages,
                "malformed": stats.malformed,
                "reconnects": stats.reconnects,
                "config_hash": hash,
            }))
        }
    }
}

fn cmd_synth(file: SynthFile, seed: Option<u64>, out: &Path, truth: Option<&Path>) -> Result<(), CliError> {
    let seed = resolve_seed(seed, file.seed)?;
    let mut scenario = ScenarioConfig::week(seed);
    if let Some(s) = file.start {
        scenario.start = s;
    }
    if let Some(d) = file.days {
        scenario.duration = (d * 86_400.0).round() as i64;
    }
    if let Some(p) = file.grid_period {
        scenario.grid_period = p;
    }
    if let Some(s) = file.streams {
        scenario.streams = s;
    }
    if let Some(s) = file.schedule {
        scenario.schedule = s;
    }
    let clean = generate(&scenario)?;
    let plan = &file.inject;
    let mut log = if plan.points + plan.bursts > 0 {
        reference_injections(&clean, plan.points, plan.sigma, plan.bursts, plan.burst_minutes, seed)?
    } else {
        InjectionLog::default()
    };
    log.entries.extend(plan.entries.iter().cloned());
    let frame = inject(&clean, &log, seed)?;
    log.bind(&frame);
    let hash = config_hash(&(&scenario, plan))?;
    save_frame(out, &frame, &hash)?;
    if let Some(t) = truth {
        let mut w = BufWriter::new(std::fs::File::create(t).map_err(|e| with_path(e, t))?);
        serde_json::to_writer_pretty(&mut w, &log).map_err(sentinel_core::Error::from)?;
        w.flush()?;
        write_meta(
            t,
            &ArtifactMeta {
                kind: "truth".into(),
                config_hash: hash.clone(),
                period_seconds: Some(frame.period()),
                columns: None,
                frame_digest: Some(frame.digest()),
            },
        )?;
    }
    print_json(&serde_json::json!({
        "rows": frame.rows(),
        "columns": frame.width(),
        "injections": log.entries.len(),
        "seed": seed,
        "config_hash": hash,
    }))
}

fn with_path(e: std::io::Error, p: &Path) -> CliError {
    CliError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display())))
}

fn cmd_train(config: &Path, frame_path: &Path, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let mut file: TrainFile = read_toml(config)?;
    let seed = resolve_seed(seed, file.seed)?;
    file.seed = Some(seed);
    seed_detector(&mut file.detector, seed);
    let hash = config_hash(&file)?;
    let (frame, _) = load_frame(existing(frame_path)?)?;
    let (model, timing) = train_model(&frame, &file.condition, &file.stages, &file.detector, &hash)?;
    model.save(out)?;
    print_json(&serde_json::json!({
        "config_hash": hash,
        "detector": model.detector.as_str(),
        "pipeline": model.pipeline.label(),
        "wall_seconds": timing.wall_seconds,
        "epochs": timing.epochs,
    }))
}

fn cmd_detect(model_path: &Path, frame_path: &Path, out: &Path) -> Result<(), CliError> {
    let model = DetectorModel::load(existing(model_path)?)?;
    let (frame, _) = load_frame(existing(frame_path)?)?;
    let verdicts = model.detect(&frame, &model.config_hash)?;
    let mut w = BufWriter::new(std::fs::File::create(out).map_err(|e| with_path(e, out))?);
    write_verdicts_csv(&verdicts, &mut w)?;
    w.flush()?;
    write_meta(
        out,
        &ArtifactMeta {
            kind: "verdicts".into(),
            config_hash: model.config_hash.clone(),
            period_seconds: Some(frame.period()),
            columns: Some(frame.columns().to_vec()),
            frame_digest: Some(frame.digest()),
        },
    )?;
    print_json(&serde_json::json!({
        "verdicts": verdicts.len(),
        "anomalies": verdicts.iter().filter(|v| v.is_anomaly).count(),
    }))
}

fn cmd_eval(verdicts_path: &Path, truth_path: &Path, tolerance: u32, out: Option<&Path>) -> Result<(), CliError> {
    let f = std::fs::File::open(existing(verdicts_path)?)?;
    let verdicts = read_verdicts_csv(BufReader::new(f))?;
    let truth: InjectionLog = serde_json::from_reader(BufReader::new(std::fs::File::open(existing(truth_path)?)?))
        .map_err(|e| CliError::Usage(format!("{}: {e}", truth_path.display())))?;
    let meta = read_meta(verdicts_path)?;
    let produced_from = meta.as_ref().and_then(|m| m.frame_digest.clone());
    if let (Some(a), Some(b)) = (&produced_from, &truth.frame_digest) {
        if a != b {
            return Err(CliError::Usage(format!(
                "{} was produced from frame {a}, but {} describes frame {b}",
                verdicts_path.display(),
                truth_path.display()
            )));
        }
    }
    let c = score(&verdicts, &truth, tolerance)?;
    let report = serde_json::json!({
        "config_hash": meta.map(|m| m.config_hash),
        "tolerance_ticks": tolerance,
        "tp": c.tp,
        "fp": c.fp,
        "tn": c.tn,
        "fn": c.fn_,
        "evaluated": c.evaluated,
        "in_event": c.in_event,
        "precision": c.precision(),
        "recall": c.recall(),
        "false_positive_rate": c.false_positive_rate(),
    });
    if let Some(p) = out {
        let mut w = BufWriter::new(std::fs::File::create(p).map_err(|e| with_path(e, p))?);
        serde_json::to_writer_pretty(&mut w, &report).map_err(sentinel_core::Error::from)?;
        w.flush()?;
    }
    print_json(&report)
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    plan: &Path,
    train: &Path,
    test: Option<&Path>,
    truth: Option<&Path>,
    tolerance: u32,
    seed: Option<u64>,
    workers: Option<usize>,
    results: &Path,
    plot: Option<&Path>,
) -> Result<(), CliError> {
    let mut file: SweepFile = read_toml(plan)?;
    let seed = resolve_seed(seed, file.seed)?;
    for r in &mut file.runs {
        seed_detector(&mut r.detector, seed);
    }
    let data = Dataset {
        train: load_frame(existing(train)?)?.0,
        test: match test {
            Some(p) => Some(load_frame(existing(p)?)?.0),
            None => None,
        },
        truth: match truth {
            Some(p) => Some(
                serde_json::from_reader(BufReader::new(std::fs::File::open(existing(p)?)?))
                    .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
            ),
            None => None,
        },
        tolerance_ticks: tolerance,
    };
    let workers = workers.or(file.workers).unwrap_or(1);
    let mut writer = ResultsWriter::open(results)?;
    let records = benchmark(&file.runs, &data, workers, |r| {
        if let Some(e) = &r.error {
            log::warn!("run {} failed: {e}", r.config_id);
        }
        writer.append(r)
    })?;
    if let Some(p) = plot {
        write_plot_data(&records, p)?;
    }
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    print_json(&serde_json::json!({ "runs": records.len(), "failed": failed }))
}
