//! `coldlab`: ingest or synthesize traces, train and evaluate forecasters,
//! simulate keep-alive policies, and report.

mod config;
mod fail;
mod manifest;
mod pipeline;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{DataConfig, ForecastSource, Profile, RunConfig, Stage};
use fail::{CliResult, Failure, Kind};
use manifest::{Artifacts, Extra, Manifest};
use pipeline::Fits;

#[derive(Parser)]
#[command(name = "coldlab", version, about = "Serverless cold-start laboratory")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON overrides merged onto the profile preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "tiny")]
    profile: Profile,
    #[arg(long, default_value = "coldlab-out")]
    out: PathBuf,
    /// Report unguarded MAPE (zero targets make it undefined).
    #[arg(long)]
    no_guard: bool,
    /// Prepared CSV, or a raw trace directory.
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct WithFits {
    #[command(flatten)]
    common: Common,
    /// Directory holding fit_a.json and fit_b.json; defaults to <out>/train.
    #[arg(long)]
    checkpoints: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Raw trace directory or prepared CSV to a prepared CSV.
    Ingest(Common),
    /// Synthetic trace to a prepared CSV.
    Synth(Common),
    /// Train modules A and B; write checkpoints and a leaderboard.
    Train(Common),
    /// Benchmark trained modules against the baselines.
    Evaluate(WithFits),
    /// Replay the trace under fixed keep-alive and the ensemble policy.
    Simulate(WithFits),
    /// Consolidate the outputs found in --out.
    Report(Common),
    /// Every stage listed in the config, in order.
    Run(Common),
    /// Re-execute a manifest into --out and compare artifact digests.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve(c: &Common) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(c.profile, c.config.as_deref())?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if c.no_guard {
        cfg.metrics.mape_guard = false;
    }
    if let Some(input) = &c.input {
        cfg.data = if input.is_dir() {
            match cfg.data {
                DataConfig::Raw {
                    days,
                    keepalive_minutes,
                    min_instances,
                    durations,
                    ..
                } => DataConfig::Raw {
                    dir: input.clone(),
                    days,
                    keepalive_minutes,
                    min_instances,
                    durations,
                },
                _ => RunConfig::resolve(
                    c.profile,
                    Some(serde_json::json!({"data": {"source": "raw", "dir": input}})),
                )?
                .data,
            }
        } else {
            DataConfig::Prepared { path: input.clone() }
        };
    }
    // manifests must re-run from any working directory
    match &mut cfg.data {
        DataConfig::Prepared { path } => *path = absolute(path)?,
        DataConfig::Raw { dir, .. } => *dir = absolute(dir)?,
        DataConfig::Synth { .. } => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn absolute(p: &Path) -> CliResult<PathBuf> {
    std::path::absolute(p).map_err(|e| Failure::new(Kind::Config, e).context(format!("resolving {}", p.display())))
}

/// Result of one command: its manifest, and whether a stage ran out of budget.
struct Done {
    manifest: Manifest,
    budget_exhausted: bool,
}

fn execute(command: &str, cfg: &RunConfig, out: &Path, checkpoints: Option<PathBuf>) -> CliResult<Done> {
    let mut art = Artifacts::new(out);
    let mut extra = Extra::default();
    let mut budget_exhausted = false;
    let fits_dir = || checkpoints.clone().map_or_else(|| absolute(&out.join("train")), Ok);
    match command {
        "ingest" | "synth" => {
            if command == "synth" && !matches!(cfg.data, DataConfig::Synth { .. }) {
                return Err(Failure::msg(Kind::Config, "synth needs a synthetic data source"));
            }
            let loaded = pipeline::load_dataset(cfg, &mut art)?;
            let s = pipeline::stage_data(&loaded, &mut art)?;
            println!("{} records, {} functions -> {}", s.records, s.functions, art.path(pipeline::PREPARED_CSV).display());
        }
        "train" => {
            let loaded = pipeline::load_dataset(cfg, &mut art)?;
            let (fits, exhausted) = pipeline::stage_train(cfg, &loaded.ds, &mut art)?;
            budget_exhausted = exhausted;
            print_train(&fits);
        }
        "evaluate" => {
            let loaded = pipeline::load_dataset(cfg, &mut art)?;
            let dir = fits_dir()?;
            let fits = pipeline::load_fits(&dir, &mut art)?;
            extra.checkpoints = Some(dir);
            pipeline::stage_evaluate(cfg, &loaded.ds, fits, &mut art)?;
            println!("{}", std::fs::read_to_string(art.path("evaluate/module_b.md"))?);
        }
        "simulate" => {
            let loaded = pipeline::load_dataset(cfg, &mut art)?;
            let fits = if cfg.policy.forecasts == ForecastSource::Model {
                let dir = fits_dir()?;
                let f = pipeline::load_fits(&dir, &mut art)?;
                extra.checkpoints = Some(dir);
                Some(f)
            } else {
                None
            };
            let rows = pipeline::stage_simulate(cfg, &loaded.ds, fits.as_ref(), &mut art)?;
            print_sim(&rows);
        }
        "report" => {
            pipeline::stage_report(&mut art)?;
            println!("{}", art.path("report/summary.md").display());
        }
        "run" => {
            let loaded = pipeline::load_dataset(cfg, &mut art)?;
            let mut fits: Option<Fits> = None;
            for stage in &cfg.stages {
                match stage {
                    Stage::Data => {
                        pipeline::stage_data(&loaded, &mut art)?;
                    }
                    Stage::Train => {
                        let (f, exhausted) = pipeline::stage_train(cfg, &loaded.ds, &mut art)?;
                        print_train(&f);
                        fits = Some(f);
                        if exhausted {
                            budget_exhausted = true;
                            break;
                        }
                    }
                    Stage::Evaluate => {
                        let f = fits.take().map_or_else(|| pipeline::load_fits(&fits_dir()?, &mut art), Ok)?;
                        // evaluation consumes the fits; keep a copy for simulation
                        let keep = Fits {
                            a: f.a.clone(),
                            b: f.b.clone(),
                        };
                        pipeline::stage_evaluate(cfg, &loaded.ds, f, &mut art)?;
                        fits = Some(keep);
                    }
                    Stage::Simulate => {
                        if fits.is_none() && cfg.policy.forecasts == ForecastSource::Model {
                            fits = Some(pipeline::load_fits(&fits_dir()?, &mut art)?);
                        }
                        let rows = pipeline::stage_simulate(cfg, &loaded.ds, fits.as_ref(), &mut art)?;
                        print_sim(&rows);
                    }
                    Stage::Report => pipeline::stage_report(&mut art)?,
                }
            }
        }
        other => return Err(Failure::msg(Kind::Config, format!("unknown command {other:?}"))),
    }
    let manifest = art.finish(command, cfg, &extra);
    let rel = if command == "run" {
        "manifest.json".to_string()
    } else {
        format!("manifests/{command}.json")
    };
    art.untracked_json(&rel, &manifest)?;
    Ok(Done {
        manifest,
        budget_exhausted,
    })
}

fn print_train(f: &Fits) {
    let show = |fit: &coldlab_core::training::FitState| {
        fit.validation_score()
            .and_then(|s| s.spearman)
            .map_or("undefined".into(), |r| format!("{r:.4}"))
    };
    println!("module A validation Spearman {}", show(&f.a));
    println!("module B validation Spearman {}", show(&f.b));
}

fn print_sim(rows: &[pipeline::SimRow]) {
    println!("{:<22} {:>13} {:>16}", "policy", "cold_fraction", "warm_idle_min");
    for r in rows {
        println!("{:<22} {:>13.4} {:>16.1}", r.policy, r.report.cold_fraction, r.report.warm_idle_node_minutes);
    }
}

fn replay(manifest_path: &Path, out: &Path) -> CliResult<Done> {
    let old = Manifest::read(manifest_path)?;
    for input in &old.inputs {
        let now = std::fs::read(&input.path).map(|b| manifest::sha256_hex(&b));
        if now.as_deref().ok() != Some(input.sha256.as_str()) {
            eprintln!("warning: input {} changed since the manifest was written", input.path);
        }
    }
    let done = execute(&old.command, &old.config, out, old.checkpoints.clone())?;
    let mut mismatched: Vec<String> = Vec::new();
    for a in &old.artifacts {
        match done.manifest.artifacts.iter().find(|b| b.path == a.path) {
            Some(b) if b.sha256 == a.sha256 => {}
            Some(_) => mismatched.push(format!("{} differs", a.path)),
            None => mismatched.push(format!("{} missing", a.path)),
        }
    }
    for b in &done.manifest.artifacts {
        if !old.artifacts.iter().any(|a| a.path == b.path) {
            mismatched.push(format!("{} not in the original run", b.path));
        }
    }
    if !mismatched.is_empty() {
        return Err(Failure::msg(Kind::Internal, format!("replay diverged: {}", mismatched.join("; "))));
    }
    println!("replay matched {} artifacts", old.artifacts.len());
    Ok(done)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, out) = match &cli.cmd {
        Cmd::Ingest(c) => ("ingest", c.out.clone()),
        Cmd::Synth(c) => ("synth", c.out.clone()),
        Cmd::Train(c) => ("train", c.out.clone()),
        Cmd::Evaluate(w) => ("evaluate", w.common.out.clone()),
        Cmd::Simulate(w) => ("simulate", w.common.out.clone()),
        Cmd::Report(c) => ("report", c.out.clone()),
        Cmd::Run(c) => ("run", c.out.clone()),
        Cmd::Replay { out, .. } => ("replay", out.clone()),
    };
    let result = match &cli.cmd {
        Cmd::Ingest(c) | Cmd::Synth(c) | Cmd::Train(c) | Cmd::Report(c) | Cmd::Run(c) => {
            resolve(c).and_then(|cfg| execute(name, &cfg, &c.out, None))
        }
        Cmd::Evaluate(w) | Cmd::Simulate(w) => resolve(&w.common).and_then(|cfg| {
            let dir = w.checkpoints.as_deref().map(absolute).transpose()?;
            execute(name, &cfg, &w.common.out, dir)
        }),
        Cmd::Replay { manifest, out } => replay(manifest, out),
    };
    let failure = match result {
        Ok(done) if done.budget_exhausted => Some(Failure::msg(
            Kind::Budget,
            "training stopped on its wall-clock budget; artifacts are partial",
        )),
        Ok(_) => None,
        Err(f) => Some(f),
    };
    match failure {
        None => ExitCode::SUCCESS,
        Some(f) => {
            eprintln!("coldlab {name}: {f}");
            f.log(&out, name);
            ExitCode::from(f.kind.exit_code())
        }
    }
}
