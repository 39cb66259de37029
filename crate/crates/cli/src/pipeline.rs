//! Pipeline stages. Each reads its inputs, writes artifacts through
//! [`Artifacts`] and never touches its inputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use coldlab_core::benchmark::{run_benchmark_with_fits, train_pair, BenchmarkConfig, MethodResult, RunStatus, Wiring};
use coldlab_core::metrics::{spearman, MetricReport, METRIC_LABELS};
use coldlab_core::nn::Params;
use coldlab_core::policy::{
    ensemble_policy, fixed_keepalive_policy, ForecastProvider, ModelForecasts, OracleForecasts, Policy, Requirements,
};
use coldlab_core::simulator::{run, SimConfig, SimOutcome, SimReport};
use coldlab_core::tcn::{save_checkpoint, FeatureFrame, ForecastTarget, TcnHyperParams};
use coldlab_core::trace::{
    derive_instances_with, filter_http, filter_min_instances, gap_stats, mean_arrival_rate, parse_durations, parse_raw,
    read_prepared, synth_trace, write_prepared, ArrivalDataset, DurationTable, GapStats,
};
use coldlab_core::training::{landmark_search, CandidateStatus, CvStep, FitState, Phase, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{DataConfig, ForecastSource, RunConfig};
use crate::fail::{CliResult, Failure, Kind};
use crate::manifest::Artifacts;

pub const PREPARED_CSV: &str = "data/prepared.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub records: usize,
    pub functions: usize,
    pub timeline_minutes: u64,
    pub first_minute: Option<u64>,
    pub last_minute: Option<u64>,
    pub mean_arrival_rate_per_minute: f64,
    pub gap_stats: Option<GapStats>,
    /// Raw traces only: HTTP instances before the minimum-instance filter.
    pub http_instances: Option<usize>,
}

/// Loaded dataset plus what was learned while loading it.
pub struct Loaded {
    pub ds: ArrivalDataset,
    pub http_instances: Option<usize>,
}

/// Day number from names like `invocations_per_function_md.anon.d03.csv`;
/// file names count from 1.
fn day_of(name: &str) -> Option<u32> {
    let stem = name.strip_suffix(".csv")?;
    let tail = &stem[stem.rfind(".d")? + 2..];
    tail.parse().ok().filter(|&d| d >= 1)
}

fn raw_files(dir: &Path, marker: &str) -> CliResult<Vec<(u32, PathBuf)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Failure::new(Kind::Data, e).context(format!("listing {}", dir.display())))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        if name.contains(marker) && name.ends_with(".csv") {
            let day = day_of(&name).ok_or_else(|| Failure::msg(Kind::Data, format!("{name}: no day number in file name")))?;
            out.push((day, path));
        }
    }
    out.sort();
    Ok(out)
}

pub fn load_dataset(cfg: &RunConfig, art: &mut Artifacts) -> CliResult<Loaded> {
    match &cfg.data {
        DataConfig::Synth { synth } => Ok(Loaded {
            ds: synth_trace(synth, cfg.seed)?,
            http_instances: None,
        }),
        DataConfig::Prepared { path } => {
            let bytes = art.read_input(path)?;
            let ds = read_prepared(bytes.as_slice()).map_err(|e| Failure::from(e).context(format!("reading {}", path.display())))?;
            Ok(Loaded { ds, http_instances: None })
        }
        DataConfig::Raw {
            dir,
            days,
            keepalive_minutes,
            min_instances,
            durations,
        } => {
            let keep = |d: u32| days.is_empty() || days.contains(&d);
            let mut rows = Vec::new();
            for (day, path) in raw_files(dir, "invocations")?.into_iter().filter(|(d, _)| keep(*d)) {
                let bytes = art.read_input(&path)?;
                let parsed = parse_raw(bytes.as_slice(), day - 1).map_err(|e| Failure::from(e).context(format!("reading {}", path.display())))?;
                rows.extend(filter_http(parsed));
            }
            if rows.is_empty() {
                return Err(Failure::msg(Kind::Data, format!("{}: no invocation tables for the selected days", dir.display())));
            }
            let table = if *durations {
                let mut readers = Vec::new();
                for (_, path) in raw_files(dir, "durations")?.into_iter().filter(|(d, _)| keep(*d)) {
                    readers.push(std::io::Cursor::new(art.read_input(&path)?));
                }
                parse_durations(readers)?
            } else {
                DurationTable::new()
            };
            let all = derive_instances_with(&rows, *keepalive_minutes, &table)?;
            let http_instances = Some(all.len());
            Ok(Loaded {
                ds: filter_min_instances(&all, *min_instances),
                http_instances,
            })
        }
    }
}

pub fn summarize(loaded: &Loaded) -> DataSummary {
    let ds = &loaded.ds;
    DataSummary {
        records: ds.len(),
        functions: ds.vocab_size(),
        timeline_minutes: ds.timeline_minutes(),
        first_minute: ds.records().first().map(|r| r.arrival_minute),
        last_minute: ds.records().last().map(|r| r.arrival_minute),
        mean_arrival_rate_per_minute: mean_arrival_rate(ds),
        gap_stats: gap_stats(ds).ok(),
        http_instances: loaded.http_instances,
    }
}

pub fn stage_data(loaded: &Loaded, art: &mut Artifacts) -> CliResult<DataSummary> {
    let mut csv = Vec::new();
    write_prepared(&loaded.ds, &mut csv)?;
    art.bytes(PREPARED_CSV, &csv)?;
    let summary = summarize(loaded);
    art.json("data/summary.json", &summary)?;
    Ok(summary)
}

/// A trained module pair.
pub struct Fits {
    pub a: FitState,
    pub b: FitState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub rank: usize,
    pub phase: String,
    pub n_blocks: usize,
    pub cells_per_block: usize,
    pub hidden_channels: usize,
    pub lr: f64,
    pub status: String,
    pub nrmse: Option<f64>,
    pub spearman: Option<f64>,
    pub n_points: usize,
    pub param_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub hp: TcnHyperParams,
    pub lr: f64,
    pub module_a: Option<MetricReport>,
    pub module_b_observed: Option<MetricReport>,
    pub module_b_predicted: Option<MetricReport>,
    /// Spearman of module B on its latest validation step, floored at 0.
    pub confidence: f64,
    pub budget_exhausted: bool,
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn leaderboard_csv(rows: &[LeaderboardRow]) -> String {
    let mut s = String::from("rank,phase,n_blocks,cells_per_block,hidden_channels,lr,status,nrmse,spearman,n_points,param_count\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.rank,
            r.phase,
            r.n_blocks,
            r.cells_per_block,
            r.hidden_channels,
            r.lr,
            r.status,
            opt(r.nrmse),
            opt(r.spearman),
            r.n_points,
            r.param_count
        );
    }
    s
}

fn status_label(s: &CandidateStatus) -> String {
    match s {
        CandidateStatus::Ok => "ok".into(),
        CandidateStatus::BudgetExhausted => "budget_exhausted".into(),
        CandidateStatus::ResourceSkip { estimate_bytes } => format!("resource_skip({estimate_bytes} bytes)"),
        CandidateStatus::Failed(m) => format!("failed({})", m.replace(',', ";")),
    }
}

/// Frame matching the normalisation the fit's final weights were trained with.
pub fn final_frame(ds: &ArrivalDataset, fit: &FitState) -> CliResult<FeatureFrame> {
    let range = fit.steps.last().map_or(0..fit.model.hp.horizon, |s| s.train_range.clone());
    Ok(FeatureFrame::new(ds, fit.model.target, range)?)
}

/// Module B's Spearman on its latest validation step, read with the names
/// module A predicted, floored at 0.
pub fn confidence(fit_b: &FitState) -> f64 {
    let Some(last) = fit_b.steps.last() else { return 0.0 };
    let pred = if last.named_predictions.is_empty() {
        &last.predictions
    } else {
        &last.named_predictions
    };
    spearman(&last.truth, pred).map_or(0.0, |r| r.max(0.0))
}

fn pooled_named(fit: &FitState) -> (Vec<f64>, Vec<f64>) {
    let mut y = Vec::new();
    let mut p = Vec::new();
    for s in fit.steps.iter().filter(|s| !s.named_predictions.is_empty()) {
        y.extend(&s.truth);
        p.extend(&s.named_predictions);
    }
    (y, p)
}

#[derive(Serialize)]
struct Timings {
    module_a_secs: f64,
    module_b_secs: f64,
}

pub fn stage_train(cfg: &RunConfig, ds: &ArrivalDataset, art: &mut Artifacts) -> CliResult<(Fits, bool)> {
    let (hp, train_cfg, mut board) = match &cfg.search {
        Some(space) => {
            let outcome = landmark_search(space, ds, ForecastTarget::ArrivalTime, &cfg.train, cfg.seed)?;
            let (cand, _) = outcome
                .best
                .ok_or_else(|| Failure::msg(Kind::Internal, "search produced no usable candidate"))?;
            let rows: Vec<LeaderboardRow> = outcome
                .leaderboard
                .iter()
                .map(|e| LeaderboardRow {
                    rank: e.rank,
                    phase: match e.phase {
                        Phase::Landmark => "landmark".into(),
                        Phase::Refinement => "refinement".into(),
                    },
                    n_blocks: e.candidate.n_blocks,
                    cells_per_block: e.candidate.cells_per_block,
                    hidden_channels: e.candidate.hidden_channels,
                    lr: e.candidate.lr,
                    status: status_label(&e.status),
                    nrmse: e.score.map(|s| s.nrmse),
                    spearman: e.score.and_then(|s| s.spearman),
                    n_points: e.score.map_or(0, |s| s.n_points),
                    param_count: e.param_count,
                })
                .collect();
            (space.hyper_params(&cand), TrainConfig { lr: cand.lr, ..cfg.train }, rows)
        }
        None => (cfg.model, cfg.train, Vec::new()),
    };
    let (mut a, mut b) = train_pair(ds, &hp, &train_cfg, cfg.seed)?;
    let timings = Timings {
        module_a_secs: a.elapsed_secs,
        module_b_secs: b.elapsed_secs,
    };
    a.elapsed_secs = 0.0;
    b.elapsed_secs = 0.0;
    if board.is_empty() {
        let score = b.validation_score();
        board.push(LeaderboardRow {
            rank: 1,
            phase: "fixed".into(),
            n_blocks: hp.n_blocks,
            cells_per_block: hp.cells_per_block,
            hidden_channels: hp.hidden_channels,
            lr: train_cfg.lr,
            status: if b.budget_exhausted { "budget_exhausted".into() } else { "ok".into() },
            nrmse: score.map(|s| s.nrmse),
            spearman: score.and_then(|s| s.spearman),
            n_points: score.map_or(0, |s| s.n_points),
            param_count: b.model.param_count(),
        });
    }

    for (name, fit) in [("module_a", &a), ("module_b", &b)] {
        let frame = final_frame(ds, fit)?;
        let rel = format!("train/{name}.ckpt");
        std::fs::create_dir_all(art.path("train"))?;
        save_checkpoint(&fit.model, Some(frame.stats()), &art.path(&rel))?;
        art.adopt(&rel)?;
        art.json(&format!("train/fit_{}.json", &name[7..]), fit)?;
    }
    art.json("train/leaderboard.json", &board)?;
    art.text("train/leaderboard.csv", &leaderboard_csv(&board))?;
    let guard = cfg.metrics.mape_guard;
    let report = |(y, p): (Vec<f64>, Vec<f64>)| MetricReport::compute(&y, &p, guard).ok();
    let budget_exhausted = a.budget_exhausted || b.budget_exhausted;
    let summary = TrainSummary {
        hp,
        lr: train_cfg.lr,
        module_a: report(a.pooled()),
        module_b_observed: report(b.pooled()),
        module_b_predicted: report(pooled_named(&b)),
        confidence: confidence(&b),
        budget_exhausted,
    };
    art.json("train/summary.json", &summary)?;
    art.untracked_json("train/timings.json", &timings)?;
    Ok((Fits { a, b }, budget_exhausted))
}

pub fn load_fits(dir: &Path, art: &mut Artifacts) -> CliResult<Fits> {
    let read = |art: &mut Artifacts, name: &str| -> CliResult<FitState> {
        let path = dir.join(name);
        if !path.exists() {
            return Err(Failure::msg(
                Kind::Config,
                format!("{} not found; run `coldlab train` first or pass --checkpoints", path.display()),
            ));
        }
        let bytes = art.read_input(&path)?;
        serde_json::from_slice(&bytes).map_err(|e| Failure::new(Kind::Data, e).context(format!("parsing {}", path.display())))
    };
    Ok(Fits {
        a: read(art, "fit_a.json")?,
        b: read(art, "fit_b.json")?,
    })
}

/// The evaluate stage's JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub steps: Vec<CvStep>,
    pub results: Vec<MethodResult>,
}

fn column(r: &MethodResult) -> String {
    match r.wiring {
        None => r.method.clone(),
        Some(Wiring::Observed) => format!("{} (observed names)", r.method),
        Some(Wiring::Predicted) => format!("{} (predicted names)", r.method),
    }
}

fn cell(r: &MethodResult, metric: usize, full: bool) -> String {
    match (&r.status, &r.report) {
        (RunStatus::NotRun { .. }, _) => "not run".into(),
        (RunStatus::Failed { .. }, _) | (_, None) => "failed".into(),
        (RunStatus::Ran, Some(rep)) => match rep.rows()[metric].1 {
            Some(v) if full => v.to_string(),
            Some(v) => format!("{v:.4}"),
            None => "undefined".into(),
        },
    }
}

fn module_results(results: &[MethodResult], target: ForecastTarget) -> Vec<&MethodResult> {
    results.iter().filter(|r| r.target == target).collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One row per metric, one column per method.
pub fn table_csv(results: &[MethodResult], target: ForecastTarget) -> String {
    let rs = module_results(results, target);
    let mut s = String::from("Metric");
    for r in &rs {
        s.push(',');
        s.push_str(&csv_field(&column(r)));
    }
    s.push('\n');
    for (m, label) in METRIC_LABELS.iter().enumerate() {
        s.push_str(label);
        for r in &rs {
            s.push(',');
            s.push_str(&cell(r, m, true));
        }
        s.push('\n');
    }
    s
}

pub fn table_md(results: &[MethodResult], target: ForecastTarget) -> String {
    let rs = module_results(results, target);
    let mut s = String::from("| Metric |");
    for r in &rs {
        let _ = write!(s, " {} |", column(r));
    }
    s.push_str("\n|---|");
    for _ in &rs {
        s.push_str("---|");
    }
    s.push('\n');
    for (m, label) in METRIC_LABELS.iter().enumerate() {
        let _ = write!(s, "| {label} |");
        for r in &rs {
            let _ = write!(s, " {} |", cell(r, m, false));
        }
        s.push('\n');
    }
    s
}

fn predictions_csv(eval: &Evaluation, truth: &[f64], target: ForecastTarget) -> String {
    let rs: Vec<&MethodResult> = module_results(&eval.results, target)
        .into_iter()
        .filter(|r| r.predictions.len() == truth.len())
        .collect();
    let mut s = String::from("record,truth");
    for r in &rs {
        s.push(',');
        s.push_str(&csv_field(&column(r)));
    }
    s.push('\n');
    let records = eval.steps.iter().flat_map(|st| st.predict_range.clone());
    for (i, rec) in records.enumerate() {
        let _ = write!(s, "{rec},{}", truth[i]);
        for r in &rs {
            let _ = write!(s, ",{}", r.predictions[i]);
        }
        s.push('\n');
    }
    s
}

fn wiring_label(w: Option<Wiring>) -> &'static str {
    match w {
        None => "",
        Some(Wiring::Observed) => "observed",
        Some(Wiring::Predicted) => "predicted",
    }
}

/// Long format: every metric per validation step, then pooled as step "all".
fn metrics_by_step_rows(s: &mut String, eval: &Evaluation, truth: &[f64], target: ForecastTarget, module: &str, guard: bool) {
    let mut emit = |r: &MethodResult, step: &str, rep: Option<&MetricReport>| {
        for (m, label) in METRIC_LABELS.iter().enumerate() {
            let v = rep.and_then(|rep| rep.rows()[m].1).map_or("undefined".into(), |v| v.to_string());
            let _ = writeln!(s, "{module},{},{},{step},{label},{v}", r.method, wiring_label(r.wiring));
        }
    };
    for r in module_results(&eval.results, target) {
        if r.status != RunStatus::Ran || r.predictions.len() != truth.len() {
            continue;
        }
        let mut at = 0;
        for st in eval.steps.iter().filter(|st| !st.predict_range.is_empty()) {
            let n = st.predict_range.len();
            let rep = MetricReport::compute(&truth[at..at + n], &r.predictions[at..at + n], guard).ok();
            emit(r, &st.step_index.to_string(), rep.as_ref());
            at += n;
        }
        emit(r, "all", r.report.as_ref());
    }
}

pub fn stage_evaluate(cfg: &RunConfig, ds: &ArrivalDataset, fits: Fits, art: &mut Artifacts) -> CliResult<Evaluation> {
    let bcfg = BenchmarkConfig {
        hp: fits.b.model.hp,
        train: cfg.train,
        mape_guard: cfg.metrics.mape_guard,
        arima_holdout: cfg.metrics.arima_holdout,
    };
    let rep = run_benchmark_with_fits(ds, &bcfg, fits.a, fits.b)?;
    let eval = Evaluation {
        steps: rep.steps.clone(),
        results: rep.results.clone(),
    };
    art.json("evaluate/benchmark.json", &eval)?;
    let mut by_step = String::from("module,method,wiring,step,metric,value\n");
    for (name, target, truth) in [
        ("module_a", ForecastTarget::FunctionName, &rep.truth_a),
        ("module_b", ForecastTarget::ArrivalTime, &rep.truth_b),
    ] {
        art.text(&format!("evaluate/{name}.csv"), &table_csv(&eval.results, target))?;
        art.text(&format!("evaluate/{name}.md"), &table_md(&eval.results, target))?;
        art.text(&format!("evaluate/predictions_{name}.csv"), &predictions_csv(&eval, truth, target))?;
        metrics_by_step_rows(&mut by_step, &eval, truth, target, name, cfg.metrics.mape_guard);
    }
    art.text("evaluate/metrics_by_step.csv", &by_step)?;
    Ok(eval)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRow {
    pub policy: String,
    pub report: SimReport,
    pub policy_flags: Vec<String>,
}

fn sim_csv(rows: &[SimRow]) -> String {
    let mut s = String::from(
        "policy,arrivals,cold_count,warm_count,cold_fraction,warm_idle_node_minutes,shell_idle_node_minutes,mean_latency_minutes,p95_latency_minutes,nodes_provisioned,shells_provisioned,actions_applied,actions_rejected\n",
    );
    for row in rows {
        let r = &row.report;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            row.policy,
            r.arrivals_total,
            r.cold_count,
            r.warm_count,
            r.cold_fraction,
            r.warm_idle_node_minutes,
            r.shell_idle_node_minutes,
            r.mean_latency_minutes,
            r.p95_latency_minutes,
            r.nodes_provisioned,
            r.shells_provisioned,
            r.actions_applied,
            r.actions_rejected
        );
    }
    s
}

fn provider(cfg: &RunConfig, ds: &ArrivalDataset, fits: Option<&Fits>) -> CliResult<Box<dyn ForecastProvider>> {
    match cfg.policy.forecasts {
        ForecastSource::Oracle => Ok(Box::new(OracleForecasts::from_dataset(ds, cfg.horizon()))),
        ForecastSource::Model => {
            let f = fits.ok_or_else(|| Failure::msg(Kind::Config, "model forecasts need trained fits"))?;
            Ok(Box::new(ModelForecasts::new(
                ds,
                f.a.model.clone(),
                final_frame(ds, &f.a)?,
                f.b.model.clone(),
                final_frame(ds, &f.b)?,
                confidence(&f.b),
            )))
        }
    }
}

pub fn stage_simulate(cfg: &RunConfig, ds: &ArrivalDataset, fits: Option<&Fits>, art: &mut Artifacts) -> CliResult<Vec<SimRow>> {
    let mut runs: Vec<(String, SimConfig, Box<dyn Policy>)> = Vec::new();
    for &k in &cfg.policy.keepalive_sweep {
        let sim = SimConfig {
            keepalive_minutes: Some(k),
            ..cfg.sim
        };
        runs.push((format!("fixed-{k}"), sim, Box::new(fixed_keepalive_policy(Some(k)))));
    }
    let req = Requirements::from_dataset(ds, cfg.sim.bind_latency());
    let ens = ensemble_policy(provider(cfg, ds, fits)?, req, cfg.policy.ensemble, cfg.sim.tick_minutes)?;
    runs.push((ens.name(), cfg.sim, Box::new(ens)));

    let mut rows = Vec::new();
    for (name, sim, mut policy) in runs {
        let SimOutcome {
            report,
            log,
            policy_flags,
        } = run(ds, &sim, policy.as_mut())?;
        let mut events = Vec::new();
        log.write_ndjson(&mut events)?;
        art.bytes(&format!("simulate/{name}.events.ndjson"), &events)?;
        let row = SimRow {
            policy: name.clone(),
            report,
            policy_flags,
        };
        art.json(&format!("simulate/{name}.json"), &row)?;
        rows.push(row);
    }
    art.json("simulate/summary.json", &rows)?;
    art.text("simulate/summary.csv", &sim_csv(&rows))?;
    Ok(rows)
}

/// Outputs of earlier stages in the same directory; not recorded as inputs.
fn read_json<T: for<'de> Deserialize<'de>>(art: &Artifacts, rel: &str) -> CliResult<Option<T>> {
    let path = art.path(rel);
    if !path.exists() {
        return Ok(None);
    }
    let bytes = std::fs::read(&path)?;
    serde_json::from_slice(&bytes)
        .map(Some)
        .map_err(|e| Failure::new(Kind::Data, e).context(format!("parsing {}", path.display())))
}

#[derive(Debug, Serialize)]
struct ReportDoc {
    data: Option<DataSummary>,
    train: Option<TrainSummary>,
    evaluate: Option<Evaluation>,
    simulate: Option<Vec<SimRow>>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("undefined".into(), |x| format!("{x:.4}"))
}

fn render_md(doc: &ReportDoc) -> String {
    let mut s = String::from("# coldlab run summary\n");
    if let Some(d) = &doc.data {
        let _ = write!(
            s,
            "\n## Data\n\n- records: {}\n- functions: {}\n- mean arrival rate: {:.3} per minute\n",
            d.records, d.functions, d.mean_arrival_rate_per_minute
        );
        if let Some(g) = d.gap_stats {
            let _ = writeln!(s, "- mean gap: {:.3} rows, {:.3} minutes", g.mean_gap_rows, g.mean_gap_minutes);
        }
        if let Some(n) = d.http_instances {
            let _ = writeln!(s, "- HTTP instances before filtering: {n}");
        }
    }
    if let Some(t) = &doc.train {
        let h = &t.hp;
        let _ = write!(
            s,
            "\n## Training\n\n- blocks {}, cells {}, channels {}, context {}, horizon {}, lr {}\n- module A Spearman: {}\n- module B Spearman (observed names): {}\n- module B Spearman (predicted names): {}\n- forecast confidence: {:.4}\n",
            h.n_blocks,
            h.cells_per_block,
            h.hidden_channels,
            h.context,
            h.horizon,
            t.lr,
            fmt_opt(t.module_a.as_ref().and_then(|r| r.spearman)),
            fmt_opt(t.module_b_observed.as_ref().and_then(|r| r.spearman)),
            fmt_opt(t.module_b_predicted.as_ref().and_then(|r| r.spearman)),
            t.confidence
        );
        if t.budget_exhausted {
            s.push_str("- training stopped on its wall-clock budget\n");
        }
    }
    if let Some(e) = &doc.evaluate {
        s.push_str("\n## Predicting function names (module A)\n\n");
        s.push_str(&table_md(&e.results, ForecastTarget::FunctionName));
        s.push_str("\n## Predicting arrival gaps (module B)\n\n");
        s.push_str(&table_md(&e.results, ForecastTarget::ArrivalTime));
    }
    if let Some(rows) = &doc.simulate {
        s.push_str("\n## Simulation\n\n| Policy | Cold fraction | Warm-idle node-minutes | Mean latency (min) | Nodes provisioned |\n|---|---|---|---|---|\n");
        for r in rows {
            let _ = writeln!(
                s,
                "| {} | {:.4} | {:.1} | {:.4} | {} |",
                r.policy,
                r.report.cold_fraction,
                r.report.warm_idle_node_minutes,
                r.report.mean_latency_minutes,
                r.report.nodes_provisioned
            );
        }
    }
    s
}

fn long_csv(doc: &ReportDoc) -> String {
    let mut s = String::from("module,method,wiring,status,metric,value\n");
    if let Some(e) = &doc.evaluate {
        for r in &e.results {
            let module = match r.target {
                ForecastTarget::FunctionName => "A",
                ForecastTarget::ArrivalTime => "B",
            };
            let wiring = match r.wiring {
                None => "",
                Some(Wiring::Observed) => "observed",
                Some(Wiring::Predicted) => "predicted",
            };
            let status = match r.status {
                RunStatus::Ran => "ran",
                RunStatus::NotRun { .. } => "not_run",
                RunStatus::Failed { .. } => "failed",
            };
            for (m, label) in METRIC_LABELS.iter().enumerate() {
                let value = r.report.as_ref().and_then(|rep| rep.rows()[m].1);
                let _ = writeln!(s, "{module},{},{wiring},{status},{label},{}", csv_field(&r.method), opt(value));
            }
        }
    }
    s
}

pub fn stage_report(art: &mut Artifacts) -> CliResult<()> {
    let doc = ReportDoc {
        data: read_json(art, "data/summary.json")?,
        train: read_json(art, "train/summary.json")?,
        evaluate: read_json(art, "evaluate/benchmark.json")?,
        simulate: read_json(art, "simulate/summary.json")?,
    };
    if doc.data.is_none() && doc.train.is_none() && doc.evaluate.is_none() && doc.simulate.is_none() {
        return Err(Failure::msg(Kind::Data, format!("{}: no stage outputs to report on", art.root().display())));
    }
    let v: Value = serde_json::to_value(&doc)?;
    art.json("report/summary.json", &v)?;
    art.text("report/summary.md", &render_md(&doc))?;
    art.text("report/metrics_long.csv", &long_csv(&doc))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn day_numbers_from_trace_names() {
        assert_eq!(day_of("invocations_per_function_md.anon.d03.csv"), Some(3));
        assert_eq!(day_of("function_durations_percentiles.anon.d14.csv"), Some(14));
        assert_eq!(day_of("notes.csv"), None);
        assert_eq!(day_of("x.d00.csv"), None);
    }

    #[test]
    fn tables_have_one_row_per_metric() {
        let rep = MetricReport::compute(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0], true).unwrap();
        let results = vec![
            MethodResult {
                method: "TCN".into(),
                target: ForecastTarget::ArrivalTime,
                wiring: Some(Wiring::Observed),
                status: RunStatus::Ran,
                report: Some(rep),
                predictions: vec![1.0, 3.0, 2.0],
            },
            MethodResult {
                method: "Prophet".into(),
                target: ForecastTarget::ArrivalTime,
                wiring: None,
                status: RunStatus::NotRun { reason: "x".into() },
                report: None,
                predictions: vec![],
            },
        ];
        let csv = table_csv(&results, ForecastTarget::ArrivalTime);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "Metric,TCN (observed names),Prophet");
        assert_eq!(lines.len(), 1 + METRIC_LABELS.len());
        assert_eq!(lines[5], "Spearman Correlation,0.5,not run");
        assert!(table_csv(&results, ForecastTarget::FunctionName).lines().count() == 1 + METRIC_LABELS.len());
    }
}
