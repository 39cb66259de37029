use coldlab_core::policy::{
    ensemble_policy, EnsembleConfig, FaultyForecasts, ForecastWindow, OracleForecasts, RecordedForecasts, Requirements,
};
use coldlab_core::simulator::{run, run_fixed, SimConfig, SimReport};
use coldlab_core::trace::{synth_trace, ArrivalDataset, GapLaw, SynthConfig};

const SWEEP: [f64; 5] = [1.0, 5.0, 10.0, 20.0, 60.0];

fn trace(seed: u64) -> ArrivalDataset {
    let mut cfg = SynthConfig::new(20, 60, GapLaw::Poisson { mean_gap: 15.0 });
    cfg.start_stagger = 3;
    synth_trace(&cfg, seed).unwrap()
}

fn oracle_ensemble(ds: &ArrivalDataset, cfg: &SimConfig, floor: Option<f64>) -> SimReport {
    let p = OracleForecasts::from_dataset(ds, 200);
    let req = Requirements::from_dataset(ds, cfg.bind_latency());
    let ecfg = EnsembleConfig {
        confidence_floor: floor,
        ..EnsembleConfig::default()
    };
    let mut pol = ensemble_policy(Box::new(p), req, ecfg, cfg.tick_minutes).unwrap();
    run(ds, cfg, &mut pol).unwrap().report
}

/// Lowest cold fraction; ties go to less idle time.
fn best_fixed(ds: &ArrivalDataset, cfg: &SimConfig) -> (f64, SimReport) {
    SWEEP
        .iter()
        .map(|&k| (k, run_fixed(ds, cfg, Some(k)).unwrap().report))
        .min_by(|a, b| {
            a.1.cold_fraction
                .total_cmp(&b.1.cold_fraction)
                .then(a.1.warm_idle_node_minutes.total_cmp(&b.1.warm_idle_node_minutes))
        })
        .unwrap()
}

#[test]
fn infinite_floor_is_fixed_keepalive() {
    let ds = trace(1);
    for k in SWEEP {
        let cfg = SimConfig::with_keepalive(Some(k));
        let fixed = run_fixed(&ds, &cfg, Some(k)).unwrap().report;
        assert_eq!(oracle_ensemble(&ds, &cfg, None), fixed);
    }
}

#[test]
fn oracle_ensemble_beats_best_fixed() {
    for seed in [1, 2, 3] {
        let ds = trace(seed);
        let base = SimConfig::default();
        let (k, best) = best_fixed(&ds, &base);
        let cfg = SimConfig::with_keepalive(Some(k));
        let ens = oracle_ensemble(&ds, &cfg, Some(0.5));
        assert!(ens.cold_fraction < best.cold_fraction, "seed {seed}: {} vs {}", ens.cold_fraction, best.cold_fraction);
        assert!(ens.warm_idle_node_minutes <= best.warm_idle_node_minutes);
        assert_eq!(ens.actions_rejected, 0);
    }
}

#[test]
fn forecast_failure_falls_back_and_is_flagged() {
    let ds = trace(4);
    let cfg = SimConfig::with_keepalive(Some(10.0));
    let inner = OracleForecasts::from_dataset(&ds, 200);
    let req = Requirements::from_dataset(&ds, cfg.bind_latency());
    let mut pol = ensemble_policy(
        Box::new(FaultyForecasts::new(Box::new(inner), 0)),
        req,
        EnsembleConfig::default(),
        1.0,
    )
    .unwrap();
    let out = run(&ds, &cfg, &mut pol).unwrap();
    assert_eq!(out.report, run_fixed(&ds, &cfg, Some(10.0)).unwrap().report);
    assert!(out.policy_flags.iter().any(|f| f.starts_with("forecast_failure")));
}

#[test]
fn stale_recorded_window_is_a_noop() {
    let ds = trace(5);
    let cfg = SimConfig::with_keepalive(Some(5.0));
    let rec = RecordedForecasts::new(
        vec![ForecastWindow {
            issued_at: 0.0,
            arrivals: vec![(1.0, 0)],
        }],
        0.9,
    );
    let req = Requirements::from_dataset(&ds, cfg.bind_latency());
    let mut pol = ensemble_policy(Box::new(rec), req, EnsembleConfig::default(), 1.0).unwrap();
    let out = run(&ds, &cfg, &mut pol).unwrap();
    assert!(out.policy_flags.iter().any(|f| f.starts_with("stale_windows")));
}

#[test]
fn low_confidence_defers_to_fallback() {
    let ds = trace(6);
    let cfg = SimConfig::with_keepalive(Some(5.0));
    let rec = RecordedForecasts::new(
        vec![ForecastWindow {
            issued_at: 0.0,
            arrivals: ds.records().iter().map(|r| (r.arrival_minute as f64, r.func_id)).collect(),
        }],
        0.3,
    );
    let req = Requirements::from_dataset(&ds, cfg.bind_latency());
    let mut pol = ensemble_policy(Box::new(rec), req, EnsembleConfig::default(), 1.0).unwrap();
    let out = run(&ds, &cfg, &mut pol).unwrap();
    assert_eq!(out.report, run_fixed(&ds, &cfg, Some(5.0)).unwrap().report);
}
