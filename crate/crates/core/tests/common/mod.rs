//! Independent reference implementations shared by integration tests.
#![allow(dead_code)]

use coldlab_core::simulator::Outcome;
use coldlab_core::trace::{read_prepared, write_prepared, ArrivalDataset};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random prepared trace of at most 50 arrivals. Times are multiples of
/// 1/8 minute so simulator sums are exact.
pub fn random_trace(rng: &mut ChaCha8Rng) -> ArrivalDataset {
    let n = rng.random_range(1..=50);
    let funcs = rng.random_range(1..=4);
    let mut rows: Vec<(u32, u64, f64)> = (0..n)
        .map(|_| {
            (
                rng.random_range(0..funcs),
                rng.random_range(0..40),
                7_500.0 * rng.random_range(0..24) as f64,
            )
        })
        .collect();
    rows.sort_by_key(|r| r.1);
    let mut csv = String::from("Func_index,HashOwner,HashApp,Func_ID,Average,ArrivalMinute\n");
    let mut idx = vec![0; funcs as usize];
    for (f, m, exec) in rows {
        csv.push_str(&format!("{},o,a,{f},{exec},{m}\n", idx[f as usize]));
        idx[f as usize] += 1;
    }
    read_prepared(csv.as_bytes()).unwrap()
}

pub struct ReplayResult {
    pub cold: usize,
    pub warm: usize,
    pub idle: f64,
    pub outcomes: Vec<Outcome>,
}

/// Brute-force fixed keep-alive replay: per function, a list of nodes with
/// the time each next becomes free.
pub fn replay(ds: &ArrivalDataset, cold_start: f64, keepalive: Option<f64>) -> ReplayResult {
    let ka = keepalive.unwrap_or(f64::INFINITY);
    let mut nodes: Vec<Vec<f64>> = vec![Vec::new(); ds.vocab_size()];
    let mut out = ReplayResult {
        cold: 0,
        warm: 0,
        idle: 0.0,
        outcomes: Vec::new(),
    };
    let mut end = 0.0f64;
    for r in ds.records() {
        let t = r.arrival_minute as f64;
        let exec = r.avg_exec_ms / 60_000.0;
        end = end.max(t);
        let pool = &mut nodes[r.func_id as usize];
        let mut best: Option<usize> = None;
        for (i, &free) in pool.iter().enumerate() {
            if free <= t && t - free < ka && best.is_none_or(|b| free > pool[b]) {
                best = Some(i);
            }
        }
        match best {
            Some(i) => {
                out.idle += t - pool[i];
                pool[i] = t + exec;
                out.warm += 1;
                out.outcomes.push(Outcome::Warm);
                end = end.max(t + exec);
            }
            None => {
                pool.push(t + cold_start + exec);
                out.cold += 1;
                out.outcomes.push(Outcome::Cold);
                end = end.max(t + cold_start + exec);
            }
        }
    }
    // every node ends with one idle stretch: the full keep-alive, or up to
    // the last activity when unbounded
    for pool in &nodes {
        for &free in pool {
            out.idle += if ka.is_finite() { ka } else { end - free };
        }
    }
    out
}

fn avg(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population variance through the raw second moment.
fn var(v: &[f64]) -> f64 {
    let m = avg(v);
    avg(&v.iter().map(|x| x * x).collect::<Vec<_>>()) - m * m
}

pub fn ev_ref(y: &[f64], p: &[f64]) -> f64 {
    let e: Vec<f64> = y.iter().zip(p).map(|(a, b)| a - b).collect();
    1.0 - var(&e) / var(y)
}

pub fn mape_ref(y: &[f64], p: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..y.len() {
        s += ((y[i] - p[i]) / y[i]).abs();
    }
    100.0 * s / y.len() as f64
}

pub fn nrmse_ref(y: &[f64], p: &[f64]) -> f64 {
    let mut sorted = y.to_vec();
    sorted.sort_by(f64::total_cmp);
    let range = sorted[sorted.len() - 1] - sorted[0];
    let sse: f64 = y.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
    (sse / y.len() as f64).sqrt() / range
}

pub fn r2_ref(y: &[f64], p: &[f64]) -> f64 {
    let sse: f64 = y.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
    sse.mul_add(-1.0 / (var(y) * y.len() as f64), 1.0)
}

/// Quadratic-time tie-averaged ranks.
fn ranks_ref(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|x| {
            let below = v.iter().filter(|y| *y < x).count() as f64;
            let equal = v.iter().filter(|y| *y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn spearman_ref(y: &[f64], p: &[f64]) -> f64 {
    let (a, b) = (ranks_ref(y), ranks_ref(p));
    let n = a.len() as f64;
    let (ma, mb) = (avg(&a), avg(&b));
    let sab: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() - n * ma * mb;
    let saa: f64 = a.iter().map(|x| x * x).sum::<f64>() - n * ma * ma;
    let sbb: f64 = b.iter().map(|x| x * x).sum::<f64>() - n * mb * mb;
    sab / saa.sqrt() / sbb.sqrt()
}

/// Random pair with ties (values on a coarse grid) and no zero truths.
pub fn random_pair(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    loop {
        let n = rng.random_range(3..=40);
        let y: Vec<f64> = (0..n)
            .map(|_| {
                let v = rng.random_range(1..=12) as f64 * 0.5;
                if rng.random_bool(0.3) { -v } else { v }
            })
            .collect();
        let p: Vec<f64> = y.iter().map(|v| v + rng.random_range(-3.0..3.0_f64).round() * 0.25).collect();
        let varies = |v: &[f64]| v.iter().any(|x| *x != v[0]);
        if varies(&y) && varies(&p) {
            return (y, p);
        }
    }
}

/// Same first `keep` records; later ones are shifted in time and get other
/// execution times.
pub fn perturbed_suffix(ds: &ArrivalDataset, keep: usize) -> ArrivalDataset {
    let mut buf = Vec::new();
    write_prepared(ds, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    let cols: Vec<&str> = header.split(',').collect();
    let avg = cols.iter().position(|c| *c == "Average").unwrap();
    let minute = cols.iter().position(|c| *c == "ArrivalMinute").unwrap();
    let mut out = vec![header.to_string()];
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    let cut: u64 = rows[keep - 1][minute].parse().unwrap();
    for (i, mut r) in rows.into_iter().enumerate() {
        if i >= keep {
            let m: u64 = r[minute].parse().unwrap();
            r[minute] = (cut + 1 + 3 * (m - cut)).to_string();
            r[avg] = "123456".into();
        }
        out.push(r.join(","));
    }
    let back = read_prepared(out.join("\n").as_bytes()).unwrap();
    assert_eq!(back.records()[..keep], ds.records()[..keep]);
    back
}
