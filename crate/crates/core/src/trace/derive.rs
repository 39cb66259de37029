//! Reconstruction of instance arrivals from per-minute invocation counts.
//!
//! The public trace only records how often each function ran per minute. We
//! replay those counts through scale-per-request semantics: invocations in the
//! same minute are concurrent, an instance serves at most one invocation per
//! minute, and an instance idle for more than `keepalive_min` minutes is gone.
//! Whenever demand exceeds the live instances a new instance arrives.

use std::collections::{BTreeMap, HashMap};

use super::{ArrivalDataset, InputRecord, RawInvocationRow, TraceError, MINUTES_PER_DAY};

/// Execution time assumed when no duration table entry exists.
pub const DEFAULT_EXEC_MS: f64 = 1000.0;

/// Average execution time (ms) keyed by `(owner, app, function)` hash.
pub type DurationTable = HashMap<(String, String, String), f64>;

/// [`derive_instances_with`] using [`DEFAULT_EXEC_MS`] for every function.
pub fn derive_instances(
    raw: &[RawInvocationRow],
    keepalive_min: u64,
) -> Result<ArrivalDataset, TraceError> {
    derive_instances_with(raw, keepalive_min, &DurationTable::new())
}

/// Replays invocation counts into instance arrivals.
///
/// Functions are keyed by their hash triple; their ids follow the
/// lexicographic order of that triple. Pass `u64::MAX` for an unbounded
/// keep-alive.
pub fn derive_instances_with(
    raw: &[RawInvocationRow],
    keepalive_min: u64,
    durations: &DurationTable,
) -> Result<ArrivalDataset, TraceError> {
    // (owner, app, func) -> sparse minute -> count
    let mut demand: BTreeMap<(&str, &str, &str), BTreeMap<u64, u32>> = BTreeMap::new();
    for row in raw {
        let per_fn = demand
            .entry((&row.owner_hash, &row.app_hash, &row.func_hash))
            .or_default();
        let base = row.day as u64 * MINUTES_PER_DAY as u64;
        for (m, &c) in row.counts().iter().enumerate() {
            if c > 0 {
                *per_fn.entry(base + m as u64).or_default() += c;
            }
        }
    }

    let mut input = Vec::new();
    for (label, ((owner, app, func), minutes)) in demand.iter().enumerate() {
        let exec = durations
            .get(&(owner.to_string(), app.to_string(), func.to_string()))
            .copied()
            .unwrap_or(DEFAULT_EXEC_MS);
        for (func_index, minute) in replay(minutes, keepalive_min).into_iter().enumerate() {
            input.push(InputRecord {
                func_index: func_index as u32,
                owner_hash: owner.to_string(),
                app_hash: app.to_string(),
                func_label: label as u64,
                avg_exec_ms: exec,
                arrival_minute: minute,
            });
        }
    }
    let timeline = raw
        .iter()
        .map(|r| (r.day as u64 + 1) * MINUTES_PER_DAY as u64)
        .max()
        .unwrap_or(0)
        .max(super::DEFAULT_TIMELINE_MINUTES);
    ArrivalDataset::from_input(input, timeline)
}

/// Reads duration tables (`HashOwner,HashApp,HashFunction,Average,Count,...`)
/// and merges them into one count-weighted mean per function. Extra columns
/// are ignored.
pub fn parse_durations<R: std::io::Read>(readers: Vec<R>) -> Result<DurationTable, TraceError> {
    let mut acc: HashMap<(String, String, String), (f64, f64)> = HashMap::new();
    for reader in readers {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let wanted = ["HashOwner", "HashApp", "HashFunction", "Average"];
        let idx: Vec<usize> = match wanted.iter().map(|w| col(w)).collect::<Option<Vec<_>>>() {
            Some(v) => v,
            None => {
                return Err(TraceError::Header {
                    expected: wanted.iter().map(|s| s.to_string()).collect(),
                    found: headers.iter().map(str::to_string).collect(),
                })
            }
        };
        let count_col = col("Count");
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let num = |i: usize| {
                rec[i]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| TraceError::Malformed { line, msg: format!("bad number: {e}") })
            };
            let avg = num(idx[3])?;
            if !avg.is_finite() || avg < 0.0 {
                return Err(TraceError::NegativeAverage { line, value: avg });
            }
            let w = match count_col {
                Some(c) => num(c)?.max(0.0),
                None => 1.0,
            };
            let e = acc
                .entry((rec[idx[0]].to_string(), rec[idx[1]].to_string(), rec[idx[2]].to_string()))
                .or_insert((0.0, 0.0));
            e.0 += avg * w;
            e.1 += w;
        }
    }
    Ok(acc
        .into_iter()
        .map(|(k, (s, w))| (k, if w > 0.0 { s / w } else { 0.0 }))
        .collect())
}

/// Returns the arrival minute of every instance spawned for one function.
fn replay(minutes: &BTreeMap<u64, u32>, keepalive_min: u64) -> Vec<u64> {
    // last-used minute of each live instance
    let mut live: Vec<u64> = Vec::new();
    let mut arrivals = Vec::new();
    for (&m, &count) in minutes {
        live.retain(|&last| m - last <= keepalive_min);
        // most recently used instances serve first
        live.sort_unstable_by(|a, b| b.cmp(a));
        let reuse = (count as usize).min(live.len());
        for last in live.iter_mut().take(reuse) {
            *last = m;
        }
        for _ in reuse..count as usize {
            live.push(m);
            arrivals.push(m);
        }
    }
    arrivals
}

#[cfg(test)]
mod tests {
    use super::super::Trigger;
    use super::*;
    use proptest::prelude::*;

    fn row(func: &str, day: u32, events: &[(usize, u32)]) -> RawInvocationRow {
        let mut counts = vec![0; MINUTES_PER_DAY];
        for &(m, c) in events {
            counts[m] = c;
        }
        RawInvocationRow::new("o", "a", func, Trigger::Http, day, counts).unwrap()
    }

    #[test]
    fn single_invocation() {
        let ds = derive_instances(&[row("f", 0, &[(0, 1)])], 10).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.records()[0].arrival_minute, 0);
    }

    #[test]
    fn simultaneous_invocations_spawn_instances() {
        let ds = derive_instances(&[row("f", 0, &[(5, 3)])], 10).unwrap();
        let got: Vec<(u64, u32)> = ds
            .records()
            .iter()
            .map(|r| (r.arrival_minute, r.func_index))
            .collect();
        assert_eq!(got, vec![(5, 0), (5, 1), (5, 2)]);
    }

    #[test]
    fn expiry_between_invocations() {
        let ds = derive_instances(&[row("f", 0, &[(0, 1), (20, 1)])], 10).unwrap();
        assert_eq!(ds.len(), 2);
        let ds = derive_instances(&[row("f", 0, &[(0, 1), (10, 1)])], 10).unwrap();
        assert_eq!(ds.len(), 1);
    }

    #[test]
    fn days_are_offset() {
        let ds = derive_instances(&[row("f", 1, &[(2, 1)])], 10).unwrap();
        assert_eq!(ds.records()[0].arrival_minute, 1442);
    }

    #[test]
    fn durations_are_applied() {
        let mut table = DurationTable::new();
        table.insert(("o".into(), "a".into(), "f".into()), 42.0);
        let ds = derive_instances_with(&[row("f", 0, &[(0, 1)]), row("g", 0, &[(0, 1)])], 10, &table)
            .unwrap();
        let execs: Vec<f64> = ds.records().iter().map(|r| r.avg_exec_ms).collect();
        assert_eq!(execs, vec![42.0, DEFAULT_EXEC_MS]);
    }

    #[test]
    fn durations_are_count_weighted() {
        let a = "HashOwner,HashApp,HashFunction,Average,Count,Minimum\no,a,f,10,1,0\n";
        let b = "HashOwner,HashApp,HashFunction,Average,Count,Minimum\no,a,f,40,2,0\n";
        let t = parse_durations(vec![a.as_bytes(), b.as_bytes()]).unwrap();
        assert_eq!(t[&("o".into(), "a".into(), "f".into())], 30.0);
        assert!(parse_durations(vec!["x,y\n1,2\n".as_bytes()]).is_err());
    }

    /// Minute-by-minute replay over a dense array, written independently of `replay`.
    fn brute_force(counts: &[u32], keepalive: u64) -> usize {
        let mut idle_since: Vec<Option<usize>> = Vec::new(); // None = dead
        let mut spawned = 0;
        for (m, &c) in counts.iter().enumerate() {
            for slot in idle_since.iter_mut() {
                if let Some(last) = *slot {
                    if (m - last) as u64 > keepalive {
                        *slot = None;
                    }
                }
            }
            let mut alive: Vec<usize> = (0..idle_since.len()).filter(|&i| idle_since[i].is_some()).collect();
            alive.sort_by_key(|&i| std::cmp::Reverse(idle_since[i]));
            let mut need = c as usize;
            for i in alive {
                if need == 0 {
                    break;
                }
                idle_since[i] = Some(m);
                need -= 1;
            }
            for _ in 0..need {
                idle_since.push(Some(m));
                spawned += 1;
            }
        }
        spawned
    }

    proptest! {
        #[test]
        fn unbounded_keepalive_spawns_peak_demand(counts in prop::collection::vec(0u32..5, 1..100)) {
            let mut events = Vec::new();
            for (m, &c) in counts.iter().enumerate() {
                events.push((m, c));
            }
            let ds = derive_instances(&[row("f", 0, &events)], u64::MAX).unwrap();
            let peak = *counts.iter().max().unwrap() as usize;
            prop_assert_eq!(ds.len(), peak);
            prop_assert_eq!(brute_force(&counts, u64::MAX), peak);
        }

        #[test]
        fn replay_matches_brute_force(
            counts in prop::collection::vec(prop_oneof![3 => Just(0u32), 1 => 1u32..4], 1..100),
            keepalive in 0u64..15,
        ) {
            let events: Vec<_> = counts.iter().copied().enumerate().collect();
            let ds = derive_instances(&[row("f", 0, &events)], keepalive).unwrap();
            prop_assert_eq!(ds.len(), brute_force(&counts, keepalive));
            let idx: Vec<u32> = ds.records().iter().map(|r| r.func_index).collect();
            prop_assert_eq!(idx, (0..ds.len() as u32).collect::<Vec<_>>());
        }
    }
}
