//! Run trace (the normative replay artifact) and the metrics report
//! computed from it.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::DefenseEventKind;
use crate::traffic::AttackType;

pub const BUCKET_MS: u64 = 1000;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("io: {0}")]
    Io(String),
    #[error("malformed trace line {line}: {err}")]
    Trace { line: usize, err: String },
    #[error("malformed report: {0}")]
    Format(String),
}

/// Summary of one attack scenario, pinned into the trace header so the
/// report can be recomputed from the trace alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackMeta {
    pub attack: AttackType,
    pub start_ms: u64,
    pub end_ms: u64,
    /// Addresses this scenario claims as sources (numeric form).
    pub sources: Vec<u32>,
}

/// One line of the run trace. Ordered by emission; field order is fixed by
/// the struct definitions, so serialization is byte-stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceRecord {
    Meta {
        seed: u64,
        duration_ms: u64,
        warmup_n: usize,
        farm_enabled: bool,
        honeyd_enabled: bool,
        engagement_window_ms: u64,
        attacks: Vec<AttackMeta>,
        names: Vec<(String, u32)>,
    },
    /// First packet claiming this source entered the network.
    SrcSeen { t: u64, src: u32 },
    /// First ground-truth-malicious packet claiming this source.
    SrcMalicious { t: u64, src: u32 },
    LegitReq { t: u64, corr: u64, src: u32 },
    LegitDone { t: u64, corr: u64, latency_ms: u64 },
    LegitFail { t: u64, corr: u64, stage: String },
    Defense { t: u64, event: DefenseEventKind, src: u32, origin: String },
    FwDrop { t: u64, fw: u32, src: u32 },
    Crash { t: u64, server: String, cause: AttackType },
    RebootDone { t: u64, server: String },
    PoolExhausted { t: u64, profile: usize },
    /// A restored VM's attack log was archived (entry count).
    VmArchive { t: u64, vm: u32, entries: u64 },
    /// End-of-run dump of a VM's live attack log (entry count).
    VmLog { t: u64, vm: u32, entries: u64 },
    End { t: u64 },
}

pub fn trace_to_jsonl(records: &[TraceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("trace serializes"));
        out.push('\n');
    }
    out
}

pub fn trace_from_jsonl(text: &str) -> Result<Vec<TraceRecord>, ReportError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceRecord = serde_json::from_str(line)
            .map_err(|e| ReportError::Trace { line: i + 1, err: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

/// Per-run quantitative outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub legit_sent: u64,
    pub legit_served: u64,
    pub legit_dropped: u64,
    pub legit_in_flight: u64,
    pub legit_success_rate: f64,
    pub latency_mean_ms: f64,
    pub latency_p95_ms: u64,
    pub latency_p99_ms: u64,
    /// Per attack scenario: ms from attack start to the first Confirmed
    /// verdict against one of its sources; None when never confirmed.
    pub time_to_first_confirm_ms: Vec<Option<u64>>,
    pub false_positive_sources: u64,
    pub false_negative_sources: u64,
    pub production_crashes: u64,
    pub crash_causes: Vec<AttackType>,
    pub honeypot_compromises: u64,
    pub failovers: u64,
    pub pool_exhaustions: u64,
    pub firewall_drops: u64,
    /// Legit success rate per 1000 ms send bucket; 1.0 where nothing was sent.
    pub legit_success_series: Vec<f64>,
}

fn percentile(sorted: &[u64], q: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Recomputes the full report from trace records alone. `run_scenario` uses
/// this same path on its in-memory trace, so emitted reports and replayed
/// reports agree by construction.
pub fn compute_report(records: &[TraceRecord]) -> Result<MetricsReport, ReportError> {
    let meta = records
        .iter()
        .find_map(|r| match r {
            TraceRecord::Meta { duration_ms, attacks, .. } => {
                Some((*duration_ms, attacks.clone()))
            }
            _ => None,
        })
        .ok_or_else(|| ReportError::Format("trace has no meta header".into()))?;
    let (duration_ms, attacks) = meta;

    let mut sent_at: BTreeMap<u64, u64> = BTreeMap::new(); // corr -> t
    let mut served: BTreeSet<u64> = BTreeSet::new();
    let mut failed: BTreeSet<u64> = BTreeSet::new();
    let mut latencies: Vec<u64> = Vec::new();
    let mut malicious: BTreeSet<u32> = BTreeSet::new();
    let mut confirmed_at: BTreeMap<u32, u64> = BTreeMap::new();
    let mut crashes: Vec<AttackType> = Vec::new();
    let mut compromises = 0u64;
    let mut failovers = 0u64;
    let mut exhaustions = 0u64;
    let mut fw_drops = 0u64;
    let n_buckets = duration_ms.div_ceil(BUCKET_MS) as usize;
    let mut bucket_sent = vec![0u64; n_buckets];
    let mut bucket_served = vec![0u64; n_buckets];
    let mut corr_bucket: BTreeMap<u64, usize> = BTreeMap::new();

    for r in records {
        match r {
            TraceRecord::LegitReq { t, corr, .. } => {
                sent_at.insert(*corr, *t);
                let b = ((*t / BUCKET_MS) as usize).min(n_buckets.saturating_sub(1));
                bucket_sent[b] += 1;
                corr_bucket.insert(*corr, b);
            }
            TraceRecord::LegitDone { corr, latency_ms, .. } => {
                if served.insert(*corr) {
                    latencies.push(*latency_ms);
                    if let Some(b) = corr_bucket.get(corr) {
                        bucket_served[*b] += 1;
                    }
                }
            }
            TraceRecord::LegitFail { corr, .. } => {
                failed.insert(*corr);
            }
            TraceRecord::SrcMalicious { src, .. } => {
                malicious.insert(*src);
            }
            TraceRecord::Defense { t, event, src, .. } => match event {
                DefenseEventKind::Confirmed => {
                    confirmed_at.entry(*src).or_insert(*t);
                }
                DefenseEventKind::TrapTriggered => compromises += 1,
                DefenseEventKind::FailoverDone => failovers += 1,
                _ => {}
            },
            TraceRecord::FwDrop { .. } => fw_drops += 1,
            TraceRecord::Crash { cause, .. } => crashes.push(*cause),
            TraceRecord::PoolExhausted { .. } => exhaustions += 1,
            _ => {}
        }
    }

    let legit_sent = sent_at.len() as u64;
    let legit_served = served.len() as u64;
    let legit_dropped = failed.iter().filter(|c| !served.contains(c)).count() as u64;
    let legit_in_flight = legit_sent - legit_served - legit_dropped;
    let legit_success_rate =
        if legit_sent == 0 { 1.0 } else { legit_served as f64 / legit_sent as f64 };

    latencies.sort_unstable();
    let latency_mean_ms = if latencies.is_empty() {
        0.0
    } else {
        latencies.iter().sum::<u64>() as f64 / latencies.len() as f64
    };

    let time_to_first_confirm_ms = attacks
        .iter()
        .map(|a| {
            a.sources
                .iter()
                .filter_map(|s| confirmed_at.get(s))
                .filter(|t| **t >= a.start_ms)
                .min()
                .map(|t| t - a.start_ms)
        })
        .collect();

    let false_positive_sources =
        confirmed_at.keys().filter(|s| !malicious.contains(s)).count() as u64;
    let false_negative_sources =
        malicious.iter().filter(|s| !confirmed_at.contains_key(s)).count() as u64;

    let legit_success_series = (0..n_buckets)
        .map(|b| {
            if bucket_sent[b] == 0 {
                1.0
            } else {
                bucket_served[b] as f64 / bucket_sent[b] as f64
            }
        })
        .collect();

    Ok(MetricsReport {
        legit_sent,
        legit_served,
        legit_dropped,
        legit_in_flight,
        legit_success_rate,
        latency_mean_ms,
        latency_p95_ms: percentile(&latencies, 0.95),
        latency_p99_ms: percentile(&latencies, 0.99),
        time_to_first_confirm_ms,
        false_positive_sources,
        false_negative_sources,
        production_crashes: crashes.len() as u64,
        crash_causes: crashes,
        honeypot_compromises: compromises,
        failovers,
        pool_exhaustions: exhaustions,
        firewall_drops: fw_drops,
        legit_success_series,
    })
}

pub const CSV_HEADER: &str = "legit_sent,legit_served,legit_dropped,legit_in_flight,legit_success_rate,latency_mean_ms,latency_p95_ms,latency_p99_ms,time_to_first_confirm_ms,false_positive_sources,false_negative_sources,production_crashes,crash_causes,honeypot_compromises,failovers,pool_exhaustions,firewall_drops,legit_success_series";

fn join_options(v: &[Option<u64>]) -> String {
    if v.is_empty() {
        return "-".into();
    }
    v.iter()
        .map(|o| o.map(|x| x.to_string()).unwrap_or_else(|| "-".into()))
        .collect::<Vec<_>>()
        .join(";")
}

fn join_f64(v: &[f64]) -> String {
    if v.is_empty() {
        return "-".into();
    }
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

pub fn report_to_json(r: &MetricsReport) -> String {
    let mut s = serde_json::to_string_pretty(r).expect("report serializes");
    s.push('\n');
    s
}

pub fn report_from_json(text: &str) -> Result<MetricsReport, ReportError> {
    serde_json::from_str(text).map_err(|e| ReportError::Format(e.to_string()))
}

/// Fixed-column CSV (header plus one row); list fields are
/// semicolon-joined, `-` marks absent values.
pub fn report_to_csv(r: &MetricsReport) -> String {
    let causes = if r.crash_causes.is_empty() {
        "-".to_string()
    } else {
        r.crash_causes.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";")
    };
    format!(
        "{CSV_HEADER}\n{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
        r.legit_sent,
        r.legit_served,
        r.legit_dropped,
        r.legit_in_flight,
        r.legit_success_rate,
        r.latency_mean_ms,
        r.latency_p95_ms,
        r.latency_p99_ms,
        join_options(&r.time_to_first_confirm_ms),
        r.false_positive_sources,
        r.false_negative_sources,
        r.production_crashes,
        causes,
        r.honeypot_compromises,
        r.failovers,
        r.pool_exhaustions,
        r.firewall_drops,
        join_f64(&r.legit_success_series),
    )
}

pub fn report_from_csv(text: &str) -> Result<MetricsReport, ReportError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| ReportError::Format("empty csv".into()))?;
    if header != CSV_HEADER {
        return Err(ReportError::Format("csv header mismatch".into()));
    }
    let row = lines.next().ok_or_else(|| ReportError::Format("csv missing data row".into()))?;
    let cols: Vec<&str> = row.split(',').collect();
    if cols.len() != 18 {
        return Err(ReportError::Format(format!("expected 18 columns, got {}", cols.len())));
    }
    let err = |e: String| ReportError::Format(e);
    let pu =
        |s: &str| -> Result<u64, ReportError> { s.parse().map_err(|e| err(format!("{e}: {s}"))) };
    let pf =
        |s: &str| -> Result<f64, ReportError> { s.parse().map_err(|e| err(format!("{e}: {s}"))) };
    let parse_opts = |s: &str| -> Result<Vec<Option<u64>>, ReportError> {
        if s == "-" {
            return Ok(Vec::new());
        }
        s.split(';')
            .map(|x| if x == "-" { Ok(None) } else { pu(x).map(Some) })
            .collect()
    };
    let causes: Vec<AttackType> = if cols[12] == "-" {
        Vec::new()
    } else {
        cols[12]
            .split(';')
            .map(|c| {
                serde_json::from_str(&format!("\"{c}\""))
                    .map_err(|e| err(format!("bad cause {c}: {e}")))
            })
            .collect::<Result<_, _>>()?
    };
    let series: Vec<f64> = if cols[17] == "-" {
        Vec::new()
    } else {
        cols[17].split(';').map(pf).collect::<Result<_, _>>()?
    };
    Ok(MetricsReport {
        legit_sent: pu(cols[0])?,
        legit_served: pu(cols[1])?,
        legit_dropped: pu(cols[2])?,
        legit_in_flight: pu(cols[3])?,
        legit_success_rate: pf(cols[4])?,
        latency_mean_ms: pf(cols[5])?,
        latency_p95_ms: pu(cols[6])?,
        latency_p99_ms: pu(cols[7])?,
        time_to_first_confirm_ms: parse_opts(cols[8])?,
        false_positive_sources: pu(cols[9])?,
        false_negative_sources: pu(cols[10])?,
        production_crashes: pu(cols[11])?,
        crash_causes: causes,
        honeypot_compromises: pu(cols[13])?,
        failovers: pu(cols[14])?,
        pool_exhaustions: pu(cols[15])?,
        firewall_drops: pu(cols[16])?,
        legit_success_series: series,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(duration_ms: u64, attacks: Vec<AttackMeta>) -> TraceRecord {
        TraceRecord::Meta {
            seed: 1,
            duration_ms,
            warmup_n: 2000,
            farm_enabled: true,
            honeyd_enabled: true,
            engagement_window_ms: 10_000,
            attacks,
            names: vec![("c0".into(), 1)],
        }
    }

    fn sample_records() -> Vec<TraceRecord> {
        vec![
            meta(
                5000,
                vec![AttackMeta { attack: AttackType::SynFlood, start_ms: 1000, end_ms: 4000, sources: vec![50, 51] }],
            ),
            TraceRecord::SrcSeen { t: 0, src: 1 },
            TraceRecord::LegitReq { t: 100, corr: 1, src: 1 },
            TraceRecord::LegitDone { t: 150, corr: 1, latency_ms: 50 },
            TraceRecord::SrcSeen { t: 1000, src: 50 },
            TraceRecord::SrcMalicious { t: 1000, src: 50 },
            TraceRecord::SrcMalicious { t: 1001, src: 51 },
            TraceRecord::LegitReq { t: 1200, corr: 2, src: 1 },
            TraceRecord::LegitFail { t: 1300, corr: 2, stage: "backlog".into() },
            TraceRecord::Defense { t: 2000, event: DefenseEventKind::Confirmed, src: 50, origin: "honeyd@n5".into() },
            TraceRecord::Defense { t: 2500, event: DefenseEventKind::Confirmed, src: 50, origin: "vm1".into() },
            TraceRecord::FwDrop { t: 3000, fw: 0, src: 50 },
            TraceRecord::LegitReq { t: 4200, corr: 3, src: 1 },
            TraceRecord::End { t: 5000 },
        ]
    }

    #[test]
    fn report_arithmetic() {
        let r = compute_report(&sample_records()).unwrap();
        assert_eq!(r.legit_sent, 3);
        assert_eq!(r.legit_served, 1);
        assert_eq!(r.legit_dropped, 1);
        assert_eq!(r.legit_in_flight, 1);
        assert!((r.legit_success_rate - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.latency_mean_ms, 50.0);
        assert_eq!(r.latency_p95_ms, 50);
        // first confirm at 2000, attack started 1000
        assert_eq!(r.time_to_first_confirm_ms, vec![Some(1000)]);
        assert_eq!(r.false_positive_sources, 0);
        assert_eq!(r.false_negative_sources, 1, "source 51 never confirmed");
        assert_eq!(r.firewall_drops, 1);
        assert_eq!(r.legit_success_series.len(), 5);
        assert_eq!(r.legit_success_series[0], 1.0);
        assert_eq!(r.legit_success_series[1], 0.0);
        assert_eq!(r.legit_success_series[2], 1.0, "empty bucket defaults to 1.0");
    }

    #[test]
    fn confirmed_benign_source_counts_as_false_positive() {
        let mut recs = sample_records();
        recs.push(TraceRecord::Defense {
            t: 4000,
            event: DefenseEventKind::Confirmed,
            src: 1,
            origin: "honeyd@n5".into(),
        });
        let r = compute_report(&recs).unwrap();
        assert_eq!(r.false_positive_sources, 1);
    }

    #[test]
    fn trace_roundtrips_through_jsonl() {
        let recs = sample_records();
        let text = trace_to_jsonl(&recs);
        let back = trace_from_jsonl(&text).unwrap();
        assert_eq!(recs, back);
        // byte-stable
        assert_eq!(text, trace_to_jsonl(&back));
    }

    #[test]
    fn report_roundtrips_through_json_and_csv() {
        let r = compute_report(&sample_records()).unwrap();
        assert_eq!(report_from_json(&report_to_json(&r)).unwrap(), r);
        assert_eq!(report_from_csv(&report_to_csv(&r)).unwrap(), r);
    }

    #[test]
    fn series_length_is_ceil_of_duration_over_bucket() {
        let recs = vec![meta(4500, Vec::new()), TraceRecord::End { t: 4500 }];
        let r = compute_report(&recs).unwrap();
        assert_eq!(r.legit_success_series.len(), 5);
    }

    #[test]
    fn percentile_is_nearest_rank() {
        let v: Vec<u64> = (1..=100).collect();
        assert_eq!(percentile(&v, 0.95), 95);
        assert_eq!(percentile(&v, 0.99), 99);
        assert_eq!(percentile(&v[..1], 0.99), 1);
    }
}
