//! Finite-trace checking of the completeness and accuracy properties.
//!
//! The properties all have the shape "there is a time after which ...". On a
//! finite trace we look for the earliest point from which the condition holds
//! on every later SAMPLE, and only call it HOLDS when that suffix is long
//! enough to be meaningful. Otherwise the verdict is INCONCLUSIVE, and
//! VIOLATED is reserved for a trace whose final sample still breaks the
//! condition.
//!
//! Completeness can never be VIOLATED on a finite trace: a crashed process
//! that is still trusted at the end may yet be suspected later.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::impact::{status_for, sum_impacts, ProcessId, Status};
use crate::sim::{EventKind, Trace, TraceError};
use crate::value::ImpactValue;

pub const DEFAULT_STAB_WINDOW_MS: u64 = 10_000;
pub const DEFAULT_MIN_POST_CRASH_MS: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Property {
    Completeness,
    Accuracy,
    SetSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Holds,
    Violated,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Holds => "HOLDS",
            Verdict::Violated => "VIOLATED",
            Verdict::Inconclusive => "INCONCLUSIVE",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropVerdict {
    pub property: Property,
    pub verdict: Verdict,
    /// Stabilization point for HOLDS, first counterexample for VIOLATED.
    pub witness_time_ms: Option<u64>,
    pub detail: String,
}

impl PropVerdict {
    fn holds(property: Property, at: u64, detail: String) -> Self {
        PropVerdict {
            property,
            verdict: Verdict::Holds,
            witness_time_ms: Some(at),
            detail,
        }
    }

    fn violated(property: Property, at: u64, detail: String) -> Self {
        PropVerdict {
            property,
            verdict: Verdict::Violated,
            witness_time_ms: Some(at),
            detail,
        }
    }

    fn inconclusive(property: Property, detail: String) -> Self {
        PropVerdict {
            property,
            verdict: Verdict::Inconclusive,
            witness_time_ms: None,
            detail,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckerConfig {
    /// Minimum trailing window a stabilized condition must cover.
    pub stab_window_ms: u64,
    /// Minimum trace extent after the last crash to judge completeness.
    pub min_post_crash_ms: u64,
}

impl Default for CheckerConfig {
    fn default() -> Self {
        CheckerConfig {
            stab_window_ms: DEFAULT_STAB_WINDOW_MS,
            min_post_crash_ms: DEFAULT_MIN_POST_CRASH_MS,
        }
    }
}

impl CheckerConfig {
    /// Defaults, with `min_post_crash_ms` at ten heartbeat periods when the
    /// trace header records the period.
    pub fn for_trace(trace: &Trace) -> Self {
        CheckerConfig {
            stab_window_ms: DEFAULT_STAB_WINDOW_MS,
            min_post_crash_ms: trace
                .header
                .heartbeat_period_ms
                .map_or(DEFAULT_MIN_POST_CRASH_MS, |p| p.saturating_mul(10)),
        }
    }
}

/// Where the trailing run of samples satisfying a condition begins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Suffix {
    /// Every sample at or after this time satisfies the condition.
    From(u64),
    /// The final sample fails; the failing tail starts at this time.
    FailsAtEnd(u64),
}

/// Finds the earliest instant after which every SAMPLE satisfies `ok`.
///
/// If the last failing sample is at `tv` and the next sample at `tn`, any
/// instant in `(tv, tn]` qualifies. A relevant transition inside that
/// interval marks the moment the output actually changed, so it is preferred
/// over `tv + 1`.
fn stable_suffix(
    trace: &Trace,
    ok: impl Fn(&BTreeSet<ProcessId>, ImpactValue) -> bool,
    relevant: impl Fn(&EventKind) -> bool,
) -> Suffix {
    let samples: Vec<(u64, bool)> = trace
        .samples()
        .map(|(t, trusted, level, _)| (t, ok(trusted, level)))
        .collect();
    let Some(last_bad) = samples.iter().rposition(|(_, good)| !good) else {
        return Suffix::From(0);
    };
    if last_bad == samples.len() - 1 {
        let tail_start = samples[..=last_bad]
            .iter()
            .rposition(|(_, good)| *good)
            .map_or(0, |i| i + 1);
        return Suffix::FailsAtEnd(samples[tail_start].0);
    }
    let tv = samples[last_bad].0;
    let tn = samples[last_bad + 1].0;
    let changed = trace
        .events
        .iter()
        .filter(|e| e.t > tv && e.t <= tn && relevant(&e.kind))
        .map(|e| e.t)
        .max();
    Suffix::From(changed.unwrap_or(tv + 1))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrashLatency {
    pub process: ProcessId,
    pub crash_at_ms: u64,
    /// Earliest time after which the process is in no sample's trusted set.
    pub detected_at_ms: Option<u64>,
    pub latency_ms: Option<u64>,
}

/// Per-crash detection times; `None` where the process is still trusted at
/// the end of the trace.
pub fn crash_latencies(trace: &Trace) -> Result<Vec<CrashLatency>, TraceError> {
    let pattern = trace.failure_pattern()?;
    Ok(pattern
        .crashes()
        .iter()
        .map(|(q, &crash_at)| {
            let suffix = stable_suffix(
                trace,
                |trusted, _| !trusted.contains(q),
                |k| matches!(k, EventKind::Suspect { q: s } if s == q),
            );
            let detected = match suffix {
                Suffix::From(t) => Some(t),
                Suffix::FailsAtEnd(_) => None,
            };
            CrashLatency {
                process: q.clone(),
                crash_at_ms: crash_at,
                detected_at_ms: detected,
                latency_ms: detected.map(|t| t.saturating_sub(crash_at)),
            }
        })
        .collect())
}

/// Every crashed process is eventually never trusted again.
pub fn check_completeness(trace: &Trace, cfg: &CheckerConfig) -> Result<PropVerdict, TraceError> {
    trace.validate()?;
    let p = Property::Completeness;
    let latencies = crash_latencies(trace)?;
    if latencies.is_empty() {
        return Ok(PropVerdict::holds(p, 0, "no crashes".into()));
    }
    let end = trace.end_time();
    let last_crash = latencies.iter().map(|l| l.crash_at_ms).max().unwrap_or(0);
    let mut detail = latencies
        .iter()
        .map(|l| match l.latency_ms {
            Some(lat) => format!(
                "{} crashed at {} detected at {} (latency {lat})",
                l.process,
                l.crash_at_ms,
                l.detected_at_ms.unwrap_or(0)
            ),
            None => format!(
                "{} crashed at {} still trusted at end",
                l.process, l.crash_at_ms
            ),
        })
        .collect::<Vec<_>>()
        .join("; ");

    if end - last_crash.min(end) < cfg.min_post_crash_ms {
        let _ = write!(
            detail,
            "; trace ends {} ms after last crash, need {}",
            end.saturating_sub(last_crash),
            cfg.min_post_crash_ms
        );
        return Ok(PropVerdict::inconclusive(p, detail));
    }
    if latencies.iter().any(|l| l.detected_at_ms.is_none()) {
        return Ok(PropVerdict::inconclusive(p, detail));
    }
    let witness = latencies
        .iter()
        .filter_map(|l| l.detected_at_ms)
        .max()
        .unwrap_or(0);
    Ok(PropVerdict::holds(p, witness, detail))
}

fn judge_suffix(
    p: Property,
    suffix: Suffix,
    end: u64,
    cfg: &CheckerConfig,
    what: &str,
) -> PropVerdict {
    match suffix {
        Suffix::FailsAtEnd(at) => {
            PropVerdict::violated(p, at, format!("final sample: {what} fails since {at}"))
        }
        Suffix::From(t) if end.saturating_sub(t) >= cfg.stab_window_ms => {
            PropVerdict::holds(p, t, format!("{what} from {t} to {end}"))
        }
        Suffix::From(t) => PropVerdict::inconclusive(
            p,
            format!(
                "{what} only from {t}; {} ms suffix is shorter than the {} ms window",
                end.saturating_sub(t),
                cfg.stab_window_ms
            ),
        ),
    }
}

/// Every correct process is eventually always trusted.
pub fn check_accuracy(trace: &Trace, cfg: &CheckerConfig) -> Result<PropVerdict, TraceError> {
    trace.validate()?;
    let correct = trace.failure_pattern()?.correct();
    let suffix = stable_suffix(
        trace,
        |trusted, _| correct.is_subset(trusted),
        |k| matches!(k, EventKind::Trust { q } if correct.contains(q)),
    );
    Ok(judge_suffix(
        Property::Accuracy,
        suffix,
        trace.end_time(),
        cfg,
        "all correct processes trusted",
    ))
}

/// The trust level eventually equals the summed impact of correct processes.
pub fn check_set_sum(trace: &Trace, cfg: &CheckerConfig) -> Result<PropVerdict, TraceError> {
    trace.validate()?;
    let set = trace.monitored_set()?;
    let correct = trace.failure_pattern()?.correct();
    let target = sum_impacts(&set, &correct).map_err(|e| TraceError::Malformed(e.to_string()))?;
    let suffix = stable_suffix(
        trace,
        |_, level| level == target,
        |k| matches!(k, EventKind::Suspect { .. } | EventKind::Trust { .. }),
    );
    Ok(judge_suffix(
        Property::SetSum,
        suffix,
        trace.end_time(),
        cfg,
        &format!("trust level {target}"),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassVerdict {
    #[serde(rename = "eventually-perfect-impact-consistent")]
    Consistent,
    #[serde(rename = "inconsistent")]
    Inconsistent,
    #[serde(rename = "inconclusive")]
    Inconclusive,
}

impl ClassVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassVerdict::Consistent => "eventually-perfect-impact-consistent",
            ClassVerdict::Inconsistent => "inconsistent",
            ClassVerdict::Inconclusive => "inconclusive",
        }
    }
}

impl fmt::Display for ClassVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassReport {
    pub completeness: PropVerdict,
    pub accuracy: PropVerdict,
    pub set_sum: PropVerdict,
    pub latencies: Vec<CrashLatency>,
    pub class: ClassVerdict,
}

impl ClassReport {
    pub fn verdicts(&self) -> [&PropVerdict; 3] {
        [&self.completeness, &self.accuracy, &self.set_sum]
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<14} {:<13} {:>10}  detail",
            "property", "verdict", "witness"
        );
        for v in self.verdicts() {
            let name = match v.property {
                Property::Completeness => "completeness",
                Property::Accuracy => "accuracy",
                Property::SetSum => "set-sum",
            };
            let witness = v
                .witness_time_ms
                .map_or_else(|| "-".to_owned(), |t| t.to_string());
            let _ = writeln!(
                out,
                "{name:<14} {:<13} {witness:>10}  {}",
                v.verdict.to_string(),
                v.detail
            );
        }
        let _ = writeln!(out, "class: {}", self.class);
        out
    }
}

pub fn aggregate(verdicts: [Verdict; 3]) -> ClassVerdict {
    if verdicts.contains(&Verdict::Violated) {
        ClassVerdict::Inconsistent
    } else if verdicts.iter().all(|v| *v == Verdict::Holds) {
        ClassVerdict::Consistent
    } else {
        ClassVerdict::Inconclusive
    }
}

pub fn classify(trace: &Trace, cfg: &CheckerConfig) -> Result<ClassReport, TraceError> {
    let completeness = check_completeness(trace, cfg)?;
    let accuracy = check_accuracy(trace, cfg)?;
    let set_sum = check_set_sum(trace, cfg)?;
    let class = aggregate([completeness.verdict, accuracy.verdict, set_sum.verdict]);
    Ok(ClassReport {
        completeness,
        accuracy,
        set_sum,
        latencies: crash_latencies(trace)?,
        class,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub t: u64,
    pub field: String,
    pub expected: String,
    pub found: String,
}

/// Recomputes every SAMPLE's level and status from its trusted set.
pub fn replay_core(trace: &Trace) -> Result<Vec<Mismatch>, TraceError> {
    let set = trace.monitored_set()?;
    let mut out = Vec::new();
    for (t, trusted, level, status) in trace.samples() {
        let expected_level = match sum_impacts(&set, trusted) {
            Ok(l) => l,
            Err(e) => {
                out.push(Mismatch {
                    t,
                    field: "trusted".into(),
                    expected: "members of the monitored set".into(),
                    found: e.to_string(),
                });
                continue;
            }
        };
        if expected_level != level {
            out.push(Mismatch {
                t,
                field: "level".into(),
                expected: expected_level.to_string(),
                found: level.to_string(),
            });
        }
        let expected_status: Status = status_for(&set, expected_level);
        if expected_status != status {
            out.push(Mismatch {
                t,
                field: "status".into(),
                expected: expected_status.to_string(),
                found: status.to_string(),
            });
        }
    }
    Ok(out)
}
