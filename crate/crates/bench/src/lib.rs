//! Fixtures shared by the benchmarks.

use impactfd_core::impact::{validate_set, MonitoredSet, ProcessId};
use impactfd_core::ImpactValue;

/// A valid set of `n` members with deterministic, uneven impacts.
pub fn spread_set(n: usize) -> MonitoredSet {
    let micros: Vec<u64> = (0..n).map(|i| 1 + (i as u64 * 7_919) % 1_000_000).collect();
    // The largest impact as margin keeps every member within it and the
    // total above it.
    let margin = ImpactValue::from_micro(micros.iter().copied().max().unwrap_or(1));
    let names: Vec<String> = (0..n).map(|i| format!("q{i}")).collect();
    let impacts: Vec<String> = micros
        .iter()
        .map(|&m| ImpactValue::from_micro(m).to_string())
        .collect();
    let members = names
        .iter()
        .map(String::as_str)
        .zip(impacts.iter().map(String::as_str));
    validate_set(members, &margin.to_string(), "p").expect("fixture set is valid")
}

/// Every other member, as a trusted subset.
pub fn half(set: &MonitoredSet) -> Vec<ProcessId> {
    set.ids().step_by(2).cloned().collect()
}
