//! Deterministic discrete-event simulation of one monitor observing its set.
//!
//! Every process in the set sends a heartbeat each `heartbeat_period_ms`,
//! starting at t=0, until it crashes. Before GST each heartbeat is lost with
//! `loss_prob` and otherwise delayed uniformly in
//! `[min_delay_ms, max_delay_ms]`; heartbeats sent at or after GST are never
//! lost and are delayed in `[min_delay_ms, post_gst_delay_ms]`. The monitor
//! runs a liveness [`Estimator`] and the run records everything in a
//! [`Trace`].
//!
//! Within one instant the loop handles crashes, then sends, then receives,
//! then evaluates deadlines, then samples. A crash at `t` suppresses the send
//! due at `t`. Deadlines are evaluated at every instant something happens and
//! one millisecond after every pending deadline.

mod rng;
mod scenario;
mod trace;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

pub use rng::DetRng;
pub use scenario::{
    builtin_scenario, builtin_scenarios, CrashSpec, NetworkModel, Probability, Scenario,
};
pub use trace::{Event, EventKind, FailurePattern, Trace, TraceError, TraceHeader};

use crate::impact::{ImpactError, ProcessId};
use crate::liveness::{Estimator, Transition, TransitionKind};

pub const TOOL_VERSION: &str = concat!("impactfd ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid scenario: {0}")]
    InvalidSet(#[from] ImpactError),
}

fn transition_event(t: Transition) -> Event {
    let kind = match t.kind {
        TransitionKind::Suspect => EventKind::Suspect { q: t.process },
        TransitionKind::Trust => EventKind::Trust { q: t.process },
    };
    Event::new(t.at, kind)
}

/// Runs `scenario` to completion under `seed`.
pub fn run(scenario: &Scenario, seed: u64) -> Result<Trace, SimError> {
    let set = scenario.validate()?;
    let net = &scenario.network;
    let period = scenario.heartbeat_period_ms;
    let horizon = scenario.duration_ms;

    let mut rng = DetRng::new(seed);
    let mut estimator = Estimator::new(set.clone(), scenario.estimator.clone(), 0)
        .map_err(|e| SimError::InvalidScenario(e.to_string()))?;

    let mut crash_at: BTreeMap<u64, Vec<ProcessId>> = BTreeMap::new();
    for (q, t) in scenario.crash_schedule() {
        crash_at.entry(t).or_default().push(q);
    }
    let mut crashed: BTreeSet<ProcessId> = BTreeSet::new();
    let mut in_flight: BTreeMap<u64, Vec<(ProcessId, u64)>> = BTreeMap::new();
    let mut ticks: BTreeSet<u64> = BTreeSet::new();
    let mut next_send = Some(0u64);
    let mut next_sample = Some(0u64);

    let mut header = TraceHeader::new(scenario.digest(), seed);
    header.name = Some(scenario.name.clone());
    header.set = Some(set.to_spec());
    header.heartbeat_period_ms = Some(period);
    header.sample_period_ms = Some(scenario.sample_period_ms);
    header.duration_ms = Some(horizon);
    let mut events = Vec::new();

    loop {
        let now = [
            next_send,
            next_sample,
            crash_at.keys().next().copied(),
            in_flight.keys().next().copied(),
            ticks.first().copied(),
        ]
        .into_iter()
        .flatten()
        .min();
        let Some(now) = now.filter(|&t| t <= horizon) else {
            break;
        };
        let mut step = Vec::new();

        if let Some(qs) = crash_at.remove(&now) {
            for q in qs {
                step.push(Event::new(now, EventKind::Crash { q: q.clone() }));
                crashed.insert(q);
            }
        }

        if next_send == Some(now) {
            let seq = now / period;
            let stable = net.is_stable_at(now);
            for q in set.ids().filter(|q| !crashed.contains(*q)) {
                step.push(Event::new(now, EventKind::HbSend { q: q.clone(), seq }));
                if !stable && rng.chance_ppm(net.loss_prob.ppm()) {
                    step.push(Event::new(now, EventKind::Drop { q: q.clone(), seq }));
                    continue;
                }
                let upper = if stable {
                    net.post_gst_delay_ms
                } else {
                    net.max_delay_ms
                };
                let delay = rng.uniform_inclusive(net.min_delay_ms, upper);
                in_flight
                    .entry(now + delay)
                    .or_default()
                    .push((q.clone(), seq));
            }
            next_send = now.checked_add(period);
        }

        if let Some(mut arrivals) = in_flight.remove(&now) {
            arrivals.sort();
            for (q, seq) in arrivals {
                step.push(Event::new(now, EventKind::HbRecv { q: q.clone(), seq }));
                let trans = estimator
                    .on_heartbeat_seq(q.as_str(), seq, now)
                    .expect("members only, monotone clock");
                step.extend(trans.into_iter().map(transition_event));
            }
        }

        ticks.remove(&now);
        let trans = estimator.on_tick(now).expect("monotone clock");
        step.extend(trans.into_iter().map(transition_event));

        if next_sample == Some(now) {
            step.push(Event::sample(&estimator.snapshot(now)));
            next_sample = now.checked_add(scenario.sample_period_ms);
        }

        if let Some(deadline) = estimator.next_deadline() {
            ticks.insert(deadline + 1);
        }

        step.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        events.extend(step);
    }

    Ok(Trace { header, events })
}
