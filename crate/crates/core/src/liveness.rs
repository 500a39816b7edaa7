//! Heartbeat-driven estimation of which monitored processes are trusted.
//!
//! [`Estimator`] is a single-owner state machine. The caller owns the clock:
//! heartbeats and ticks must be fed in non-decreasing time order. Every
//! process starts trusted, and a process is suspected once the time since its
//! last heartbeat (or since the estimator started, before any heartbeat)
//! strictly exceeds its current timeout.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::impact::{trust_level, MonitoredSet, ProcessId, TrustSnapshot};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LivenessError {
    #[error("process {0} is not a member of the monitored set (UnknownProcess)")]
    UnknownProcess(String),
    #[error("time went backwards: fed {got} after {last} (NonMonotoneTime)")]
    NonMonotoneTime { last: u64, got: u64 },
    #[error("invalid estimator config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "FIXED")]
    Fixed,
    #[serde(rename = "ADAPTIVE")]
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub strategy: Strategy,
    pub timeout_ms: u64,
    /// ADAPTIVE: added to a process's timeout after each false suspicion.
    #[serde(default)]
    pub increment_ms: u64,
    /// ADAPTIVE: slack on top of `timeout_ms` for the initial window.
    #[serde(default)]
    pub safety_margin_ms: u64,
}

impl EstimatorConfig {
    pub fn fixed(timeout_ms: u64) -> Self {
        EstimatorConfig {
            strategy: Strategy::Fixed,
            timeout_ms,
            increment_ms: 0,
            safety_margin_ms: 0,
        }
    }

    pub fn adaptive(timeout_ms: u64, increment_ms: u64, safety_margin_ms: u64) -> Self {
        EstimatorConfig {
            strategy: Strategy::Adaptive,
            timeout_ms,
            increment_ms,
            safety_margin_ms,
        }
    }

    pub fn validate(&self) -> Result<(), LivenessError> {
        if self.timeout_ms == 0 {
            return Err(LivenessError::InvalidConfig("timeout_ms must be positive"));
        }
        Ok(())
    }

    /// Per-process timeout before any false suspicion.
    pub fn initial_timeout_ms(&self) -> u64 {
        match self.strategy {
            Strategy::Fixed => self.timeout_ms,
            Strategy::Adaptive => self.timeout_ms + self.safety_margin_ms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TransitionKind {
    Suspect,
    Trust,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub at: u64,
    pub process: ProcessId,
    pub kind: TransitionKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcessState {
    pub last_heartbeat_at: Option<u64>,
    pub highest_seq: Option<u64>,
    pub current_timeout_ms: u64,
    pub suspected: bool,
    pub false_suspicions: u64,
}

impl ProcessState {
    fn deadline(&self, started_at: u64) -> u64 {
        self.last_heartbeat_at.unwrap_or(started_at) + self.current_timeout_ms
    }
}

#[derive(Debug, Clone)]
pub struct Estimator {
    set: MonitoredSet,
    config: EstimatorConfig,
    started_at: u64,
    clock: u64,
    processes: BTreeMap<ProcessId, ProcessState>,
}

impl Estimator {
    pub fn new(
        set: MonitoredSet,
        config: EstimatorConfig,
        now: u64,
    ) -> Result<Self, LivenessError> {
        config.validate()?;
        let initial = config.initial_timeout_ms();
        let processes = set
            .ids()
            .map(|q| {
                let state = ProcessState {
                    last_heartbeat_at: None,
                    highest_seq: None,
                    current_timeout_ms: initial,
                    suspected: false,
                    false_suspicions: 0,
                };
                (q.clone(), state)
            })
            .collect();
        Ok(Estimator {
            set,
            config,
            started_at: now,
            clock: now,
            processes,
        })
    }

    pub fn set(&self) -> &MonitoredSet {
        &self.set
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn process(&self, q: &str) -> Option<&ProcessState> {
        self.processes.get(q)
    }

    pub fn is_suspected(&self, q: &str) -> Option<bool> {
        self.processes.get(q).map(|s| s.suspected)
    }

    pub fn trusted(&self) -> impl Iterator<Item = &ProcessId> {
        self.processes
            .iter()
            .filter(|(_, s)| !s.suspected)
            .map(|(q, _)| q)
    }

    fn advance(&mut self, now: u64) -> Result<(), LivenessError> {
        if now < self.clock {
            return Err(LivenessError::NonMonotoneTime {
                last: self.clock,
                got: now,
            });
        }
        self.clock = now;
        Ok(())
    }

    /// Records a heartbeat from `q` received at `recv_at`.
    pub fn on_heartbeat(
        &mut self,
        q: &str,
        recv_at: u64,
    ) -> Result<Vec<Transition>, LivenessError> {
        let id = match self.processes.get_key_value(q) {
            Some((id, _)) => id.clone(),
            None => return Err(LivenessError::UnknownProcess(q.to_owned())),
        };
        self.advance(recv_at)?;
        let adaptive = self.config.strategy == Strategy::Adaptive;
        let increment = self.config.increment_ms;
        let state = self.processes.get_mut(&id).expect("looked up above");

        state.last_heartbeat_at = Some(state.last_heartbeat_at.map_or(recv_at, |t| t.max(recv_at)));
        if !state.suspected {
            return Ok(Vec::new());
        }
        state.suspected = false;
        state.false_suspicions += 1;
        if adaptive {
            state.current_timeout_ms += increment;
        }
        Ok(vec![Transition {
            at: recv_at,
            process: id,
            kind: TransitionKind::Trust,
        }])
    }

    /// Like [`Estimator::on_heartbeat`], but drops duplicated or reordered
    /// datagrams: a sequence number at or below the highest one already seen
    /// from `q` changes nothing.
    pub fn on_heartbeat_seq(
        &mut self,
        q: &str,
        seq: u64,
        recv_at: u64,
    ) -> Result<Vec<Transition>, LivenessError> {
        let state = self
            .processes
            .get_mut(q)
            .ok_or_else(|| LivenessError::UnknownProcess(q.to_owned()))?;
        if state.highest_seq.is_some_and(|h| seq <= h) {
            self.advance(recv_at)?;
            return Ok(Vec::new());
        }
        if recv_at < self.clock {
            return Err(LivenessError::NonMonotoneTime {
                last: self.clock,
                got: recv_at,
            });
        }
        state.highest_seq = Some(seq);
        self.on_heartbeat(q, recv_at)
    }

    /// Suspects every trusted process whose deadline is strictly before `now`.
    pub fn on_tick(&mut self, now: u64) -> Result<Vec<Transition>, LivenessError> {
        self.advance(now)?;
        let started_at = self.started_at;
        let mut out = Vec::new();
        for (q, state) in self.processes.iter_mut() {
            if !state.suspected && state.deadline(started_at) < now {
                state.suspected = true;
                out.push(Transition {
                    at: now,
                    process: q.clone(),
                    kind: TransitionKind::Suspect,
                });
            }
        }
        Ok(out)
    }

    /// Trust level over the currently unsuspected processes.
    pub fn snapshot(&self, now: u64) -> TrustSnapshot {
        trust_level(&self.set, self.trusted(), now).expect("estimator tracks members only")
    }

    /// Earliest pending deadline among trusted processes. A process with
    /// deadline `d` is suspected by the first tick strictly after `d`.
    pub fn next_deadline(&self) -> Option<u64> {
        self.processes
            .values()
            .filter(|s| !s.suspected)
            .map(|s| s.deadline(self.started_at))
            .min()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::impact::{fig1_set, validate_set, Status};
    use crate::value::ImpactValue;
    use proptest::prelude::*;

    fn single(timeout: u64) -> Estimator {
        let set = validate_set([("q", "1")], "1", "p").unwrap();
        Estimator::new(set, EstimatorConfig::fixed(timeout), 0).unwrap()
    }

    fn v(s: &str) -> ImpactValue {
        ImpactValue::parse(s).unwrap()
    }

    #[test]
    fn starts_optimistic() {
        let est = Estimator::new(fig1_set(), EstimatorConfig::fixed(1500), 0).unwrap();
        assert_eq!(est.trusted().count(), 4);
        assert_eq!(est.next_deadline(), Some(1500));
        let snap = est.snapshot(0);
        assert_eq!(snap.trust_level, v("2.6"));
        assert_eq!(snap.status, Status::Trusted);
    }

    #[test]
    fn first_window_starts_at_creation_time() {
        let mut est = Estimator::new(fig1_set(), EstimatorConfig::fixed(1500), 200).unwrap();
        assert_eq!(est.next_deadline(), Some(1700));
        assert!(est.on_tick(1700).unwrap().is_empty());
        assert_eq!(est.on_tick(1701).unwrap().len(), 4);
        let snap = est.snapshot(1701);
        assert_eq!(snap.trust_level, ImpactValue::ZERO);
        assert_eq!(snap.status, Status::NotTrusted);
        assert_eq!(est.next_deadline(), None);
    }

    #[test]
    fn rejects_zero_timeout() {
        assert!(Estimator::new(fig1_set(), EstimatorConfig::fixed(0), 0).is_err());
    }

    #[test]
    fn strict_deadline() {
        let mut est = single(100);
        est.on_heartbeat("q", 0).unwrap();
        assert!(est.on_tick(100).unwrap().is_empty());
        let t = est.on_tick(101).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].kind, TransitionKind::Suspect);
        assert_eq!(t[0].at, 101);
        // Already suspected: no repeat.
        assert!(est.on_tick(500).unwrap().is_empty());
    }

    #[test]
    fn next_deadline_after_heartbeat() {
        let mut est = single(100);
        est.on_heartbeat("q", 400).unwrap();
        assert_eq!(est.next_deadline(), Some(500));
    }

    #[test]
    fn next_deadline_is_minimum() {
        let set = validate_set([("a", "1"), ("b", "1"), ("c", "1")], "1", "p").unwrap();
        let mut est = Estimator::new(set, EstimatorConfig::fixed(1000), 0).unwrap();
        est.on_heartbeat("a", 500).unwrap();
        est.on_heartbeat("c", 1000).unwrap();
        // a: 1500, b: 1000 (never heard, window from 0), c: 2000
        assert_eq!(est.next_deadline(), Some(1000));
        est.on_tick(1001).unwrap();
        assert_eq!(est.next_deadline(), Some(1500));
    }

    #[test]
    fn false_suspicion_grows_adaptive_timeout() {
        let set = validate_set([("q", "1")], "1", "p").unwrap();
        let mut est = Estimator::new(set, EstimatorConfig::adaptive(1000, 250, 0), 0).unwrap();
        est.on_heartbeat("q", 999).unwrap();
        let s = est.on_tick(2000).unwrap();
        assert_eq!(s.len(), 1);
        let t = est.on_heartbeat("q", 2100).unwrap();
        assert_eq!(
            t,
            vec![Transition {
                at: 2100,
                process: ProcessId::new("q").unwrap(),
                kind: TransitionKind::Trust,
            }]
        );
        let st = est.process("q").unwrap();
        assert_eq!(st.current_timeout_ms, 1250);
        assert_eq!(st.false_suspicions, 1);
        assert_eq!(est.next_deadline(), Some(3350));
    }

    #[test]
    fn fixed_timeout_does_not_grow() {
        let mut est = single(100);
        est.on_tick(101).unwrap();
        est.on_heartbeat("q", 150).unwrap();
        assert_eq!(est.process("q").unwrap().current_timeout_ms, 100);
        assert_eq!(est.process("q").unwrap().false_suspicions, 1);
    }

    #[test]
    fn adaptive_safety_margin_widens_initial_window() {
        let set = validate_set([("q", "1")], "1", "p").unwrap();
        let est = Estimator::new(set, EstimatorConfig::adaptive(1000, 100, 200), 0).unwrap();
        assert_eq!(est.next_deadline(), Some(1200));
    }

    #[test]
    fn heartbeat_on_trusted_extends_deadline() {
        let mut est = single(100);
        assert!(est.on_heartbeat("q", 50).unwrap().is_empty());
        assert_eq!(est.next_deadline(), Some(150));
    }

    #[test]
    fn errors() {
        let mut est = single(100);
        assert_eq!(
            est.on_heartbeat("nobody", 1),
            Err(LivenessError::UnknownProcess("nobody".into()))
        );
        est.on_tick(50).unwrap();
        assert_eq!(
            est.on_tick(49),
            Err(LivenessError::NonMonotoneTime { last: 50, got: 49 })
        );
        assert!(matches!(
            est.on_heartbeat("q", 10),
            Err(LivenessError::NonMonotoneTime { .. })
        ));
        assert!(matches!(
            est.on_heartbeat_seq("q", 3, 10),
            Err(LivenessError::NonMonotoneTime { .. })
        ));
    }

    #[test]
    fn stale_sequence_numbers_are_ignored() {
        let mut est = single(100);
        est.on_heartbeat_seq("q", 5, 10).unwrap();
        est.on_heartbeat_seq("q", 4, 60).unwrap();
        est.on_heartbeat_seq("q", 5, 70).unwrap();
        assert_eq!(est.process("q").unwrap().last_heartbeat_at, Some(10));
        assert_eq!(est.process("q").unwrap().highest_seq, Some(5));
        est.on_heartbeat_seq("q", 6, 80).unwrap();
        assert_eq!(est.process("q").unwrap().last_heartbeat_at, Some(80));
    }

    #[test]
    fn snapshot_with_suspects() {
        let mut est = Estimator::new(fig1_set(), EstimatorConfig::fixed(100), 0).unwrap();
        est.on_heartbeat("q2", 50).unwrap();
        est.on_heartbeat("q4", 50).unwrap();
        est.on_tick(120).unwrap();
        let snap = est.snapshot(120);
        assert_eq!(snap.trust_level, v("1.4"));
        assert_eq!(snap.status, Status::NotTrusted);
    }

    /// Feeds `arrivals` for a single process, ticking at every arrival and at
    /// every pending deadline + 1 up to `until`. Returns all transitions.
    fn drive(est: &mut Estimator, arrivals: &[u64], until: u64) -> Vec<Transition> {
        let mut out = Vec::new();
        let mut i = 0;
        loop {
            let next_arrival = arrivals.get(i).copied();
            let next_tick = est.next_deadline().map(|d| d + 1).filter(|&t| t <= until);
            let now = match (next_arrival, next_tick) {
                (Some(a), Some(t)) => a.min(t),
                (Some(a), None) => a,
                (None, Some(t)) => t,
                (None, None) => break,
            };
            while arrivals.get(i) == Some(&now) {
                out.extend(est.on_heartbeat("q", now).unwrap());
                i += 1;
            }
            out.extend(est.on_tick(now).unwrap());
        }
        out
    }

    fn arrivals_from_gaps(gaps: &[u64]) -> Vec<u64> {
        gaps.iter()
            .scan(0u64, |t, g| {
                *t += g;
                Some(*t)
            })
            .collect()
    }

    proptest! {
        #[test]
        fn crash_stop_completeness(gaps in prop::collection::vec(1u64..400, 0..30), timeout in 1u64..300, extra in 1u64..2000) {
            let arrivals = arrivals_from_gaps(&gaps);
            let last = arrivals.last().copied().unwrap_or(0);
            let mut est = single(timeout);
            let trans = drive(&mut est, &arrivals, last + timeout + extra);
            // Beyond the final deadline the process is suspected and stays so.
            prop_assert_eq!(est.is_suspected("q"), Some(true));
            let last_kind = trans.last().map(|t| t.kind);
            prop_assert_eq!(last_kind, Some(TransitionKind::Suspect));
            prop_assert_eq!(trans.last().unwrap().at, last + timeout + 1);
        }

        #[test]
        fn transitions_alternate(gaps in prop::collection::vec(1u64..400, 0..40), timeout in 1u64..300) {
            let arrivals = arrivals_from_gaps(&gaps);
            let mut est = single(timeout);
            let until = arrivals.last().copied().unwrap_or(0) + 1000;
            let trans = drive(&mut est, &arrivals, until);
            for pair in trans.windows(2) {
                prop_assert_ne!(pair[0].kind, pair[1].kind);
            }
            if let Some(first) = trans.first() {
                prop_assert_eq!(first.kind, TransitionKind::Suspect);
            }
        }

        #[test]
        fn deterministic(gaps in prop::collection::vec(1u64..400, 0..40), timeout in 1u64..300) {
            let arrivals = arrivals_from_gaps(&gaps);
            let a = drive(&mut single(timeout), &arrivals, 20_000);
            let b = drive(&mut single(timeout), &arrivals, 20_000);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn adaptive_stabilizes(
            prefix in prop::collection::vec(1u64..3000, 0..20),
            bound in 1u64..2000,
            suffix_len in 1usize..60,
            seed_gaps in prop::collection::vec(1u64..2000, 60),
            init in 1u64..1500,
            inc in 1u64..300,
        ) {
            let suffix: Vec<u64> = seed_gaps.iter().take(suffix_len).map(|g| 1 + g % bound).collect();
            let mut gaps = prefix.clone();
            gaps.extend(&suffix);
            let arrivals = arrivals_from_gaps(&gaps);
            let boundary = arrivals_from_gaps(&prefix).last().copied().unwrap_or(0);
            let last = *arrivals.last().unwrap();

            let set = validate_set([("q", "1")], "1", "p").unwrap();
            let mut est = Estimator::new(set, EstimatorConfig::adaptive(init, inc, 0), 0).unwrap();
            let trans = drive(&mut est, &arrivals, last);
            let late_suspicions = trans
                .iter()
                .filter(|t| t.kind == TransitionKind::Suspect && t.at > boundary)
                .count() as u64;
            let allowed = bound.saturating_sub(init).div_ceil(inc) + 1;
            prop_assert!(late_suspicions <= allowed, "{} > {}", late_suspicions, allowed);
            prop_assert!(est.process("q").unwrap().current_timeout_ms >= init);
        }
    }
}
