//! Impact-weighted failure detection.
//!
//! A monitor `p` watches a set `S` of processes, each carrying an impact
//! factor. Its output is the trust level of `S`, the summed impact of the
//! processes it currently trusts, and `S` is TRUSTED while that level stays
//! strictly above `sum(S) − fault_margin`.
//!
//! - [`value`]: exact fixed-point decimals for impacts and levels.
//! - [`impact`]: monitored sets, trust level and status.
//! - [`liveness`]: heartbeat/timeout estimation of the trusted subset.
//! - [`sim`]: deterministic partial-synchrony simulation producing traces.
//! - [`props`]: finite-trace checking of completeness and accuracy properties.
//! - [`wire`]: UDP heartbeat datagrams, sender and watcher.

pub mod impact;
pub mod liveness;
pub mod props;
pub mod sim;
pub mod value;
pub mod wire;

pub use impact::{
    fig1_set, fig1_table, status_via_untrusted, sum_impacts, trust_level, validate_set, Fig1Row,
    ImpactError, MonitoredSet, ProcessId, SetSpec, Status, TrustSnapshot,
};
pub use liveness::{
    Estimator, EstimatorConfig, LivenessError, Strategy, Transition, TransitionKind,
};
pub use props::{
    check_accuracy, check_completeness, check_set_sum, classify, replay_core, CheckerConfig,
    ClassReport, ClassVerdict, PropVerdict, Verdict,
};
pub use sim::{run, Event, EventKind, NetworkModel, Scenario, SimError, Trace, TraceError};
pub use value::ImpactValue;
pub use wire::{HeartbeatMsg, LiveConfig, WireError};
