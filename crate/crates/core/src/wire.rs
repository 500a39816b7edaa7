//! Live mode: heartbeat datagrams over UDP.
//!
//! A heartbeat is exactly 28 bytes, integers big-endian:
//!
//! ```text
//! offset  size  field
//!      0     4  magic "IFD1"
//!      4     8  sender numeric id
//!     12     8  sequence number
//!     20     8  sender wall-clock timestamp, ms (informational)
//! ```
//!
//! The watcher judges liveness from its own monotone receive clock only; the
//! sender timestamp never reaches the estimator.

use std::collections::BTreeMap;
use std::io;
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::impact::{ImpactError, MonitoredSet, ProcessId, SetSpec, TrustSnapshot};
use crate::liveness::{Estimator, EstimatorConfig, Transition};

pub const MAGIC: [u8; 4] = *b"IFD1";
pub const MSG_LEN: usize = 28;

/// Longest pause before the sender and watcher loops re-check their stop flag.
const POLL_SLICE: Duration = Duration::from_millis(20);

#[derive(Debug, Error)]
pub enum WireError {
    #[error("datagram does not start with \"IFD1\" (BadMagic)")]
    BadMagic,
    #[error("datagram is {0} bytes, expected 28 (BadLength)")]
    BadLength(usize),
    #[error("invalid live config: {0}")]
    Config(String),
    #[error("invalid live config: {0}")]
    Set(#[from] ImpactError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> WireError {
    let context = context.into();
    move |source| WireError::Io { context, source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HeartbeatMsg {
    pub sender_id: u64,
    pub seq: u64,
    pub send_ts_ms: u64,
}

impl HeartbeatMsg {
    pub fn encode(&self) -> [u8; MSG_LEN] {
        let mut out = [0u8; MSG_LEN];
        out[..4].copy_from_slice(&MAGIC);
        out[4..12].copy_from_slice(&self.sender_id.to_be_bytes());
        out[12..20].copy_from_slice(&self.seq.to_be_bytes());
        out[20..28].copy_from_slice(&self.send_ts_ms.to_be_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        if bytes.len() != MSG_LEN {
            return Err(WireError::BadLength(bytes.len()));
        }
        if bytes[..4] != MAGIC {
            return Err(WireError::BadMagic);
        }
        let word = |at: usize| u64::from_be_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
        Ok(HeartbeatMsg {
            sender_id: word(4),
            seq: word(12),
            send_ts_ms: word(20),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiveConfig {
    pub set: SetSpec,
    /// Numeric wire id of every member.
    pub ids: BTreeMap<String, u64>,
    /// Address the watcher binds and senders target.
    pub listen: String,
    pub heartbeat_period_ms: u64,
    pub estimator: EstimatorConfig,
    pub report_period_ms: u64,
}

/// A [`LiveConfig`] after validation.
#[derive(Debug, Clone)]
pub struct LiveSetup {
    pub set: MonitoredSet,
    pub by_wire_id: BTreeMap<u64, ProcessId>,
    pub listen: SocketAddr,
    pub heartbeat_period: Duration,
    pub estimator: EstimatorConfig,
    pub report_period: Duration,
}

impl LiveSetup {
    pub fn wire_id(&self, q: &str) -> Option<u64> {
        self.by_wire_id
            .iter()
            .find(|(_, p)| p.as_str() == q)
            .map(|(id, _)| *id)
    }
}

impl LiveConfig {
    pub fn from_json(text: &str) -> Result<Self, WireError> {
        serde_json::from_str(text).map_err(|e| WireError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<LiveSetup, WireError> {
        let set = self.set.validate()?;
        self.estimator
            .validate()
            .map_err(|e| WireError::Config(e.to_string()))?;
        let mut by_wire_id = BTreeMap::new();
        for (name, &id) in &self.ids {
            let q = ProcessId::new(name.clone())?;
            if !set.contains(name) {
                return Err(WireError::Config(format!(
                    "id given for {name}, which is not in the set"
                )));
            }
            if let Some(other) = by_wire_id.insert(id, q) {
                return Err(WireError::Config(format!(
                    "wire id {id} bound to both {other} and {name}"
                )));
            }
        }
        if let Some(q) = set.ids().find(|q| !self.ids.contains_key(q.as_str())) {
            return Err(WireError::Config(format!("no wire id for {q}")));
        }
        let listen: SocketAddr = self
            .listen
            .parse()
            .map_err(|e| WireError::Config(format!("listen address {:?}: {e}", self.listen)))?;
        if self.heartbeat_period_ms == 0 || self.report_period_ms == 0 {
            return Err(WireError::Config("periods must be positive".into()));
        }
        Ok(LiveSetup {
            set,
            by_wire_id,
            listen,
            heartbeat_period: Duration::from_millis(self.heartbeat_period_ms),
            estimator: self.estimator.clone(),
            report_period: Duration::from_millis(self.report_period_ms),
        })
    }
}

fn wall_clock_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

/// Sleeps until `deadline` or until `stop` is raised. Returns false if stopped.
fn sleep_until(deadline: Instant, stop: &AtomicBool) -> bool {
    loop {
        if stop.load(Ordering::Relaxed) {
            return false;
        }
        let now = Instant::now();
        if now >= deadline {
            return true;
        }
        thread::sleep((deadline - now).min(POLL_SLICE));
    }
}

/// Periodic heartbeat sender for one monitored process.
#[derive(Debug)]
pub struct Sender {
    wire_id: u64,
    target: SocketAddr,
    period: Duration,
}

impl Sender {
    /// Validates the config and the process binding; does no I/O.
    pub fn new(config: &LiveConfig, process: &str) -> Result<Self, WireError> {
        let setup = config.validate()?;
        let wire_id = setup
            .wire_id(process)
            .ok_or_else(|| WireError::Config(format!("unknown process {process:?}")))?;
        Ok(Sender {
            wire_id,
            target: setup.listen,
            period: setup.heartbeat_period,
        })
    }

    /// Sends immediately, then every period, until `stop` is raised.
    /// Returns the number of heartbeats sent.
    pub fn run(&self, stop: &AtomicBool) -> Result<u64, WireError> {
        let bind: SocketAddr = if self.target.is_ipv4() {
            "0.0.0.0:0".parse().expect("literal")
        } else {
            "[::]:0".parse().expect("literal")
        };
        let socket = UdpSocket::bind(bind).map_err(io_err("bind sender socket"))?;
        let start = Instant::now();
        let mut seq = 0u64;
        loop {
            let msg = HeartbeatMsg {
                sender_id: self.wire_id,
                seq,
                send_ts_ms: wall_clock_ms(),
            };
            // Losing a datagram (e.g. nobody listening yet) is part of the model.
            let _ = socket.send_to(&msg.encode(), self.target);
            seq += 1;
            let next = start + self.period * u32::try_from(seq).unwrap_or(u32::MAX);
            if !sleep_until(next, stop) {
                return Ok(seq);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct WatchStats {
    pub accepted: u64,
    pub malformed: u64,
    pub unknown_sender: u64,
}

/// The watcher's decision state, independent of sockets and real time.
#[derive(Debug, Clone)]
pub struct WatchState {
    estimator: Estimator,
    by_wire_id: BTreeMap<u64, ProcessId>,
    stats: WatchStats,
}

impl WatchState {
    pub fn new(setup: &LiveSetup, now: u64) -> Self {
        let estimator = Estimator::new(setup.set.clone(), setup.estimator.clone(), now)
            .expect("config validated");
        WatchState {
            estimator,
            by_wire_id: setup.by_wire_id.clone(),
            stats: WatchStats::default(),
        }
    }

    pub fn stats(&self) -> WatchStats {
        self.stats
    }

    pub fn estimator(&self) -> &Estimator {
        &self.estimator
    }

    /// Feeds one datagram received at watcher time `now`, then evaluates
    /// deadlines. Bad datagrams are counted and otherwise ignored.
    pub fn on_datagram(&mut self, bytes: &[u8], now: u64) -> Vec<Transition> {
        let mut out = Vec::new();
        match HeartbeatMsg::decode(bytes) {
            Err(_) => self.stats.malformed += 1,
            Ok(msg) => match self.by_wire_id.get(&msg.sender_id) {
                None => self.stats.unknown_sender += 1,
                Some(q) => {
                    self.stats.accepted += 1;
                    out.extend(
                        self.estimator
                            .on_heartbeat_seq(q.as_str(), msg.seq, now)
                            .expect("known member, monotone clock"),
                    );
                }
            },
        }
        out.extend(self.on_tick(now));
        out
    }

    pub fn on_tick(&mut self, now: u64) -> Vec<Transition> {
        self.estimator.on_tick(now).expect("monotone clock")
    }

    pub fn snapshot(&self, now: u64) -> TrustSnapshot {
        self.estimator.snapshot(now)
    }

    /// Next instant at which a deadline can expire.
    pub fn next_wakeup(&self) -> Option<u64> {
        self.estimator.next_deadline().map(|d| d + 1)
    }
}

/// UDP watcher driving a [`WatchState`] from a local monotone clock.
///
/// Datagram intake and deadline/report timing share one thread, so every
/// estimator update is serialized and a report never waits on more than one
/// evaluation.
#[derive(Debug)]
pub struct Watcher {
    socket: UdpSocket,
    setup: LiveSetup,
}

impl Watcher {
    pub fn bind(config: &LiveConfig) -> Result<Self, WireError> {
        let setup = config.validate()?;
        let socket = UdpSocket::bind(setup.listen)
            .map_err(io_err(format!("bind watcher on {}", setup.listen)))?;
        Ok(Watcher { socket, setup })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, WireError> {
        self.socket
            .local_addr()
            .map_err(io_err("query watcher address"))
    }

    /// Runs until `stop` is raised, handing every periodic report to
    /// `report`. The first report is at time 0.
    pub fn run(
        &self,
        stop: &AtomicBool,
        mut report: impl FnMut(&TrustSnapshot, &WatchStats),
    ) -> Result<WatchStats, WireError> {
        let start = Instant::now();
        let elapsed_ms = || start.elapsed().as_millis() as u64;
        let report_every = self.setup.report_period.as_millis() as u64;
        let mut state = WatchState::new(&self.setup, 0);
        let mut next_report = 0u64;
        let mut buf = [0u8; 1500];

        while !stop.load(Ordering::Relaxed) {
            let now = elapsed_ms();
            state.on_tick(now);
            if now >= next_report {
                report(&state.snapshot(now), &state.stats());
                while next_report <= now {
                    next_report += report_every;
                }
            }

            let wake = state
                .next_wakeup()
                .map_or(next_report, |w| w.min(next_report));
            let wait = Duration::from_millis(wake.saturating_sub(now).max(1)).min(POLL_SLICE);
            self.socket
                .set_read_timeout(Some(wait))
                .map_err(io_err("set watcher timeout"))?;
            match self.socket.recv_from(&mut buf) {
                Ok((n, _)) => {
                    state.on_datagram(&buf[..n], elapsed_ms());
                }
                Err(e)
                    if matches!(
                        e.kind(),
                        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut
                    ) => {}
                Err(e) if e.kind() == io::ErrorKind::ConnectionReset => {}
                Err(e) => return Err(io_err("receive heartbeat")(e)),
            }
        }
        Ok(state.stats())
    }
}
