use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use super::SimError;
use crate::impact::{MonitoredSet, ProcessId, SetSpec};
use crate::liveness::EstimatorConfig;
use crate::value::ImpactValue;

/// A probability with six decimal digits, stored as parts per million.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Probability(u32);

impl Probability {
    pub const ZERO: Probability = Probability(0);

    pub fn from_ppm(ppm: u32) -> Option<Self> {
        (ppm <= 1_000_000).then_some(Probability(ppm))
    }

    pub fn ppm(self) -> u32 {
        self.0
    }

    pub fn parse(s: &str) -> Result<Self, String> {
        let v = ImpactValue::parse(s).map_err(|e| e.to_string())?;
        u32::try_from(v.micro())
            .ok()
            .and_then(Probability::from_ppm)
            .ok_or_else(|| format!("probability {s} is above 1"))
    }
}

impl fmt::Display for Probability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        ImpactValue::from_micro(u64::from(self.0)).fmt(f)
    }
}

impl Serialize for Probability {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Probability {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        // Accept "0.3" as well as 0.3; a JSON number is re-read from its
        // shortest decimal text, so no binary rounding reaches the value.
        let raw = serde_json::Value::deserialize(d)?;
        let text = match &raw {
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Number(n) => n.to_string(),
            other => {
                return Err(serde::de::Error::custom(format!(
                    "expected a probability, got {other}"
                )))
            }
        };
        Probability::parse(&text).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkModel {
    pub min_delay_ms: u64,
    pub max_delay_ms: u64,
    pub loss_prob: Probability,
    /// Global stabilization time; `None` keeps the lossy regime forever.
    #[serde(default)]
    pub gst_ms: Option<u64>,
    pub post_gst_delay_ms: u64,
}

impl NetworkModel {
    /// Instant, lossless links.
    pub fn perfect() -> Self {
        NetworkModel {
            min_delay_ms: 0,
            max_delay_ms: 0,
            loss_prob: Probability::ZERO,
            gst_ms: None,
            post_gst_delay_ms: 0,
        }
    }

    pub fn is_stable_at(&self, t: u64) -> bool {
        self.gst_ms.is_some_and(|g| t >= g)
    }

    fn validate(&self) -> Result<(), SimError> {
        if self.min_delay_ms > self.max_delay_ms {
            return Err(SimError::InvalidScenario(
                "min_delay_ms exceeds max_delay_ms".into(),
            ));
        }
        if self.post_gst_delay_ms > self.max_delay_ms {
            return Err(SimError::InvalidScenario(
                "post_gst_delay_ms exceeds max_delay_ms".into(),
            ));
        }
        if self.gst_ms.is_some() && self.post_gst_delay_ms < self.min_delay_ms {
            return Err(SimError::InvalidScenario(
                "post_gst_delay_ms is below min_delay_ms".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrashSpec {
    pub process: String,
    pub crash_at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub set: SetSpec,
    pub heartbeat_period_ms: u64,
    pub estimator: EstimatorConfig,
    pub network: NetworkModel,
    #[serde(default)]
    pub crashes: Vec<CrashSpec>,
    pub duration_ms: u64,
    pub sample_period_ms: u64,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        serde_json::from_str(text).map_err(|e| SimError::InvalidScenario(e.to_string()))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Checks every scenario invariant and returns the validated set.
    pub fn validate(&self) -> Result<MonitoredSet, SimError> {
        let set = self.set.validate()?;
        self.estimator
            .validate()
            .map_err(|e| SimError::InvalidScenario(e.to_string()))?;
        self.network.validate()?;
        if self.heartbeat_period_ms == 0 {
            return Err(SimError::InvalidScenario(
                "heartbeat_period_ms must be positive".into(),
            ));
        }
        if self.sample_period_ms == 0 {
            return Err(SimError::InvalidScenario(
                "sample_period_ms must be positive".into(),
            ));
        }
        if self.duration_ms == 0 {
            return Err(SimError::InvalidScenario(
                "duration_ms must be positive".into(),
            ));
        }
        let mut crashed = BTreeSet::new();
        for c in &self.crashes {
            if !set.contains(&c.process) {
                return Err(SimError::InvalidScenario(format!(
                    "crash of {} which is not in the monitored set",
                    c.process
                )));
            }
            if !crashed.insert(c.process.as_str()) {
                return Err(SimError::InvalidScenario(format!(
                    "{} crashes more than once",
                    c.process
                )));
            }
            if c.crash_at_ms >= self.duration_ms {
                return Err(SimError::InvalidScenario(format!(
                    "crash of {} at {} is not before the end of the run",
                    c.process, c.crash_at_ms
                )));
            }
        }
        Ok(set)
    }

    /// Hex SHA-256 of the compact JSON encoding.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Replaces the crash schedule.
    pub fn with_crashes(mut self, crashes: &[(&str, u64)]) -> Self {
        self.crashes = crashes
            .iter()
            .map(|(q, at)| CrashSpec {
                process: (*q).to_owned(),
                crash_at_ms: *at,
            })
            .collect();
        self
    }

    pub(crate) fn crash_schedule(&self) -> Vec<(ProcessId, u64)> {
        self.crashes
            .iter()
            .map(|c| {
                (
                    ProcessId::new(c.process.clone()).expect("validated"),
                    c.crash_at_ms,
                )
            })
            .collect()
    }
}

const HEALTHCARE: &str = include_str!("../../scenarios/healthcare.json");
const CDS: &str = include_str!("../../scenarios/cds.json");

/// The bundled scenarios: `healthcare` and `cds`.
pub fn builtin_scenarios() -> Vec<Scenario> {
    [HEALTHCARE, CDS]
        .into_iter()
        .map(|text| Scenario::from_json(text).expect("bundled scenario parses"))
        .collect()
}

pub fn builtin_scenario(name: &str) -> Option<Scenario> {
    builtin_scenarios().into_iter().find(|s| s.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::impact::{status_via_untrusted, Status};

    fn ids(names: &[&str]) -> Vec<ProcessId> {
        names.iter().map(|n| ProcessId::new(*n).unwrap()).collect()
    }

    #[test]
    fn builtins_validate() {
        let all = builtin_scenarios();
        assert_eq!(all.len(), 2);
        for s in &all {
            s.validate().unwrap();
        }
    }

    #[test]
    fn healthcare_impacts() {
        let set = builtin_scenario("healthcare").unwrap().validate().unwrap();
        assert_eq!(set.total().to_string(), "2.6");
        assert_eq!(
            status_via_untrusted(&set, &ids(&["q2"])).unwrap(),
            Status::Trusted
        );
        assert_eq!(
            status_via_untrusted(&set, &ids(&["q3"])).unwrap(),
            Status::NotTrusted
        );
    }

    #[test]
    fn cds_impacts() {
        let set = builtin_scenario("cds").unwrap().validate().unwrap();
        assert_eq!(set.len(), 12);
        let leaves = ids(&["n1", "n2", "n3", "n4", "n5", "n6", "n7", "n8", "n9"]);
        assert_eq!(
            status_via_untrusted(&set, &leaves).unwrap(),
            Status::Trusted
        );
        for d in ["d1", "d2", "d3"] {
            assert_eq!(
                status_via_untrusted(&set, &ids(&[d])).unwrap(),
                Status::NotTrusted
            );
        }
    }

    #[test]
    fn probability_parsing() {
        assert_eq!(Probability::parse("0.3").unwrap().ppm(), 300_000);
        assert_eq!(Probability::parse("1").unwrap().ppm(), 1_000_000);
        assert!(Probability::parse("1.000001").is_err());
        let p: Probability = serde_json::from_str("0.3").unwrap();
        assert_eq!(p.ppm(), 300_000);
        let p: Probability = serde_json::from_str("\"0.05\"").unwrap();
        assert_eq!(p.ppm(), 50_000);
        assert!(serde_json::from_str::<Probability>("true").is_err());
        assert_eq!(serde_json::to_string(&p).unwrap(), "\"0.05\"");
    }

    #[test]
    fn invalid_scenarios() {
        let base = builtin_scenario("healthcare").unwrap();

        let bad = base.clone().with_crashes(&[("zz", 10)]);
        assert!(matches!(bad.validate(), Err(SimError::InvalidScenario(_))));

        let bad = base.clone().with_crashes(&[("q1", 10), ("q1", 20)]);
        assert!(bad.validate().is_err());

        let bad = base.clone().with_crashes(&[("q1", base.duration_ms)]);
        assert!(bad.validate().is_err());

        let mut bad = base.clone();
        bad.network.min_delay_ms = 500;
        assert!(bad.validate().is_err());

        let mut bad = base.clone();
        bad.heartbeat_period_ms = 0;
        assert!(bad.validate().is_err());

        let mut bad = base.clone();
        bad.set.members[0].1 = "0".into();
        let err = bad.validate().unwrap_err();
        assert!(err.to_string().contains("NonPositiveImpact"), "{err}");
    }

    #[test]
    fn digest_tracks_content() {
        let a = builtin_scenario("healthcare").unwrap();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.duration_ms += 1;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }
}
