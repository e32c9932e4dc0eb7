// SPDX-License-Identifier: Apache-2.0

//! Threat profiles built from audit logs.
//!
//! A profile is a tree over one log window:
//!
//! ```text
//! root (window, record counts)
//! ├── client "alice"
//! │   ├── activities: read → {count, ok, denied, failed, reasons, latency}
//! │   └── events: sm.validate_address → {count, ok, denied, failed}
//! ├── client "scheduler"
//! │   └── ...
//! └── system {availability, avg_latency_ms, failure_rate}
//! ```
//!
//! Activity leaves count terminal records only (a command kind with an
//! outcome). Everything else a principal produced lands in its event leaves.
//!
//! System characteristics over the terminal records of the window:
//! availability is (ok + denied) / total, failure rate is failed / total and
//! average latency is the mean over terminal records that carry one. An empty
//! window has availability 1 and failure rate 0.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{AuditRecord, Outcome, TimeWindow, World};
use crate::cmdparse::CommandKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Element {
    ExternalEntity,
    Process,
    DataFlow,
    DataStore,
}

impl Element {
    pub const ALL: [Element; 4] = [
        Element::ExternalEntity,
        Element::Process,
        Element::DataFlow,
        Element::DataStore,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threat {
    Spoofing,
    Tampering,
    Repudiation,
    InformationDisclosure,
    DenialOfService,
    ElevationOfPrivilege,
}

impl Threat {
    pub const ALL: [Threat; 6] = [
        Threat::Spoofing,
        Threat::Tampering,
        Threat::Repudiation,
        Threat::InformationDisclosure,
        Threat::DenialOfService,
        Threat::ElevationOfPrivilege,
    ];
}

/// STRIDE threats applicable to each element class.
pub fn stride_map(element: Element) -> &'static [Threat] {
    use Threat::*;
    match element {
        Element::ExternalEntity => &[Spoofing, Repudiation],
        Element::Process => &[
            Spoofing,
            Tampering,
            Repudiation,
            InformationDisclosure,
            DenialOfService,
            ElevationOfPrivilege,
        ],
        Element::DataFlow => &[Tampering, InformationDisclosure, DenialOfService],
        Element::DataStore => &[Tampering, Repudiation, InformationDisclosure, DenialOfService],
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrideTag {
    pub element: Element,
    pub threats: BTreeSet<Threat>,
}

impl StrideTag {
    pub fn for_element(element: Element) -> Self {
        Self {
            element,
            threats: stride_map(element).iter().copied().collect(),
        }
    }
}

/// Element class of a log activity name.
pub fn classify_activity(activity: &str) -> Element {
    if CommandKind::from_verb(activity).is_some() {
        return Element::Process;
    }
    if activity.starts_with("auth.") || activity == "sm.validate_key" {
        Element::ExternalEntity
    } else if activity.starts_with("nc.") {
        Element::DataFlow
    } else if activity.starts_with("dc.") {
        Element::DataStore
    } else {
        Element::Process
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ActivityNode {
    pub count: u64,
    pub ok: u64,
    pub denied: u64,
    pub failed: u64,
    pub denial_reasons: BTreeMap<String, u64>,
    pub latency_mean_ms: f64,
    pub latency_max_ms: u64,
}

impl ActivityNode {
    /// Adds one terminal record; `latency` accumulates (sum, n) for the mean.
    fn add(&mut self, rec: &AuditRecord, latency: &mut (u64, u64)) {
        self.count += 1;
        match rec.outcome {
            Some(Outcome::Ok) => self.ok += 1,
            Some(Outcome::Denied) => {
                self.denied += 1;
                let reason = rec.reason().unwrap_or("unspecified").to_owned();
                *self.denial_reasons.entry(reason).or_default() += 1;
            }
            Some(Outcome::Failed) => self.failed += 1,
            None => {}
        }
        if let Some(l) = rec.latency_ms {
            latency.0 += l;
            latency.1 += 1;
            self.latency_max_ms = self.latency_max_ms.max(l);
            self.latency_mean_ms = latency.0 as f64 / latency.1 as f64;
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventNode {
    pub count: u64,
    pub ok: u64,
    pub denied: u64,
    pub failed: u64,
}

impl EventNode {
    fn add(&mut self, rec: &AuditRecord) {
        self.count += 1;
        match rec.outcome {
            Some(Outcome::Ok) => self.ok += 1,
            Some(Outcome::Denied) => self.denied += 1,
            Some(Outcome::Failed) => self.failed += 1,
            None => {}
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClientNode {
    pub principal: String,
    pub activities: BTreeMap<String, ActivityNode>,
    pub events: BTreeMap<String, EventNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemNode {
    pub availability: f64,
    pub avg_latency_ms: f64,
    pub failure_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRoot {
    pub window: TimeWindow,
    pub total_records: u64,
    pub terminal_records: u64,
    pub records_by_world: BTreeMap<World, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreatProfileTree {
    pub root: ProfileRoot,
    /// Ordered by principal.
    pub clients: Vec<ClientNode>,
    pub system: SystemNode,
}

impl ThreatProfileTree {
    pub fn client(&self, principal: &str) -> Option<&ClientNode> {
        self.clients.iter().find(|c| c.principal == principal)
    }

    /// Sum of all activity-leaf counts.
    pub fn leaf_total(&self) -> u64 {
        self.clients
            .iter()
            .flat_map(|c| c.activities.values())
            .map(|a| a.count)
            .sum()
    }
}

/// Builds the profile for `window` from seq-ordered records.
pub fn build_profile(logs: &[AuditRecord], window: TimeWindow) -> ThreatProfileTree {
    let mut clients: BTreeMap<&str, ClientNode> = BTreeMap::new();
    let mut by_world: BTreeMap<World, u64> = BTreeMap::new();
    let (mut total, mut terminal, mut ok, mut denied, mut failed) = (0u64, 0u64, 0u64, 0u64, 0u64);
    let (mut lat_sum, mut lat_n) = (0u64, 0u64);
    let mut leaf_latency: BTreeMap<(String, String), (u64, u64)> = BTreeMap::new();

    for rec in logs.iter().filter(|r| window.contains(r.timestamp)) {
        total += 1;
        *by_world.entry(rec.world).or_default() += 1;
        let node = clients.entry(rec.principal.as_str()).or_insert_with(|| ClientNode {
            principal: rec.principal.clone(),
            ..ClientNode::default()
        });
        if rec.is_terminal() {
            terminal += 1;
            match rec.outcome {
                Some(Outcome::Ok) => ok += 1,
                Some(Outcome::Denied) => denied += 1,
                Some(Outcome::Failed) => failed += 1,
                None => unreachable!("terminal records carry an outcome"),
            }
            if let Some(l) = rec.latency_ms {
                lat_sum += l;
                lat_n += 1;
            }
            let acc = leaf_latency
                .entry((rec.principal.clone(), rec.activity.clone()))
                .or_default();
            node.activities.entry(rec.activity.clone()).or_default().add(rec, acc);
        } else {
            node.events.entry(rec.activity.clone()).or_default().add(rec);
        }
    }

    let system = if terminal == 0 {
        SystemNode {
            availability: 1.0,
            avg_latency_ms: 0.0,
            failure_rate: 0.0,
        }
    } else {
        SystemNode {
            availability: (ok + denied) as f64 / terminal as f64,
            avg_latency_ms: if lat_n == 0 { 0.0 } else { lat_sum as f64 / lat_n as f64 },
            failure_rate: failed as f64 / terminal as f64,
        }
    };

    ThreatProfileTree {
        root: ProfileRoot {
            window,
            total_records: total,
            terminal_records: terminal,
            records_by_world: by_world,
        },
        clients: clients.into_values().collect(),
        system,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    DeniedRate,
    FailureRate,
}

/// A leaf whose rate exceeds its baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anomaly {
    /// `<principal>/<activity>`.
    pub path: String,
    pub metric: Metric,
    pub observed: f64,
    pub baseline_mean: f64,
    pub baseline_stddev: f64,
    /// `(observed - mean) / stddev`; absent when the baseline has no spread.
    pub z_score: Option<f64>,
    pub tag: StrideTag,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("anomaly detection needs at least one baseline profile")]
pub struct NoBaseline;

pub const DEFAULT_ANOMALY_K: f64 = 3.0;

const RATE_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default)]
struct Rates {
    denied: f64,
    failed: f64,
}

fn leaf_rates(tree: &ThreatProfileTree) -> BTreeMap<(String, String), Rates> {
    fn rates(count: u64, denied: u64, failed: u64) -> Rates {
        if count == 0 {
            return Rates::default();
        }
        Rates {
            denied: denied as f64 / count as f64,
            failed: failed as f64 / count as f64,
        }
    }
    let mut out = BTreeMap::new();
    for c in &tree.clients {
        for (name, a) in &c.activities {
            out.insert((c.principal.clone(), name.clone()), rates(a.count, a.denied, a.failed));
        }
        // A command's start record shares its name with the activity leaf.
        for (name, e) in &c.events {
            out.entry((c.principal.clone(), name.clone()))
                .or_insert_with(|| rates(e.count, e.denied, e.failed));
        }
    }
    out
}

/// Flags leaves whose denied or failure rate exceeds the baseline mean by
/// more than `k` standard deviations. With zero spread any excess flags.
/// Leaves missing from a baseline profile count as rate 0 in that window.
pub fn detect_anomalies(
    tree: &ThreatProfileTree,
    baseline: &[ThreatProfileTree],
    k: f64,
) -> Result<Vec<Anomaly>, NoBaseline> {
    if baseline.is_empty() {
        return Err(NoBaseline);
    }
    let history: Vec<_> = baseline.iter().map(leaf_rates).collect();
    let mut out = Vec::new();
    for ((principal, activity), current) in leaf_rates(tree) {
        let key = (principal.clone(), activity.clone());
        for metric in [Metric::DeniedRate, Metric::FailureRate] {
            let pick = |r: &Rates| match metric {
                Metric::DeniedRate => r.denied,
                Metric::FailureRate => r.failed,
            };
            let samples: Vec<f64> = history
                .iter()
                .map(|h| h.get(&key).map(pick).unwrap_or(0.0))
                .collect();
            let n = samples.len() as f64;
            let mean = samples.iter().sum::<f64>() / n;
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            let observed = pick(&current);
            let excess = observed - mean;
            let flagged = if std > 0.0 {
                excess > k * std + RATE_EPSILON
            } else {
                excess > RATE_EPSILON
            };
            if flagged {
                out.push(Anomaly {
                    path: format!("{principal}/{activity}"),
                    metric,
                    observed,
                    baseline_mean: mean,
                    baseline_stddev: std,
                    z_score: (std > 0.0).then(|| excess / std),
                    tag: StrideTag::for_element(classify_activity(&activity)),
                });
            }
        }
    }
    Ok(out)
}
