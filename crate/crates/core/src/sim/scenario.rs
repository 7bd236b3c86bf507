//! Scenario files.
//!
//! A scenario is a TOML document. Every field except `entities` has a default,
//! so the smallest valid file is one line:
//!
//! ```toml
//! entities = 10
//! ```
//!
//! See the guide for the full schema.

use serde::Deserialize;
use thiserror::Error;

use crate::ledger::{default_w_contribution, LedgerConfig};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "defaults::name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Simulated seconds.
    #[serde(default = "defaults::duration")]
    pub duration: f64,
    /// Honest publishing stops here (defaults to `duration`); the rest of the
    /// run lets in-flight records settle.
    #[serde(default)]
    pub publish_until: Option<f64>,
    pub entities: usize,
    #[serde(default)]
    pub topology: Topology,
    /// Poisson record rate per entity, records per second.
    #[serde(default = "defaults::rate")]
    pub rate: f64,
    #[serde(default = "defaults::approvals")]
    pub approvals: usize,
    #[serde(default = "defaults::w_confirm")]
    pub w_confirm: u32,
    #[serde(default)]
    pub w_contribution: Option<u32>,
    #[serde(default)]
    pub count_self_indirect: bool,
    #[serde(default)]
    pub signature: SignatureScheme,
    #[serde(default)]
    pub validator: Validator,
    #[serde(default)]
    pub link: LinkParams,
    #[serde(default)]
    pub sync: SyncParams,
    #[serde(default)]
    pub reduction: Reduction,
    /// Seconds between metric samples.
    #[serde(default = "defaults::sample_interval")]
    pub sample_interval: f64,
    /// Records created later than `publish_until - liveness_grace` are not
    /// expected to confirm before the run ends.
    #[serde(default = "defaults::liveness_grace")]
    pub liveness_grace: f64,
    #[serde(default, rename = "partition")]
    pub partitions: Vec<Partition>,
    #[serde(default, rename = "adversary")]
    pub adversaries: Vec<Adversary>,
}

mod defaults {
    pub fn name() -> String {
        "scenario".into()
    }
    pub fn duration() -> f64 {
        600.0
    }
    pub fn rate() -> f64 {
        0.2
    }
    pub fn approvals() -> usize {
        2
    }
    pub fn w_confirm() -> u32 {
        5
    }
    pub fn sample_interval() -> f64 {
        10.0
    }
    pub fn liveness_grace() -> f64 {
        120.0
    }
    pub fn latency() -> f64 {
        0.1
    }
    pub fn sync_interval() -> f64 {
        10.0
    }
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Topology {
    #[default]
    FullMesh,
    Line,
    /// Row-major grid with `columns` nodes per row.
    Grid { columns: usize },
    Edges { edges: Vec<(usize, usize)> },
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum SignatureScheme {
    /// Fast symmetric stand-in for large simulations.
    #[default]
    KeyedMac,
    Ed25519,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Validator {
    #[default]
    AcceptAll,
    RejectMarked,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LinkParams {
    /// One-way delay in seconds.
    #[serde(default = "defaults::latency")]
    pub latency: f64,
    #[serde(default)]
    pub jitter: f64,
    #[serde(default)]
    pub loss: f64,
}

impl Default for LinkParams {
    fn default() -> Self {
        LinkParams { latency: defaults::latency(), jitter: 0.0, loss: 0.0 }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SyncParams {
    #[serde(default = "defaults::sync_interval")]
    pub interval: f64,
}

impl Default for SyncParams {
    fn default() -> Self {
        SyncParams { interval: defaults::sync_interval() }
    }
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Reduction {
    /// Seconds between prune/archive passes; off when absent.
    pub every: Option<f64>,
    pub unconfirmed_ttl: Option<f64>,
    pub archive_depth: Option<u32>,
}

/// Links between groups are down during `[from, to)`. Nodes not listed form
/// one more group.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Partition {
    pub groups: Vec<Vec<usize>>,
    pub from: f64,
    pub to: f64,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Adversary {
    /// Publishes valid-PoA records that approve its own or long-confirmed
    /// records, at `rate` per second on top of its normal records.
    Spammer { entity: usize, rate: f64 },
    /// Every record it publishes approves already-confirmed records.
    Lazy { entity: usize },
    /// Entity `generator` publishes an application-invalid record at `at`;
    /// `k` other entities approve it a few seconds later. All of them ignore
    /// the admission policies in their own ledgers.
    Colluders { generator: usize, k: usize, at: f64 },
    /// Multicasts notifications with forged generators, digests or PoAs.
    NotifForger { entity: usize, rate: f64 },
}

impl Adversary {
    /// Entities this adversary controls.
    pub fn entities(&self) -> Vec<usize> {
        match *self {
            Adversary::Spammer { entity, .. } | Adversary::Lazy { entity } | Adversary::NotifForger { entity, .. } => {
                vec![entity]
            }
            Adversary::Colluders { generator, k, .. } => std::iter::once(generator).chain(colluder_ids(generator, k)).collect(),
        }
    }
}

/// The `k` entities following `generator` (mod nothing: they must exist).
pub(crate) fn colluder_ids(generator: usize, k: usize) -> impl Iterator<Item = usize> {
    (1..=k).map(move |i| generator + i)
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Scenario, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    /// A full mesh with everything else at its default.
    pub fn full_mesh(entities: usize, w_confirm: u32, duration: f64, seed: u64) -> Scenario {
        Scenario {
            name: format!("mesh-n{entities}-w{w_confirm}"),
            seed,
            duration,
            publish_until: None,
            entities,
            topology: Topology::FullMesh,
            rate: defaults::rate(),
            approvals: defaults::approvals(),
            w_confirm,
            w_contribution: None,
            count_self_indirect: false,
            signature: SignatureScheme::KeyedMac,
            validator: Validator::AcceptAll,
            link: LinkParams::default(),
            sync: SyncParams::default(),
            reduction: Reduction::default(),
            sample_interval: defaults::sample_interval(),
            liveness_grace: defaults::liveness_grace(),
            partitions: Vec::new(),
            adversaries: Vec::new(),
        }
    }

    pub fn publish_until(&self) -> f64 {
        self.publish_until.unwrap_or(self.duration).min(self.duration)
    }

    pub fn ledger_config(&self) -> LedgerConfig {
        let mut c = LedgerConfig::new(self.approvals, self.w_confirm);
        c.w_contribution = self.w_contribution.unwrap_or_else(|| default_w_contribution(self.w_confirm));
        c.count_self_indirect = self.count_self_indirect;
        c.unconfirmed_ttl = self.reduction.unconfirmed_ttl;
        c.archive_depth = self.reduction.archive_depth;
        c
    }

    /// Entities run by adversaries.
    pub fn adversarial(&self) -> Vec<bool> {
        let mut out = vec![false; self.entities];
        for a in &self.adversaries {
            for e in a.entities() {
                if let Some(slot) = out.get_mut(e) {
                    *slot = true;
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        let n = self.entities;
        if n < self.approvals + 1 {
            return bad(format!("need at least approvals + 1 = {} entities, got {n}", self.approvals + 1));
        }
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return bad("rate must be positive".into());
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad("duration must be positive".into());
        }
        if !(self.sample_interval > 0.0) {
            return bad("sample_interval must be positive".into());
        }
        if !(self.sync.interval > 0.0) {
            return bad("sync interval must be positive".into());
        }
        let reachable = if self.count_self_indirect { n } else { n - 1 };
        if self.w_confirm as usize > reachable {
            return bad(format!("w_confirm {} can never be reached with {n} entities", self.w_confirm));
        }
        self.ledger_config().validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        let l = &self.link;
        if !(l.latency >= 0.0 && l.jitter >= 0.0 && (0.0..1.0).contains(&l.loss)) {
            return bad("link latency and jitter must be non-negative and loss in [0, 1)".into());
        }
        match &self.topology {
            Topology::Grid { columns } if *columns == 0 => return bad("grid needs at least one column".into()),
            Topology::Edges { edges } => {
                if let Some((a, b)) = edges.iter().find(|(a, b)| *a >= n || *b >= n || a == b) {
                    return bad(format!("bad edge ({a}, {b})"));
                }
            }
            _ => {}
        }
        for p in &self.partitions {
            if !(p.from < p.to) {
                return bad("partition window must have from < to".into());
            }
            if p.groups.iter().flatten().any(|&x| x >= n) {
                return bad("partition names an unknown entity".into());
            }
        }
        for a in &self.adversaries {
            if a.entities().iter().any(|&e| e >= n) {
                return bad(format!("adversary {a:?} names an unknown entity"));
            }
            match a {
                Adversary::Spammer { rate, .. } | Adversary::NotifForger { rate, .. } if !(*rate > 0.0) => {
                    return bad("adversary rate must be positive".into());
                }
                _ => {}
            }
        }
        if self.adversarial().iter().all(|&a| a) {
            return bad("at least one entity must be honest".into());
        }
        Ok(())
    }

    /// Undirected edges of the topology, in link-id order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.entities;
        match &self.topology {
            Topology::FullMesh => (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect(),
            Topology::Line => (1..n).map(|b| (b - 1, b)).collect(),
            Topology::Grid { columns } => {
                let c = *columns;
                let mut out = Vec::new();
                for i in 0..n {
                    if (i + 1) % c != 0 && i + 1 < n {
                        out.push((i, i + 1));
                    }
                    if i + c < n {
                        out.push((i, i + c));
                    }
                }
                out
            }
            Topology::Edges { edges } => edges.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_gets_defaults() {
        let s = Scenario::from_toml("entities = 10").unwrap();
        assert_eq!(s.w_confirm, 5);
        assert_eq!(s.topology, Topology::FullMesh);
        assert_eq!(s.edges().len(), 45);
    }

    #[test]
    fn rejects_unreachable_threshold_and_unknown_fields() {
        assert!(Scenario::from_toml("entities = 5\nw_confirm = 5").is_err());
        assert!(Scenario::from_toml("entities = 5\nbogus = 1").is_err());
        assert!(Scenario::from_toml("entities = 2").is_err());
    }

    #[test]
    fn grid_edges() {
        let s = Scenario::from_toml("entities = 6\n[topology]\nkind = \"grid\"\ncolumns = 3").unwrap();
        assert_eq!(s.edges(), vec![(0, 1), (0, 3), (1, 2), (1, 4), (2, 5), (3, 4), (4, 5)]);
    }

    #[test]
    fn adversary_tables() {
        let s = Scenario::from_toml(
            "entities = 10\n[[adversary]]\nkind = \"colluders\"\ngenerator = 0\nk = 4\nat = 30.0\n",
        )
        .unwrap();
        assert_eq!(s.adversarial().iter().filter(|&&a| a).count(), 5);
    }
}
