//! Run metrics and their CSV forms.
//!
//! CSV files written by [`MetricsLog::write_csv`]:
//!
//! | file | columns |
//! |------|---------|
//! | `samples.csv` | `time,peer,unconfirmed,tailing,max_depth` |
//! | `records.csv` | `name,generator,honest,created,visible_all,confirmed_at_generator` |
//! | `links.csv` | `link,a,b,interests,data` |
//! | `summary.csv` | `key,value` |
//!
//! Times are seconds with six decimals; empty cells mean "never".

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rustc_hash::{FxHashMap, FxHashSet};

use crate::ledger::RejectReason;
use crate::net::{LinkCounters, NodeId};
use crate::protocols::{PeerEvent, SecurityEvent};
use crate::record::RecordName;

use super::stats;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sample {
    pub time_us: u64,
    pub peer: NodeId,
    pub unconfirmed: usize,
    pub tailing: usize,
    pub max_depth: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecordTrack {
    pub name: RecordName,
    pub generator: NodeId,
    pub honest: bool,
    pub created: f64,
    /// Honest peers that stored it so far.
    pub stored_by: usize,
    /// When the last honest peer stored it.
    pub visible_all: Option<f64>,
    pub confirmed_at_generator: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinkRow {
    pub a: NodeId,
    pub b: NodeId,
    pub counters: LinkCounters,
}

#[derive(Clone, Debug, Default)]
pub struct MetricsLog {
    pub scenario: String,
    pub seed: u64,
    pub honest_peers: usize,
    pub samples: Vec<Sample>,
    pub records: Vec<RecordTrack>,
    index: FxHashMap<RecordName, usize>,
    pub links: Vec<LinkRow>,
    /// Rejections at honest peers.
    pub rejections: BTreeMap<RejectReason, u64>,
    /// Security events at honest peers, by kind.
    pub security: BTreeMap<&'static str, u64>,
    pub counters: BTreeMap<&'static str, u64>,
    /// Records whose confirmation at honest peers is counted (colluders' target).
    watched: FxHashSet<RecordName>,
    pub watched_confirmations: u64,
    /// Rendered names of forged notifications.
    forged: FxHashSet<String>,
    pub forged_fetches: u64,
    pub liveness_violations: usize,
}

impl MetricsLog {
    pub fn new(scenario: &str, seed: u64, honest_peers: usize) -> Self {
        MetricsLog { scenario: scenario.to_owned(), seed, honest_peers, ..Default::default() }
    }

    pub fn record(&self, name: &RecordName) -> Option<&RecordTrack> {
        self.index.get(name).map(|&i| &self.records[i])
    }

    pub fn watch(&mut self, name: RecordName) {
        self.watched.insert(name);
    }

    pub fn mark_forged(&mut self, rendered: String) {
        self.forged.insert(rendered);
    }

    pub(crate) fn is_forged(&self, rendered: &str) -> bool {
        !self.forged.is_empty() && self.forged.contains(rendered)
    }

    fn bump(&mut self, key: &'static str) {
        *self.counters.entry(key).or_default() += 1;
    }

    pub(crate) fn on_peer_event(&mut self, node: NodeId, honest: bool, now: f64, event: PeerEvent) {
        match event {
            PeerEvent::Published { name } => {
                if !self.index.contains_key(&name) {
                    self.index.insert(name.clone(), self.records.len());
                    self.records.push(RecordTrack {
                        name,
                        generator: node,
                        honest,
                        created: now,
                        stored_by: 0,
                        visible_all: None,
                        confirmed_at_generator: None,
                    });
                }
                self.bump("published");
            }
            PeerEvent::PublishFailed(_) => self.bump("publish_failed"),
            PeerEvent::Stored { name } => {
                if !honest {
                    return;
                }
                if let Some(&i) = self.index.get(&name) {
                    let r = &mut self.records[i];
                    r.stored_by += 1;
                    if r.stored_by == self.honest_peers {
                        r.visible_all = Some(now);
                    }
                }
            }
            PeerEvent::Confirmed { name } => {
                if let Some(&i) = self.index.get(&name) {
                    let r = &mut self.records[i];
                    if r.generator == node && r.confirmed_at_generator.is_none() {
                        r.confirmed_at_generator = Some(now);
                    }
                }
                if honest && self.watched.contains(&name) {
                    self.watched_confirmations += 1;
                }
            }
            PeerEvent::Rejected { reason, .. } => {
                if honest {
                    *self.rejections.entry(reason).or_default() += 1;
                }
            }
            PeerEvent::NotifUnverifiable { .. } => {
                if honest {
                    self.bump("notif_unverifiable");
                }
            }
            PeerEvent::Security(ev) => {
                if honest {
                    let key = match ev {
                        SecurityEvent::NotifPoAInvalid { .. } => "notif_poa_invalid",
                        SecurityEvent::NotifSignerRejected { .. } => "notif_signer_rejected",
                        SecurityEvent::MalformedNotif => "malformed_notif",
                        SecurityEvent::MalformedSync => "malformed_sync",
                        SecurityEvent::DataMismatch { .. } => "data_mismatch",
                    };
                    *self.security.entry(key).or_default() += 1;
                }
            }
            PeerEvent::FetchAbandoned { .. } => self.bump("fetch_abandoned"),
            PeerEvent::SyncSent { reply } => self.bump(if reply { "sync_replies" } else { "syncs" }),
        }
    }

    pub(crate) fn push_sample(&mut self, s: Sample) {
        debug_assert!(self.samples.last().is_none_or(|l| l.time_us <= s.time_us));
        self.samples.push(s);
    }

    // ----- derived quantities ----------------------------------------------

    /// `(time, mean over honest peers)` of a sampled quantity.
    pub fn series(&self, f: impl Fn(&Sample) -> usize) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        let mut i = 0;
        while i < self.samples.len() {
            let t = self.samples[i].time_us;
            let mut j = i;
            let mut sum = 0usize;
            while j < self.samples.len() && self.samples[j].time_us == t {
                sum += f(&self.samples[j]);
                j += 1;
            }
            out.push((t as f64 / 1e6, sum as f64 / (j - i) as f64));
            i = j;
        }
        out
    }

    pub fn unconfirmed_series(&self) -> Vec<(f64, f64)> {
        self.series(|s| s.unconfirmed)
    }

    pub fn tailing_series(&self) -> Vec<(f64, f64)> {
        self.series(|s| s.tailing)
    }

    /// Values of `series` at or after `from` seconds.
    pub fn window(series: &[(f64, f64)], from: f64) -> Vec<f64> {
        series.iter().filter(|(t, _)| *t >= from).map(|&(_, v)| v).collect()
    }

    /// Largest unconfirmed depth seen at any honest peer.
    pub fn peak_depth(&self) -> usize {
        self.samples.iter().map(|s| s.max_depth).max().unwrap_or(0)
    }

    /// Mean publish-to-last-honest-peer delay over honest records created in
    /// `[from, to)`.
    pub fn propagation_delay(&self, from: f64, to: f64) -> f64 {
        let xs: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.honest && r.created >= from && r.created < to)
            .filter_map(|r| r.visible_all.map(|v| v - r.created))
            .collect();
        stats::mean(&xs)
    }

    /// Confirmation latencies at the generator for honest records created in
    /// `[from, to)`; unconfirmed records are left out.
    pub fn confirmation_latencies(&self, from: f64, to: f64) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.honest && r.created >= from && r.created < to)
            .filter_map(|r| r.confirmed_at_generator.map(|c| c - r.created))
            .collect()
    }

    pub fn counter(&self, key: &str) -> u64 {
        self.counters.get(key).copied().unwrap_or(0)
    }

    // ----- CSV ---------------------------------------------------------------

    pub fn samples_csv(&self) -> String {
        let mut out = String::from("time,peer,unconfirmed,tailing,max_depth\n");
        for s in &self.samples {
            let _ = writeln!(out, "{:.6},{},{},{},{}", s.time_us as f64 / 1e6, s.peer, s.unconfirmed, s.tailing, s.max_depth);
        }
        out
    }

    pub fn records_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut out = String::from("name,generator,honest,created,visible_all,confirmed_at_generator\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{},{}",
                r.name,
                r.generator,
                r.honest,
                r.created,
                opt(r.visible_all),
                opt(r.confirmed_at_generator)
            );
        }
        out
    }

    pub fn links_csv(&self) -> String {
        let mut out = String::from("link,a,b,interests,data\n");
        for (i, l) in self.links.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{},{}", i, l.a, l.b, l.counters.interests, l.counters.data);
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("key,value\n");
        let _ = writeln!(out, "scenario,{}", self.scenario);
        let _ = writeln!(out, "seed,{}", self.seed);
        let _ = writeln!(out, "honest_peers,{}", self.honest_peers);
        let _ = writeln!(out, "records,{}", self.records.len());
        for (k, v) in &self.counters {
            let _ = writeln!(out, "{k},{v}");
        }
        for r in RejectReason::ALL {
            let _ = writeln!(out, "rejected.{},{}", r, self.rejections.get(&r).copied().unwrap_or(0));
        }
        for (k, v) in &self.security {
            let _ = writeln!(out, "security.{k},{v}");
        }
        let _ = writeln!(out, "watched_confirmations,{}", self.watched_confirmations);
        let _ = writeln!(out, "forged_fetches,{}", self.forged_fetches);
        let _ = writeln!(out, "liveness_violations,{}", self.liveness_violations);
        let _ = writeln!(out, "peak_depth,{}", self.peak_depth());
        out
    }

    /// All four CSV files as `(file name, contents)`.
    pub fn csv_files(&self) -> Vec<(&'static str, String)> {
        vec![
            ("samples.csv", self.samples_csv()),
            ("records.csv", self.records_csv()),
            ("links.csv", self.links_csv()),
            ("summary.csv", self.summary_csv()),
        ]
    }

    pub fn write_csv(&self, dir: &Path) -> std::io::Result<()> {
        for (name, text) in self.csv_files() {
            std::fs::write(dir.join(name), text)?;
        }
        Ok(())
    }
}
