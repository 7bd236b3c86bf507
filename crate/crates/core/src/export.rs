//! Ledger dumps, DOT graphs, and dump replay.
//!
//! A dump is line oriented. Header lines start with `#` and carry what a
//! verifier needs to rebuild the peer's admission rules; every other line is
//! one record in wire form (canonical content followed by the PoA element),
//! hex encoded, in storage order:
//!
//! ```text
//! # dledger-dump 1
//! # scheme keyed-mac <shared seed hex>
//! # root idm <public key hex>
//! # config approvals=2 w_confirm=20 w_contribution=5 count_self_indirect=false max_payload=8192
//! # validator accept-all
//! 0100000005...
//! ```

use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::crypto::{Ed25519Provider, KeyedMacProvider, PublicKey, SignatureProvider};
use crate::identity::TrustStore;
use crate::ledger::{
    AcceptAll, Arrival, Ledger, LedgerConfig, LedgerError, PayloadValidator, RejectMarked,
    RejectReason, Verdict,
};
use crate::record::{EntityId, Record, RecordError, RecordName};

/// Signature scheme named in a dump header.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Scheme {
    Ed25519,
    KeyedMac([u8; 32]),
}

impl Scheme {
    pub fn provider(&self) -> Arc<dyn SignatureProvider> {
        match self {
            Scheme::Ed25519 => Arc::new(Ed25519Provider),
            Scheme::KeyedMac(seed) => Arc::new(KeyedMacProvider::new(*seed)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValidatorKind {
    AcceptAll,
    RejectMarked,
}

impl ValidatorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ValidatorKind::AcceptAll => "accept-all",
            ValidatorKind::RejectMarked => "reject-marked",
        }
    }

    pub fn build(&self) -> Arc<dyn PayloadValidator> {
        match self {
            ValidatorKind::AcceptAll => Arc::new(AcceptAll),
            ValidatorKind::RejectMarked => Arc::new(RejectMarked),
        }
    }
}

/// Everything a dump header records.
#[derive(Clone, Debug)]
pub struct DumpHeader {
    pub scheme: Scheme,
    pub roots: Vec<(EntityId, PublicKey)>,
    pub config: LedgerConfig,
    pub validator: ValidatorKind,
}

pub fn write_dump(header: &DumpHeader, ledger: &Ledger) -> String {
    let mut out = String::new();
    out.push_str("# dledger-dump 1\n");
    match &header.scheme {
        Scheme::Ed25519 => out.push_str("# scheme ed25519\n"),
        Scheme::KeyedMac(seed) => {
            let _ = writeln!(out, "# scheme keyed-mac {}", hex::encode(seed));
        }
    }
    for (id, key) in &header.roots {
        let _ = writeln!(out, "# root {} {}", id, hex::encode(&key.0));
    }
    let c = &header.config;
    let _ = writeln!(
        out,
        "# config approvals={} w_confirm={} w_contribution={} count_self_indirect={} max_payload={}",
        c.approvals, c.w_confirm, c.w_contribution, c.count_self_indirect, c.max_payload
    );
    let _ = writeln!(out, "# validator {}", header.validator.as_str());
    for rec in ledger.records() {
        out.push_str(&hex::encode(rec.to_wire()));
        out.push('\n');
    }
    out
}

/// DOT rendering: one node per record labeled with generator, short digest,
/// weight and status; one edge per approval, child to parent.
pub fn write_dot(ledger: &Ledger) -> String {
    let mut out = String::from("digraph dledger {\n  rankdir=BT;\n  node [shape=box, fontsize=9];\n");
    for rec in ledger.records() {
        let st = ledger.status(&rec.name).expect("stored");
        let status = if st.genesis {
            "genesis"
        } else if st.confirmed_at.is_some() {
            "confirmed"
        } else {
            "unconfirmed"
        };
        let _ = writeln!(
            out,
            "  \"{}\" [label=\"{}/{}\\nw={} {}\"];",
            rec.name,
            rec.generator(),
            &rec.name.digest().to_hex()[..8],
            st.weight,
            status
        );
    }
    for rec in ledger.records() {
        for a in &rec.approved {
            let _ = writeln!(out, "  \"{}\" -> \"{}\";", rec.name, a);
        }
    }
    out.push_str("}\n");
    out
}

#[derive(Debug, Error, PartialEq)]
pub enum DumpError {
    #[error("line {line}: {msg}")]
    Header { line: usize, msg: String },
    #[error("dump has no record lines")]
    Empty,
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

/// First problem found while replaying a dump.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    /// The line does not decode as a record.
    Undecodable { line: usize, error: RecordError },
    /// The record was rejected by the admission pipeline.
    Rejected { line: usize, name: RecordName, reason: RejectReason },
    /// The record approves a record that is not in the dump (or was broken).
    Dangling { line: usize, name: RecordName, missing: Vec<RecordName> },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Undecodable { line, error } => write!(f, "line {line}: undecodable record: {error}"),
            Violation::Rejected { line, name, reason } => write!(f, "line {line}: {name} rejected: {reason}"),
            Violation::Dangling { line, name, missing } => {
                write!(f, "line {line}: {name} approves unknown record")?;
                for m in missing {
                    write!(f, " {m}")?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug)]
pub struct Replay {
    pub records: usize,
    pub violation: Option<Violation>,
    pub ledger: Ledger,
}

pub fn parse_header(text: &str) -> Result<DumpHeader, DumpError> {
    let mut scheme = None;
    let mut roots = Vec::new();
    let mut config = None;
    let mut validator = ValidatorKind::AcceptAll;
    let mut saw_magic = false;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let Some(rest) = line.strip_prefix('#') else { break };
        let err = |msg: &str| DumpError::Header { line: lineno, msg: msg.to_owned() };
        let words: Vec<&str> = rest.split_whitespace().collect();
        match words.as_slice() {
            ["dledger-dump", "1"] => saw_magic = true,
            ["scheme", "ed25519"] => scheme = Some(Scheme::Ed25519),
            ["scheme", "keyed-mac", seed] => {
                let bytes = hex::decode(seed).map_err(|_| err("bad shared seed"))?;
                let seed: [u8; 32] = bytes.try_into().map_err(|_| err("shared seed must be 32 bytes"))?;
                scheme = Some(Scheme::KeyedMac(seed));
            }
            ["root", id, key] => {
                let id = EntityId::new(*id).map_err(|e| err(&e.to_string()))?;
                let key = hex::decode(key).map_err(|_| err("bad root key"))?;
                roots.push((id, PublicKey(key)));
            }
            ["config", fields @ ..] => config = Some(parse_config(fields).map_err(|m| err(&m))?),
            ["validator", "accept-all"] => validator = ValidatorKind::AcceptAll,
            ["validator", "reject-marked"] => validator = ValidatorKind::RejectMarked,
            _ => return Err(err("unrecognized header line")),
        }
    }
    let missing = |what: &str| DumpError::Header { line: 0, msg: format!("missing {what} header") };
    if !saw_magic {
        return Err(missing("dledger-dump"));
    }
    Ok(DumpHeader {
        scheme: scheme.ok_or_else(|| missing("scheme"))?,
        roots,
        config: config.ok_or_else(|| missing("config"))?,
        validator,
    })
}

fn parse_config(fields: &[&str]) -> Result<LedgerConfig, String> {
    let mut c = LedgerConfig::new(2, 1);
    let mut wc = None;
    for f in fields {
        let (k, v) = f.split_once('=').ok_or_else(|| format!("bad config field {f}"))?;
        let num = || v.parse::<u64>().map_err(|_| format!("bad value for {k}"));
        match k {
            "approvals" => c.approvals = num()? as usize,
            "w_confirm" => c.w_confirm = num()? as u32,
            "w_contribution" => wc = Some(num()? as u32),
            "count_self_indirect" => c.count_self_indirect = v == "true",
            "max_payload" => c.max_payload = num()? as usize,
            _ => return Err(format!("unknown config field {k}")),
        }
    }
    c.w_contribution = wc.unwrap_or_else(|| crate::ledger::default_w_contribution(c.w_confirm));
    Ok(c)
}

/// Rebuilds a ledger from a dump, admitting every record as a back-filled
/// arrival, and stops at the first violation. Contribution checks do not
/// apply: a dump does not say what weights were at arrival time.
pub fn replay(text: &str) -> Result<Replay, DumpError> {
    let header = parse_header(text)?;
    let mut trust = TrustStore::new();
    for (id, key) in &header.roots {
        trust.add_root(id.clone(), key.clone());
    }
    let mut ledger = Ledger::new(header.config.clone(), header.scheme.provider(), trust)?
        .with_validator(header.validator.build());
    let mut records = 0;
    let max = header.config.max_payload;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        records += 1;
        let rec = hex::decode(line)
            .map_err(|_| RecordError::Malformed("not hex"))
            .and_then(|b| Record::from_wire(&b, max));
        let rec = match rec {
            Ok(r) => r,
            Err(error) => {
                return Ok(Replay { records, violation: Some(Violation::Undecodable { line: line_no, error }), ledger });
            }
        };
        let name = rec.name.clone();
        let adm = ledger.admit(Arc::new(rec), Arrival::Backfill, 0.0);
        let violation = match adm.verdict {
            Verdict::Accepted => None,
            Verdict::Rejected(reason) => Some(Violation::Rejected { line: line_no, name, reason }),
            Verdict::Pending { missing } => Some(Violation::Dangling { line: line_no, name, missing }),
        };
        if violation.is_some() {
            return Ok(Replay { records, violation, ledger });
        }
    }
    if records == 0 {
        return Err(DumpError::Empty);
    }
    Ok(Replay { records, violation: None, ledger })
}
