//! DLedger: a DAG ledger for content-centric networks.

pub mod crypto;
mod entity_set;
pub mod identity;
pub mod ledger;
pub mod record;
pub mod time;
mod tlv;
pub mod net;
pub mod sched;
pub mod protocols;
pub mod export;
pub mod sim;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/records.md")]
    struct Records;
    #[doc = include_str!("../../../book/src/wire-format.md")]
    struct WireFormat;
    #[doc = include_str!("../../../book/src/ledger.md")]
    struct Ledger;
    #[doc = include_str!("../../../book/src/simulation.md")]
    struct Simulation;
}
