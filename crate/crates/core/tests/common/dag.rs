//! Random DAGs and a brute-force weight oracle.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use dledger::ledger::{Arrival, Ledger, LedgerConfig, Verdict};
use dledger::record::{EntityId, Record, RecordName};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::World;

pub struct Dag {
    pub genesis: Vec<RecordName>,
    pub records: Vec<Arc<Record>>,
}

pub fn random_dag(world: &World, entities: usize, approvals: usize, size: usize, rng: &mut ChaCha8Rng) -> Dag {
    let genesis: Vec<RecordName> = world.genesis.iter().map(|g| g.name.clone()).collect();
    let mut pool: Vec<(Option<usize>, RecordName)> = genesis.iter().map(|g| (None, g.clone())).collect();
    let mut records = Vec::new();
    for k in 0..size {
        let who = rng.gen_range(0..entities);
        let candidates: Vec<&RecordName> =
            pool.iter().filter(|(g, _)| *g != Some(who)).map(|(_, n)| n).collect();
        if candidates.len() < approvals {
            continue;
        }
        // Bias towards recent records so the DAGs get deep, not just wide.
        let mut chosen: Vec<RecordName> = Vec::new();
        while chosen.len() < approvals {
            let span = candidates.len().min(12);
            let pick = if rng.gen_bool(0.8) {
                candidates[candidates.len() - 1 - rng.gen_range(0..span)]
            } else {
                candidates[rng.gen_range(0..candidates.len())]
            };
            if !chosen.contains(pick) {
                chosen.push(pick.clone());
            }
        }
        let rec = world.record(who, chosen, format!("r{k}").as_bytes());
        pool.push((Some(who), rec.name.clone()));
        records.push(rec);
    }
    Dag { genesis, records }
}

/// Generators of every record that reaches `target` through approval edges.
pub fn brute_weight(dag: &Dag, target: &RecordName, count_self: bool) -> BTreeSet<EntityId> {
    let mut children: HashMap<&RecordName, Vec<&Record>> = HashMap::new();
    for r in &dag.records {
        for a in &r.approved {
            children.entry(a).or_default().push(r);
        }
    }
    let mut seen: HashSet<&RecordName> = HashSet::new();
    let mut stack = vec![target];
    let mut out = BTreeSet::new();
    while let Some(n) = stack.pop() {
        for c in children.get(n).into_iter().flatten() {
            if seen.insert(&c.name) {
                out.insert(c.generator().clone());
                stack.push(&c.name);
            }
        }
    }
    if !count_self {
        out.remove(target.generator());
    }
    out
}

/// Builds random DAG number `case`, admits it in shuffled order and compares
/// approvers, confirmations and tips against the oracle. Panics on mismatch.
pub fn check_one(case: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(case);
    let entities = rng.gen_range(2..=20);
    let approvals = if entities >= 3 { rng.gen_range(2..=3) } else { 2 };
    let size = rng.gen_range(1..=200);
    let world = World::new(entities);
    let dag = random_dag(&world, entities, approvals, size, &mut rng);

    let w_confirm = rng.gen_range(1..=entities as u32 + 1);
    let mut config = LedgerConfig::new(approvals, w_confirm);
    config.count_self_indirect = rng.gen_bool(0.3);
    let mut ledger: Ledger = world.ledger(config.clone());

    let mut order = dag.records.clone();
    order.shuffle(&mut rng);
    let mut fired: Vec<RecordName> = Vec::new();
    for rec in order {
        let adm = ledger.admit(rec, Arrival::Backfill, 0.0);
        assert!(!matches!(adm.verdict, Verdict::Rejected(_)), "case {case}: {:?}", adm.verdict);
        fired.extend(adm.confirmed);
    }
    assert_eq!(ledger.parked_len(), 0, "case {case}");
    assert_eq!(ledger.len(), dag.genesis.len() + dag.records.len(), "case {case}");

    let mut expect_confirmed = BTreeSet::new();
    for r in &dag.records {
        let oracle = brute_weight(&dag, &r.name, config.count_self_indirect);
        let got = ledger.approvers(&r.name).unwrap();
        assert_eq!(got, oracle, "case {case}: approvers of {}", r.name);
        assert_eq!(ledger.weight(&r.name).unwrap(), oracle.len());
        if oracle.len() >= w_confirm as usize {
            expect_confirmed.insert(r.name.clone());
        }
        assert_eq!(ledger.is_confirmed(&r.name), oracle.len() >= w_confirm as usize, "case {case}");
    }
    let fired_set: BTreeSet<RecordName> = fired.iter().cloned().collect();
    assert_eq!(fired.len(), fired_set.len(), "case {case}: a confirmation fired twice");
    assert_eq!(fired_set, expect_confirmed, "case {case}");

    let approved: HashSet<&RecordName> = dag.records.iter().flat_map(|r| r.approved.iter()).collect();
    let mut tails: Vec<RecordName> = dag
        .genesis
        .iter()
        .chain(dag.records.iter().map(|r| &r.name))
        .filter(|n| !approved.contains(n))
        .cloned()
        .collect();
    tails.sort_by_cached_key(|n| n.to_string());
    assert_eq!(ledger.tailing_names(), tails, "case {case}");
}
