//! One pass/fail line per acceptance criterion. Run with `--nocapture` to see
//! the report; the test fails if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};

use common::bench::*;
use dledger::net::TraceKind;
use dledger::record::Digest;
use dledger::sim::{oracle, run_scenario, stats, Adversary, MetricsLog, Scenario, Simulation};

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const MK_ALPHA: f64 = 0.05;
const MAX_CV: f64 = 0.2;
const TAILING_BAND: (f64, f64) = (0.5, 1.5);
const RATIO_BAND: (f64, f64) = (1.5, 2.5);
const BOUND_SHARE: f64 = 0.95;
const ORACLE_A: f64 = 25.21;
const ORACLE_TOL: f64 = 0.005;
const COLLUDER_SEEDS: u64 = 20;
const SPAM_SLACK: usize = 1;

fn load(file: &str) -> Scenario {
    let path = format!("{}/../../scenarios/{file}", env!("CARGO_MANIFEST_DIR"));
    Scenario::from_toml(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn seeded(s: &Scenario, seed: u64) -> Scenario {
    let mut s = s.clone();
    s.seed = seed;
    s
}

fn csv_digest(m: &MetricsLog) -> Digest {
    let all: String = m.csv_files().into_iter().map(|(n, t)| format!("{n}\n{t}")).collect();
    Digest::of(all.as_bytes())
}

/// What the criteria need from one run; the simulation itself is dropped.
struct Outcome {
    entities: usize,
    w_confirm: u32,
    unconfirmed: Vec<f64>,
    tailing_mean: f64,
    delay: f64,
    latency_mean: f64,
    peak_depth: usize,
    watched_confirmations: u64,
    digest: Digest,
}

fn outcome(s: &Scenario) -> Outcome {
    let sim = run_scenario(s).unwrap();
    summarize(s, sim.metrics())
}

fn summarize(s: &Scenario, m: &MetricsLog) -> Outcome {
    let half = s.duration / 2.0;
    Outcome {
        entities: s.entities,
        w_confirm: s.w_confirm,
        unconfirmed: MetricsLog::window(&m.unconfirmed_series(), half),
        tailing_mean: stats::mean(&MetricsLog::window(&m.tailing_series(), half)),
        delay: m.propagation_delay(half, s.duration - 60.0),
        latency_mean: stats::mean(&m.confirmation_latencies(half, s.duration - 120.0)),
        peak_depth: m.peak_depth(),
        watched_confirmations: m.watched_confirmations,
        digest: csv_digest(m),
    }
}

struct Report {
    lines: Vec<String>,
    failed: usize,
}

impl Report {
    fn line(&mut self, id: u32, title: &str, pass: bool, detail: String) {
        let verdict = if pass { "PASS" } else { "FAIL" };
        let line = format!("criterion {id:>2} {verdict}  {title}: {detail}");
        println!("{line}");
        self.lines.push(line);
        if !pass {
            self.failed += 1;
        }
    }
}

fn fmt_list(xs: impl IntoIterator<Item = f64>, prec: usize) -> String {
    let v: Vec<String> = xs.into_iter().map(|x| format!("{x:.prec$}")).collect();
    format!("[{}]", v.join(", "))
}

/// Partition run: identical stores, confirmations on both sides, a merging record.
fn partition_check(sim: &Simulation) -> (bool, String) {
    let m = sim.metrics();
    let reference = sim.wire_set(0);
    let identical = sim.honest_nodes().iter().all(|&n| sim.wire_set(n) == reference);
    let side = |node: usize| usize::from(node >= 7);
    let era: BTreeMap<String, (usize, bool)> = m
        .records
        .iter()
        .filter(|r| r.created >= 20.0 && r.created < 80.0)
        .map(|r| (r.name.to_string(), (side(r.generator), r.confirmed_at_generator.is_some())))
        .collect();
    let confirmed_each = (0..2).all(|g| era.values().any(|&(s, c)| s == g && c));

    let mut parents: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for line in sim.dot(0).lines().filter(|l| l.contains("->")) {
        let (a, b) = line.trim().trim_end_matches(';').split_once(" -> ").unwrap();
        parents.entry(a.trim_matches('"').into()).or_default().push(b.trim_matches('"').into());
    }
    let reaches_side = |start: &str, g: usize| {
        let mut stack = vec![start.to_owned()];
        let mut seen = std::collections::BTreeSet::new();
        while let Some(n) = stack.pop() {
            if era.get(&n).is_some_and(|&(s, _)| s == g) {
                return true;
            }
            for p in parents.get(&n).into_iter().flatten() {
                if seen.insert(p.clone()) {
                    stack.push(p.clone());
                }
            }
        }
        false
    };
    // A record whose approvals lead into both branches, one per branch.
    let bridging = parents.iter().filter(|(child, _)| !era.contains_key(*child)).any(|(_, ps)| {
        ps.len() == 2
            && ((reaches_side(&ps[0], 0) && reaches_side(&ps[1], 1)) || (reaches_side(&ps[0], 1) && reaches_side(&ps[1], 0)))
    });
    let pass = identical && confirmed_each && bridging && m.liveness_violations == 0;
    (
        pass,
        format!(
            "identical stores {identical}, confirmed in both subnets {confirmed_each}, bridging record {bridging}, liveness violations {}",
            m.liveness_violations
        ),
    )
}

/// Seven-node topology: aggregation at E, a cache hit at C, then a refetch
/// after a link failure served from E's cache.
fn network_check() -> (bool, String) {
    let mut b = Bench::figure();
    b.express(C, "/DLedger/a/r1");
    b.run_until(ms(100));
    b.net.clear_trace();
    b.express(F, "/DLedger/a/r1");
    b.express(G, "/DLedger/a/r1");
    b.run_until(ms(300));
    let upstream = b.count(E, TraceKind::InterestOut);
    let aggregated = b.count(E, TraceKind::Aggregated);
    let at_producer = b.count(A, TraceKind::ToApp);
    let first = upstream == 1 && aggregated == 1 && at_producer == 0 && b.delivered.len() == 3;

    let mut b = Bench::figure();
    let ef = b.net.link_between(E, F).unwrap();
    b.net.schedule_link_down(ef, ms(55), ms(200)).unwrap();
    b.net.start(&mut b.sched);
    b.express(F, "/DLedger/a/r2");
    b.run_until(ms(250));
    let hits_before = b.producer_hits;
    b.net.clear_trace();
    b.express(F, "/DLedger/a/r2");
    b.run_until(ms(400));
    let refetch_hits = b.producer_hits - hits_before;
    let served_by_e = b.count(E, TraceKind::CsHit) == 1 && b.delivered.len() == 1;
    (
        first && refetch_hits == 0 && served_by_e,
        format!(
            "upstream Interests past E {upstream}, aggregated {aggregated}, producer hits {at_producer}; refetch producer hits {refetch_hits}, served from E's cache {served_by_e}"
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let mut r = Report { lines: Vec::new(), failed: 0 };
    let steady = load("steady-state.toml");
    let low = load("low-threshold.toml");
    let w20: Vec<Outcome> = SEEDS.iter().map(|&s| outcome(&seeded(&steady, s))).collect();
    let w5: Vec<Outcome> = SEEDS.iter().map(|&s| outcome(&seeded(&low, s))).collect();

    // 1. Steady-state boundedness.
    let mk: Vec<f64> = w20.iter().map(|o| stats::mann_kendall(&o.unconfirmed).p_value).collect();
    let means: Vec<f64> = w20.iter().map(|o| stats::mean(&o.unconfirmed)).collect();
    let cv = stats::coefficient_of_variation(&means);
    let no_trend = mk.iter().all(|&p| p >= MK_ALPHA);
    r.line(
        1,
        "steady-state boundedness",
        no_trend && means.iter().all(|m| m.is_finite()) && cv < MAX_CV,
        format!("Mann-Kendall p {} (trend if < {MK_ALPHA}), mean unconfirmed {}, CV {cv:.3} (< {MAX_CV})", fmt_list(mk.clone(), 3), fmt_list(means.clone(), 2)),
    );

    // 2. Tailing size against n λ T / (n - 1).
    let lambda = steady.entities as f64 * steady.rate;
    let ratios: Vec<f64> = w20
        .iter()
        .map(|o| o.tailing_mean / oracle::tailing_size(steady.approvals, lambda, o.delay).unwrap())
        .collect();
    r.line(
        2,
        "tailing-size formula",
        ratios.iter().all(|&x| x >= TAILING_BAND.0 && x <= TAILING_BAND.1),
        format!(
            "measured/predicted {} in [{}, {}], T {} s",
            fmt_list(ratios, 3),
            TAILING_BAND.0,
            TAILING_BAND.1,
            fmt_list(w20.iter().map(|o| o.delay), 3)
        ),
    );

    // 3. W_confirm sensitivity.
    let mean_w5 = stats::mean(&w5.iter().map(|o| stats::mean(&o.unconfirmed)).collect::<Vec<_>>());
    let ratio = stats::mean(&means) / mean_w5;
    r.line(
        3,
        "W_confirm sensitivity",
        ratio >= RATIO_BAND.0 && ratio <= RATIO_BAND.1,
        format!("unconfirmed W=20 {:.2} / W=5 {mean_w5:.2} = {ratio:.3} in [{}, {}]", stats::mean(&means), RATIO_BAND.0, RATIO_BAND.1),
    );

    // 4. Confirmation latency falls with N.
    let mut by_n: Vec<(usize, Vec<Outcome>)> = Vec::new();
    for n in [10, 25] {
        let mut s = low.clone();
        s.entities = n;
        by_n.push((n, SEEDS.iter().map(|&seed| outcome(&seeded(&s, seed))).collect()));
    }
    let lat = |os: &[Outcome]| os.iter().map(|o| o.latency_mean).collect::<Vec<f64>>();
    let rows: Vec<(usize, f64, f64)> = by_n
        .iter()
        .map(|(n, os)| (*n, stats::mean(&lat(os)), stats::std_dev(&lat(os))))
        .chain(std::iter::once((50, stats::mean(&lat(&w5)), stats::std_dev(&lat(&w5)))))
        .collect();
    let decreasing = rows.windows(2).all(|p| {
        let gap = p[0].1 - p[1].1;
        gap > 0.0 && gap > p[0].2 && gap > p[1].2
    }) && rows[0].1 - rows[2].1 > rows[0].2.max(rows[2].2);
    r.line(
        4,
        "scalability trend",
        decreasing,
        rows.iter().map(|(n, m, sd)| format!("N={n}: {m:.3} s (sd {sd:.3})")).collect::<Vec<_>>().join(", "),
    );

    // 5. Confirmation bound over the full-mesh suite, and the oracle value.
    let suite: Vec<&Outcome> = w20.iter().chain(&w5).chain(by_n.iter().flat_map(|(_, os)| os)).collect();
    let within = suite
        .iter()
        .filter(|o| o.latency_mean <= oracle::confirmation(o.entities, o.w_confirm, 2, o.delay).unwrap().time_bound)
        .count();
    let a = oracle::confirmation(50, 20, 2, 0.2).unwrap().approvals_expected;
    let harmonic = 50.0 * (31..=50).map(|k| 1.0 / k as f64).sum::<f64>();
    let share = within as f64 / suite.len() as f64;
    r.line(
        5,
        "confirmation bound",
        share >= BOUND_SHARE && (a - harmonic).abs() < 1e-9 && (a - ORACLE_A).abs() < ORACLE_TOL,
        format!("{within}/{} runs within the bound (need {BOUND_SHARE}), A(50, 20) = {a:.4}, harmonic sum {harmonic:.4}", suite.len()),
    );

    // 6. Partition and merge.
    let partition = load("partition.toml");
    let psim = run_scenario(&partition).unwrap();
    let (pass, detail) = partition_check(&psim);
    let partition_digest = csv_digest(psim.metrics());
    drop(psim);
    r.line(6, "partition and merge", pass, detail);

    // 7. Weight oracle on 1000 random DAGs.
    let mut mismatched = Vec::new();
    let hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    for case in 0..1000 {
        if catch_unwind(AssertUnwindSafe(|| common::dag::check_one(case))).is_err() {
            mismatched.push(case);
        }
    }
    std::panic::set_hook(hook);
    r.line(7, "weight oracle equivalence", mismatched.is_empty(), format!("{} of 1000 DAGs disagree {mismatched:?}", mismatched.len()));

    // 8. Colluders one short of the threshold, and exactly at it.
    let colluders = load("colluders.toml");
    let short: Vec<u64> = (1..=COLLUDER_SEEDS).map(|s| outcome(&seeded(&colluders, s)).watched_confirmations).collect();
    let mut enough = colluders.clone();
    enough.adversaries = vec![Adversary::Colluders { generator: 0, k: colluders.w_confirm as usize, at: 30.0 }];
    let at_k: Vec<u64> = SEEDS[..3].iter().map(|&s| outcome(&seeded(&enough, s)).watched_confirmations).collect();
    r.line(
        8,
        "policy threshold",
        short.iter().all(|&c| c == 0) && at_k.iter().all(|&c| c > 0),
        format!(
            "k = W-1: honest confirmations {} over {COLLUDER_SEEDS} seeds; k = W: {at_k:?}",
            short.iter().sum::<u64>()
        ),
    );

    // 9. Spam depth.
    let spammer = load("spammer.toml");
    let mut baseline = spammer.clone();
    baseline.adversaries.clear();
    let spam: Vec<usize> = SEEDS.iter().map(|&s| outcome(&seeded(&spammer, s)).peak_depth).collect();
    let base: Vec<usize> = SEEDS.iter().map(|&s| outcome(&seeded(&baseline, s)).peak_depth).collect();
    r.line(
        9,
        "spam depth bound",
        spam.iter().zip(&base).all(|(s, b)| *s <= b + SPAM_SLACK),
        format!("peak depth with spammer {spam:?}, baseline {base:?}, slack {SPAM_SLACK}"),
    );

    // 10. Network efficiency on the seven-node topology.
    let (pass, detail) = network_check();
    r.line(10, "network efficiency", pass, detail);

    // 11. Determinism: seed 1 of every scenario family again.
    let mut low10 = low.clone();
    low10.entities = 10;
    let mut low25 = low.clone();
    low25.entities = 25;
    let again: Vec<(&str, Digest, Digest)> = vec![
        ("steady-state", w20[0].digest, outcome(&seeded(&steady, 1)).digest),
        ("low-threshold", w5[0].digest, outcome(&seeded(&low, 1)).digest),
        ("low-threshold N=10", by_n[0].1[0].digest, outcome(&seeded(&low10, 1)).digest),
        ("low-threshold N=25", by_n[1].1[0].digest, outcome(&seeded(&low25, 1)).digest),
        ("partition", partition_digest, outcome(&partition).digest),
        ("colluders", csv_digest_of(&seeded(&colluders, 1)), csv_digest_of(&seeded(&colluders, 1))),
        ("spammer", csv_digest_of(&seeded(&spammer, 1)), csv_digest_of(&seeded(&spammer, 1))),
    ];
    let differing: Vec<&str> = again.iter().filter(|(_, a, b)| a != b).map(|(n, _, _)| *n).collect();
    r.line(
        11,
        "determinism",
        differing.is_empty(),
        format!("{} scenario families rerun, differing {differing:?}", again.len()),
    );

    assert_eq!(r.failed, 0, "failed criteria:\n{}", r.lines.join("\n"));
}

fn csv_digest_of(s: &Scenario) -> Digest {
    outcome(s).digest
}
