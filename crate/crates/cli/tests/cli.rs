use std::path::Path;
use std::process::{Command, Output};

use dledger::record::{PayloadKind, Record};
use dledger::sim::{Scenario, Simulation};

const SMALL: &str = r#"
name = "small"
seed = 5
duration = 60
entities = 5
w_confirm = 3
"#;

fn dledger(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dledger")).args(args).env_remove("DLEDGER_LOG").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_scenario(dir: &Path) -> String {
    let p = dir.join("small.toml");
    std::fs::write(&p, SMALL).unwrap();
    p.to_str().unwrap().to_owned()
}

fn run_into(scenario: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", scenario, "--out-dir", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    dledger(&args)
}

#[test]
fn run_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path());
    let out = dir.path().join("out");
    let o = run_into(&sc, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["samples.csv", "records.csv", "links.csv", "summary.csv", "ledger.dot", "ledger.dump"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(stdout(&o).contains("records published"));
    assert!(std::fs::read_to_string(out.join("ledger.dot")).unwrap().starts_with("digraph"));
}

#[test]
fn format_selects_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path());
    let out = dir.path().join("out");
    assert!(run_into(&sc, &out, &["--format", "dot"]).status.success());
    assert!(out.join("ledger.dot").exists());
    assert!(!out.join("ledger.dump").exists());
    assert!(!out.join("samples.csv").exists());
    assert_eq!(run_into(&sc, &out, &["--format", "svg"]).status.code(), Some(2));
}

#[test]
fn the_same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path());
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert!(run_into(&sc, &a, &[]).status.success());
    assert!(run_into(&sc, &b, &[]).status.success());
    assert!(run_into(&sc, &c, &["--seed", "6"]).status.success());
    for f in ["samples.csv", "records.csv", "links.csv", "summary.csv", "ledger.dot", "ledger.dump"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_ne!(std::fs::read(a.join("records.csv")).unwrap(), std::fs::read(c.join("records.csv")).unwrap());
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.toml");
    let o = dledger(&["run", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cannot read scenario"));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "entities = 4\nw_confirm = 9\n").unwrap();
    assert_eq!(dledger(&["run", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(dledger(&["run"]).status.code(), Some(2));
    assert_eq!(dledger(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(dledger(&["verify", missing.to_str().unwrap()]).status.code(), Some(2));
}

/// A finished small run and its dump text.
fn small_dump() -> (Simulation, String) {
    let mut sim = Simulation::new(&Scenario::from_toml(SMALL).unwrap()).unwrap();
    sim.run();
    let dump = sim.dump(0);
    (sim, dump)
}

fn verify_text(text: &str) -> Output {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("ledger.dump");
    std::fs::write(&p, text).unwrap();
    dledger(&["verify", p.to_str().unwrap()])
}

#[test]
fn verify_accepts_an_untouched_dump() {
    let (_, dump) = small_dump();
    let o = verify_text(&dump);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("valid"));
}

#[test]
fn verify_names_a_record_with_a_flipped_payload_byte() {
    let (_, dump) = small_dump();
    let mut lines: Vec<String> = dump.lines().map(str::to_owned).collect();
    let (i, mut rec) = lines
        .iter()
        .enumerate()
        .filter(|(_, l)| !l.starts_with('#'))
        .map(|(i, l)| (i, Record::from_wire(&hex::decode(l).unwrap(), usize::MAX).unwrap()))
        .find(|(_, r)| r.payload.kind == PayloadKind::Application && !r.payload.body.is_empty())
        .unwrap();
    rec.payload.body[0] ^= 1;
    let changed = Record::from_wire(&rec.to_wire(), usize::MAX).unwrap().name;
    lines[i] = hex::encode(rec.to_wire());
    let o = verify_text(&lines.join("\n"));
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    assert!(text.contains(&format!("line {}", i + 1)), "{text}");
    assert!(text.contains(&changed.to_string()) && text.contains("PoAInvalid"), "{text}");
}

#[test]
fn verify_reports_self_approval() {
    let (sim, dump) = small_dump();
    let l = sim.peer(0).ledger();
    let own = l.records().find(|r| r.generator() == sim.peer(2).entity()).unwrap().name.clone();
    let rec = sim.sign_as(2, vec![own, sim.genesis()[0].name.clone()], b"me again".to_vec());
    let o = verify_text(&format!("{dump}{}\n", hex::encode(rec.to_wire())));
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    assert!(text.contains(&rec.name.to_string()) && text.contains("SelfApproval"), "{text}");
}

#[test]
fn verify_rejects_garbage() {
    assert_eq!(verify_text("hello\n").status.code(), Some(1));
}

#[test]
fn oracle_prints_the_three_predictions() {
    let o = dledger(&["oracle", "50", "20", "2", "10", "0.2"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let value = |key: &str| -> f64 {
        text.lines().find_map(|l| l.strip_prefix(key)).unwrap().trim().parse().unwrap()
    };
    assert!((value("C_pred") - 4.0).abs() < 1e-9);
    assert!((value("A_pred") - 25.2109).abs() < 1e-4);
    assert!((value("t_confirm_bound") - 10.0844).abs() < 1e-4);

    let one = stdout(&dledger(&["oracle", "37", "1", "2", "1", "0.5"]));
    assert!(one.contains("A_pred 1.0000"));
    assert_eq!(dledger(&["oracle", "5", "6", "2", "1", "0.2"]).status.code(), Some(2));
    assert_eq!(dledger(&["oracle", "5", "2", "2", "-1", "0.2"]).status.code(), Some(2));
}

#[test]
fn the_log_level_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path());
    let out = dir.path().join("out");
    let o = Command::new(env!("CARGO_BIN_EXE_dledger"))
        .args(["run", &sc, "--out-dir", out.to_str().unwrap(), "--format", "csv"])
        .env("DLEDGER_LOG", "info")
        .output()
        .unwrap();
    assert!(String::from_utf8_lossy(&o.stderr).contains("running small"));
    let quiet = run_into(&sc, &out, &["--format", "csv"]);
    assert!(!String::from_utf8_lossy(&quiet.stderr).contains("running small"));
}
