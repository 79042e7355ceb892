use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use recfa_core::{ForwardMap, SkipMap};

fn recfa(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_recfa")).current_dir(dir).args(args).output().expect("run recfa")
}

fn fixture(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "core", "tests", "fixtures", name].iter().collect();
    p.canonicalize().unwrap().to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn field(line: &str, key: &str) -> u64 {
    let toks: Vec<&str> = line.split_whitespace().collect();
    let i = toks.iter().position(|t| *t == key).unwrap_or_else(|| panic!("{key} missing in {line}"));
    toks[i + 1].parse().unwrap()
}

const LOOP_100: &str = "repeat 50 { take 110 120 take 120 130 take 110 120 take 120 140 }\ntake 110 160\n";

#[test]
fn analyze_skips_one_of_three() {
    let d = tempfile::tempdir().unwrap();
    let o = recfa(d.path(), &["analyze", &fixture("skip_chain.model"), "-o", "pol"]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("direct-calls 3 skipped 1 reduction 0.3333"));
    assert_eq!(std::fs::read_to_string(d.path().join("pol/scs.list")).unwrap(), "406416\n");
    assert_eq!(std::fs::read_to_string(d.path().join("pol/skip.map")).unwrap(), "skip 406416 406416\n");
}

#[test]
fn analyze_without_direct_calls() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("m.model"), "func main entry 10\nnode 14\nedge 10 14 fallthrough\n").unwrap();
    let o = recfa(d.path(), &["analyze", "m.model"]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("direct-calls 0 skipped 0 reduction 0.0000"));
}

#[test]
fn analyze_large_generated_program() {
    let d = tempfile::tempdir().unwrap();
    let o = recfa(d.path(), &["gen-corpus", "corp", "--functions", "200", "--count", "1", "--seed", "9"]);
    assert!(o.status.success());
    let model = std::fs::read_dir(d.path().join("corp"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "model"))
        .unwrap();
    let o = recfa(d.path(), &["analyze", model.to_str().unwrap(), "-o", "pol"]);
    assert!(o.status.success());
    let first = stdout(&o).lines().next().unwrap().to_string();
    let r: f64 = first.rsplit(' ').next().unwrap().parse().unwrap();
    assert!(r > 0.0 && r < 1.0, "{first}");
    let skip = std::fs::read_to_string(d.path().join("pol/skip.map")).unwrap();
    let fwd = std::fs::read_to_string(d.path().join("pol/forward.map")).unwrap();
    assert_eq!(SkipMap::from_text(&skip).unwrap().to_text(), skip);
    assert_eq!(ForwardMap::from_text(&fwd).unwrap().to_text(), fwd);
}

#[test]
fn model_errors_carry_line_numbers() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("bad.model"), "func main entry 10\nbogus\n").unwrap();
    let o = recfa(d.path(), &["analyze", "bad.model"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.model") && err.contains("line 2"), "{err}");
}

#[test]
fn attest_and_verify_loop() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    std::fs::write(p.join("s.sched"), LOOP_100).unwrap();
    let m = fixture("loop_icalls.model");
    assert!(recfa(p, &["analyze", &m, "-o", "pol"]).status.success());

    let o = recfa(p, &["attest", &m, "s.sched", "--policy", "pol", "--raw-dump", "raw.txt"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let line = stdout(&o);
    assert_eq!(field(&line, "ev_total"), 200);
    assert_eq!(field(&line, "ev_fold"), 4);
    let raw = std::fs::read_to_string(p.join("raw.txt")).unwrap();
    assert_eq!(raw.lines().count(), 200);
    let distinct: std::collections::BTreeSet<&str> = raw.lines().collect();
    assert_eq!(distinct.len(), 4);

    let o = recfa(p, &["verify", "report.bin", "--policy", "pol"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "SECURE\n");

    let o = recfa(p, &["attest", &m, "s.sched", "--policy", "pol", "--no-fold", "-o", "flat.bin"]);
    let line = stdout(&o);
    assert_eq!(field(&line, "ev_fold"), field(&line, "ev_total"));
    let o = recfa(p, &["verify", "flat.bin", "--policy", "pol"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn attacked_report_names_the_edge() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    std::fs::write(p.join("s.sched"), LOOP_100).unwrap();
    let m = fixture("loop_icalls.model");
    assert!(recfa(p, &["analyze", &m, "-o", "pol"]).status.success());
    let o = recfa(p, &["attest", &m, "s.sched", "--policy", "pol", "--attack", "7:130:140", "-o", "bad.bin"]);
    assert!(o.status.success(), "the prover does not judge");
    let o = recfa(p, &["verify", "bad.bin", "--policy", "pol"]);
    assert_eq!(o.status.code(), Some(2));
    let out = stdout(&o);
    assert!(out.starts_with("VIOLATION\n"));
    assert!(out.lines().any(|l| l.starts_with("viol ") && l.ends_with(" forward-target 130 140")), "{out}");

    let o = recfa(p, &["verify", "bad.bin", "--policy", "pol", "--abort-on-first"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("viol ")).count(), 1);
}

#[test]
fn truncated_report_is_an_error() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    std::fs::write(p.join("s.sched"), LOOP_100).unwrap();
    let m = fixture("loop_icalls.model");
    assert!(recfa(p, &["analyze", &m, "-o", "pol"]).status.success());
    assert!(recfa(p, &["attest", &m, "s.sched", "--policy", "pol", "--compressor", "store"]).status.success());
    let bytes = std::fs::read(p.join("report.bin")).unwrap();
    std::fs::write(p.join("cut.bin"), &bytes[..bytes.len() - 3]).unwrap();
    let o = recfa(p, &["verify", "cut.bin", "--policy", "pol"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn reports_are_deterministic() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    std::fs::write(p.join("s.sched"), LOOP_100).unwrap();
    let m = fixture("loop_icalls.model");
    for out in ["a.bin", "b.bin"] {
        assert!(recfa(p, &["attest", &m, "s.sched", "-o", out]).status.success());
    }
    assert_eq!(std::fs::read(p.join("a.bin")).unwrap(), std::fs::read(p.join("b.bin")).unwrap());
}

#[test]
fn bench_fixture_selects_four() {
    let d = tempfile::tempdir().unwrap();
    let o = recfa(d.path(), &["bench", "--fixture", &fixture("bound_tuning.txt")]);
    assert!(o.status.success());
    assert!(stdout(&o).lines().any(|l| l == "selected-bound 4"));
}

#[test]
fn bench_single_trivial_model() {
    let d = tempfile::tempdir().unwrap();
    let c = d.path().join("c");
    std::fs::create_dir(&c).unwrap();
    std::fs::write(c.join("t.model"), "func main entry 10\n").unwrap();
    std::fs::write(c.join("t.sched"), "").unwrap();
    let o = recfa(d.path(), &["bench", "c"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.starts_with("t ")).count(), 1, "{out}");
}

#[test]
fn bench_loop_corpus_reduces_events() {
    let d = tempfile::tempdir().unwrap();
    assert!(recfa(d.path(), &["gen-corpus", "c", "--kind", "loop", "--count", "4", "--seed", "3"]).status.success());
    let o = recfa(d.path(), &["bench", "c", "--bounds", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().filter(|l| l.starts_with("loop-")).collect();
    assert_eq!(rows.len(), 4);
    for r in rows {
        let reduction: f64 = r.split_whitespace().nth(4).unwrap().parse().unwrap();
        assert!(reduction > 0.9, "{r}");
    }
}

#[test]
fn unfolded_and_folded_verdicts_agree_on_benign_corpus() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    assert!(recfa(p, &["gen-corpus", "c", "--kind", "mixed", "--count", "5", "--seed", "12"]).status.success());
    for e in std::fs::read_dir(p.join("c")).unwrap() {
        let model = e.unwrap().path();
        if model.extension().is_none_or(|x| x != "model") {
            continue;
        }
        let sched = model.with_extension("sched");
        let (m, s) = (model.to_str().unwrap(), sched.to_str().unwrap());
        assert!(recfa(p, &["analyze", m, "-o", "pol"]).status.success());
        assert!(recfa(p, &["attest", m, s, "--policy", "pol", "-o", "f.bin"]).status.success());
        assert!(recfa(p, &["attest", m, s, "--policy", "pol", "--no-fold", "-o", "u.bin"]).status.success());
        let a = recfa(p, &["verify", "f.bin", "--policy", "pol"]);
        let b = recfa(p, &["verify", "u.bin", "--policy", "pol"]);
        assert_eq!(a.status.code(), Some(0));
        assert_eq!(stdout(&a), stdout(&b));
    }
}
