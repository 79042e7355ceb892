use std::collections::BTreeSet;

use recfa_core::address::addr;
use recfa_core::cfg::Cfg;
use recfa_core::event::{EventRecord, Marker, TraceItem};
use recfa_core::fold::fold_stream;
use recfa_core::interp::{interpret, AttackSpec, InterpError, Instrumentation, Interpreter};
use recfa_core::loops::detect_loops_in;
use recfa_core::model::load_model;
use recfa_core::recursion::{classify_foldability_in, detect_direct_recursion_in, DEFAULT_DEPTH_LIMIT};
use recfa_core::schedule::Schedule;

fn fixture(name: &str) -> recfa_core::model::ProgramModel {
    let p = format!("{}/tests/fixtures/{name}.model", env!("CARGO_MANIFEST_DIR"));
    load_model(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn traced(name: &str, sched: &Schedule) -> Vec<TraceItem> {
    let m = fixture(name);
    let cfg = Cfg::new(&m);
    let loops = detect_loops_in(&cfg);
    let recs: Vec<_> = detect_direct_recursion_in(&cfg)
        .iter()
        .map(|r| classify_foldability_in(&cfg, r, DEFAULT_DEPTH_LIMIT))
        .collect();
    let inst = Instrumentation::new(&cfg, &loops, &recs);
    let mut items = Vec::new();
    Interpreter::new(&cfg, &inst, &BTreeSet::new()).run(sched, None, &mut items).unwrap();
    items
}

fn loop_schedule(paths: &[bool]) -> Schedule {
    let mut s = Schedule::new();
    for &via_n3 in paths {
        s.take(addr(0x110), addr(0x120));
        s.take(addr(0x120), addr(if via_n3 { 0x130 } else { 0x140 }));
    }
    s.take(addr(0x110), addr(0x160));
    s
}

#[test]
fn single_loop_iteration_raw() {
    let raw = interpret(&fixture("loop_icalls"), &BTreeSet::new(), &loop_schedule(&[true]), None).unwrap();
    assert_eq!(raw, vec![EventRecord::indirect_call(addr(0x130), addr(0x200)), EventRecord::ret(addr(0x200), addr(0x150))]);
}

#[test]
fn five_iterations_fold_to_two_paths() {
    let items = traced("loop_icalls", &loop_schedule(&[true, false, true, false, true]));
    let folded = fold_stream(&items).unwrap();
    assert_eq!(
        folded,
        vec![
            EventRecord::indirect_call(addr(0x130), addr(0x200)),
            EventRecord::ret(addr(0x200), addr(0x150)),
            EventRecord::indirect_call(addr(0x140), addr(0x300)),
            EventRecord::ret(addr(0x300), addr(0x150)),
        ]
    );
    let markers = items.iter().filter(|i| matches!(i, TraceItem::Marker(_))).count();
    // entry + start, 5 x (end + start), exit
    assert_eq!(markers, 13);
    assert_eq!(items.first(), Some(&TraceItem::Marker(Marker::LoopEntry)));
}

#[test]
fn unique_recursion_depth_five_folds() {
    let mut s = Schedule::new();
    for _ in 0..4 {
        s.take(addr(0x200), addr(0x210));
    }
    s.take(addr(0x200), addr(0x220));
    let items = traced("rec_unique", &s);
    let raw = items.iter().filter(|i| matches!(i, TraceItem::Event(_))).count();
    assert_eq!(raw, 10);
    assert_eq!(
        fold_stream(&items).unwrap(),
        vec![
            EventRecord::direct_call(addr(0x100)),
            EventRecord::direct_call(addr(0x210)),
            EventRecord::ret(addr(0x220), addr(0x218)),
            EventRecord::ret(addr(0x220), addr(0x108)),
        ]
    );
}

#[test]
fn branching_recursion_is_not_folded() {
    let mut s = Schedule::new();
    for _ in 0..3 {
        s.take(addr(0x200), addr(0x210));
    }
    s.take(addr(0x200), addr(0x220));
    s.take(addr(0x218), addr(0x228));
    s.take(addr(0x218), addr(0x230));
    s.take(addr(0x218), addr(0x228));
    let items = traced("rec_branching", &s);
    let raw: Vec<EventRecord> = items
        .iter()
        .filter_map(|i| match i {
            TraceItem::Event(e) => Some(*e),
            _ => None,
        })
        .collect();
    assert_eq!(fold_stream(&items).unwrap(), raw);
}

#[test]
fn empty_main_gives_nothing() {
    let m = load_model("func main entry 10\n").unwrap();
    assert!(interpret(&m, &BTreeSet::new(), &Schedule::new(), None).unwrap().is_empty());
}

#[test]
fn skipped_call_disappears() {
    let m = fixture("skip_chain");
    let s = Schedule::parse("take 4063de 406411").unwrap();
    let scs = BTreeSet::from([addr(0x406416)]);
    let all = interpret(&m, &BTreeSet::new(), &s, None).unwrap();
    let filtered = interpret(&m, &scs, &s, None).unwrap();
    let c = EventRecord::direct_call(addr(0x406416));
    assert!(all.contains(&c));
    assert!(!filtered.contains(&c));
    assert_eq!(all.len(), filtered.len() + 1);
}

#[test]
fn schedule_errors() {
    let m = fixture("loop_icalls");
    let e = interpret(&m, &BTreeSet::new(), &Schedule::new(), None).unwrap_err();
    assert_eq!(e, InterpError::ScheduleExhausted { at: addr(0x110) });
    let e = interpret(&m, &BTreeSet::new(), &Schedule::parse("take 110 130").unwrap(), None).unwrap_err();
    assert!(matches!(e, InterpError::InvalidDecision { .. }));
    let e = interpret(&m, &BTreeSet::new(), &Schedule::parse("take 110 160 take 110 160").unwrap(), None).unwrap_err();
    assert!(matches!(e, InterpError::ScheduleNotConsumed { left: 1 }));
}

#[test]
fn attack_overrides_nth_occurrence() {
    let m = fixture("loop_icalls");
    let a = AttackSpec { occurrence: 2, site: addr(0x200), forged_target: addr(0x120) };
    let raw = interpret(&m, &BTreeSet::new(), &loop_schedule(&[true, true, true]), Some(&a)).unwrap();
    let rets: Vec<_> = raw.iter().filter(|e| e.src == addr(0x200)).map(|e| e.dst.unwrap()).collect();
    assert_eq!(rets[0], addr(0x150));
    assert_eq!(rets[1], addr(0x120));
    // forged target outside the model stops the run
    let a = AttackSpec { occurrence: 1, site: addr(0x130), forged_target: addr(0xdead) };
    let raw = interpret(&m, &BTreeSet::new(), &loop_schedule(&[true]), Some(&a)).unwrap();
    assert_eq!(raw, vec![EventRecord::indirect_call(addr(0x130), addr(0xdead))]);
}
