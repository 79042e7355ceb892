use recfa_core::corpus::{corpus, forward_attack, return_attack, CorpusKind};
use recfa_core::condenser::UnsealLimits;
use recfa_core::pipeline::verify_report;
use recfa_core::{analyze, attest, AttestOptions, EnforceOptions};

const KINDS: [CorpusKind; 3] = [CorpusKind::LoopDominated, CorpusKind::LoopFree, CorpusKind::Mixed];

#[test]
fn benign_runs_verify_secure() {
    for kind in KINDS {
        for p in corpus(kind, 12, 11) {
            let a = analyze(p.model.clone());
            for fold in [true, false] {
                let opts = AttestOptions { fold, ..Default::default() };
                let att = attest(&a, &p.schedule(1), None, &opts).unwrap();
                let v = verify_report(&att.report, &a.forward_map, &a.skip_map, &EnforceOptions::default(), &UnsealLimits::default())
                    .unwrap();
                assert!(v.verdict.is_secure(), "{} fold={fold}: {}", p.name, v.verdict.to_text());
            }
        }
    }
}

#[test]
fn attacks_are_flagged() {
    let (mut fwd, mut ret) = (0, 0);
    for kind in KINDS {
        for (i, p) in corpus(kind, 12, 23).into_iter().enumerate() {
            let a = analyze(p.model.clone());
            let sched = p.schedule(2);
            let base = attest(&a, &sched, None, &AttestOptions { keep_raw: true, filter: false, fold: false, ..Default::default() }).unwrap();
            let raw = base.raw.unwrap();
            let specs = [forward_attack(&a, &raw, i as u64), return_attack(&a, &raw, i as u64)];
            for (k, spec) in specs.iter().enumerate() {
                let Some(spec) = spec else { continue };
                let att = attest(&a, &sched, Some(spec), &AttestOptions::default()).unwrap();
                assert!(att.outcome.attacked);
                let v = verify_report(&att.report, &a.forward_map, &a.skip_map, &EnforceOptions::default(), &UnsealLimits::default())
                    .unwrap();
                assert!(!v.verdict.is_secure(), "{} {spec:?}", p.name);
                if k == 0 { fwd += 1 } else { ret += 1 }
            }
        }
    }
    assert!(fwd > 10 && ret > 10, "{fwd} {ret}");
}
