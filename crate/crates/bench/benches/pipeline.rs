use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use recfa_core::condenser::{encode_tokens, greedy_compress, knot_expand, seal, unseal, UnsealLimits};
use recfa_core::corpus::{generate, CorpusKind, GenConfig};
use recfa_core::pipeline::verify_report;
use recfa_core::{analyze, attest, enforce, AttestOptions, Compressor, EnforceOptions, EventRecord, WireEvent};

fn loop_program() -> (recfa_core::Analysis, recfa_core::corpus::GeneratedProgram) {
    let p = generate(&GenConfig::for_kind(CorpusKind::LoopDominated), 42);
    (analyze(p.model.clone()), p)
}

fn bench_attest(c: &mut Criterion) {
    let (a, p) = loop_program();
    let sched = p.schedule_with_top_trips(0, 2_000);
    let probe = attest(&a, &sched, None, &AttestOptions::default()).unwrap();
    let mut g = c.benchmark_group("attest");
    g.throughput(Throughput::Elements(probe.ev_total));
    for (name, fold) in [("fold", true), ("no-fold", false)] {
        let opts = AttestOptions { fold, compressor: Compressor::Zstd, ..Default::default() };
        g.bench_function(name, |b| b.iter(|| attest(&a, black_box(&sched), None, &opts).unwrap()));
    }
    g.finish();
}

fn bench_greedy(c: &mut Criterion) {
    let (a, p) = loop_program();
    let att = attest(&a, &p.schedule_with_top_trips(0, 200), None, &AttestOptions { fold: false, ..Default::default() })
        .unwrap();
    let events: Vec<WireEvent> = att.folded.iter().map(EventRecord::wire).collect();
    let mut g = c.benchmark_group("greedy");
    g.throughput(Throughput::Elements(events.len() as u64));
    for bound in [2u32, 4, 8, 16, 32] {
        g.bench_with_input(BenchmarkId::from_parameter(bound), &bound, |b, &bound| {
            b.iter(|| greedy_compress(black_box(&events), bound).unwrap())
        });
    }
    let tokens = greedy_compress(&events, 4).unwrap();
    g.bench_function("expand", |b| b.iter(|| knot_expand(black_box(&tokens), u64::MAX).unwrap()));
    let words = encode_tokens(&tokens);
    for comp in [Compressor::Store, Compressor::Zstd] {
        let bytes = seal(&words, comp, 4, events.len() as u64);
        g.bench_function(format!("unseal-{comp:?}"), |b| {
            b.iter(|| unseal(black_box(&bytes), &UnsealLimits::default()).unwrap())
        });
    }
    g.finish();
}

fn bench_verify(c: &mut Criterion) {
    let (a, p) = loop_program();
    let sched = p.schedule_with_top_trips(0, 200);
    let opts = AttestOptions { fold: false, compressor: Compressor::Zstd, ..Default::default() };
    let att = attest(&a, &sched, None, &opts).unwrap();
    let events: Vec<WireEvent> = att.folded.iter().map(EventRecord::wire).collect();
    let mut g = c.benchmark_group("verify");
    g.throughput(Throughput::Elements(events.len() as u64));
    g.bench_function("enforce", |b| {
        b.iter(|| enforce(black_box(&events), &a.forward_map, &a.skip_map, &EnforceOptions::default()).unwrap())
    });
    g.bench_function("report", |b| {
        b.iter(|| {
            verify_report(black_box(&att.report), &a.forward_map, &a.skip_map, &EnforceOptions::default(), &UnsealLimits::default())
                .unwrap()
        })
    });
    g.finish();
}

criterion_group!(benches, bench_attest, bench_greedy, bench_verify);
criterion_main!(benches);
