use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use recfa_core::address::Address;
use recfa_core::condenser::{parse_measurements, tune_bound, BoundChoice, ProgramMeasurements, UnsealLimits};
use recfa_core::corpus::{corpus_with, CorpusKind, GenConfig};
use recfa_core::event::dump_events;
use recfa_core::pipeline::verify_report;
use recfa_core::{
    analyze, attest, load_model, AttackSpec, AttestOptions, BenchReport, Compressor, EnforceOptions, ForwardMap,
    Schedule, SkipMap, Status,
};

const EXIT_VIOLATION: u8 = 2;

#[derive(Parser)]
#[command(name = "recfa", version, about = "Control-flow attestation over CFG models")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum CompressorArg {
    Store,
    Zstd,
}

impl From<CompressorArg> for Compressor {
    fn from(c: CompressorArg) -> Self {
        match c {
            CompressorArg::Store => Compressor::Store,
            CompressorArg::Zstd => Compressor::Zstd,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Derive the skip map, forward map and skippable call sites of a model.
    Analyze {
        model: PathBuf,
        /// Directory for skip.map, forward.map, scs.list and analysis.txt.
        #[arg(short, long, default_value = "policy")]
        out: PathBuf,
    },
    /// Run a model under a schedule and write the attestation report.
    Attest {
        model: PathBuf,
        schedule: PathBuf,
        /// Policy directory; its scs.list decides which calls are not recorded.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(short, long, default_value = "report.bin")]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        bound: u32,
        /// Forge the n-th event at a site: `n:site:target` (site and target in hex).
        #[arg(long)]
        attack: Option<String>,
        #[arg(long)]
        no_fold: bool,
        /// Record every direct call, ignoring scs.list.
        #[arg(long)]
        no_filter: bool,
        /// Write the unfolded events to this file.
        #[arg(long)]
        raw_dump: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "zstd")]
        compressor: CompressorArg,
    },
    /// Check a report against a policy. Exit 0 when secure, 2 on violations.
    Verify {
        report: PathBuf,
        #[arg(long, default_value = "policy")]
        policy: PathBuf,
        #[arg(long)]
        abort_on_first: bool,
        /// Shadow stack limit.
        #[arg(long)]
        max_depth: Option<usize>,
        #[arg(long, default_value_t = 1 << 28)]
        max_words: u64,
        #[arg(long, default_value_t = 1 << 32)]
        max_events: u64,
    },
    /// Attest and verify every `<name>.model` / `<name>.sched` pair in a
    /// directory, or tune BOUND from a measurement file.
    Bench {
        corpus: Option<PathBuf>,
        /// BOUND for the per-program table.
        #[arg(long, default_value_t = 4)]
        bound: u32,
        /// Candidates for BOUND tuning, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "4,8,16,32")]
        bounds: Vec<u32>,
        /// Lines of `<program> (<bound> <R> <T_gr>)+` to tune from instead of running.
        #[arg(long, conflicts_with = "corpus")]
        fixture: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "zstd")]
        compressor: CompressorArg,
    },
    /// Write a seeded synthetic corpus of models and schedules.
    GenCorpus {
        out: PathBuf,
        #[arg(long, default_value = "mixed")]
        kind: String,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, env = "RECFA_SEED", default_value_t = 1)]
        seed: u64,
        /// Functions per program, `main` included.
        #[arg(long)]
        functions: Option<usize>,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, data: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, data).with_context(|| format!("writing {}", path.display()))
}

fn load(path: &Path) -> Result<recfa_core::ProgramModel> {
    load_model(&read(path)?).with_context(|| format!("loading model {}", path.display()))
}

fn load_schedule(path: &Path) -> Result<Schedule> {
    Schedule::parse(&read(path)?).with_context(|| format!("parsing schedule {}", path.display()))
}

fn parse_attack(s: &str) -> Result<AttackSpec> {
    let parts: Vec<&str> = s.split(':').collect();
    let [n, site, target] = parts[..] else { bail!("attack `{s}`: expected n:site:target") };
    let occurrence: u64 = n.parse().with_context(|| format!("attack occurrence `{n}`"))?;
    if occurrence == 0 {
        bail!("attack occurrence counts from 1");
    }
    Ok(AttackSpec {
        occurrence,
        site: Address::parse_hex(site).with_context(|| format!("attack site `{site}`"))?,
        forged_target: Address::parse_hex(target).with_context(|| format!("attack target `{target}`"))?,
    })
}

fn parse_scs(text: &str, path: &Path) -> Result<BTreeSet<Address>> {
    let mut out = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let a = Address::parse_hex(line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        out.insert(a);
    }
    Ok(out)
}

fn cmd_analyze(model: &Path, out: &Path) -> Result<ExitCode> {
    let a = analyze(load(model)?);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write(&out.join("skip.map"), a.skip_map.to_text())?;
    write(&out.join("forward.map"), a.forward_map.to_text())?;
    write(&out.join("scs.list"), a.scs_text())?;
    let summary = a.summary();
    write(&out.join("analysis.txt"), &summary)?;
    print!("{summary}");
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn cmd_attest(
    model: &Path,
    schedule: &Path,
    policy: Option<&Path>,
    out: &Path,
    bound: u32,
    attack: Option<&str>,
    no_fold: bool,
    no_filter: bool,
    raw_dump: Option<&Path>,
    compressor: Compressor,
) -> Result<ExitCode> {
    let mut a = analyze(load(model)?);
    if let Some(dir) = policy {
        let p = dir.join("scs.list");
        a.scs = parse_scs(&read(&p)?, &p)?;
    }
    let sched = load_schedule(schedule)?;
    let attack = attack.map(parse_attack).transpose()?;
    let opts = AttestOptions {
        bound,
        compressor,
        fold: !no_fold,
        filter: !no_filter,
        keep_raw: raw_dump.is_some(),
        ..Default::default()
    };
    let att = attest(&a, &sched, attack.as_ref(), &opts).context("attestation failed")?;
    write(out, &att.report)?;
    if let (Some(path), Some(raw)) = (raw_dump, &att.raw) {
        write(path, dump_events(raw))?;
    }
    if attack.is_some() && !att.outcome.attacked {
        eprintln!("warning: the attack never fired");
    }
    println!(
        "ev_total {} ev_fold {} ev_gr {} skipped {} T_instr {:.6} T_gr {:.6} Zs {}",
        att.ev_total,
        att.ev_fold,
        att.ev_gr,
        att.outcome.skipped_calls,
        att.t_instr,
        att.t_gr,
        att.report.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn load_policy(dir: &Path) -> Result<(ForwardMap, SkipMap)> {
    let fp = dir.join("forward.map");
    let sp = dir.join("skip.map");
    let f = ForwardMap::from_text(&read(&fp)?).with_context(|| format!("parsing {}", fp.display()))?;
    let m = SkipMap::from_text(&read(&sp)?).with_context(|| format!("parsing {}", sp.display()))?;
    Ok((f, m))
}

fn cmd_verify(
    report: &Path,
    policy: &Path,
    opts: EnforceOptions,
    limits: UnsealLimits,
) -> Result<ExitCode> {
    let (f, m) = load_policy(policy)?;
    let bytes = fs::read(report).with_context(|| format!("reading {}", report.display()))?;
    let v = verify_report(&bytes, &f, &m, &opts, &limits).with_context(|| format!("verifying {}", report.display()))?;
    print!("{}", v.verdict.to_text());
    eprintln!(
        "events {} checked {} recovered {} T_gr_inv {:.6} T_vrf {:.6}",
        v.events.len(),
        v.verdict.checked,
        v.verdict.recovered,
        v.t_gr_inverse,
        v.t_vrf
    );
    Ok(match v.verdict.status {
        Status::Secure => ExitCode::SUCCESS,
        Status::Violation => ExitCode::from(EXIT_VIOLATION),
    })
}

fn print_choice(c: &BoundChoice) {
    for (b, v) in &c.averages {
        println!("bound {b} avg {v:.5}");
    }
    println!("selected-bound {}", c.bound);
}

/// `<name>.model` files with a `<name>.sched` next to them, sorted by name.
fn corpus_pairs(dir: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let p = entry?.path();
        if p.extension().and_then(|e| e.to_str()) != Some("model") {
            continue;
        }
        let sched = p.with_extension("sched");
        if !sched.exists() {
            bail!("{} has no schedule {}", p.display(), sched.display());
        }
        let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or("?").to_string();
        out.push((name, p, sched));
    }
    out.sort();
    Ok(out)
}

fn cmd_bench(
    corpus_dir: Option<&Path>,
    fixture: Option<&Path>,
    bound: u32,
    bounds: &[u32],
    compressor: Compressor,
) -> Result<ExitCode> {
    if let Some(path) = fixture {
        let data = parse_measurements(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
        print_choice(&tune_bound(&data)?);
        return Ok(ExitCode::SUCCESS);
    }
    let dir = corpus_dir.ok_or_else(|| anyhow!("give a corpus directory or --fixture"))?;
    let pairs = corpus_pairs(dir)?;
    if pairs.is_empty() {
        bail!("no .model files in {}", dir.display());
    }
    let limits = UnsealLimits::default();
    let mut tuning = Vec::new();
    println!("{}", BenchReport::HEADER);
    for (name, model, sched) in &pairs {
        let a = analyze(load(model)?);
        let s = load_schedule(sched)?;
        let run = |b: u32| -> Result<BenchReport> {
            let opts = AttestOptions { bound: b, compressor, ..Default::default() };
            let att = attest(&a, &s, None, &opts).with_context(|| format!("{name}: attestation"))?;
            let ver = verify_report(&att.report, &a.forward_map, &a.skip_map, &EnforceOptions::default(), &limits)
                .with_context(|| format!("{name}: verification"))?;
            if !ver.verdict.is_secure() {
                bail!("{name}: benign run verified as {}", ver.verdict.to_text().trim());
            }
            Ok(BenchReport::from_runs(name, &att, &ver))
        };
        println!("{}", run(bound)?.to_line());
        if bounds.len() >= 2 {
            let mut by_bound = std::collections::BTreeMap::new();
            for &b in bounds {
                let r = run(b)?;
                // No tokens means nothing to compress; a zero duration is below timer resolution.
                let rate = if r.ev_gr == 0 { 1.0 } else { r.compression_rate() };
                by_bound.insert(b, (rate, r.t_gr.max(1e-9)));
            }
            tuning.push(ProgramMeasurements { program: name.clone(), by_bound });
        }
    }
    if !tuning.is_empty() {
        print_choice(&tune_bound(&tuning)?);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gen_corpus(out: &Path, kind: &str, count: usize, seed: u64, functions: Option<usize>) -> Result<ExitCode> {
    let kind: CorpusKind = kind.parse().map_err(|e: String| anyhow!(e))?;
    let mut cfg = GenConfig::for_kind(kind);
    if let Some(n) = functions {
        if n == 0 {
            bail!("--functions must be at least 1");
        }
        cfg.functions = n;
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for p in corpus_with(&cfg, count, seed) {
        write(&out.join(format!("{}.model", p.name)), &p.model_text)?;
        write(&out.join(format!("{}.sched", p.name)), p.schedule(seed).to_string())?;
    }
    println!("wrote {count} programs to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Analyze { model, out } => cmd_analyze(&model, &out),
        Cmd::Attest { model, schedule, policy, out, bound, attack, no_fold, no_filter, raw_dump, compressor } => cmd_attest(
            &model,
            &schedule,
            policy.as_deref(),
            &out,
            bound,
            attack.as_deref(),
            no_fold,
            no_filter,
            raw_dump.as_deref(),
            compressor.into(),
        ),
        Cmd::Verify { report, policy, abort_on_first, max_depth, max_words, max_events } => cmd_verify(
            &report,
            &policy,
            EnforceOptions { abort_on_first, max_depth },
            UnsealLimits { max_words, max_events },
        ),
        Cmd::Bench { corpus, bound, bounds, fixture, compressor } => {
            cmd_bench(corpus.as_deref(), fixture.as_deref(), bound, &bounds, compressor.into())
        }
        Cmd::GenCorpus { out, kind, count, seed, functions } => cmd_gen_corpus(&out, &kind, count, seed, functions),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
