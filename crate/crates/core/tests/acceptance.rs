//! Acceptance criteria. Runs as a plain binary so every criterion prints one
//! PASS/FAIL line; exits non-zero when any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use labflow::compiler::{
    bind_and_estimate, compile, lint_transfer_before_activate, Invocation, LintSuite, Origin, Program,
};
use labflow::engine::{self, Overrides, Scenario};
use labflow::optimizer::{grid_points, lex_compare, synthesis_grid, Decision};
use labflow::procedure::{Address, ParamValue, Params, Step};
use labflow::registry::Registry;
use labflow::scheduler::{list_schedule, schedule, simulate, EventKind, Policy, Schedule};
use labflow::sim_lab::{sequence_strands, ErrorChannel, Outcome};
use labflow::storage::{decode, storage_roundtrip, StorageStack};
use labflow::{testkit, Ticks};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(limit: Duration, started: Instant) -> Result<(), String> {
    let took = started.elapsed();
    ensure(took < limit, format!("took {took:.2?}, limit {limit:?}"))
}

fn c1_consolidation_speedup() -> Verdict {
    let t = Instant::now();
    let cmp =
        engine::compare_policies(scenario("synth_fanout.cfg"), &Overrides::default()).map_err(|e| e.to_string())?;
    within(Duration::from_secs(10), t)?;
    // Re-simulate both policies independently of the comparison report.
    let sc = Scenario::load(scenario("synth_fanout.cfg")).map_err(|e| e.to_string())?;
    for (policy, reported) in [
        (Policy::SerialQueue, cmp.serial.makespan_min),
        (Policy::Dynamic, cmp.dynamic.makespan_min),
    ] {
        let run = engine::run_batch(&sc, policy, sc.config.seed).map_err(|e| e.to_string())?;
        ensure(
            run.schedule.makespan.minutes() == reported,
            format!("{policy} re-simulation differs from report"),
        )?;
    }
    ensure(!cmp.dynamic.serial_fallback, "dynamic fell back to serial")?;
    ensure(cmp.speedup >= 3.0, format!("speedup {:.2}x below 3.0x", cmp.speedup))?;
    Ok(format!(
        "serial {:.1} min, dynamic {:.1} min, speedup {:.2}x",
        cmp.serial.makespan_min, cmp.dynamic.makespan_min, cmp.speedup
    ))
}

fn c2_multiuser_reroute() -> Verdict {
    let t = Instant::now();
    let sc = Scenario::load(scenario("multiuser.cfg")).map_err(|e| e.to_string())?;
    let serial = engine::run_batch(&sc, Policy::SerialQueue, sc.config.seed).map_err(|e| e.to_string())?;
    let dynamic = engine::run_batch(&sc, Policy::Dynamic, sc.config.seed).map_err(|e| e.to_string())?;
    within(Duration::from_secs(10), t)?;
    let intervals = dynamic.trace.intervals().map_err(|e| e.to_string())?;
    let heater_busy = |at: Ticks| {
        intervals
            .iter()
            .any(|iv| iv.instrument_id == "heater" && iv.start <= at && at < iv.end)
    };
    let hold = dynamic.trace.events.iter().find(|e| {
        e.kind == EventKind::Reroute
            && e.request_id.split('+').any(|r| r == "lib")
            && e.instrument_id == "thermocycler"
            && e.service_id == "thermocycler.set_temp"
            && heater_busy(e.time)
    });
    let hold = hold.ok_or("no library-prep hold rerouted to the thermocycler while the heater is busy")?;
    let (s, d) = (serial.schedule.makespan, dynamic.schedule.makespan);
    let saving = 1.0 - d.minutes() / s.minutes();
    ensure(d < s, format!("dynamic {} not below serial {}", d, s))?;
    ensure(saving >= 0.15, format!("saving {:.1}% below 15%", saving * 100.0))?;
    Ok(format!(
        "lib#{} rerouted at {:.1} min; serial {:.1} -> dynamic {:.1} min ({:.1}% saved)",
        hold.invocation_id,
        hold.time.minutes(),
        s.minutes(),
        d.minutes(),
        saving * 100.0
    ))
}

/// Busy fraction by painting every busy tick, independent of interval merging.
fn painted_utilization(run: &engine::BatchRun, instrument: &str) -> f64 {
    let span = run.schedule.makespan.0 as usize;
    let mut busy = vec![false; span];
    for iv in run.trace.intervals().expect("well-formed trace") {
        if iv.instrument_id == instrument {
            busy[iv.start.0 as usize..iv.end.0 as usize].fill(true);
        }
    }
    busy.iter().filter(|&&b| b).count() as f64 / span as f64
}

fn c3_utilization() -> Verdict {
    let sc = Scenario::load(scenario("multiuser.cfg")).map_err(|e| e.to_string())?;
    let serial = engine::run_batch(&sc, Policy::SerialQueue, sc.config.seed).map_err(|e| e.to_string())?;
    let dynamic = engine::run_batch(&sc, Policy::Dynamic, sc.config.seed).map_err(|e| e.to_string())?;
    let mut strict = false;
    let mut line = Vec::new();
    for inst in ["heater", "thermocycler"] {
        let (us, ud) = (serial.utilization.ratio(inst), dynamic.utilization.ratio(inst));
        for (run, got) in [(&serial, us), (&dynamic, ud)] {
            let oracle = painted_utilization(run, inst);
            ensure(
                (oracle - got).abs() < 1e-12,
                format!("{inst}: report {got} vs oracle {oracle}"),
            )?;
        }
        ensure(ud >= us, format!("{inst} utilization fell: {us:.3} -> {ud:.3}"))?;
        strict |= ud > us;
        line.push(format!("{inst} {us:.3} -> {ud:.3}"));
    }
    ensure(strict, "no strict improvement")?;
    Ok(line.join(", "))
}

fn read_golden(name: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name))
        .unwrap_or_else(|e| panic!("golden {name}: {e}"))
}

fn c4_lint() -> Verdict {
    let reg = testkit::bench_registry();
    let p = testkit::rpa_procedure();
    let (prog, report) = LintSuite::default()
        .run(compile(&p, &reg, "rpa").map_err(|e| e.to_string())?, &reg)
        .map_err(|e| e.to_string())?;
    ensure(report.is_clean(), format!("template has findings:\n{report}"))?;
    let caps: Vec<&Invocation> = prog
        .invocations
        .iter()
        .filter(|i| i.capability == "mechanical.cap")
        .collect();
    ensure(caps.len() == 1, format!("{} caps inserted", caps.len()))?;
    let hold = prog
        .invocations
        .iter()
        .find(|i| i.capability == "thermal.hold")
        .ok_or("no hold")?;
    // The cap must be an ancestor of the hold.
    let mut stack: Vec<usize> = hold.depends_on.iter().copied().collect();
    let mut seen = BTreeSet::new();
    while let Some(n) = stack.pop() {
        if seen.insert(n) {
            stack.extend(prog.invocations[n].depends_on.iter().copied());
        }
    }
    ensure(seen.contains(&caps[0].id), "cap does not precede the hold")?;

    let mut no_transfer = p.clone();
    let idx = no_transfer
        .steps
        .iter()
        .position(|s| matches!(s, Step::Transfer { .. }))
        .ok_or("no transfer step")?;
    no_transfer.steps.remove(idx);
    let bad = compile(&no_transfer, &reg, "rpa").map_err(|e| e.to_string())?;
    let findings = lint_transfer_before_activate(&bad);
    let errors = findings.errors().count();
    ensure(errors == 2, format!("{errors} transfer-before-activate errors"))?;

    let sc = Scenario::load(scenario("rpa.cfg")).map_err(|e| e.to_string())?;
    let (clean, clean_err) = engine::lint_templates(&sc, Some("rpa_test"), None).map_err(|e| e.to_string())?;
    let (dropped, dropped_err) = engine::lint_templates(&sc, Some("rpa_test"), Some(idx)).map_err(|e| e.to_string())?;
    ensure(!clean_err && dropped_err, "lint error flags wrong")?;
    ensure(
        clean == read_golden("rpa_lint.txt"),
        format!("golden rpa_lint.txt differs:\n{clean}"),
    )?;
    ensure(
        dropped == read_golden("rpa_no_transfer_lint.txt"),
        format!("golden rpa_no_transfer_lint.txt differs:\n{dropped}"),
    )?;
    Ok(format!(
        "1 cap before hold; {errors} errors without the transfer; goldens match"
    ))
}

fn num(p: &Params, k: &str) -> f64 {
    p.get(k).and_then(ParamValue::as_num).unwrap_or(f64::NAN)
}

fn c5_optimizer() -> Verdict {
    let sc = Scenario::load(scenario("optimize.cfg")).map_err(|e| e.to_string())?;
    let states =
        engine::run_optimize(&sc, sc.config.policy, sc.config.seed, sc.config.budget).map_err(|e| e.to_string())?;
    let state = states.first().ok_or("no optimization run")?;
    let frontier = state.frontier_entry().ok_or("empty frontier")?;
    let best_yield = frontier.outcome.yield_.unwrap_or(0.0);
    ensure(best_yield >= 0.98, format!("frontier yield {best_yield:.4}"))?;
    let last = state.history.last().ok_or("empty history")?;
    ensure(
        last.decision == Decision::HaltOnRegression,
        format!("stopped with {:?}", last.decision),
    )?;
    ensure(
        last.varied == ["cycle_time"] && num(&last.params, "cycle_time") < num(&frontier.params, "cycle_time"),
        "halt was not a cycle_time reduction",
    )?;
    ensure(
        last.outcome.yield_.unwrap_or(1.0) < 0.98,
        "halting point still meets the threshold",
    )?;
    let mut yields = state
        .history
        .iter()
        .filter(|h| h.decision == Decision::Improved)
        .map(|h| h.outcome.yield_.unwrap());
    let mut prev = 0.0;
    ensure(
        yields.all(|y| std::mem::replace(&mut prev, y) < y),
        "improvements not monotone",
    )?;

    // Exhaustive grid oracle: yield from the surface, time from compiling and
    // scheduling each point on its own.
    let reg = testkit::bench_registry();
    let model = sc.model();
    let template = testkit::template("enzymatic_synthesis");
    let mut best: Option<(Params, Outcome)> = None;
    for point in grid_points(&synthesis_grid(), &template.params) {
        let p = template.with_params(&point).map_err(|e| e.to_string())?;
        let (prog, _) = LintSuite::default()
            .run(compile(&p, &reg, "grid").map_err(|e| e.to_string())?, &reg)
            .map_err(|e| e.to_string())?;
        let prog = bind_and_estimate(prog, &reg).map_err(|e| e.to_string())?;
        let s = schedule(&[prog], &reg, Policy::SerialQueue).map_err(|e| e.to_string())?;
        let o = Outcome::of(model.surface.eval(&point), s.makespan.minutes());
        if best
            .as_ref()
            .is_none_or(|(_, b)| lex_compare(&o, b, &state.objective) == std::cmp::Ordering::Greater)
        {
            best = Some((point, o));
        }
    }
    let (grid_best, grid_outcome) = best.ok_or("empty grid")?;
    ensure(
        grid_best == frontier.params,
        format!("frontier {:?} != grid optimum {:?}", frontier.params, grid_best),
    )?;
    ensure(
        (grid_outcome.time_min - frontier.outcome.time_min).abs() < 1e-9,
        "frontier time differs from the grid oracle",
    )?;
    Ok(format!(
        "{} iterations, frontier yield {:.3} at {:.1} min, halted at yield {:.4}",
        state.iterations(),
        best_yield,
        frontier.outcome.time_min,
        last.outcome.yield_.unwrap_or(f64::NAN)
    ))
}

const CAPS: [&str; 2] = ["t.a", "t.b"];

fn workload_registry(instruments: &[(&str, &[&str])]) -> Registry {
    let mut text = String::new();
    for (id, tags) in instruments {
        let tags: Vec<String> = tags.iter().map(|t| format!("\"{t}\"")).collect();
        text.push_str(&format!(
            "[[instrument]]\nid = \"{id}\"\nkind = \"generic\"\n[[instrument.service]]\nname = \"run\"\ntags = [{}]\nduration = {{ base = 0.0, per_unit = 1.0, quantity = \"duration\" }}\n",
            tags.join(", ")
        ));
    }
    Registry::from_toml_str(&text).expect("workload registry")
}

fn random_workload(rng: &mut ChaCha8Rng, max_progs: usize, max_invs: usize, caps: &[&str]) -> Vec<Program> {
    let n = rng.random_range(1..=max_progs);
    (0..n)
        .map(|k| {
            let rid = format!("w{k}");
            let m = rng.random_range(1..=max_invs);
            let invocations = (0..m)
                .map(|i| {
                    let deps: BTreeSet<usize> = (0..i).filter(|_| rng.random_bool(0.35)).collect();
                    let minutes = f64::from(rng.random_range(1..=12u32));
                    Invocation {
                        id: i,
                        capability: caps[rng.random_range(0..caps.len())].to_string(),
                        params: BTreeMap::from([("duration".to_string(), minutes)]),
                        labels: BTreeMap::new(),
                        reads: BTreeSet::from([Address::new(format!("rack{k}"), 0, i as u16 + 1)]),
                        writes: BTreeSet::new(),
                        depends_on: deps,
                        est_duration: None,
                        source_step: i,
                        requires_sealed: false,
                        release: Ticks::from_minutes(f64::from(rng.random_range(0..3u32))),
                        width: 1,
                        origins: vec![Origin {
                            request_id: rid.clone(),
                            invocation_id: i,
                        }],
                    }
                })
                .collect();
            Program {
                program_id: format!("{rid}/p"),
                request_id: rid,
                procedure_id: "p".into(),
                params: Params::new(),
                invocations,
            }
        })
        .collect()
}

/// Independent of `Schedule::violations`.
fn check_schedule(s: &Schedule, reg: &Registry) -> Result<(), String> {
    let mut per_inst: BTreeMap<&str, Vec<(Ticks, Ticks)>> = BTreeMap::new();
    let mut window = BTreeMap::new();
    for a in &s.allocations {
        per_inst.entry(&a.instrument_id).or_default().push((a.start, a.end));
        if window.insert((a.program, a.invocation_id), (a.start, a.end)).is_some() {
            return Err(format!("invocation {}#{} allocated twice", a.program, a.invocation_id));
        }
        let inv = &s.programs[a.program].invocations[a.invocation_id];
        let svc = reg.service(&a.service_id).ok_or("unknown service")?;
        ensure(
            svc.capability_tags.contains(&inv.capability),
            "service lacks capability",
        )?;
    }
    for (inst, mut spans) in per_inst {
        spans.sort();
        for w in spans.windows(2) {
            ensure(w[1].0 >= w[0].1, format!("double booking on {inst}"))?;
        }
    }
    for (k, p) in s.programs.iter().enumerate() {
        for inv in &p.invocations {
            let (start, _) = window.get(&(k, inv.id)).ok_or("unscheduled invocation")?;
            ensure(*start >= inv.release, "start before release")?;
            for d in &inv.depends_on {
                ensure(window[&(k, *d)].1 <= *start, "dependency violation")?;
            }
        }
    }
    Ok(())
}

struct Op {
    caps: Vec<usize>,
    dur: u64,
    release: u64,
    deps: Vec<usize>,
    tail: u64,
}

/// Exact optimum by enumerating dispatch orders and machine choices, each
/// operation appended at its machine's end (covers every semi-active schedule).
fn brute_force(progs: &[Program], machines: &[(&str, &[&str])]) -> u64 {
    let mut ops: Vec<Op> = Vec::new();
    for p in progs {
        let base = ops.len();
        for inv in &p.invocations {
            let minutes = inv.params["duration"];
            ops.push(Op {
                caps: machines
                    .iter()
                    .enumerate()
                    .filter(|(_, (_, tags))| tags.contains(&inv.capability.as_str()))
                    .map(|(m, _)| m)
                    .collect(),
                dur: (minutes * 10.0).round() as u64,
                release: inv.release.0,
                deps: inv.depends_on.iter().map(|d| base + d).collect(),
                tail: 0,
            });
        }
    }
    for i in (0..ops.len()).rev() {
        let succ_tail = (0..ops.len())
            .filter(|&j| ops[j].deps.contains(&i))
            .map(|j| ops[j].tail)
            .max()
            .unwrap_or(0);
        ops[i].tail = ops[i].dur + succ_tail;
    }
    fn go(ops: &[Op], end: &mut [Option<u64>], free: &mut [u64], cur: u64, best: &mut u64) {
        let mut lb = cur;
        let mut any = false;
        for (i, op) in ops.iter().enumerate() {
            if end[i].is_some() {
                continue;
            }
            any = true;
            let ready = op.deps.iter().filter_map(|&d| end[d]).fold(op.release, u64::max);
            lb = lb.max(ready + op.tail);
        }
        if !any {
            *best = (*best).min(cur);
            return;
        }
        if lb >= *best {
            return;
        }
        for i in 0..ops.len() {
            if end[i].is_some() || ops[i].deps.iter().any(|&d| end[d].is_none()) {
                continue;
            }
            let ready = ops[i]
                .deps
                .iter()
                .map(|&d| end[d].unwrap())
                .fold(ops[i].release, u64::max);
            for &m in &ops[i].caps {
                let start = ready.max(free[m]);
                let fin = start + ops[i].dur;
                let saved = free[m];
                free[m] = fin;
                end[i] = Some(fin);
                go(ops, end, free, cur.max(fin), best);
                end[i] = None;
                free[m] = saved;
            }
        }
    }
    let mut best = u64::MAX;
    go(
        &ops,
        &mut vec![None; ops.len()],
        &mut vec![0; machines.len()],
        0,
        &mut best,
    );
    best
}

fn c6_scheduler() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let layouts: [&[(&str, &[&str])]; 4] = [
        &[("m1", &CAPS)],
        &[("a", &["t.a"]), ("b", &["t.b"])],
        &[("a", &["t.a"]), ("ab", &CAPS), ("b", &["t.b"])],
        &[("a1", &["t.a"]), ("a2", &["t.a"]), ("ab", &CAPS), ("b", &["t.b"])],
    ];
    let regs: Vec<Registry> = layouts.iter().map(|l| workload_registry(l)).collect();
    let workloads = 10_000;
    for n in 0..workloads {
        let which = n % layouts.len();
        let progs = random_workload(&mut rng, 6, 8, &CAPS);
        let reg = &regs[which];
        for s in [
            list_schedule(&progs, reg),
            schedule(&progs, reg, Policy::SerialQueue),
            schedule(&progs, reg, Policy::Dynamic),
        ] {
            let s = s.map_err(|e| format!("workload {n}: {e}"))?;
            check_schedule(&s, reg).map_err(|e| format!("workload {n}: {e}"))?;
            ensure(
                s.violations(reg).is_empty(),
                format!("workload {n}: {:?}", s.violations(reg)),
            )?;
        }
    }

    let mut worst: f64 = 0.0;
    let small = 1_500;
    for n in 0..small {
        let layout = layouts[n % 3];
        let reg = &regs[n % 3];
        let progs = loop {
            let p = random_workload(&mut rng, 5, 3, &CAPS);
            if p.iter().map(Program::len).sum::<usize>() <= 7 {
                break p;
            }
        };
        let greedy = list_schedule(&progs, reg).map_err(|e| e.to_string())?.makespan.0;
        let opt = brute_force(&progs, layout);
        ensure(
            greedy >= opt,
            format!("instance {n}: greedy {greedy} beats optimum {opt}"),
        )?;
        let ratio = greedy as f64 / opt as f64;
        worst = worst.max(ratio);
        ensure(ratio <= 2.0, format!("instance {n}: ratio {ratio:.3}"))?;
    }
    Ok(format!(
        "{workloads} workloads clean; worst greedy/optimum {worst:.3} over {small} small instances"
    ))
}

fn c7_error_channel() -> Verdict {
    let ch = ErrorChannel::default();
    let bases = 1_200_000usize;
    let input: Vec<Vec<u8>> = (0..bases).map(|i| vec![b"ACGT"[i % 4]]).collect();
    let reads = sequence_strands(&input, 1, &ch, 7);
    let (mut del, mut ins, mut sub) = (0usize, 0usize, 0usize);
    for (r, src) in reads.iter().zip(&input) {
        match r.len() {
            0 => del += 1,
            2 => ins += 1,
            1 if r[0] != src[0] => sub += 1,
            1 => {}
            n => return Err(format!("read of length {n} from one base")),
        }
    }
    let pct = |c: usize| 100.0 * c as f64 / bases as f64;
    let (d, i, s) = (pct(del), pct(ins), pct(sub));
    ensure((d - 2.35).abs() <= 0.1, format!("deletion {d:.3}%"))?;
    ensure((i - 0.25).abs() <= 0.05, format!("insertion {i:.3}%"))?;
    ensure((s - 0.12).abs() <= 0.05, format!("substitution {s:.3}%"))?;
    Ok(format!("{bases} bases: del {d:.3}%, ins {i:.3}%, sub {s:.3}%"))
}

fn c8_storage() -> Verdict {
    let t = Instant::now();
    let sc = Scenario::load(scenario("storage.cfg")).map_err(|e| e.to_string())?;
    let spec = sc.config.storage.clone().ok_or("no [storage]")?;
    let data = sc.payload.clone().ok_or("no payload")?;
    let stack = StorageStack {
        registry: &sc.registry,
        kb: &sc.kb,
        model: sc.model(),
        policy: sc.config.policy,
        payload_nt: spec.payload_nt,
        synthesis_task: spec.synthesis_task.clone(),
        sequencing_task: spec.sequencing_task.clone(),
    };
    let run = storage_roundtrip(&data, &stack, sc.config.seed).map_err(|e| e.to_string())?;
    let r = &run.report;
    ensure(r.strand_count == 78, format!("{} strands", r.strand_count))?;
    ensure(
        r.recovered_exactly && r.recovered == data,
        "scenario run did not recover the payload",
    )?;
    ensure(
        r.step_count == run.trace.step_count,
        format!("report steps {} vs trace steps {}", r.step_count, run.trace.step_count),
    )?;
    let finishes = run.trace.count(EventKind::Finish);
    ensure(finishes == r.step_count, format!("trace has {finishes} finish events"))?;

    let strands = run.strands.sequences();
    let seeds = 100u64;
    let ok = (0..seeds)
        .filter(|&s| {
            let reads = sequence_strands(&strands, spec.coverage, &sc.config.channel, 1_000 + s);
            decode(&reads, &run.strands.header).is_ok_and(|b| b == data)
        })
        .count();
    within(Duration::from_secs(60), t)?;
    ensure(ok >= 99, format!("{ok}/{seeds} seeds recovered"))?;
    Ok(format!(
        "{} strands, {} steps, {} instruments, {ok}/{seeds} seeds exact",
        r.strand_count, r.step_count, r.instruments_used
    ))
}

fn c9_determinism() -> Verdict {
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-determinism");
    let _ = std::fs::remove_dir_all(&root);
    let names = ["rpa", "multiuser", "synth_fanout", "optimize", "storage"];
    for name in names {
        let mut traces = Vec::new();
        for pass in ["a", "b"] {
            let ov = Overrides {
                out_dir: Some(root.join(pass)),
                ..Overrides::default()
            };
            let rec = engine::run_scenario(scenario(&format!("{name}.cfg")), &ov).map_err(|e| e.to_string())?;
            traces.push(std::fs::read(rec.out_dir.join("trace.csv")).map_err(|e| e.to_string())?);
        }
        ensure(
            !traces[0].is_empty() && traces[0] == traces[1],
            format!("{name}: traces differ"),
        )?;
    }
    let t = simulate(&Schedule::empty(Policy::Dynamic));
    ensure(t.is_empty(), "empty schedule produced events")?;
    Ok(format!("{} scenarios byte-identical across reruns", names.len()))
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 9] = [
        ("consolidation speedup", c1_consolidation_speedup),
        ("multi-user conflict resolution", c2_multiuser_reroute),
        ("utilization improvement", c3_utilization),
        ("lint behaviors", c4_lint),
        ("optimizer trajectory", c5_optimizer),
        ("scheduler safety and quality", c6_scheduler),
        ("error-channel calibration", c7_error_channel),
        ("storage round-trip", c8_storage),
        ("determinism", c9_determinism),
    ];
    let mut failed = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match verdict {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail}) [{:.2?}]", n + 1, t.elapsed()),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({why}) [{:.2?}]", n + 1, t.elapsed());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
