//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line for
//! each, and exits non-zero if any failed.

use std::cell::Cell;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use neurorec::compiler::{lower, CompiledProgram, LoweringConfig, OUTPUT_PORT};
use neurorec::diff::{arg_grid, diff_program, diff_random, CircuitValue, DiffOptions, DiffReport, Family};
use neurorec::engine::{simulate, Fault, RunOutcome, RunStatus, SimConfig, Target, TraceRecord, DEFAULT_BIG_M};
use neurorec::gadgets::{
    build_constant, build_projection, build_successor, build_trigger_cell, check_trigger_schedule, CellPort,
    GadgetError, Latency, TRIGGER_REUSE_GAP,
};
use neurorec::model::{Circuit, CircuitBuilder, Injection, Leak, NeuronId};
use neurorec::murec::{eval_oracle, programs, EvalResult, RecExpr};

type Check = Result<(), String>;

/// Name, check and time budget of one criterion.
type Criterion = (&'static str, fn() -> Check, Duration);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

thread_local! {
    /// MagnitudeBreach faults seen by any run at the default big M.
    static BREACHES: Cell<usize> = const { Cell::new(0) };
}

fn note(outcome: &RunOutcome, big_m: i64) {
    if big_m == DEFAULT_BIG_M {
        if let RunStatus::Fault(Fault::MagnitudeBreach { .. }) = outcome.status {
            BREACHES.with(|b| b.set(b.get() + 1));
        }
    }
}

fn sim(circuit: &Circuit, inj: &[Injection], config: SimConfig) -> RunOutcome {
    let out = simulate(circuit, inj, config).expect("valid injections");
    note(&out, config.big_m);
    out
}

fn run_program(p: &CompiledProgram, args: &[u64], config: SimConfig) -> RunOutcome {
    let out = p.run(args, config).expect("valid arguments");
    note(&out, p.big_m);
    out
}

fn inj(neuron: NeuronId, value: i64, time: u64) -> Injection {
    Injection { neuron, value, time }
}

fn traced() -> SimConfig {
    SimConfig {
        trace: true,
        ..SimConfig::default()
    }
}

fn spikes(out: &RunOutcome, n: NeuronId) -> Vec<(u64, i64)> {
    out.raster.spikes_of(n).map(|e| (e.time, e.value)).collect()
}

fn diff_faults(r: &DiffReport) -> usize {
    r.mismatches
        .iter()
        .filter(|m| matches!(&m.circuit, CircuitValue::Fault(msg) if msg.contains("big-M")))
        .count()
}

// ---------------------------------------------------------------- 1

fn engine_semantics() -> Check {
    // transit: output time minus spike time is delay + 1
    for delay in [0u64, 1, 3, 10] {
        let mut b = CircuitBuilder::new();
        let a = b.add_neuron(0, Leak::NONE);
        let c = b.add_neuron(0, Leak::NONE);
        b.add_synapse(a, c, 1, delay).unwrap();
        let out = sim(&b.build(), &[inj(a, 7, 4)], SimConfig::default());
        ensure!(spikes(&out, a) == vec![(4, 7)], "transit source spikes {:?}", spikes(&out, a));
        ensure!(
            spikes(&out, c) == vec![(4 + delay + 1, 7)],
            "delay {delay}: target spikes {:?}",
            spikes(&out, c)
        );
    }

    // event-driven: a threshold-0 neuron stays silent through 10^4 idle steps
    let mut b = CircuitBuilder::new();
    let idle = b.add_neuron(0, Leak::Infinite);
    let once = b.add_neuron(0, Leak::NONE);
    let sentinel = b.add_neuron(0, Leak::NONE);
    let out = sim(&b.build(), &[inj(once, 0, 0), inj(sentinel, 1, 10_000)], SimConfig::default());
    ensure!(spikes(&out, idle).is_empty(), "idle neuron spiked {:?}", spikes(&out, idle));
    ensure!(spikes(&out, once) == vec![(0, 0)], "driven neuron spikes {:?}", spikes(&out, once));
    ensure!(out.status == RunStatus::Quiescent && out.final_clock == 10_000, "status {:?}", out.status);

    // reset: after a spike the state starts again from 0
    let mut b = CircuitBuilder::new();
    let n = b.add_neuron(5, Leak::Infinite);
    let out = sim(&b.build(), &[inj(n, 3, 0), inj(n, 3, 1), inj(n, 3, 2)], SimConfig::default());
    ensure!(spikes(&out, n) == vec![(1, 6)], "reset: {:?}", spikes(&out, n));

    // leak extremes
    for (leak, expect) in [(Leak::Steps(0), vec![]), (Leak::Infinite, vec![(50, 6)])] {
        let mut b = CircuitBuilder::new();
        let n = b.add_neuron(5, leak);
        let out = sim(&b.build(), &[inj(n, 3, 0), inj(n, 3, 50)], SimConfig::default());
        ensure!(spikes(&out, n) == expect, "leak {leak:?}: {:?}", spikes(&out, n));
    }

    // determinism: two runs give byte-identical rasters
    let mul = lower(&programs::mul(), &LoweringConfig::default()).unwrap();
    let a = run_program(&mul, &[3, 4], traced());
    let b = run_program(&mul, &[3, 4], traced());
    ensure!(a.raster.to_csv(&mul.circuit) == b.raster.to_csv(&mul.circuit), "csv rasters differ");
    ensure!(a.raster.to_jsonl(&mul.circuit) == b.raster.to_jsonl(&mul.circuit), "jsonl rasters differ");
    ensure!(a.trace == b.trace, "delivery traces differ");
    Ok(())
}

// ---------------------------------------------------------------- 2

fn exactly_one_output(out: &RunOutcome, circuit: &Circuit) -> Result<(u64, i64), String> {
    let y: Vec<_> = circuit.output_ports().map(|p| p.name.clone()).collect();
    let events: Vec<_> = out.raster.outputs_on(&y[0]).map(|o| (o.time, o.value)).collect();
    match events.as_slice() {
        [one] if out.status == RunStatus::Quiescent => Ok(*one),
        _ => Err(format!("expected one output spike, got {events:?} ({:?})", out.status)),
    }
}

fn primitive_circuits() -> Check {
    for native in [false, true] {
        for k in [0i64, 1, 5, 100] {
            let bx = build_constant(k, native);
            let Latency::Static(l) = bx.latency else { unreachable!() };
            for x in 0..=20 {
                let out = sim(&bx.circuit, &[inj(bx.input("x"), x, 0)], SimConfig::default());
                let (t, v) = exactly_one_output(&out, &bx.circuit)?;
                ensure!(v == k && t == l - 1, "const {k} (native {native}) on {x}: ({t}, {v})");
            }
        }
        let bx = build_successor(native);
        let Latency::Static(l) = bx.latency else { unreachable!() };
        for x in 0..=100 {
            let out = sim(&bx.circuit, &[inj(bx.input("x"), x, 0)], SimConfig::default());
            let (t, v) = exactly_one_output(&out, &bx.circuit)?;
            ensure!(v == x + 1 && t == l - 1, "succ (native {native}) on {x}: ({t}, {v})");
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- 3

fn projection() -> Check {
    let mut rng = StdRng::seed_from_u64(2024);
    for n in 1..=6usize {
        let bx = build_projection(n, DEFAULT_BIG_M).unwrap();
        for i in 1..=n {
            for _ in 0..50 {
                let xs: Vec<i64> = (0..n).map(|_| rng.gen_range(0..=100)).collect();
                let mut plan = vec![inj(bx.input("i"), i as i64, 0)];
                plan.extend(xs.iter().enumerate().map(|(m, &x)| inj(bx.input(&format!("x{}", m + 1)), x, 0)));
                let out = sim(&bx.circuit, &plan, SimConfig::default());
                let (_, v) = exactly_one_output(&out, &bx.circuit)?;
                ensure!(v == xs[i - 1], "proj {i}/{n} on {xs:?} gave {v}");
                for m in 1..=n {
                    let fired = out.raster.spikes_of(2 * n + m).next().is_some();
                    ensure!(fired == (m <= i), "proj {i}/{n}: neuron {} fired={fired}", 2 * n + m);
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- 4

fn trigger_cell() -> Check {
    let m = DEFAULT_BIG_M;
    let bx = build_trigger_cell(m);
    let cell = bx.input("S");
    let run = |plan: &[(CellPort, i64, u64)]| -> Result<Vec<(u64, i64)>, String> {
        let schedule: Vec<_> = plan.iter().map(|&(p, _, t)| (p, t)).collect();
        check_trigger_schedule(&schedule).map_err(|e| e.to_string())?;
        let injections: Vec<_> = plan.iter().map(|&(_, v, t)| inj(cell, v, t)).collect();
        let out = sim(&bx.circuit, &injections, SimConfig::default());
        ensure!(out.status == RunStatus::Quiescent, "status {:?}", out.status);
        Ok(out.raster.outputs_on("y").map(|o| (o.time, o.value)).collect())
    };
    use CellPort::{Erase, Store, Trigger};

    let got = run(&[(Store, 42, 1), (Trigger, m, 3)])?;
    ensure!(got == vec![(4, 42)], "store/trigger: {got:?}");
    let got = run(&[(Store, 42, 1), (Erase, -42, 2), (Trigger, m, 3)])?;
    ensure!(got == vec![(4, 0)], "store/erase/trigger: {got:?}");

    // three cycles at the minimum gap, then three widely spaced ones
    let g = TRIGGER_REUSE_GAP;
    let tight = [
        (Store, 5, 1),
        (Trigger, m, 2),
        (Store, 6, 1 + g),
        (Trigger, m, 2 + g),
        (Store, 7, 1 + 2 * g),
        (Trigger, m, 2 + 2 * g),
    ];
    let got = run(&tight)?;
    ensure!(got == vec![(3, 5), (3 + g, 6), (3 + 2 * g, 7)], "tight reuse: {got:?}");
    let wide = [
        (Store, 9, 10),
        (Trigger, m, 20),
        (Store, 0, 30),
        (Trigger, m, 40),
        (Store, 11, 50),
        (Erase, -11, 55),
        (Trigger, m, 60),
    ];
    let got = run(&wide)?;
    ensure!(got == vec![(21, 9), (41, 0), (61, 0)], "wide reuse: {got:?}");

    match check_trigger_schedule(&[(Store, 5), (Trigger, 5)]) {
        Err(GadgetError::SimultaneousDelivery { .. }) => {}
        other => return Err(format!("simultaneous S+T accepted: {other:?}")),
    }
    ensure!(
        check_trigger_schedule(&[(Trigger, 5), (Trigger, 5 + g - 1)]).is_err(),
        "triggers closer than the reuse gap accepted"
    );
    Ok(())
}

// ---------------------------------------------------------------- 5

fn composition() -> Check {
    let report = diff_random(1000, 3, 5, Family::LoopFree, 5, &DiffOptions::default()).map_err(|e| e.to_string())?;
    BREACHES.with(|b| b.set(b.get() + diff_faults(&report)));
    ensure!(report.cases == 5000, "ran {} cases", report.cases);
    ensure!(report.skipped == 0, "{} cases skipped", report.skipped);
    ensure!(report.passed(), "{report}");
    Ok(())
}

// ---------------------------------------------------------------- 6

/// Deliveries at a result cell, classified as stores (`S`), erases (`E`)
/// and return triggers (`R`) in time order.
fn cell_events(out: &RunOutcome, store: NeuronId, big_m: i64) -> Vec<(u64, char, i64)> {
    let mut events = Vec::new();
    let mut expect_store = true;
    for r in &out.trace {
        if let TraceRecord::Delivery { time, target: Target::Neuron(n), value } = *r {
            if n != store {
                continue;
            }
            let kind = if value == big_m {
                'R'
            } else if expect_store {
                'S'
            } else {
                'E'
            };
            // a round is closed by either an erase or a return
            expect_store = kind != 'S';
            events.push((time, kind, value));
        }
    }
    events
}

/// Race-order law at a result cell: every round stores a value and then
/// either erases it or returns it, and a return always lands strictly
/// before the erase of its round could (the erase path is two steps
/// longer and is cut when the loop stops).
fn race_order(events: &[(u64, char, i64)], result: Option<i64>) -> Check {
    let kinds: String = events.iter().map(|e| e.1).collect();
    let rounds = kinds.strip_suffix("SR").unwrap_or(&kinds);
    ensure!(
        rounds.len().is_multiple_of(2) && rounds.as_bytes().chunks(2).all(|c| c == b"SE"),
        "unexpected delivery pattern {kinds}"
    );
    for w in events.windows(2) {
        ensure!(w[0].0 < w[1].0, "simultaneous deliveries at t={}", w[0].0);
    }
    match result {
        Some(v) => {
            ensure!(kinds.ends_with("SR"), "result cell never returned: {kinds}");
            let n = events.len();
            ensure!(events[n - 2].2 == v, "stored {} but result is {v}", events[n - 2].2);
            ensure!(!events.iter().any(|e| e.1 == 'E' && e.0 > events[n - 1].0), "erase after return");
        }
        None => ensure!(!kinds.contains('R'), "unused result cell returned: {kinds}"),
    }
    Ok(())
}

/// Race order for a box invoked repeatedly: every round is store-erase
/// or store-return, in strictly increasing time. Returns the number of
/// returns.
fn reused_race_order(events: &[(u64, char, i64)]) -> Result<usize, String> {
    let kinds: String = events.iter().map(|e| e.1).collect();
    ensure!(
        kinds.len().is_multiple_of(2) && kinds.as_bytes().chunks(2).all(|c| c == b"SE" || c == b"SR"),
        "unexpected delivery pattern {kinds}"
    );
    for w in events.windows(2) {
        ensure!(w[0].0 < w[1].0, "simultaneous deliveries at t={}", w[0].0);
    }
    Ok(kinds.matches('R').count())
}

fn primitive_recursion() -> Check {
    let cfg = LoweringConfig::default();
    let add = lower(&programs::add(), &cfg).unwrap();
    for i in 0..=10u64 {
        for x in 0..=10u64 {
            let out = run_program(&add, &[i, x], traced());
            ensure!(out.status == RunStatus::Quiescent, "add({i},{x}): {:?}", out.status);
            ensure!(out.output_values(OUTPUT_PORT) == vec![(i + x) as i64], "add({i},{x})");
            // one h evaluation per iteration
            let h_runs = out.raster.spikes_of(add.role("f/n14")).count() as u64;
            ensure!(h_runs == i, "add({i},{x}): {h_runs} iterations");
            let n18: Vec<i64> = out.raster.spikes_of(add.role("f/n18")).map(|e| e.value).collect();
            let expect: Vec<i64> = (0..i as i64).rev().collect();
            ensure!(n18 == expect, "add({i},{x}): stopping values {n18:?}");
            let (base, step) = if i == 0 { (Some(x as i64), None) } else { (None, Some((i + x) as i64)) };
            race_order(&cell_events(&out, add.role("f/cell12.store"), add.big_m), base)?;
            race_order(&cell_events(&out, add.role("f/cell15.store"), add.big_m), step)?;
        }
    }
    let mul = lower(&programs::mul(), &cfg).unwrap();
    for i in 0..=8u64 {
        for x in 0..=8u64 {
            let out = run_program(&mul, &[i, x], traced());
            ensure!(out.output_values(OUTPUT_PORT) == vec![(i * x) as i64], "mul({i},{x})");
            let h_runs = out.raster.spikes_of(mul.role("f/n14")).count() as u64;
            ensure!(h_runs == i, "mul({i},{x}): {h_runs} iterations");
            let step = (i > 0).then_some((i * x) as i64);
            race_order(&cell_events(&out, mul.role("f/cell15.store"), mul.big_m), step)?;
            // the nested add box returns once per call and stays clean
            let mut returns = 0;
            for cell in ["f.h.h/cell12.store", "f.h.h/cell15.store"] {
                returns += reused_race_order(&cell_events(&out, mul.role(cell), mul.big_m))?;
            }
            ensure!(returns as u64 == i, "mul({i},{x}): inner add returned {returns} times");
        }
    }
    let pred = lower(&programs::pred(), &cfg).unwrap();
    for i in 0..=20u64 {
        let out = run_program(&pred, &[i, 0], traced());
        ensure!(
            out.output_values(OUTPUT_PORT) == vec![i.saturating_sub(1) as i64],
            "pred({i}) gave {:?}",
            out.output_values(OUTPUT_PORT)
        );
        let h_runs = out.raster.spikes_of(pred.role("f/n14")).count() as u64;
        ensure!(h_runs == i, "pred({i}): {h_runs} iterations");
    }
    Ok(())
}

// ---------------------------------------------------------------- 7

fn oracle(e: &RecExpr, args: &[u64]) -> Result<u64, String> {
    match eval_oracle(e, args, 100_000) {
        Ok(EvalResult::Value(v)) => Ok(v),
        other => Err(format!("oracle failed on {e} {args:?}: {other:?}")),
    }
}

fn minimization() -> Check {
    let cfg = LoweringConfig::default();
    // mu z. (x - z) and mu z. ((x + 1) - z)
    let shifted = RecExpr::mu(RecExpr::compose(
        programs::monus(),
        vec![
            RecExpr::proj(1, 2),
            RecExpr::compose(RecExpr::Succ, vec![RecExpr::proj(2, 2)]),
        ],
    ));
    for expr in [programs::mu_monus(), shifted] {
        let p = lower(&expr, &cfg).unwrap();
        for x in 0..=12u64 {
            let want = oracle(&expr, &[x])?;
            let out = run_program(&p, &[x], traced());
            ensure!(out.status == RunStatus::Quiescent, "{expr} on {x}: {:?}", out.status);
            ensure!(out.output_values(OUTPUT_PORT) == vec![want as i64], "{expr} on {x}: want {want}");
            race_order(&cell_events(&out, p.role("f/cell10.store"), p.big_m), Some(want as i64))?;
        }
    }
    let never = lower(&programs::mu_never(), &cfg).unwrap();
    for x in [0u64, 3] {
        let out = run_program(
            &never,
            &[x],
            SimConfig {
                max_steps: 10_000,
                ..SimConfig::default()
            },
        );
        ensure!(out.status == RunStatus::Timeout, "always-positive search: {:?}", out.status);
        ensure!(out.output_values(OUTPUT_PORT).is_empty(), "always-positive search produced output");
    }
    Ok(())
}

// ---------------------------------------------------------------- 8

fn constructions(e: &RecExpr, seen: &mut [bool; 6]) {
    match e {
        RecExpr::Const { .. } => seen[0] = true,
        RecExpr::Succ => seen[1] = true,
        RecExpr::Proj { .. } => seen[2] = true,
        RecExpr::Compose { h, gs } => {
            seen[3] = true;
            constructions(h, seen);
            gs.iter().for_each(|g| constructions(g, seen));
        }
        RecExpr::PrimRec { g, h } => {
            seen[4] = true;
            constructions(g, seen);
            constructions(h, seen);
        }
        RecExpr::Mu { f } => {
            seen[5] = true;
            constructions(f, seen);
        }
    }
}

fn end_to_end() -> Check {
    let family = [
        (programs::add(), vec![(0, 10), (0, 10)]),
        (programs::mul(), vec![(0, 6), (0, 6)]),
        (programs::pred(), vec![(0, 20), (0, 0)]),
        (programs::monus(), vec![(0, 8), (0, 8)]),
        (programs::mu_monus(), vec![(0, 12)]),
    ];
    let mut seen = [false; 6];
    let opts = DiffOptions::default();
    for (expr, ranges) in &family {
        constructions(expr, &mut seen);
        let report = diff_program(expr, &arg_grid(ranges), &opts).map_err(|e| e.to_string())?;
        BREACHES.with(|b| b.set(b.get() + diff_faults(&report)));
        ensure!(report.skipped == 0 && report.passed(), "{expr}: {report}");
    }
    ensure!(seen.iter().all(|&s| s), "family misses a construction: {seen:?}");
    let report = diff_random(100, 3, 99, Family::WithLoops, 3, &opts).map_err(|e| e.to_string())?;
    BREACHES.with(|b| b.set(b.get() + diff_faults(&report)));
    ensure!(report.passed(), "random programs with loops: {report}");
    Ok(())
}

// ---------------------------------------------------------------- 9

fn big_m_separation() -> Check {
    let breaches = BREACHES.with(Cell::get);
    ensure!(breaches == 0, "{breaches} magnitude breaches at big_m = 1e9");
    let bx = build_projection(3, 8).unwrap();
    let plan = [
        inj(bx.input("i"), 2, 0),
        inj(bx.input("x1"), 100, 0),
        inj(bx.input("x2"), 100, 0),
        inj(bx.input("x3"), 100, 0),
    ];
    let out = sim(
        &bx.circuit,
        &plan,
        SimConfig {
            big_m: 8,
            ..SimConfig::default()
        },
    );
    ensure!(
        matches!(out.status, RunStatus::Fault(Fault::MagnitudeBreach { .. })),
        "undersized big_m ran to {:?}",
        out.status
    );
    Ok(())
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("engine semantics", engine_semantics, Duration::from_secs(1)),
        ("primitive circuits", primitive_circuits, Duration::from_secs(1)),
        ("projection", projection, Duration::from_secs(10)),
        ("trigger cell", trigger_cell, Duration::from_secs(1)),
        ("composition", composition, Duration::from_secs(60)),
        ("primitive recursion", primitive_recursion, Duration::from_secs(120)),
        ("minimization", minimization, Duration::from_secs(60)),
        ("end-to-end program family", end_to_end, Duration::from_secs(600)),
        ("big-M separation", big_m_separation, Duration::from_secs(1)),
    ];
    let mut failed = 0;
    for (n, (name, check, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let took = start.elapsed();
        let result = result.and_then(|()| {
            if took <= *budget {
                Ok(())
            } else {
                Err(format!("took {took:.2?}, budget {budget:?}"))
            }
        });
        match result {
            Ok(()) => println!("PASS criterion {}: {name} ({took:.2?})", n + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {}: {name} ({took:.2?}): {why}", n + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
