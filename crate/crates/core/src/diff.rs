//! Differential testing of compiled circuits against the reference
//! interpreter, and a seeded generator of well-formed random programs.

use std::fmt;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::compiler::{lower, CompileError, CompiledProgram, LoweringConfig, OUTPUT_PORT};
use crate::engine::{RunStatus, SimConfig, DEFAULT_BIG_M, DEFAULT_MAX_STEPS};
use crate::murec::{eval_oracle, programs, EvalResult, RecExpr};

pub const DEFAULT_FUEL: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiffOptions {
    pub fuel: u64,
    pub max_steps: u64,
    pub big_m: i64,
}

impl Default for DiffOptions {
    fn default() -> Self {
        DiffOptions {
            fuel: DEFAULT_FUEL,
            max_steps: DEFAULT_MAX_STEPS,
            big_m: DEFAULT_BIG_M,
        }
    }
}

/// What the circuit produced on its output port.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CircuitValue {
    Value(i64),
    /// Quiescent without a single output spike, or with several.
    Spikes(Vec<i64>),
    Timeout,
    Fault(String),
}

impl fmt::Display for CircuitValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CircuitValue::Value(v) => write!(f, "{v}"),
            CircuitValue::Spikes(vs) => write!(f, "spikes {vs:?}"),
            CircuitValue::Timeout => f.write_str("Timeout"),
            CircuitValue::Fault(msg) => write!(f, "Fault({msg})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Mismatch {
    pub case: usize,
    pub expr: String,
    pub args: Vec<u64>,
    pub oracle: u64,
    pub circuit: CircuitValue,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DiffReport {
    pub cases: usize,
    pub mismatches: Vec<Mismatch>,
    pub timeouts: usize,
    /// Cases the oracle could not decide within its fuel.
    pub skipped: usize,
    pub seed: Option<u64>,
}

impl DiffReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }

    fn absorb(&mut self, other: DiffReport) {
        let offset = self.cases;
        self.cases += other.cases;
        self.timeouts += other.timeouts;
        self.skipped += other.skipped;
        self.mismatches.extend(other.mismatches.into_iter().map(|mut m| {
            m.case += offset;
            m
        }));
    }
}

impl fmt::Display for DiffReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "cases: {}, mismatches: {}, timeouts: {}, skipped: {}",
            self.cases,
            self.mismatches.len(),
            self.timeouts,
            self.skipped
        )?;
        if let Some(seed) = self.seed {
            write!(f, ", seed: {seed}")?;
        }
        for m in &self.mismatches {
            write!(
                f,
                "\nmismatch #{}: {} on {:?}: oracle {}, circuit {}",
                m.case, m.expr, m.args, m.oracle, m.circuit
            )?;
        }
        Ok(())
    }
}

/// Runs one compiled program and reads its single output value.
pub fn circuit_value(program: &CompiledProgram, args: &[u64], max_steps: u64) -> CircuitValue {
    let config = SimConfig {
        max_steps,
        ..SimConfig::default()
    };
    match program.run(args, config) {
        Err(e) => CircuitValue::Fault(e.to_string()),
        Ok(outcome) => match outcome.status {
            RunStatus::Timeout => CircuitValue::Timeout,
            RunStatus::Fault(fault) => CircuitValue::Fault(fault.to_string()),
            RunStatus::Quiescent => match outcome.output_values(OUTPUT_PORT).as_slice() {
                [v] => CircuitValue::Value(*v),
                other => CircuitValue::Spikes(other.to_vec()),
            },
        },
    }
}

/// Compares `program` (compiled from `expr`) with the oracle on every
/// argument vector. The program is taken as given so that harness tests
/// can hand in a deliberately broken circuit.
pub fn diff_compiled(expr: &RecExpr, program: &CompiledProgram, arg_sets: &[Vec<u64>], opts: &DiffOptions) -> DiffReport {
    let text = expr.to_string();
    let mut report = DiffReport::default();
    for args in arg_sets {
        let case = report.cases;
        report.cases += 1;
        let oracle = match eval_oracle(expr, args, opts.fuel) {
            Ok(EvalResult::Value(v)) => v,
            Ok(EvalResult::FuelExhausted) | Err(_) => {
                report.skipped += 1;
                continue;
            }
        };
        if oracle > program.max_arg as u64 {
            report.skipped += 1;
            continue;
        }
        let got = circuit_value(program, args, opts.max_steps);
        if got == CircuitValue::Timeout {
            report.timeouts += 1;
        }
        if got != CircuitValue::Value(oracle as i64) {
            report.mismatches.push(Mismatch {
                case,
                expr: text.clone(),
                args: args.clone(),
                oracle,
                circuit: got,
            });
        }
    }
    report
}

pub fn diff_program(expr: &RecExpr, arg_sets: &[Vec<u64>], opts: &DiffOptions) -> Result<DiffReport, CompileError> {
    let program = lower(expr, &LoweringConfig::with_big_m(opts.big_m))?;
    Ok(diff_compiled(expr, &program, arg_sets, opts))
}

/// Cartesian product of inclusive ranges.
pub fn arg_grid(ranges: &[(u64, u64)]) -> Vec<Vec<u64>> {
    let mut grid = vec![Vec::new()];
    for &(lo, hi) in ranges {
        grid = grid
            .into_iter()
            .flat_map(|prefix| {
                (lo..=hi).map(move |v| {
                    let mut next = prefix.clone();
                    next.push(v);
                    next
                })
            })
            .collect();
    }
    grid
}

/// Which constructions the random generator may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Const, Succ, Proj and Compose only.
    LoopFree,
    /// Additionally PrimRec, and Mu over monus-shaped searches that are
    /// guaranteed to find a zero.
    WithLoops,
}

/// Seeded generator of random well-formed programs.
pub struct ProgramGen {
    rng: StdRng,
    family: Family,
}

impl ProgramGen {
    pub fn new(seed: u64, family: Family) -> ProgramGen {
        ProgramGen {
            rng: StdRng::seed_from_u64(seed),
            family,
        }
    }

    /// A random expression of the given arity with depth at most `depth`.
    pub fn expr(&mut self, arity: usize, depth: usize) -> RecExpr {
        let depth = depth.max(1);
        if self.family == Family::WithLoops && depth >= 2 && arity >= 1 && self.rng.gen_bool(0.4) {
            return self.looped(arity, depth);
        }
        self.compose_or_leaf(arity, depth)
    }

    fn compose_or_leaf(&mut self, arity: usize, depth: usize) -> RecExpr {
        if depth == 1 || self.rng.gen_bool(0.3) {
            return self.leaf(arity);
        }
        let m = self.rng.gen_range(1..=3);
        let h = self.expr(m, depth - 1);
        let gs = (0..m).map(|_| self.expr(arity, depth - 1)).collect();
        RecExpr::compose(h, gs)
    }

    fn leaf(&mut self, arity: usize) -> RecExpr {
        match self.rng.gen_range(0..3) {
            0 if arity == 1 => RecExpr::Succ,
            1 if arity >= 1 => RecExpr::proj(self.rng.gen_range(1..=arity), arity),
            _ => RecExpr::constant(self.rng.gen_range(0..=5), arity),
        }
    }

    fn looped(&mut self, arity: usize, depth: usize) -> RecExpr {
        if self.rng.gen_bool(0.5) {
            let g = self.expr(arity - 1, depth - 1);
            let h = self.expr(arity + 1, depth - 1);
            RecExpr::primrec(g, h)
        } else {
            // mu z. (g(x) - z): always stops at max(g(x), 1)
            let g = self.expr(arity, depth - 1);
            let shifted = (2..=arity + 1).map(|i| RecExpr::proj(i, arity + 1)).collect();
            RecExpr::mu(RecExpr::compose(
                programs::monus(),
                vec![RecExpr::proj(1, arity + 1), RecExpr::compose(g, shifted)],
            ))
        }
    }

    /// `count` random argument vectors with entries in `0..=max`.
    pub fn args(&mut self, arity: usize, count: usize, max: u64) -> Vec<Vec<u64>> {
        (0..count)
            .map(|_| (0..arity).map(|_| self.rng.gen_range(0..=max)).collect())
            .collect()
    }

    pub fn arity(&mut self) -> usize {
        self.rng.gen_range(1..=3)
    }
}

/// Generates `n` random programs and diffs each on `samples` argument
/// vectors. Deterministic for a fixed seed.
pub fn diff_random(
    n: usize,
    depth: usize,
    seed: u64,
    family: Family,
    samples: usize,
    opts: &DiffOptions,
) -> Result<DiffReport, CompileError> {
    let mut gen = ProgramGen::new(seed, family);
    let max_arg = if family == Family::WithLoops { 6 } else { 20 };
    let mut report = DiffReport {
        seed: Some(seed),
        ..DiffReport::default()
    };
    for _ in 0..n {
        let arity = gen.arity();
        let expr = gen.expr(arity, depth);
        let args = gen.args(arity, samples, max_arg);
        report.absorb(diff_program(&expr, &args, opts)?);
    }
    Ok(report)
}
