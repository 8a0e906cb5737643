//! Lowering of arity-checked mu-recursive programs to circuits.
//!
//! Boxes invoked exactly once at a statically known time ("one-shot") use
//! the primitive constant, successor and projection circuits with their
//! auxiliary inputs scheduled in the injection plan. Boxes that may run
//! many times (inside recursion and minimization loops) use the reusable
//! emitter-based forms instead.
//!
//! Recursion and minimization keep their loop state in trigger cells. A
//! decision stage flushes every loop cell each round; the flushed values
//! only re-enter the loop through value gates that an `M` "go" signal
//! opens, so a finished loop leaves no residual state behind and the whole
//! box can be used again by an enclosing loop.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{simulate, EngineError, RunOutcome, SimConfig, DEFAULT_BIG_M};
use crate::gadgets::{
    self, emit_constant_emitter, emit_gate, emit_join, emit_trigger_cell, relay, AuxTime, Fragment, Gate,
    GadgetError, Latency, TriggerCell,
};
use crate::model::{Circuit, CircuitBuilder, GadgetId, Injection, Leak, NeuronId, PortRole};
use crate::murec::{arity_check, ArityError, RecExpr};

/// Name of the output port of every compiled program.
pub const OUTPUT_PORT: &str = "y";

/// Relay convention recorded in program metadata.
pub const RELAY_CONVENTION: &str =
    "relays: threshold 0, leak 0, weight-1 zero-delay synapses unless stated";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoweringConfig {
    pub big_m: i64,
    /// Largest argument value the program will be run on.
    pub max_arg: i64,
    /// Reject programs that need native gadgets.
    pub strict_primitive: bool,
}

impl LoweringConfig {
    pub fn with_big_m(big_m: i64) -> LoweringConfig {
        LoweringConfig {
            big_m,
            max_arg: (big_m - 1) / 2,
            strict_primitive: false,
        }
    }
}

impl Default for LoweringConfig {
    fn default() -> Self {
        LoweringConfig::with_big_m(DEFAULT_BIG_M)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompileError {
    #[error(transparent)]
    Arity(#[from] ArityError),
    #[error("strict primitive mode: {0} needs native gadgets")]
    StrictModeViolation(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Gadget(#[from] GadgetError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RunError {
    #[error("expected {expected} arguments, got {got}")]
    ArgumentCount { expected: usize, got: usize },
    #[error("argument {value} exceeds the configured maximum {max}")]
    ArgumentTooLarge { value: u64, max: i64 },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stats {
    pub neurons: usize,
    pub synapses: usize,
    pub native_gadgets: usize,
    pub trigger_cells: usize,
    pub static_latency: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompiledProgram {
    pub circuit: Circuit,
    /// Input port names in argument order.
    pub inputs: Vec<String>,
    pub latency: Latency,
    pub stats: Stats,
    pub big_m: i64,
    pub max_arg: i64,
    /// Named neurons of interest, keyed by `<subtree path>/<role>`.
    pub roles: BTreeMap<String, NeuronId>,
}

impl CompiledProgram {
    pub fn role(&self, name: &str) -> NeuronId {
        *self
            .roles
            .get(name)
            .unwrap_or_else(|| panic!("no role {name:?} in compiled program"))
    }

    /// Injections that feed `args` to the input ports at t = 0.
    pub fn argument_injections(&self, args: &[u64]) -> Result<Vec<Injection>, RunError> {
        if args.len() != self.inputs.len() {
            return Err(RunError::ArgumentCount {
                expected: self.inputs.len(),
                got: args.len(),
            });
        }
        args.iter()
            .zip(&self.inputs)
            .map(|(&value, name)| {
                if value > self.max_arg as u64 {
                    return Err(RunError::ArgumentTooLarge { value, max: self.max_arg });
                }
                let neuron = self.circuit.port(name).expect("declared port").neuron;
                Ok(Injection {
                    neuron,
                    value: value as i64,
                    time: 0,
                })
            })
            .collect()
    }

    /// Runs the program on `args` (all delivered at t = 0).
    pub fn run(&self, args: &[u64], mut config: SimConfig) -> Result<RunOutcome, RunError> {
        config.big_m = self.big_m;
        let inj = self.argument_injections(args)?;
        Ok(simulate(&self.circuit, &inj, config)?)
    }

    pub fn to_json(&self) -> String {
        let file = ProgramFile {
            circuit: self.circuit.clone(),
            meta: Meta {
                ports: MetaPorts {
                    inputs: self.inputs.clone(),
                    output: OUTPUT_PORT.to_string(),
                },
                latency: match self.latency {
                    Latency::Static(l) => LatencyWire::Static(l),
                    Latency::Dynamic => LatencyWire::Dynamic("dynamic".into()),
                },
                stats: self.stats,
                big_m: self.big_m,
                max_arg: self.max_arg,
                conventions: RELAY_CONVENTION.to_string(),
                roles: self.roles.clone(),
            },
        };
        serde_json::to_string_pretty(&file).expect("program serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<CompiledProgram, crate::model::ParseError> {
        let file: ProgramFile = serde_json::from_str(text)?;
        Ok(CompiledProgram {
            circuit: file.circuit,
            inputs: file.meta.ports.inputs,
            latency: match file.meta.latency {
                LatencyWire::Static(l) => Latency::Static(l),
                LatencyWire::Dynamic(_) => Latency::Dynamic,
            },
            stats: file.meta.stats,
            big_m: file.meta.big_m,
            max_arg: file.meta.max_arg,
            roles: file.meta.roles,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ProgramFile {
    #[serde(flatten)]
    circuit: Circuit,
    meta: Meta,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LatencyWire {
    Static(u64),
    Dynamic(String),
}

#[derive(Serialize, Deserialize)]
struct MetaPorts {
    inputs: Vec<String>,
    output: String,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    ports: MetaPorts,
    latency: LatencyWire,
    stats: Stats,
    big_m: i64,
    max_arg: i64,
    conventions: String,
    roles: BTreeMap<String, NeuronId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ctx {
    /// Used once; its inputs arrive at the given absolute time.
    OneShot(u64),
    /// May be invoked repeatedly at data-dependent times.
    Reentrant,
}

impl Ctx {
    fn after(self, steps: u64) -> Ctx {
        match self {
            Ctx::OneShot(t) => Ctx::OneShot(t + steps),
            Ctx::Reentrant => Ctx::Reentrant,
        }
    }
}

struct Lowerer {
    b: CircuitBuilder,
    big_m: i64,
    roles: BTreeMap<String, NeuronId>,
    trigger_cells: usize,
}

/// Compiles `expr` into a circuit whose arguments are injected at t = 0.
pub fn lower(expr: &RecExpr, config: &LoweringConfig) -> Result<CompiledProgram, CompileError> {
    if config.big_m <= 0 {
        return Err(CompileError::Config(format!("big_m must be positive, got {}", config.big_m)));
    }
    if config.max_arg < 0 || config.max_arg.checked_mul(2).is_none_or(|twice| twice >= config.big_m) {
        return Err(CompileError::Config(format!(
            "big_m {} must exceed twice the maximum argument {}",
            config.big_m, config.max_arg
        )));
    }
    let arity = arity_check(expr)?;
    if config.strict_primitive && expr.contains_loops() {
        return Err(CompileError::StrictModeViolation(expr.to_string()));
    }
    let mut lw = Lowerer {
        b: CircuitBuilder::new(),
        big_m: config.big_m,
        roles: BTreeMap::new(),
        trigger_cells: 0,
    };
    let frag = lw.lower(expr, Ctx::OneShot(0), "f")?;
    let names: Vec<String> = match expr {
        RecExpr::PrimRec { .. } => std::iter::once("i".to_string())
            .chain((1..arity).map(|k| format!("x{k}")))
            .collect(),
        _ => (1..=arity).map(|k| format!("x{k}")).collect(),
    };
    for (name, &n) in names.iter().zip(&frag.inputs) {
        lw.b.mark_port(n, PortRole::Input, name).expect("fresh port");
    }
    if arity == 0 {
        // nullary programs are driven by a dummy 0
        lw.b.inject(frag.inputs[0], 0, 0).expect("input exists");
    }
    lw.b.mark_port(frag.output, PortRole::Output, OUTPUT_PORT).expect("fresh port");
    let circuit = lw.b.build();
    let stats = Stats {
        neurons: circuit.neurons.len(),
        synapses: circuit.synapses.len(),
        native_gadgets: circuit.gadgets.len(),
        trigger_cells: lw.trigger_cells,
        static_latency: match frag.latency {
            Latency::Static(l) => Some(l),
            Latency::Dynamic => None,
        },
    };
    debug_assert!(circuit.validate().is_ok());
    Ok(CompiledProgram {
        circuit,
        inputs: names,
        latency: frag.latency,
        stats,
        big_m: config.big_m,
        max_arg: config.max_arg,
        roles: lw.roles,
    })
}

impl Lowerer {
    fn link(&mut self, pre: NeuronId, post: NeuronId, weight: i64, delay: u64) {
        self.b
            .add_synapse(pre, post, weight, delay)
            .unwrap_or_else(|e| panic!("lowering produced invalid wiring: {e}"));
    }

    fn name(&mut self, path: &str, role: &str, n: NeuronId) -> NeuronId {
        self.roles.insert(format!("{path}/{role}"), n);
        n
    }

    fn relay(&mut self, path: &str, role: &str) -> NeuronId {
        let n = relay(&mut self.b);
        self.name(path, role, n)
    }

    fn cell(&mut self, path: &str, role: &str) -> TriggerCell {
        let c = emit_trigger_cell(&mut self.b, self.big_m);
        self.b.inject(c.preload, 1, 0).expect("preload exists");
        self.trigger_cells += 1;
        self.name(path, &format!("{role}.store"), c.store);
        self.name(path, &format!("{role}.out"), c.out);
        c
    }

    fn gate(&mut self, path: &str, role: &str) -> Gate {
        let g = emit_gate(&mut self.b, self.big_m);
        self.name(path, &format!("{role}.hold"), g.hold);
        self.name(path, &format!("{role}.out"), g.out);
        g
    }

    fn emitter(&mut self, k: i64, sources: &[NeuronId], targets: &[(NeuronId, i64, u64)]) -> GadgetId {
        emit_constant_emitter(&mut self.b, k, sources, targets)
    }

    fn place_aux(&mut self, frag: &Fragment, ctx: Ctx) {
        for aux in &frag.aux {
            let time = match (aux.at, ctx) {
                (AuxTime::Start, _) => 0,
                (AuxTime::Entry, Ctx::OneShot(t)) => t,
                (AuxTime::Entry, Ctx::Reentrant) => unreachable!("entry-timed aux inside a loop"),
            };
            self.b.inject(aux.neuron, aux.value, time).expect("aux neuron exists");
        }
    }

    fn lower(&mut self, expr: &RecExpr, ctx: Ctx, path: &str) -> Result<Fragment, CompileError> {
        let frag = match (expr, ctx) {
            (RecExpr::Const { k, arity }, Ctx::OneShot(_)) => gadgets::emit_constant(&mut self.b, *k as i64, *arity),
            (RecExpr::Const { k, arity }, Ctx::Reentrant) => {
                gadgets::emit_constant_native(&mut self.b, *k as i64, *arity)
            }
            (RecExpr::Succ, Ctx::OneShot(_)) => gadgets::emit_successor(&mut self.b),
            (RecExpr::Succ, Ctx::Reentrant) => gadgets::emit_successor_native(&mut self.b),
            (RecExpr::Proj { i, n }, Ctx::OneShot(t)) => {
                let mut frag = gadgets::emit_projection(&mut self.b, *n, self.big_m)?;
                let selector = frag.inputs.remove(0);
                self.b.inject(selector, *i as i64, t).expect("selector exists");
                self.name(path, "selector", selector);
                frag
            }
            (RecExpr::Proj { i, n }, Ctx::Reentrant) => gadgets::emit_projection_wired(&mut self.b, *i, *n)?,
            (RecExpr::Compose { h, gs }, _) => self.lower_compose(h, gs, ctx, path)?,
            (RecExpr::PrimRec { g, h }, _) => self.lower_primrec(g, h, ctx, path)?,
            (RecExpr::Mu { f }, _) => self.lower_mu(f, ctx, path)?,
        };
        self.place_aux(&frag, ctx);
        self.name(path, "out", frag.output);
        Ok(frag)
    }

    fn lower_compose(&mut self, h: &RecExpr, gs: &[RecExpr], ctx: Ctx, path: &str) -> Result<Fragment, CompileError> {
        let arity = arity_check(&gs[0])?;
        let fan: Vec<NeuronId> = (0..arity.max(1)).map(|k| self.relay(path, &format!("fan{}", k + 1))).collect();
        let mut lowered = Vec::with_capacity(gs.len());
        for (j, g) in gs.iter().enumerate() {
            let gf = self.lower(g, ctx.after(1), &format!("{path}.g{}", j + 1))?;
            for (k, &x) in fan.iter().enumerate() {
                self.link(x, gf.inputs[k], 1, 0);
            }
            lowered.push(gf);
        }
        let statics: Option<Vec<u64>> = lowered
            .iter()
            .map(|gf| match gf.latency {
                Latency::Static(l) => Some(l),
                Latency::Dynamic => None,
            })
            .collect();
        let h_path = format!("{path}.h");
        match statics {
            Some(ls) => {
                // pad every operand so all of h's inputs arrive together
                let longest = *ls.iter().max().expect("at least one operand");
                let hf = self.lower(h, ctx.after(longest + 1), &h_path)?;
                for (j, gf) in lowered.iter().enumerate() {
                    self.link(gf.output, hf.inputs[j], 1, longest - ls[j]);
                }
                let latency = match hf.latency {
                    Latency::Static(lh) => Latency::Static(longest + lh + 1),
                    Latency::Dynamic => Latency::Dynamic,
                };
                Ok(Fragment {
                    inputs: fan,
                    output: hf.output,
                    latency,
                    aux: Vec::new(),
                })
            }
            None => {
                let hf = self.lower(h, Ctx::Reentrant, &h_path)?;
                self.synchronize(&lowered.iter().map(|g| g.output).collect::<Vec<_>>(), &hf.inputs, path)?;
                Ok(Fragment {
                    inputs: fan,
                    output: hf.output,
                    latency: Latency::Dynamic,
                    aux: Vec::new(),
                })
            }
        }
    }

    /// Routes `sources[l]` to `targets[l]` so all targets receive in the
    /// same timestep, through a join when there is more than one line.
    fn synchronize(&mut self, sources: &[NeuronId], targets: &[NeuronId], path: &str) -> Result<(), CompileError> {
        if sources.len() == 1 {
            self.link(sources[0], targets[0], 1, 0);
            return Ok(());
        }
        let join = emit_join(&mut self.b, sources.len())?;
        for (line, (&s, &t)) in sources.iter().zip(targets).enumerate() {
            self.b.gadget_input(join, s).expect("exists");
            self.b.gadget_output(join, line, t, 1, 0).expect("exists");
        }
        self.roles.insert(format!("{path}/join"), join);
        Ok(())
    }

    /// Zero test and continue test on a natural `d` spiking from `d_src`
    /// at `tau + 1`. When `d == 0` the result cell is triggered at
    /// `tau + 5`; when `d >= 1` the gates open for values arriving at
    /// their hold neurons at `tau + 5`, passing them on at `tau + 6`.
    fn decision(&mut self, d_src: NeuronId, result: &TriggerCell, gates: &[Gate], path: &str, stage: &str) {
        let m = self.big_m;
        let zero = self.b.add_neuron(0, Leak::NONE);
        self.name(path, &format!("{stage}.zero"), zero);
        let go = self.b.add_neuron(1, Leak::NONE);
        self.name(path, &format!("{stage}.go"), go);
        self.link(d_src, zero, -1, 0);
        self.link(d_src, go, 1, 0);
        self.emitter(m, &[zero], &[(result.store, 1, 0)]);
        let opener = self.emitter(m, &[go], &[]);
        for g in gates {
            g.open_from_emitter(&mut self.b, opener, 0);
        }
    }

    fn lower_primrec(&mut self, g: &RecExpr, h: &RecExpr, ctx: Ctx, path: &str) -> Result<Fragment, CompileError> {
        let m = self.big_m;
        let n = arity_check(g)?;

        // Entry: i, x_1..x_N, plus the auxiliary j = 0 and 1.
        let i0 = self.relay(path, "i0");
        let x0: Vec<_> = (0..n).map(|k| self.relay(path, &format!("x0.{}", k + 1))).collect();
        let j0 = self.relay(path, "n2");
        let one0 = self.relay(path, "n5");
        let inputs = match ctx {
            Ctx::OneShot(t) => {
                self.b.inject(j0, 0, t).expect("exists");
                self.b.inject(one0, 1, t).expect("exists");
                std::iter::once(i0).chain(x0.iter().copied()).collect()
            }
            Ctx::Reentrant => {
                let ei = self.relay(path, "entry.i");
                let ex: Vec<_> = (0..n).map(|k| self.relay(path, &format!("entry.x{}", k + 1))).collect();
                self.emitter(0, &[ei], &[(j0, 1, 0)]);
                self.emitter(1, &[ei], &[(one0, 1, 0)]);
                self.link(ei, i0, 1, 2);
                for (&e, &x) in ex.iter().zip(&x0) {
                    self.link(e, x, 1, 2);
                }
                std::iter::once(ei).chain(ex).collect()
            }
        };

        let c1 = self.cell(path, "cell1");
        let c3 = self.cell(path, "cell3");
        let c6 = self.cell(path, "cell6");
        let cx: Vec<_> = (0..n).map(|k| self.cell(path, &format!("cellx{}", k + 1))).collect();
        let c9 = self.cell(path, "cell9");
        let c12 = self.cell(path, "cell12");
        let c12e = self.cell(path, "cell12e");
        let c15 = self.cell(path, "cell15");
        let c16 = self.cell(path, "cell16");
        let c19 = self.cell(path, "cell19");

        self.link(i0, c1.store, 1, 0);
        self.link(i0, c9.store, 1, 0);
        self.link(j0, c3.store, 1, 0);
        self.link(one0, c6.store, 1, 0);
        for (&x, c) in x0.iter().zip(&cx) {
            self.link(x, c.store, 1, 0);
        }

        // Base case: g(x), parked in cell 12 until i is known to be 0.
        let gf = self.lower(g, ctx.after(1), &format!("{path}.g"))?;
        if n == 0 {
            self.link(j0, gf.inputs[0], 1, 0);
        }
        for (&x, &gi) in x0.iter().zip(&gf.inputs) {
            self.link(x, gi, 1, 0);
        }
        let n7 = self.relay(path, "n7");
        self.link(gf.output, n7, 1, 0);
        self.link(n7, c12.store, 1, 0);
        self.link(n7, c12e.store, 1, 0);
        let loop_cells: Vec<NeuronId> = [c1.store, c3.store, c6.store]
            .into_iter()
            .chain(cx.iter().map(|c| c.store))
            .collect();
        let mut base_triggers = vec![(c9.store, 1, 0), (c12e.store, 1, 0)];
        base_triggers.extend(loop_cells.iter().map(|&s| (s, 1, 0)));
        self.emitter(m, &[n7], &base_triggers);

        // Gates carrying flushed cell values back into the loop.
        let gate1 = self.gate(path, "gate1");
        let gate3 = self.gate(path, "gate3");
        let gate6 = self.gate(path, "gate6");
        let gatex: Vec<_> = (0..n).map(|k| self.gate(path, &format!("gatex{}", k + 1))).collect();
        let gate12e = self.gate(path, "gate12e");
        let gate16 = self.gate(path, "gate16");
        for (cell, gate) in [(&c1, &gate1), (&c3, &gate3), (&c6, &gate6), (&c12e, &gate12e), (&c16, &gate16)]
            .into_iter()
            .chain(cx.iter().zip(&gatex))
        {
            self.link(cell.out, gate.hold, 1, 3);
        }

        let i_rel = self.relay(path, "loop.i");
        let j_rel = self.relay(path, "loop.j");
        let one_rel = self.relay(path, "loop.one");
        let x_rel: Vec<_> = (0..n).map(|k| self.relay(path, &format!("loop.x{}", k + 1))).collect();
        let f_rel = self.relay(path, "loop.f");
        self.link(gate1.out, i_rel, 1, 0);
        self.link(gate3.out, j_rel, 1, 0);
        self.link(gate6.out, one_rel, 1, 0);
        for (gt, &x) in gatex.iter().zip(&x_rel) {
            self.link(gt.out, x, 1, 0);
        }
        self.link(gate12e.out, f_rel, 1, 0);
        self.link(gate12e.out, c12.store, -1, 0);
        self.link(gate16.out, f_rel, 1, 0);
        self.link(gate16.out, c15.store, -1, 0);

        let mut common: Vec<Gate> = vec![gate1, gate3, gate6];
        common.extend(gatex.iter().copied());
        let mut base_gates = common.clone();
        base_gates.push(gate12e);
        self.decision(c9.out, &c12, &base_gates, path, "base");
        let mut loop_gates = common;
        loop_gates.push(gate16);
        self.decision(c19.out, &c15, &loop_gates, path, "step");

        let ret = self.relay(path, "n25");
        self.link(c12.out, ret, 1, 0);
        self.link(c15.out, ret, 1, 0);

        // Loop body: stopping value i - j - 1, next j, and h(j, f, x).
        let n18 = self.relay(path, "n18");
        self.link(i_rel, n18, 1, 0);
        self.link(j_rel, n18, -1, 0);
        self.link(one_rel, n18, -1, 0);
        self.link(n18, c19.store, 1, 0);
        let n4 = self.relay(path, "n4");
        self.link(j_rel, n4, 1, 0);
        self.link(one_rel, n4, 1, 0);
        self.link(n4, c3.store, 1, 0);
        self.link(i_rel, c1.store, 1, 0);
        self.link(one_rel, c6.store, 1, 0);
        for (&x, c) in x_rel.iter().zip(&cx) {
            self.link(x, c.store, 1, 0);
        }

        let hf = self.lower(h, Ctx::Reentrant, &format!("{path}.h"))?;
        let mut h_args = vec![j_rel, f_rel];
        h_args.extend(x_rel.iter().copied());
        self.synchronize(&h_args, &hf.inputs, path)?;
        let n14 = self.relay(path, "n14");
        self.link(hf.output, n14, 1, 0);
        self.link(n14, c15.store, 1, 0);
        self.link(n14, c16.store, 1, 0);
        let mut step_triggers = vec![(c19.store, 1, 0), (c16.store, 1, 0)];
        step_triggers.extend(loop_cells.iter().map(|&s| (s, 1, 0)));
        self.emitter(m, &[n14], &step_triggers);

        Ok(Fragment {
            inputs,
            output: ret,
            latency: Latency::Dynamic,
            aux: Vec::new(),
        })
    }

    fn lower_mu(&mut self, f: &RecExpr, ctx: Ctx, path: &str) -> Result<Fragment, CompileError> {
        let m = self.big_m;
        let n = arity_check(f)? - 1;

        // Loop entry relays double as the box inputs for one-shot use.
        let z_rel = self.relay(path, "n0");
        let x_rel: Vec<_> = (0..n).map(|k| self.relay(path, &format!("loop.x{}", k + 1))).collect();
        let inputs = match ctx {
            Ctx::OneShot(t) => {
                self.b.inject(z_rel, 1, t).expect("exists");
                if n == 0 {
                    vec![self.relay(path, "dummy")]
                } else {
                    x_rel.clone()
                }
            }
            Ctx::Reentrant => {
                let entry: Vec<_> = (0..n.max(1)).map(|k| self.relay(path, &format!("entry.x{}", k + 1))).collect();
                self.emitter(1, &entry[..1], &[(z_rel, 1, 0)]);
                for (&e, &x) in entry.iter().zip(&x_rel) {
                    self.link(e, x, 1, 2);
                }
                entry
            }
        };

        let c1 = self.cell(path, "cell1");
        let c9 = self.cell(path, "cell9");
        let c10 = self.cell(path, "cell10");
        let cx: Vec<_> = (0..n).map(|k| self.cell(path, &format!("cellx{}", k + 1))).collect();
        self.link(z_rel, c1.store, 1, 0);
        self.link(z_rel, c9.store, 1, 0);
        self.link(z_rel, c10.store, 1, 0);
        for (&x, c) in x_rel.iter().zip(&cx) {
            self.link(x, c.store, 1, 0);
        }

        let ff = self.lower(f, Ctx::Reentrant, &format!("{path}.f"))?;
        let mut f_args = vec![z_rel];
        f_args.extend(x_rel.iter().copied());
        self.synchronize(&f_args, &ff.inputs, path)?;

        // n4 spikes f(z, x) at s; cells flush at s + 3, emit at s + 4.
        let n4 = self.relay(path, "n4");
        self.link(ff.output, n4, 1, 0);
        let z5 = self.b.add_neuron(0, Leak::NONE);
        self.name(path, "n5", z5);
        self.link(n4, z5, -1, 0);
        let go = self.b.add_neuron(1, Leak::NONE);
        self.name(path, "go", go);
        self.link(n4, go, 1, 0);
        let mut flush = vec![(c1.store, 1, 0), (c9.store, 1, 0)];
        flush.extend(cx.iter().map(|c| (c.store, 1, 0)));
        self.emitter(m, &[n4], &flush);
        // zero: return z from cell 10 (trigger lands at s + 4)
        self.emitter(m, &[z5], &[(c10.store, 1, 0)]);
        // nonzero: n8 broadcasts M at s + 4 to open the gates
        let n8 = self.relay(path, "n8");
        self.emitter(m, &[go], &[(n8, 1, 0)]);

        let gate1 = self.gate(path, "gate1");
        let gate9 = self.gate(path, "gate9");
        let gatex: Vec<_> = (0..n).map(|k| self.gate(path, &format!("gatex{}", k + 1))).collect();
        for (cell, gate) in [(&c1, &gate1), (&c9, &gate9)].into_iter().chain(cx.iter().zip(&gatex)) {
            self.link(cell.out, gate.hold, 1, 0);
            gate.open_from_neuron(&mut self.b, n8, 0);
        }
        // erase of cell 10 lands at s + 7, after the return trigger
        self.link(gate9.out, c10.store, -1, 0);

        let succ = self.lower(&RecExpr::Succ, Ctx::Reentrant, &format!("{path}.succ"))?;
        let Latency::Static(succ_latency) = succ.latency else {
            unreachable!("successor is static")
        };
        self.link(gate1.out, succ.inputs[0], 1, 0);
        self.link(succ.output, z_rel, 1, 0);
        for (gt, &x) in gatex.iter().zip(&x_rel) {
            self.link(gt.out, x, 1, succ_latency);
        }

        let ret = self.relay(path, "ret");
        self.link(c10.out, ret, 1, 0);
        Ok(Fragment {
            inputs,
            output: ret,
            latency: Latency::Dynamic,
            aux: Vec::new(),
        })
    }
}
