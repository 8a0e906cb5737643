//! Deterministic discrete-time, event-driven execution of circuits.
//!
//! Per timestep `t`:
//! 1. gadget emissions scheduled for `t` turn into deliveries;
//! 2. every neuron with at least one delivery at `t` integrates
//!    `v = retained(t) + sum(deliveries)`;
//! 3. it spikes with value `v` iff `v >= threshold`, then resets to 0;
//!    a spike on `i` reaches `j` at `t + delay(i, j) + 1`;
//! 4. a neuron that integrated without spiking keeps `v` through
//!    `t + leak` and holds 0 from `t + leak + 1` (forever for infinite leak).
//!
//! Neurons that receive nothing never evaluate their threshold.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::Serialize;
use thiserror::Error;

use crate::model::{Circuit, GadgetId, GadgetKind, Injection, Leak, NeuronId};

pub const DEFAULT_BIG_M: i64 = 1_000_000_000;
pub const DEFAULT_MAX_STEPS: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimConfig {
    /// Last timestep that may be processed.
    pub max_steps: u64,
    /// Separation constant; any neuron state with magnitude `>= 2 * big_m`
    /// is a fault.
    pub big_m: i64,
    /// Record every delivery and gadget emission.
    pub trace: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            max_steps: DEFAULT_MAX_STEPS,
            big_m: DEFAULT_BIG_M,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Target {
    Neuron(NeuronId),
    Gadget { gadget: GadgetId, line: usize },
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Neuron(n) => write!(f, "{n}"),
            Target::Gadget { gadget, line } => write!(f, "g{gadget}.{line}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SpikeEvent {
    pub time: u64,
    pub neuron: NeuronId,
    pub value: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OutputEvent {
    pub time: u64,
    pub port: String,
    pub neuron: NeuronId,
    pub value: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceRecord {
    Delivery { time: u64, target: Target, value: i64 },
    Emission { time: u64, gadget: GadgetId, values: Vec<i64> },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Raster {
    /// Every spike, ordered by (time, neuron).
    pub events: Vec<SpikeEvent>,
    /// Spikes on output-port neurons, one entry per port.
    pub outputs: Vec<OutputEvent>,
}

impl Raster {
    pub fn spikes_of(&self, neuron: NeuronId) -> impl Iterator<Item = &SpikeEvent> {
        self.events.iter().filter(move |e| e.neuron == neuron)
    }

    pub fn outputs_on<'a>(&'a self, port: &'a str) -> impl Iterator<Item = &'a OutputEvent> {
        self.outputs.iter().filter(move |o| o.port == port)
    }

    /// CSV with header `time,neuron,value,port`; `port` is empty for
    /// non-output spikes and `;`-joined when a neuron carries several ports.
    pub fn to_csv(&self, circuit: &Circuit) -> String {
        let mut out = String::from("time,neuron,value,port\n");
        for e in &self.events {
            let _ = writeln!(out, "{},{},{},{}", e.time, e.neuron, e.value, port_label(circuit, e.neuron));
        }
        out
    }

    pub fn to_jsonl(&self, circuit: &Circuit) -> String {
        #[derive(Serialize)]
        struct Row<'a> {
            time: u64,
            neuron: NeuronId,
            value: i64,
            port: &'a str,
        }
        let mut out = String::new();
        for e in &self.events {
            let port = port_label(circuit, e.neuron);
            let row = Row {
                time: e.time,
                neuron: e.neuron,
                value: e.value,
                port: &port,
            };
            out.push_str(&serde_json::to_string(&row).expect("row serializes"));
            out.push('\n');
        }
        out
    }
}

fn port_label(circuit: &Circuit, neuron: NeuronId) -> String {
    circuit
        .output_ports()
        .filter(|p| p.neuron == neuron)
        .map(|p| p.name.as_str())
        .collect::<Vec<_>>()
        .join(";")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum Fault {
    #[error("arithmetic overflow at t={time} on neuron {neuron}")]
    Overflow { time: u64, neuron: NeuronId },
    #[error("neuron {neuron} reached {value} at t={time}, beyond the big-M separation bound")]
    MagnitudeBreach { time: u64, neuron: NeuronId, value: i64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("no pending deliveries to step")]
    EmptyQueue,
    #[error("unknown neuron {0}")]
    UnknownNeuron(NeuronId),
    #[error("injection into neuron {neuron} at t={time} is in the past (clock {clock})")]
    InjectionInPast { neuron: NeuronId, time: u64, clock: u64 },
    #[error(transparent)]
    Fault(#[from] Fault),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunStatus {
    Quiescent,
    Timeout,
    Fault(Fault),
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub raster: Raster,
    pub final_clock: u64,
    pub trace: Vec<TraceRecord>,
}

impl RunOutcome {
    /// Values emitted on `port`, in time order.
    pub fn output_values(&self, port: &str) -> Vec<i64> {
        self.raster.outputs_on(port).map(|o| o.value).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Retained {
    value: i64,
    since: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Pending {
    Deliver { target: Target, value: i64 },
    Emit { gadget: GadgetId, values: Vec<i64> },
}

/// Mutable state of one run.
#[derive(Debug, Clone, Default)]
pub struct EngineState {
    pub clock: u64,
    started: bool,
    retained: Vec<Retained>,
    pending: BTreeMap<u64, Vec<Pending>>,
    join_buffers: Vec<Vec<Option<i64>>>,
    raster: Raster,
    trace: Vec<TraceRecord>,
}

impl EngineState {
    pub fn is_quiescent(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn next_time(&self) -> Option<u64> {
        self.pending.keys().next().copied()
    }

    pub fn raster(&self) -> &Raster {
        &self.raster
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    /// Number of queued deliveries arriving at `time`.
    pub fn pending_at(&self, time: u64) -> usize {
        self.pending.get(&time).map_or(0, |v| v.len())
    }
}

// Outgoing connectivity, precomputed once per circuit.
struct Fanout {
    synapses: Vec<Vec<(NeuronId, i64, u64)>>,
    gadget_lines: Vec<Vec<(GadgetId, usize)>>,
}

impl Fanout {
    fn new(circuit: &Circuit) -> Fanout {
        let n = circuit.neurons.len();
        let mut synapses = vec![Vec::new(); n];
        for s in &circuit.synapses {
            synapses[s.pre].push((s.post, s.weight, s.delay));
        }
        let mut gadget_lines = vec![Vec::new(); n];
        for g in &circuit.gadgets {
            for (line, &src) in g.inputs.iter().enumerate() {
                gadget_lines[src].push((g.id, line));
            }
        }
        Fanout { synapses, gadget_lines }
    }
}

/// Executes one circuit. Built per run; the circuit itself is shared.
pub struct Simulator<'c> {
    circuit: &'c Circuit,
    config: SimConfig,
    fanout: Fanout,
    state: EngineState,
}

impl<'c> Simulator<'c> {
    /// New run with the circuit's own injection plan already queued.
    pub fn new(circuit: &'c Circuit, config: SimConfig) -> Simulator<'c> {
        let state = EngineState {
            retained: vec![Retained::default(); circuit.neurons.len()],
            join_buffers: circuit
                .gadgets
                .iter()
                .map(|g| match g.kind {
                    GadgetKind::Join { n } => vec![None; n],
                    GadgetKind::ConstantEmitter { .. } => Vec::new(),
                })
                .collect(),
            ..EngineState::default()
        };
        let mut sim = Simulator {
            circuit,
            config,
            fanout: Fanout::new(circuit),
            state,
        };
        for inj in &circuit.injections {
            sim.push(inj.time, Pending::Deliver {
                target: Target::Neuron(inj.neuron),
                value: inj.value,
            });
        }
        sim
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn into_state(self) -> EngineState {
        self.state
    }

    pub fn inject(&mut self, inj: &Injection) -> Result<(), EngineError> {
        if inj.neuron >= self.circuit.neurons.len() {
            return Err(EngineError::UnknownNeuron(inj.neuron));
        }
        if inj.time < self.state.clock || (inj.time == self.state.clock && self.state.started) {
            return Err(EngineError::InjectionInPast {
                neuron: inj.neuron,
                time: inj.time,
                clock: self.state.clock,
            });
        }
        self.push(inj.time, Pending::Deliver {
            target: Target::Neuron(inj.neuron),
            value: inj.value,
        });
        Ok(())
    }

    fn push(&mut self, time: u64, item: Pending) {
        self.state.pending.entry(time).or_default().push(item);
    }

    /// Internal state of `neuron` at the current clock, after leak.
    pub fn inspect(&self, neuron: NeuronId) -> Result<i64, EngineError> {
        let spec = self
            .circuit
            .neurons
            .get(neuron)
            .ok_or(EngineError::UnknownNeuron(neuron))?;
        Ok(retained_at(self.state.retained[neuron], spec.leak, self.state.clock))
    }

    /// Advances to the earliest pending timestep and processes it.
    pub fn step(&mut self) -> Result<(), EngineError> {
        let (t, items) = self.state.pending.pop_first().ok_or(EngineError::EmptyQueue)?;
        self.state.clock = t;
        self.state.started = true;

        let mut neuron_inputs: BTreeMap<NeuronId, i64> = BTreeMap::new();
        let mut gadget_inputs: BTreeMap<(GadgetId, usize), i64> = BTreeMap::new();
        let mut emissions: Vec<(GadgetId, Vec<i64>)> = Vec::new();
        for item in items {
            match item {
                Pending::Deliver { target, value } => {
                    if self.config.trace {
                        self.state.trace.push(TraceRecord::Delivery { time: t, target, value });
                    }
                    match target {
                        Target::Neuron(n) => {
                            let acc = neuron_inputs.entry(n).or_insert(0);
                            *acc = acc.checked_add(value).ok_or(Fault::Overflow { time: t, neuron: n })?;
                        }
                        Target::Gadget { gadget, line } => {
                            let acc = gadget_inputs.entry((gadget, line)).or_insert(0);
                            *acc = acc.saturating_add(value);
                        }
                    }
                }
                Pending::Emit { gadget, values } => emissions.push((gadget, values)),
            }
        }
        emissions.sort();

        for (gadget, values) in emissions {
            if self.config.trace {
                self.state.trace.push(TraceRecord::Emission {
                    time: t,
                    gadget,
                    values: values.clone(),
                });
            }
            for out in &self.circuit.gadgets[gadget].outputs {
                let value = out
                    .weight
                    .checked_mul(values[out.line])
                    .ok_or(Fault::Overflow { time: t, neuron: out.target })?;
                self.push(t + out.delay + 1, Pending::Deliver {
                    target: Target::Neuron(out.target),
                    value,
                });
            }
        }

        let mut fired: BTreeSet<GadgetId> = BTreeSet::new();
        for ((gadget, line), value) in gadget_inputs {
            match self.circuit.gadgets[gadget].kind {
                GadgetKind::ConstantEmitter { k } => {
                    if fired.insert(gadget) {
                        self.push(t + 1, Pending::Emit { gadget, values: vec![k] });
                    }
                }
                GadgetKind::Join { .. } => {
                    let slot = &mut self.state.join_buffers[gadget][line];
                    *slot = Some(slot.unwrap_or(0).saturating_add(value));
                    if self.state.join_buffers[gadget].iter().all(Option::is_some) {
                        let values = self.state.join_buffers[gadget]
                            .iter_mut()
                            .map(|s| s.take().expect("checked"))
                            .collect();
                        self.push(t + 1, Pending::Emit { gadget, values });
                    }
                }
            }
        }

        let limit = self.config.big_m.saturating_mul(2);
        for (neuron, input) in neuron_inputs {
            let spec = &self.circuit.neurons[neuron];
            let prior = retained_at(self.state.retained[neuron], spec.leak, t);
            let v = prior
                .checked_add(input)
                .ok_or(Fault::Overflow { time: t, neuron })?;
            if v.unsigned_abs() >= limit.unsigned_abs() {
                return Err(Fault::MagnitudeBreach { time: t, neuron, value: v }.into());
            }
            if v >= spec.threshold {
                self.state.retained[neuron] = Retained { value: 0, since: t };
                self.state.raster.events.push(SpikeEvent { time: t, neuron, value: v });
                for port in self.circuit.output_ports().filter(|p| p.neuron == neuron) {
                    self.state.raster.outputs.push(OutputEvent {
                        time: t,
                        port: port.name.clone(),
                        neuron,
                        value: v,
                    });
                }
                for i in 0..self.fanout.synapses[neuron].len() {
                    let (post, weight, delay) = self.fanout.synapses[neuron][i];
                    let value = weight.checked_mul(v).ok_or(Fault::Overflow { time: t, neuron })?;
                    self.push(t + delay + 1, Pending::Deliver {
                        target: Target::Neuron(post),
                        value,
                    });
                }
                for i in 0..self.fanout.gadget_lines[neuron].len() {
                    let (gadget, line) = self.fanout.gadget_lines[neuron][i];
                    self.push(t + 1, Pending::Deliver {
                        target: Target::Gadget { gadget, line },
                        value: v,
                    });
                }
            } else {
                self.state.retained[neuron] = Retained { value: v, since: t };
            }
        }
        Ok(())
    }

    /// Steps until quiescence, a fault, or the next timestep would exceed
    /// `max_steps`.
    pub fn run(mut self) -> RunOutcome {
        let status = loop {
            match self.state.next_time() {
                None => break RunStatus::Quiescent,
                Some(t) if t > self.config.max_steps => break RunStatus::Timeout,
                Some(_) => {}
            }
            match self.step() {
                Ok(()) => {}
                Err(EngineError::Fault(f)) => break RunStatus::Fault(f),
                Err(e) => unreachable!("step on nonempty queue failed: {e}"),
            }
        };
        RunOutcome {
            status,
            final_clock: self.state.clock,
            raster: self.state.raster,
            trace: self.state.trace,
        }
    }
}

fn retained_at(r: Retained, leak: Leak, t: u64) -> i64 {
    match leak {
        Leak::Infinite => r.value,
        Leak::Steps(l) if t <= r.since.saturating_add(l) => r.value,
        Leak::Steps(_) => 0,
    }
}

/// Runs `circuit` with its injection plan plus `extra` injections.
pub fn simulate(circuit: &Circuit, extra: &[Injection], config: SimConfig) -> Result<RunOutcome, EngineError> {
    let mut sim = Simulator::new(circuit, config);
    for inj in extra {
        sim.inject(inj)?;
    }
    Ok(sim.run())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CircuitBuilder, PortRole};

    fn inj(neuron: NeuronId, value: i64, time: u64) -> Injection {
        Injection { neuron, value, time }
    }

    fn traced() -> SimConfig {
        SimConfig {
            trace: true,
            ..SimConfig::default()
        }
    }

    // Constant layout: 0 gets the auxiliary 1, 1 gets x, 2 is the output.
    fn constant_circuit(k: i64) -> Circuit {
        let mut b = CircuitBuilder::new();
        let one = b.add_neuron(0, Leak::NONE);
        let x = b.add_neuron(0, Leak::NONE);
        let y = b.add_neuron(0, Leak::NONE);
        b.add_synapse(x, y, 0, 0).unwrap();
        b.add_synapse(one, y, k, 0).unwrap();
        b.mark_port(x, PortRole::Input, "x").unwrap();
        b.mark_port(y, PortRole::Output, "y").unwrap();
        b.build()
    }

    #[test]
    fn constant_circuit_hand_trace() {
        let c = constant_circuit(5);
        let out = simulate(&c, &[inj(1, 3, 0), inj(0, 1, 0)], SimConfig::default()).unwrap();
        assert_eq!(out.status, RunStatus::Quiescent);
        assert_eq!(
            out.raster.events,
            vec![
                SpikeEvent { time: 0, neuron: 0, value: 1 },
                SpikeEvent { time: 0, neuron: 1, value: 3 },
                SpikeEvent { time: 1, neuron: 2, value: 5 },
            ]
        );
        assert_eq!(out.output_values("y"), vec![5]);
        assert_eq!(out.raster.outputs[0].time, 1);
    }

    #[test]
    fn delay_adds_to_unit_transit() {
        let mut b = CircuitBuilder::new();
        let a = b.add_neuron(0, Leak::NONE);
        let z = b.add_neuron(0, Leak::NONE);
        b.add_synapse(a, z, 1, 3).unwrap();
        let out = simulate(&b.build(), &[inj(a, 1, 0)], SimConfig::default()).unwrap();
        assert_eq!(out.raster.events[1], SpikeEvent { time: 4, neuron: 1, value: 1 });
    }

    #[test]
    fn empty_run_is_quiescent_at_zero() {
        let out = simulate(&constant_circuit(2), &[], SimConfig::default()).unwrap();
        assert_eq!(out.status, RunStatus::Quiescent);
        assert_eq!(out.final_clock, 0);
        assert!(out.raster.events.is_empty());
    }

    #[test]
    fn step_semantics() {
        let c = constant_circuit(5);
        let mut sim = Simulator::new(&c, traced());
        sim.inject(&inj(1, 3, 0)).unwrap();
        sim.inject(&inj(0, 1, 0)).unwrap();
        sim.step().unwrap();
        assert_eq!(sim.state().raster().events.len(), 2);
        assert_eq!(sim.state().pending_at(1), 2);
        sim.step().unwrap();
        assert!(sim.state().is_quiescent());
        assert_eq!(sim.step(), Err(EngineError::EmptyQueue));
    }

    #[test]
    fn subthreshold_hold_with_infinite_leak() {
        let mut b = CircuitBuilder::new();
        let n = b.add_neuron(0, Leak::Infinite);
        let c = b.build();
        let mut sim = Simulator::new(&c, SimConfig::default());
        assert_eq!(sim.inspect(n).unwrap(), 0);
        sim.inject(&inj(n, -4, 2)).unwrap();
        sim.step().unwrap();
        assert!(sim.state().raster().events.is_empty());
        assert_eq!(sim.inspect(n).unwrap(), -4);
        assert_eq!(sim.inspect(9), Err(EngineError::UnknownNeuron(9)));
    }

    #[test]
    fn finite_leak_is_a_step_function() {
        let mut b = CircuitBuilder::new();
        let n = b.add_neuron(100, Leak::Steps(2));
        let c = b.build();
        let mut sim = Simulator::new(&c, SimConfig::default());
        sim.inject(&inj(n, 7, 5)).unwrap();
        sim.step().unwrap();
        sim.state.clock = 7;
        assert_eq!(sim.inspect(n).unwrap(), 7);
        sim.state.clock = 8;
        assert_eq!(sim.inspect(n).unwrap(), 0);
    }

    #[test]
    fn leak_decides_whether_partial_sums_combine() {
        for (leak, expect_spike) in [(Leak::NONE, false), (Leak::Steps(3), true), (Leak::Infinite, true)] {
            let mut b = CircuitBuilder::new();
            let n = b.add_neuron(10, leak);
            let c = b.build();
            let out = simulate(&c, &[inj(n, 6, 0), inj(n, 6, 3)], SimConfig::default()).unwrap();
            assert_eq!(!out.raster.events.is_empty(), expect_spike, "{leak:?}");
        }
    }

    #[test]
    fn emitter_ignores_input_value() {
        let mut b = CircuitBuilder::new();
        let src = b.add_neuron(i64::MIN / 2, Leak::NONE);
        let dst = b.add_neuron(i64::MIN / 2, Leak::NONE);
        let g = b.add_gadget(GadgetKind::ConstantEmitter { k: 5 });
        b.gadget_input(g, src).unwrap();
        b.gadget_output(g, 0, dst, 1, 0).unwrap();
        let c = b.build();
        let out = simulate(&c, &[inj(src, -7, 4)], traced()).unwrap();
        assert!(out.trace.contains(&TraceRecord::Emission { time: 6, gadget: 0, values: vec![5] }));
        assert_eq!(out.raster.events[1], SpikeEvent { time: 7, neuron: dst, value: 5 });
    }

    #[test]
    fn join_waits_for_every_line_and_resets() {
        let mut b = CircuitBuilder::new();
        let a = b.add_neuron(0, Leak::NONE);
        let c = b.add_neuron(0, Leak::NONE);
        let oa = b.add_neuron(0, Leak::NONE);
        let oc = b.add_neuron(0, Leak::NONE);
        let g = b.add_gadget(GadgetKind::Join { n: 2 });
        b.gadget_input(g, a).unwrap();
        b.gadget_input(g, c).unwrap();
        b.gadget_output(g, 0, oa, 1, 0).unwrap();
        b.gadget_output(g, 1, oc, 1, 0).unwrap();
        let circuit = b.build();
        // lines receive at 3 and 9 (spikes at 2 and 8), emission at 10
        let run = simulate(
            &circuit,
            &[inj(a, 4, 2), inj(c, 0, 8), inj(a, 1, 20), inj(c, 2, 20)],
            traced(),
        )
        .unwrap();
        let emits: Vec<_> = run
            .trace
            .iter()
            .filter_map(|r| match r {
                TraceRecord::Emission { time, values, .. } => Some((*time, values.clone())),
                _ => None,
            })
            .collect();
        assert_eq!(emits, vec![(10, vec![4, 0]), (22, vec![1, 2])]);
    }

    #[test]
    fn overflow_and_magnitude_faults() {
        let mut b = CircuitBuilder::new();
        let a = b.add_neuron(0, Leak::NONE);
        let z = b.add_neuron(0, Leak::NONE);
        b.add_synapse(a, z, i64::MAX, 0).unwrap();
        let c = b.build();
        let cfg = SimConfig { big_m: i64::MAX / 2, ..SimConfig::default() };
        let out = simulate(&c, &[inj(a, 3, 0)], cfg).unwrap();
        assert!(matches!(out.status, RunStatus::Fault(Fault::Overflow { .. })));

        let cfg = SimConfig { big_m: 8, ..SimConfig::default() };
        let out = simulate(&c, &[inj(a, 16, 0)], cfg).unwrap();
        assert!(matches!(out.status, RunStatus::Fault(Fault::MagnitudeBreach { neuron: 0, .. })));
    }

    #[test]
    fn csv_export() {
        let c = constant_circuit(5);
        let out = simulate(&c, &[inj(1, 3, 0), inj(0, 1, 0)], SimConfig::default()).unwrap();
        assert_eq!(out.raster.to_csv(&c), "time,neuron,value,port\n0,0,1,\n0,1,3,\n1,2,5,y\n");
        assert_eq!(
            out.raster.to_jsonl(&c).lines().last().unwrap(),
            r#"{"time":1,"neuron":2,"value":5,"port":"y"}"#
        );
    }
}
