//! Reusable circuit fragments.
//!
//! Fragments are emitted into a shared [`CircuitBuilder`]; the `build_*`
//! functions wrap a single fragment into a standalone [`GadgetBox`] whose
//! auxiliary inputs are scheduled at t = 0.
//!
//! Latencies count unit transit hops from the spike that drives a box input
//! to the box's output spike. A box fed directly by an injection at `t`
//! therefore spikes its output at `t + L - 1`.

use thiserror::Error;

use crate::model::{Circuit, CircuitBuilder, GadgetId, GadgetKind, Leak, NeuronId, PortRole};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Latency {
    Static(u64),
    Dynamic,
}

impl Latency {
    pub fn is_static(self) -> bool {
        matches!(self, Latency::Static(_))
    }
}

/// When an auxiliary input has to be delivered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuxTime {
    /// Together with the box's data inputs.
    Entry,
    /// Once, at t = 0, regardless of when the box is used.
    Start,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuxInput {
    pub neuron: NeuronId,
    pub value: i64,
    pub at: AuxTime,
}

/// A fragment living inside some larger builder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fragment {
    pub inputs: Vec<NeuronId>,
    pub output: NeuronId,
    pub latency: Latency,
    pub aux: Vec<AuxInput>,
}

/// A standalone box: one fragment with its own circuit.
#[derive(Debug, Clone)]
pub struct GadgetBox {
    pub circuit: Circuit,
    pub inputs: Vec<(String, NeuronId)>,
    pub output: NeuronId,
    pub latency: Latency,
    /// Minimum timesteps between successive activations; `None` for
    /// single-use boxes that keep residual state.
    pub min_reuse_gap: Option<u64>,
}

impl GadgetBox {
    pub fn input(&self, name: &str) -> NeuronId {
        self.inputs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| *id)
            .unwrap_or_else(|| panic!("box has no input {name:?}"))
    }

    fn from_fragment(
        b: CircuitBuilder,
        frag: Fragment,
        names: Vec<String>,
        min_reuse_gap: Option<u64>,
    ) -> GadgetBox {
        let mut b = b;
        for aux in &frag.aux {
            b.inject(aux.neuron, aux.value, 0).expect("aux neuron exists");
        }
        for (name, &n) in names.iter().zip(&frag.inputs) {
            b.mark_port(n, PortRole::Input, name).expect("fresh port");
        }
        b.mark_port(frag.output, PortRole::Output, "y").expect("fresh port");
        GadgetBox {
            circuit: b.build(),
            inputs: names.into_iter().zip(frag.inputs.iter().copied()).collect(),
            output: frag.output,
            latency: frag.latency,
            min_reuse_gap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GadgetError {
    #[error("invalid arity {0}: at least 1 required")]
    InvalidArity(usize),
    #[error("join needs at least 2 lines, got {0}")]
    InvalidJoin(usize),
    #[error("trigger cell ports {first:?} and {second:?} both deliver at t={time}")]
    SimultaneousDelivery { first: CellPort, second: CellPort, time: u64 },
    #[error("trigger at t={later} comes {gap} steps after the one at t={earlier}; minimum is {min}")]
    TriggerTooSoon { earlier: u64, later: u64, gap: u64, min: u64 },
    #[error("trigger cell used at t={0} before its output stage is preloaded")]
    BeforePreload(u64),
}

/// Threshold low enough that a neuron forwards any value a run may carry.
pub fn pass_threshold(big_m: i64) -> i64 {
    -big_m.saturating_mul(2)
}

/// Relay neuron for natural-valued data: spikes on every delivery >= 0.
pub fn relay(b: &mut CircuitBuilder) -> NeuronId {
    b.add_neuron(0, Leak::NONE)
}

fn link(b: &mut CircuitBuilder, pre: NeuronId, post: NeuronId, weight: i64, delay: u64) {
    b.add_synapse(pre, post, weight, delay)
        .unwrap_or_else(|e| panic!("fragment wiring: {e}"));
}

/// Constant emitter fed by `sources`, delivering `k` to each of `targets`
/// over unit-weight, zero-delay connections.
pub fn emit_constant_emitter(
    b: &mut CircuitBuilder,
    k: i64,
    sources: &[NeuronId],
    targets: &[(NeuronId, i64, u64)],
) -> GadgetId {
    let g = b.add_gadget(GadgetKind::ConstantEmitter { k });
    for &s in sources {
        b.gadget_input(g, s).expect("source exists");
    }
    for &(t, w, d) in targets {
        b.gadget_output(g, 0, t, w, d).expect("target exists");
    }
    g
}

/// `C_k` with the auxiliary `1` neuron (latency 2). Neuron order follows the
/// classic layout: the `1` input, then the data inputs, then the output.
pub fn emit_constant(b: &mut CircuitBuilder, k: i64, arity: usize) -> Fragment {
    let one = relay(b);
    let inputs: Vec<_> = (0..arity.max(1)).map(|_| relay(b)).collect();
    let out = b.add_neuron(0.min(k), Leak::NONE);
    for &x in &inputs {
        link(b, x, out, 0, 0);
    }
    link(b, one, out, k, 0);
    Fragment {
        inputs,
        output: out,
        latency: Latency::Static(2),
        aux: vec![AuxInput { neuron: one, value: 1, at: AuxTime::Entry }],
    }
}

/// `C_k` built around a native constant emitter; needs no auxiliary input
/// and can be fired any number of times (latency 4).
pub fn emit_constant_native(b: &mut CircuitBuilder, k: i64, arity: usize) -> Fragment {
    let inputs: Vec<_> = (0..arity.max(1)).map(|_| relay(b)).collect();
    let out = b.add_neuron(0.min(k), Leak::NONE);
    emit_constant_emitter(b, k, &inputs[..1], &[(out, 1, 0)]);
    Fragment {
        inputs,
        output: out,
        latency: Latency::Static(4),
        aux: Vec::new(),
    }
}

/// `S(x) = x + 1` with the auxiliary `1` neuron (latency 2).
pub fn emit_successor(b: &mut CircuitBuilder) -> Fragment {
    let one = relay(b);
    let x = relay(b);
    let out = relay(b);
    link(b, one, out, 1, 0);
    link(b, x, out, 1, 0);
    Fragment {
        inputs: vec![x],
        output: out,
        latency: Latency::Static(2),
        aux: vec![AuxInput { neuron: one, value: 1, at: AuxTime::Entry }],
    }
}

/// Reusable successor: the `1` comes from a constant emitter and the data
/// path is delayed to meet it (latency 4).
pub fn emit_successor_native(b: &mut CircuitBuilder) -> Fragment {
    let x = relay(b);
    let out = relay(b);
    emit_constant_emitter(b, 1, &[x], &[(out, 1, 0)]);
    link(b, x, out, 1, 2);
    Fragment {
        inputs: vec![x],
        output: out,
        latency: Latency::Static(4),
        aux: Vec::new(),
    }
}

/// Projection with a runtime selector. Neuron `base + k` plays the role
/// of neuron `k` in the classic layout:
///
/// * `0` selector; `1..=N` thresholds `1..=N`; `N+1..=2N` thresholds `-1..=-N`
/// * `2N+m` coincidence, `3N+m` isolation, `4N+m` per-lane `M` constant
/// * `5N+m` holds `x_m` (threshold `M`, infinite leak)
/// * `6N+1` receives the auxiliary `1`; `6N+2` holds `-M` and emits `x_i`
///
/// Inputs are `[selector, x_1, .., x_N]`; latency 9. Unselected holds keep
/// their values afterwards, so the box is single-use.
pub fn emit_projection(b: &mut CircuitBuilder, n: usize, big_m: i64) -> Result<Fragment, GadgetError> {
    if n == 0 {
        return Err(GadgetError::InvalidArity(n));
    }
    let ni = n as i64;
    let base = b.neuron_count();
    let at = |k: usize| base + k;
    b.add_neuron(0, Leak::NONE);
    for m in 1..=ni {
        b.add_neuron(m, Leak::NONE);
    }
    for m in 1..=ni {
        b.add_neuron(-m, Leak::NONE);
    }
    for _ in 0..3 * n {
        b.add_neuron(0, Leak::NONE);
    }
    for _ in 0..n {
        b.add_neuron(big_m, Leak::Infinite);
    }
    b.add_neuron(0, Leak::NONE);
    b.add_neuron(0, Leak::Infinite);
    debug_assert_eq!(b.neuron_count(), at(6 * n + 3));

    for m in 1..=n {
        link(b, at(0), at(m), 1, 0);
        link(b, at(0), at(n + m), -1, 0);
        link(b, at(m), at(2 * n + m), 1, 0);
        link(b, at(n + m), at(2 * n + m), 1, 0);
        link(b, at(2 * n + m), at(3 * n + m), -1, 0);
        emit_constant_emitter(b, big_m, &[at(3 * n + m)], &[(at(4 * n + m), 1, 0)]);
        link(b, at(4 * n + m), at(5 * n + m), 1, 0);
        link(b, at(5 * n + m), at(6 * n + 2), 1, 0);
    }
    link(b, at(6 * n + 1), at(6 * n + 2), -big_m, 0);

    let mut inputs = vec![at(0)];
    inputs.extend((1..=n).map(|m| at(5 * n + m)));
    Ok(Fragment {
        inputs,
        output: at(6 * n + 2),
        latency: Latency::Static(9),
        aux: vec![AuxInput { neuron: at(6 * n + 1), value: 1, at: AuxTime::Entry }],
    })
}

/// Projection with the selector fixed at build time: plain wiring from
/// lane `i` to the output (latency 2), reusable.
pub fn emit_projection_wired(b: &mut CircuitBuilder, i: usize, n: usize) -> Result<Fragment, GadgetError> {
    if n == 0 || i == 0 || i > n {
        return Err(GadgetError::InvalidArity(n));
    }
    let inputs: Vec<_> = (0..n).map(|_| relay(b)).collect();
    let out = relay(b);
    link(b, inputs[i - 1], out, 1, 0);
    Ok(Fragment {
        inputs,
        output: out,
        latency: Latency::Static(2),
        aux: Vec::new(),
    })
}

/// Minimum spacing between two trigger deliveries to the same cell.
pub const TRIGGER_REUSE_GAP: u64 = 2;

/// The three neurons of a trigger cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TriggerCell {
    /// Threshold `M`, infinite leak. Store, erase and trigger all land here.
    pub store: NeuronId,
    /// Holds `-M`; emits the stored value one step after a trigger arrives.
    pub out: NeuronId,
    /// Receives the auxiliary `1` at t = 0 and loads `-M` into `out`.
    pub preload: NeuronId,
    /// Restores `-M` in `out` after every trigger.
    pub replenish: GadgetId,
}

pub fn emit_trigger_cell(b: &mut CircuitBuilder, big_m: i64) -> TriggerCell {
    let store = b.add_neuron(big_m, Leak::Infinite);
    let out = b.add_neuron(0, Leak::Infinite);
    let preload = relay(b);
    link(b, store, out, 1, 0);
    link(b, preload, out, -big_m, 0);
    let replenish = emit_constant_emitter(b, -big_m, &[store], &[(out, 1, 0)]);
    TriggerCell {
        store,
        out,
        preload,
        replenish,
    }
}

impl TriggerCell {
    pub fn aux(&self) -> AuxInput {
        AuxInput {
            neuron: self.preload,
            value: 1,
            at: AuxTime::Start,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum CellPort {
    Store,
    Erase,
    Trigger,
}

/// Checks a schedule of deliveries (arrival times at the store neuron)
/// against the trigger cell's usage rules.
pub fn check_trigger_schedule(schedule: &[(CellPort, u64)]) -> Result<(), GadgetError> {
    let mut sorted = schedule.to_vec();
    sorted.sort_by_key(|&(p, t)| (t, p));
    for w in sorted.windows(2) {
        if w[0].1 == w[1].1 {
            return Err(GadgetError::SimultaneousDelivery {
                first: w[0].0,
                second: w[1].0,
                time: w[0].1,
            });
        }
    }
    let triggers: Vec<u64> = sorted.iter().filter(|(p, _)| *p == CellPort::Trigger).map(|&(_, t)| t).collect();
    if let Some(&first) = triggers.first() {
        // preload lands on the output stage at t = 1
        if first < 1 {
            return Err(GadgetError::BeforePreload(first));
        }
    }
    for w in triggers.windows(2) {
        if w[1] - w[0] < TRIGGER_REUSE_GAP {
            return Err(GadgetError::TriggerTooSoon {
                earlier: w[0],
                later: w[1],
                gap: w[1] - w[0],
                min: TRIGGER_REUSE_GAP,
            });
        }
    }
    Ok(())
}

/// A value gate: `value` passes to the `out` neuron only when an `M`
/// opening signal reaches `hold` in the same timestep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Gate {
    pub hold: NeuronId,
    pub out: NeuronId,
}

/// Emits a gate. The caller must connect the value into `hold`, and the
/// opener with weight 1 into `hold` and weight -1 into `out` one step
/// later (see [`Gate::open_from_emitter`]).
pub fn emit_gate(b: &mut CircuitBuilder, big_m: i64) -> Gate {
    let hold = b.add_neuron(big_m, Leak::NONE);
    let out = relay(b);
    link(b, hold, out, 1, 0);
    Gate { hold, out }
}

impl Gate {
    /// Wires an `M` emitter so that its emission at `e` opens the gate for
    /// a value arriving at `hold` at `e + 1 + delay`.
    pub fn open_from_emitter(&self, b: &mut CircuitBuilder, emitter: GadgetId, delay: u64) {
        b.gadget_output(emitter, 0, self.hold, 1, delay).expect("gate exists");
        b.gadget_output(emitter, 0, self.out, -1, delay + 1).expect("gate exists");
    }

    /// Same as [`Gate::open_from_emitter`] for an `M`-valued neuron.
    pub fn open_from_neuron(&self, b: &mut CircuitBuilder, opener: NeuronId, delay: u64) {
        link(b, opener, self.hold, 1, delay);
        link(b, opener, self.out, -1, delay + 1);
    }
}

/// Join gadget with `n` lines and no connections yet.
pub fn emit_join(b: &mut CircuitBuilder, n: usize) -> Result<GadgetId, GadgetError> {
    if n < 2 {
        return Err(GadgetError::InvalidJoin(n));
    }
    Ok(b.add_gadget(GadgetKind::Join { n }))
}

/// Standalone constant box. `native` selects the emitter-based form.
pub fn build_constant(k: i64, native: bool) -> GadgetBox {
    let mut b = CircuitBuilder::new();
    let frag = if native {
        emit_constant_native(&mut b, k, 1)
    } else {
        emit_constant(&mut b, k, 1)
    };
    GadgetBox::from_fragment(b, frag, vec!["x".into()], if native { Some(2) } else { None })
}

pub fn build_successor(native: bool) -> GadgetBox {
    let mut b = CircuitBuilder::new();
    let frag = if native {
        emit_successor_native(&mut b)
    } else {
        emit_successor(&mut b)
    };
    GadgetBox::from_fragment(b, frag, vec!["x".into()], if native { Some(3) } else { None })
}

pub fn build_projection(n: usize, big_m: i64) -> Result<GadgetBox, GadgetError> {
    let mut b = CircuitBuilder::new();
    let frag = emit_projection(&mut b, n, big_m)?;
    let mut names = vec!["i".to_string()];
    names.extend((1..=n).map(|m| format!("x{m}")));
    Ok(GadgetBox::from_fragment(b, frag, names, None))
}

/// Standalone trigger cell: inputs `S`, `E`, `T` all address the store
/// neuron (0); the output stage is neuron 1 and the preload neuron 2.
pub fn build_trigger_cell(big_m: i64) -> GadgetBox {
    let mut b = CircuitBuilder::new();
    let cell = emit_trigger_cell(&mut b, big_m);
    b.inject(cell.preload, 1, 0).expect("preload exists");
    for name in ["S", "E", "T"] {
        b.mark_port(cell.store, PortRole::Input, name).expect("fresh");
    }
    b.mark_port(cell.out, PortRole::Output, "y").expect("fresh");
    GadgetBox {
        circuit: b.build(),
        inputs: ["S", "E", "T"].iter().map(|n| (n.to_string(), cell.store)).collect(),
        output: cell.out,
        latency: Latency::Static(2),
        min_reuse_gap: Some(TRIGGER_REUSE_GAP),
    }
}

/// Standalone join: input relays `a1..an`, output relays `y1..yn`.
pub fn build_join(n: usize) -> Result<GadgetBox, GadgetError> {
    let mut b = CircuitBuilder::new();
    let ins: Vec<_> = (0..n).map(|_| b.add_neuron(pass_threshold(1 << 40), Leak::NONE)).collect();
    let outs: Vec<_> = (0..n).map(|_| b.add_neuron(pass_threshold(1 << 40), Leak::NONE)).collect();
    let g = emit_join(&mut b, n)?;
    for (line, (&i, &o)) in ins.iter().zip(&outs).enumerate() {
        b.gadget_input(g, i).expect("exists");
        b.gadget_output(g, line, o, 1, 0).expect("exists");
    }
    for (m, &i) in ins.iter().enumerate() {
        b.mark_port(i, PortRole::Input, &format!("a{}", m + 1)).expect("fresh");
    }
    for (m, &o) in outs.iter().enumerate() {
        b.mark_port(o, PortRole::Output, &format!("y{}", m + 1)).expect("fresh");
    }
    Ok(GadgetBox {
        circuit: b.build(),
        inputs: ins.iter().enumerate().map(|(m, &i)| (format!("a{}", m + 1), i)).collect(),
        output: outs[0],
        latency: Latency::Dynamic,
        min_reuse_gap: Some(1),
    })
}
