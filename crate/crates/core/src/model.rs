//! Static circuit description: neurons, synapses, ports, injections and
//! native gadget nodes, plus the builder, validator and text format.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub type NeuronId = usize;
pub type GadgetId = usize;

/// How long a neuron that integrated without spiking keeps its state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Leak {
    /// State survives `n` further timesteps after the integration step.
    Steps(u64),
    /// State is kept until the next spike.
    Infinite,
}

impl Leak {
    pub const NONE: Leak = Leak::Steps(0);
}

impl fmt::Display for Leak {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Leak::Steps(n) => write!(f, "{n}"),
            Leak::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Leak {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Leak::Steps(n) => s.serialize_u64(*n),
            Leak::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Leak {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(n) => Ok(Leak::Steps(n)),
            Raw::Text(t) if t == "inf" => Ok(Leak::Infinite),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "leak must be a whole number or \"inf\", got {t:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeuronSpec {
    pub id: NeuronId,
    pub threshold: i64,
    pub leak: Leak,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynapseSpec {
    pub pre: NeuronId,
    pub post: NeuronId,
    pub weight: i64,
    pub delay: u64,
}

impl SynapseSpec {
    pub fn key(&self) -> (NeuronId, NeuronId) {
        (self.pre, self.post)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PortRole {
    Input,
    Output,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Port {
    pub name: String,
    pub neuron: NeuronId,
    pub role: PortRole,
}

/// An externally supplied value delivered to `neuron` at `time`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Injection {
    pub neuron: NeuronId,
    pub value: i64,
    pub time: u64,
}

/// Behaviour of a native gadget node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GadgetKind {
    /// Emits `k` two timesteps after the upstream spike that fed it,
    /// whatever value that spike carried.
    ConstantEmitter { k: i64 },
    /// Buffers one value per input line; one step after the last line has
    /// delivered it emits every buffered value on the matching output line.
    Join { n: usize },
}

/// Outgoing connection of a gadget. `line` selects which buffered value a
/// join forwards; constant emitters only use line 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GadgetOutput {
    pub line: usize,
    pub target: NeuronId,
    pub weight: i64,
    pub delay: u64,
}

/// A native gadget node. `inputs[l]` is the neuron whose spikes reach input
/// line `l` (unit weight, one timestep of transit).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NativeGadget {
    pub id: GadgetId,
    pub kind: GadgetKind,
    pub inputs: Vec<NeuronId>,
    pub outputs: Vec<GadgetOutput>,
}

// Flat wire shape for gadgets: {id, kind, k?, n?, inputs, outputs}.
#[derive(Serialize, Deserialize)]
struct GadgetWire {
    id: GadgetId,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    inputs: Vec<NeuronId>,
    outputs: Vec<GadgetOutput>,
}

impl Serialize for NativeGadget {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let (kind, k, n) = match self.kind {
            GadgetKind::ConstantEmitter { k } => ("const_emit", Some(k), None),
            GadgetKind::Join { n } => ("join", None, Some(n)),
        };
        GadgetWire {
            id: self.id,
            kind: kind.to_string(),
            k,
            n,
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for NativeGadget {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let w = GadgetWire::deserialize(d)?;
        let kind = match (w.kind.as_str(), w.k, w.n) {
            ("const_emit", Some(k), None) => GadgetKind::ConstantEmitter { k },
            ("join", None, Some(n)) => GadgetKind::Join { n },
            ("const_emit", _, _) => return Err(D::Error::custom("const_emit needs `k` only")),
            ("join", _, _) => return Err(D::Error::custom("join needs `n` only")),
            (other, _, _) => return Err(D::Error::custom(format!("unknown gadget kind {other:?}"))),
        };
        Ok(NativeGadget {
            id: w.id,
            kind,
            inputs: w.inputs,
            outputs: w.outputs,
        })
    }
}

/// Immutable circuit. Construct with [`CircuitBuilder`] or [`Circuit::from_parts`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Circuit {
    pub neurons: Vec<NeuronSpec>,
    pub synapses: Vec<SynapseSpec>,
    pub ports: Vec<Port>,
    pub injections: Vec<Injection>,
    pub gadgets: Vec<NativeGadget>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("unknown neuron {0}")]
    UnknownNeuron(NeuronId),
    #[error("duplicate synapse ({0}, {1})")]
    DuplicateSynapse(NeuronId, NeuronId),
    #[error("duplicate port name {0:?}")]
    DuplicatePortName(String),
    #[error("gadget {gadget} line {line} already connects to neuron {target}")]
    DuplicateGadgetOutput {
        gadget: GadgetId,
        line: usize,
        target: NeuronId,
    },
}

/// A structural problem found by [`Circuit::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NonContiguousId { index: usize, id: NeuronId },
    UnknownNeuron { context: String, neuron: NeuronId },
    DuplicateSynapse { pre: NeuronId, post: NeuronId },
    DuplicatePortName(String),
    NonContiguousGadgetId { index: usize, id: GadgetId },
    BadJoin { gadget: GadgetId, reason: String },
    DuplicateGadgetOutput { gadget: GadgetId, line: usize, target: NeuronId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonContiguousId { index, id } => {
                write!(f, "neuron at position {index} has id {id}")
            }
            Violation::UnknownNeuron { context, neuron } => {
                write!(f, "{context} refers to unknown neuron {neuron}")
            }
            Violation::DuplicateSynapse { pre, post } => write!(f, "duplicate synapse ({pre}, {post})"),
            Violation::DuplicatePortName(n) => write!(f, "duplicate port name {n:?}"),
            Violation::NonContiguousGadgetId { index, id } => {
                write!(f, "gadget at position {index} has id {id}")
            }
            Violation::BadJoin { gadget, reason } => write!(f, "join gadget {gadget}: {reason}"),
            Violation::DuplicateGadgetOutput { gadget, line, target } => {
                write!(f, "gadget {gadget} line {line} connects to neuron {target} twice")
            }
        }
    }
}

#[derive(Debug, Error)]
#[error("parse error at line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl From<serde_json::Error> for ParseError {
    fn from(e: serde_json::Error) -> Self {
        ParseError {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

impl Circuit {
    /// Assemble a circuit without any checks. Use [`Circuit::validate`] afterwards.
    pub fn from_parts(
        neurons: Vec<NeuronSpec>,
        synapses: Vec<SynapseSpec>,
        ports: Vec<Port>,
        injections: Vec<Injection>,
        gadgets: Vec<NativeGadget>,
    ) -> Circuit {
        Circuit {
            neurons,
            synapses,
            ports,
            injections,
            gadgets,
        }
    }

    pub fn neuron_count(&self) -> usize {
        self.neurons.len()
    }

    pub fn port(&self, name: &str) -> Option<&Port> {
        self.ports.iter().find(|p| p.name == name)
    }

    pub fn input_ports(&self) -> impl Iterator<Item = &Port> {
        self.ports.iter().filter(|p| p.role == PortRole::Input)
    }

    pub fn output_ports(&self) -> impl Iterator<Item = &Port> {
        self.ports.iter().filter(|p| p.role == PortRole::Output)
    }

    /// Checks every structural invariant; returns all violations found.
    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        let mut out = Vec::new();
        let n = self.neurons.len();
        for (index, spec) in self.neurons.iter().enumerate() {
            if spec.id != index {
                out.push(Violation::NonContiguousId { index, id: spec.id });
            }
        }
        let check = |context: String, neuron: NeuronId, out: &mut Vec<Violation>| {
            if neuron >= n {
                out.push(Violation::UnknownNeuron { context, neuron });
            }
        };
        let mut seen = HashSet::new();
        for s in &self.synapses {
            check(format!("synapse ({}, {})", s.pre, s.post), s.pre, &mut out);
            check(format!("synapse ({}, {})", s.pre, s.post), s.post, &mut out);
            if !seen.insert(s.key()) {
                out.push(Violation::DuplicateSynapse { pre: s.pre, post: s.post });
            }
        }
        let mut names = HashSet::new();
        for p in &self.ports {
            check(format!("port {:?}", p.name), p.neuron, &mut out);
            if !names.insert(p.name.as_str()) {
                out.push(Violation::DuplicatePortName(p.name.clone()));
            }
        }
        for inj in &self.injections {
            check(format!("injection at t={}", inj.time), inj.neuron, &mut out);
        }
        for (index, g) in self.gadgets.iter().enumerate() {
            if g.id != index {
                out.push(Violation::NonContiguousGadgetId { index, id: g.id });
            }
            for &i in &g.inputs {
                check(format!("gadget {} input", g.id), i, &mut out);
            }
            let mut outs = BTreeSet::new();
            for o in &g.outputs {
                check(format!("gadget {} output", g.id), o.target, &mut out);
                if !outs.insert((o.line, o.target)) {
                    out.push(Violation::DuplicateGadgetOutput {
                        gadget: g.id,
                        line: o.line,
                        target: o.target,
                    });
                }
            }
            match g.kind {
                GadgetKind::Join { n: lines } => {
                    if lines < 2 {
                        out.push(Violation::BadJoin {
                            gadget: g.id,
                            reason: format!("needs at least 2 lines, has {lines}"),
                        });
                    }
                    if g.inputs.len() != lines {
                        out.push(Violation::BadJoin {
                            gadget: g.id,
                            reason: format!("{} input neurons for {lines} lines", g.inputs.len()),
                        });
                    }
                    if let Some(o) = g.outputs.iter().find(|o| o.line >= lines) {
                        out.push(Violation::BadJoin {
                            gadget: g.id,
                            reason: format!("output on line {} out of range", o.line),
                        });
                    }
                }
                GadgetKind::ConstantEmitter { .. } => {}
            }
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }

    /// Canonical JSON text. Equal circuits serialize to equal bytes.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("circuit serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Circuit, ParseError> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Incremental circuit construction. Every mutation keeps the circuit valid.
#[derive(Debug, Default, Clone)]
pub struct CircuitBuilder {
    neurons: Vec<NeuronSpec>,
    synapses: Vec<SynapseSpec>,
    synapse_keys: HashSet<(NeuronId, NeuronId)>,
    ports: Vec<Port>,
    injections: Vec<Injection>,
    gadgets: Vec<NativeGadget>,
}

impl CircuitBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn neuron_count(&self) -> usize {
        self.neurons.len()
    }

    pub fn add_neuron(&mut self, threshold: i64, leak: Leak) -> NeuronId {
        let id = self.neurons.len();
        self.neurons.push(NeuronSpec { id, threshold, leak });
        id
    }

    fn require(&self, id: NeuronId) -> Result<(), ModelError> {
        if id < self.neurons.len() {
            Ok(())
        } else {
            Err(ModelError::UnknownNeuron(id))
        }
    }

    pub fn add_synapse(
        &mut self,
        pre: NeuronId,
        post: NeuronId,
        weight: i64,
        delay: u64,
    ) -> Result<(NeuronId, NeuronId), ModelError> {
        self.require(pre)?;
        self.require(post)?;
        if !self.synapse_keys.insert((pre, post)) {
            return Err(ModelError::DuplicateSynapse(pre, post));
        }
        self.synapses.push(SynapseSpec {
            pre,
            post,
            weight,
            delay,
        });
        Ok((pre, post))
    }

    pub fn has_synapse(&self, pre: NeuronId, post: NeuronId) -> bool {
        self.synapse_keys.contains(&(pre, post))
    }

    pub fn mark_port(&mut self, neuron: NeuronId, role: PortRole, name: &str) -> Result<(), ModelError> {
        self.require(neuron)?;
        if self.ports.iter().any(|p| p.name == name) {
            return Err(ModelError::DuplicatePortName(name.to_string()));
        }
        self.ports.push(Port {
            name: name.to_string(),
            neuron,
            role,
        });
        Ok(())
    }

    pub fn inject(&mut self, neuron: NeuronId, value: i64, time: u64) -> Result<(), ModelError> {
        self.require(neuron)?;
        self.injections.push(Injection { neuron, value, time });
        Ok(())
    }

    /// Adds a gadget node with no connections yet.
    pub fn add_gadget(&mut self, kind: GadgetKind) -> GadgetId {
        let id = self.gadgets.len();
        self.gadgets.push(NativeGadget {
            id,
            kind,
            inputs: Vec::new(),
            outputs: Vec::new(),
        });
        id
    }

    /// Appends `neuron` as the next input line of gadget `g`.
    pub fn gadget_input(&mut self, g: GadgetId, neuron: NeuronId) -> Result<usize, ModelError> {
        self.require(neuron)?;
        let gadget = &mut self.gadgets[g];
        gadget.inputs.push(neuron);
        Ok(gadget.inputs.len() - 1)
    }

    pub fn gadget_output(
        &mut self,
        g: GadgetId,
        line: usize,
        target: NeuronId,
        weight: i64,
        delay: u64,
    ) -> Result<(), ModelError> {
        self.require(target)?;
        let gadget = &mut self.gadgets[g];
        if gadget.outputs.iter().any(|o| o.line == line && o.target == target) {
            return Err(ModelError::DuplicateGadgetOutput { gadget: g, line, target });
        }
        gadget.outputs.push(GadgetOutput {
            line,
            target,
            weight,
            delay,
        });
        Ok(())
    }

    pub fn build(self) -> Circuit {
        Circuit {
            neurons: self.neurons,
            synapses: self.synapses,
            ports: self.ports,
            injections: self.injections,
            gadgets: self.gadgets,
        }
    }
}
