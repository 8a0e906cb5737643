//! Integer-valued spiking circuits built from threshold/leak neurons and
//! weight/delay synapses, a deterministic event-driven simulator for them,
//! and a compiler that turns mu-recursive programs into such circuits.

pub mod engine;
pub mod model;
pub mod murec;
pub mod gadgets;
pub mod compiler;
pub mod diff;
pub mod cli;
