//! Standard-library companion to `fjq-core`: netlist front end, model
//! document IO, numerical dynamics, and the command-line pipeline.

pub use fjq_core;

pub mod cli;
pub mod dynamics;
pub mod model_io;
pub mod netlist;
