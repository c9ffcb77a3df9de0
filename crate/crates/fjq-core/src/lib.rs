#![cfg_attr(not(test), no_std)]
extern crate alloc;

pub mod circuit;
pub mod energy;
pub mod matrix;
pub mod pfaff;
pub mod rational;
pub mod reduction;
pub mod structure;
pub mod symbolics;
pub mod topology;

pub use matrix::Mat;
pub use rational::Rat;
