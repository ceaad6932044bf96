//! Microgrid simulator built on dq-frame models of grid-forming inverters,
//! RL lines and ZIP loads, with a singular-perturbation reduced model.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod components;
pub mod engine;
pub mod network;
pub mod signals;
pub mod validation;
