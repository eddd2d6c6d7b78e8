//! Simulation and analysis toolkit for inverter-based AC microgrids under a
//! distributed reactive-power-sharing controller with hard voltage limits.

// NaN must fail range checks, hence `!(a < b)` rather than `a >= b`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controller;
pub mod graph;
pub mod network;
pub mod ode;
pub mod scenario;
pub mod sim;
pub mod stability;
pub mod steady;
pub mod tuner;
