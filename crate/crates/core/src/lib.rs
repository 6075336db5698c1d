//! Simulation and threshold analysis for stochastic SIR systems with
//! time-varying coefficients, Brownian noise and Lévy jumps.

// NaN must fail validity checks, so they are written as negated comparisons.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod criteria;
pub mod expr;
pub mod integrator;
pub mod levy;
pub mod models;
pub mod montecarlo;
