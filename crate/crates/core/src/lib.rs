#![no_std]

//! Core of the offloading runtime: an affine mini-IR with its parser and
//! printer, a reference interpreter, the static hotspot analysis that scores
//! functions for acceleration, the per-call offload decision, the wire codec
//! shared by client and server, and the server-side dependence test and
//! scheduled executor.
//!
//! Everything in this crate is pure computation over `alloc` types. Sockets,
//! threads, clocks and the command line live in the `baar` crate.

extern crate alloc;

pub mod analysis;
pub mod corpus;
pub mod interp;
pub mod ir;
pub mod offload;
pub mod proto;
pub mod rational;
pub mod server;

pub use rational::Rational;
