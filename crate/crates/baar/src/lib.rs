//! Host side of the offloading runtime: TCP transport, the acceleration
//! server, the client runtime that analyzes, exports and guards a program,
//! and the benchmark harness.

pub mod client;
pub mod exec;
pub mod harness;
pub mod runtime;
pub mod server;
pub mod transport;

pub use client::Client;
pub use harness::{run_benchmark, BenchReport, BenchSpec, Mode};
pub use runtime::ClientRuntime;
pub use server::{Server, ServerConfig};
