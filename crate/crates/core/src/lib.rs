//! Mapping state-space exploration for secure systolic ML inference
//! accelerators.
//!
//! The crate models an accelerator whose memory path runs through a constant
//! traffic shaper, an authenticated-encryption (crypto) block and a hardware
//! zeroizer. It provides:
//!
//! * workload descriptions and GEMM lowering ([`workload`]),
//! * an analytical latency/energy cost model ([`costmodel`]),
//! * a genetic-algorithm tile/loop-order search ([`mapper`]),
//! * memory trace generation at a configurable integrity granularity
//!   ([`tracegen`]) and the AuthBlock optimization over it ([`authopt`]),
//! * shaper bandwidth sizing ([`shapersizing`]),
//! * simulated annealing over per-layer mapping choices ([`annealer`]),
//! * instruction lowering plus liveness/dependency passes ([`passes`]),
//! * a deterministic cycle-level simulator with functional execution
//!   ([`simulator`]) and a direct loop-nest reference ([`golden`]).
//!
//! Everything in here is `no_std` + `alloc`; file formats, the CLI and
//! parallel orchestration live in the companion `obsidian-cli` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod annealer;
pub mod authopt;
pub mod costmodel;
pub mod golden;
pub mod mapper;
pub mod passes;
pub mod shapersizing;
pub mod simulator;
pub mod tracegen;
pub mod workload;

pub use costmodel::{BoundClass, CostReport, HardwareConfig, Mapping};
pub use workload::{Dim, GemmShape, LayerSpec, ModelSpec, PerRole, TensorRole};
