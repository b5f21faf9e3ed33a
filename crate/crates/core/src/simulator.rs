//! Cycle-level simulator.
