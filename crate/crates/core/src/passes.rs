//! Instruction lowering and compiler passes.
