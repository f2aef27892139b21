//! EVM bytecode to abstract Integer C translation for SV-COMP verifiers.
//!
//! The pipeline is `bytecode` (decode) → `cfg` (control-flow recovery) →
//! `rbr` (stack-free rule-based representation) → `cemit` (C with
//! `__VERIFIER_error()` at every `INVALID`) → `driver` (verifier runs and
//! reports). `exec` is a concrete interpreter used as a test oracle.

pub mod asm;
pub mod bytecode;
pub mod cemit;
pub mod cfg;
pub mod driver;
pub mod exec;
pub mod rbr;
pub mod word;

pub use word::Word;
