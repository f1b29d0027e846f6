//! Heralded multipartite entanglement by spatially overlapped boson subtraction.
//!
//! The crate is organised bottom-up:
//!
//! * [`fock`]: sparse bosonic states and ladder operators
//! * [`engine`]: symmetric initial states, sculpting operators, no-bunching checks
//! * [`bigraph`]: the bipartite-graph picture, perfect matchings, EPM test, DOT export
//! * [`entanglement`]: logical-state extraction and separability classification
//! * [`schemes`]: the built-in Bell, GHZ, W, Type-5 and qudit GHZ constructions
//! * [`optics`]: a polarization linear-optics simulator with heralding
//! * [`search`]: synthesis of sculpting graphs from a target state
//! * [`selftest`]: the consolidated check suite used by the `sculpt selftest` command

pub mod bigraph;
pub mod engine;
pub mod entanglement;
pub mod error;
pub mod fock;
pub mod format;
pub mod optics;
pub mod schemes;
pub mod search;
pub mod selftest;

pub use error::{Error, Result};
