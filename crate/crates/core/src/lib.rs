//! Numerical laboratory for wave-packet decompositions of the extension
//! operator of the paraboloid and for the refined Strichartz-type estimates
//! built on top of them.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`]: scales, dyadic cubes, tubes, incidences, slab partitions.
//! * [`extension`]: sampled profiles and evaluation of `Ef`.
//! * [`wavepacket`]: cap partition, packet decomposition, weight classes.
//! * [`selection`]: pigeonholing pipelines producing uniform sub-collections.
//! * [`ensemble`]: seeded generators of cubes, profiles, tubes and squares.
//! * [`verify`]: estimate runners, audits and exponent fits.
//! * [`cli`]: configuration, report writing and the command-line front end.

pub mod cli;
pub mod ensemble;
pub mod error;
pub mod extension;
pub mod geometry;
pub mod selection;
pub mod verify;
pub mod wavepacket;

pub use error::{Error, Result};
