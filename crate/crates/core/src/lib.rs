//! Simulation, finitary coding and exact verification of Poisson
//! representable random sets on Z and Z².

pub mod coding_censored;
pub mod coding_general;
pub mod coding_pairs;
pub mod coupling;
pub mod domination;
pub mod error;
pub mod exact;
pub mod harness;
pub mod intensity;
pub mod lattice;
pub mod markov1d;
pub mod partition;
pub mod rng;
pub mod sampler;
pub mod stats;

pub use error::{Error, Result};
pub use intensity::{ConcreteSet, IntensitySpec, PairTail, ShapeOrbit, Weight};
pub use lattice::{Site, Window};
