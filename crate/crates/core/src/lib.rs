//! Digital twin of a tunable Sagnac-interferometer quantum random number generator.
//!
//! The crate covers the whole chain: optical and detector simulation
//! ([`optics`]), block acquisition ([`acquisition`]), framed transport
//! ([`blockstream`]), entropy metrics ([`metrics`]), Toeplitz extraction
//! ([`extractor`]), operating-point tuning ([`tuner`]), the prepare-and-measure
//! self-test ([`selftest`]), statistical checks and exporters ([`testkit`]),
//! and the end-to-end [`pipeline`].

pub mod acquisition;
pub mod bits;
pub mod blockstream;
pub mod config;
pub mod extractor;
pub mod metrics;
pub mod optics;
pub mod pipeline;
pub mod rng;
pub mod selftest;
pub mod testkit;
pub mod tuner;
