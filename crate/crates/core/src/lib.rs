//! Simulator of a plausibly deniable flash translation layer, together with
//! a multi-snapshot adversary that measures how well hidden writes blend in.
//!
//! - [`nand`]: raw NAND chip with erase-before-write, wear and snapshots.
//! - [`crypto`]: key derivation, page encryption, OOB tags, slot locations.
//! - [`ftl`]: the deniable FTL and a hidden-volume baseline.
//! - [`harness`]: scenarios, snapshot features, distinguishers, randomness tests.

pub mod crypto;
pub mod ftl;
pub mod harness;
pub mod nand;
