//! Vietnamese spelling correction: syllable rules, synthetic error
//! generation, data encoding, the hierarchical transformer corrector,
//! training and evaluation.

pub mod errorgen;
pub mod evalmetrics;
pub mod model;
pub mod syllable;
pub mod textdata;
pub mod train;
