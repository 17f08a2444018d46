//! Flow extraction, labeling and intrusion-detection modelling for
//! industrial-control-system packet captures.
//!
//! The pipeline runs capture → [`packet`] decoding → [`flow`] aggregation →
//! [`label`]ing → [`dataset`] preparation → [`select`]ion → [`models`] →
//! [`eval`]uation. [`synth`] produces deterministic captures with ground truth
//! for testing the whole chain.

pub mod dataset;
pub mod eval;
pub mod flow;
pub mod label;
pub mod models;
pub mod packet;
pub mod select;
pub mod synth;
