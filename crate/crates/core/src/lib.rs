//! Ingest, registry, processing and dataset access for egocentric and robot
//! demonstration episodes.

pub mod datamodel;
pub mod align;
pub mod flowmatch;
pub mod registry;
pub mod store;
pub mod ingest;
pub mod pipeline;
pub mod syncset;
pub mod selftest;
pub mod wire;
