//! Detection, classification and correction of anomalous IP geolocations in
//! traceroute corpora, using only the RTTs already present in the traceroutes and
//! snapshots of geolocation databases.
//!
//! The crate is `no_std` + `alloc`; file formats, networking and the command line
//! live in the `geofix` crate.

#![cfg_attr(not(test), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod analysis;
pub mod catalog;
pub mod cluster;
pub mod exec;
pub mod geo;
pub mod index;
pub mod path;
pub mod refine;
pub mod report;
pub mod resolve;
pub mod stats;
pub mod synth;

pub use catalog::{builtin_catalog, CityPolygon, DEFAULT_CITY_RADIUS_KM};
pub use cluster::{cluster_candidates, CityCluster, GeoRecord};
pub use exec::{Executor, Sequential};
pub use geo::{haversine_km, sol_km, GeoPoint};
pub use index::SpatialIndex;
pub use path::{normalize, CleanPath, Hop, PrefixSet, RawHop, RawTraceroute, Rejection, Reply};
pub use refine::{CandidateState, NeighborPair, RefineConfig, Status};

/// A configuration value outside its documented range.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("`{0}` is out of range")]
    OutOfRange(&'static str),
    #[error("{0}")]
    Invalid(&'static str),
}
