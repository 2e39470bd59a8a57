//! The whole detection pipeline over in-memory inputs.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::net::Ipv4Addr;

use crate::cluster::{cluster_candidates, GeoRecord, DEFAULT_MERGE_RADIUS_KM};
use crate::exec::Executor;
use crate::index::SpatialIndex;
use crate::path::CleanPath;
use crate::refine::{extract_pairs, init_states, iterate, tag_anomalies, CandidateState, IterationReport, RefineConfig};
use crate::resolve::{apply_outcomes, resolve_all, ResolutionOutcome, ResolveConfig};
use crate::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AnalysisConfig {
    pub refine: RefineConfig,
    pub resolve: ResolveConfig,
    pub merge_radius_km: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            refine: RefineConfig::default(),
            resolve: ResolveConfig::default(),
            merge_radius_km: DEFAULT_MERGE_RADIUS_KM,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.refine.validate()?;
        self.resolve.validate()?;
        if !(self.merge_radius_km >= 0.0) {
            return Err(ConfigError::OutOfRange("merge_radius_km"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Analysis {
    /// One state per IP seen in a path and present in the snapshot, sorted by IP.
    pub states: Vec<CandidateState>,
    /// One outcome per anomalous IP, sorted by IP.
    pub outcomes: Vec<ResolutionOutcome>,
    pub iteration: IterationReport,
}

/// Initial candidate clusters for every path IP that has database records.
pub fn initial_states(
    paths: &[CleanPath],
    snapshot: &BTreeMap<Ipv4Addr, Vec<GeoRecord>>,
    merge_radius_km: f64,
) -> Vec<CandidateState> {
    let mut clusters = BTreeMap::new();
    for p in paths {
        for h in &p.hops {
            if clusters.contains_key(&h.ip) {
                continue;
            }
            if let Some(recs) = snapshot.get(&h.ip) {
                let c = cluster_candidates(recs, merge_radius_km);
                if !c.is_empty() {
                    clusters.insert(h.ip, c);
                }
            }
        }
    }
    init_states(clusters)
}

/// Clusters candidates, refines them, tags anomalies and resolves the anomalous IPs.
pub fn analyze<E: Executor>(
    paths: &[CleanPath],
    snapshot: &BTreeMap<Ipv4Addr, Vec<GeoRecord>>,
    index: &SpatialIndex,
    cfg: &AnalysisConfig,
    exec: &E,
) -> Analysis {
    let mut states = initial_states(paths, snapshot, cfg.merge_radius_km);
    let pairs = extract_pairs(paths);
    let iteration = iterate(&mut states, &pairs, &cfg.refine, exec);
    tag_anomalies(&mut states, &cfg.refine);
    let outcomes = resolve_all(&states, paths, index, &cfg.resolve, exec);
    apply_outcomes(&mut states, &outcomes);
    Analysis { states, outcomes, iteration }
}
