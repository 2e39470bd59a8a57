//! Anchor-based resolution and classification of anomalous IPs.
//!
//! Non-anomalous IPs with a single surviving cluster act as anchors. For each
//! traceroute through an anomalous IP the closest anchor (by RTT) is picked; the
//! median RTT gap per anchor sizes a disc around it, and the city polygon hit by
//! the most discs becomes the resolved location.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::net::Ipv4Addr;

use crate::cluster::CityCluster;
use crate::exec::Executor;
use crate::geo::{haversine_km, sol_km, GeoPoint};
use crate::index::SpatialIndex;
use crate::path::CleanPath;
use crate::refine::{CandidateState, Status};
use crate::stats::median;
use crate::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ResolveConfig {
    /// Share of anchors one country must exceed for the IP to be resolvable.
    pub country_dominance: f64,
    /// Slack on buffer radii as a fraction of the anchor's median RTT.
    pub anchor_allowance_fraction: f64,
    pub tie_merge_km: f64,
    pub tie_merge_max_km: f64,
    pub tie_merge_step_km: f64,
    /// A resolved point within this distance of an original candidate confirms it.
    pub match_radius_km: f64,
    pub min_anchors: usize,
    /// Smallest buffer radius.
    pub min_buffer_km: f64,
}

impl Default for ResolveConfig {
    fn default() -> Self {
        ResolveConfig {
            country_dominance: 0.95,
            anchor_allowance_fraction: 0.10,
            tie_merge_km: 20.0,
            tie_merge_max_km: 100.0,
            tie_merge_step_km: 20.0,
            match_radius_km: 20.0,
            min_anchors: 2,
            min_buffer_km: 20.0,
        }
    }
}

impl ResolveConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.country_dominance > 0.0 && self.country_dominance <= 1.0) {
            return Err(ConfigError::OutOfRange("country_dominance"));
        }
        if !(self.anchor_allowance_fraction > 0.0 && self.anchor_allowance_fraction <= 1.0) {
            return Err(ConfigError::OutOfRange("anchor_allowance_fraction"));
        }
        if !(self.tie_merge_km >= 0.0 && self.tie_merge_km <= self.tie_merge_max_km) {
            return Err(ConfigError::OutOfRange("tie_merge_km"));
        }
        if !(self.tie_merge_step_km > 0.0) {
            return Err(ConfigError::OutOfRange("tie_merge_step_km"));
        }
        if !(self.match_radius_km >= 0.0) {
            return Err(ConfigError::OutOfRange("match_radius_km"));
        }
        if !(self.min_buffer_km > 0.0) {
            return Err(ConfigError::OutOfRange("min_buffer_km"));
        }
        if self.min_anchors == 0 {
            return Err(ConfigError::OutOfRange("min_anchors"));
        }
        Ok(())
    }
}

/// One traceroute's anchor for an anomalous IP.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AnchorObservation {
    pub anomalous_ip: Ipv4Addr,
    pub anchor_ip: Ipv4Addr,
    pub anchor_location: GeoPoint,
    pub anchor_country: String,
    /// Anomalous RTT minus anchor RTT.
    pub delta_rtt_ms: f64,
    pub anchor_rtt_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AggregatedAnchor {
    pub anchor_ip: Ipv4Addr,
    pub median_delta_ms: f64,
    pub median_anchor_rtt_ms: f64,
    pub location: GeoPoint,
    pub country: String,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BufferRegion {
    pub center: GeoPoint,
    pub radius_km: f64,
    pub anchor_ip: Ipv4Addr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum MplsReason {
    /// Anchors spread over countries with no dominant one.
    CountryDispersed,
    /// Too few anchors, or the overlap could not be narrowed to one place.
    Unresolvable,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Verdict {
    InterfaceAffected { resolved: GeoPoint, polygon_id: u32 },
    MplsAffected(MplsReason),
    FalsePositive(CityCluster),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ResolutionOutcome {
    pub ip: Ipv4Addr,
    pub verdict: Verdict,
    pub anchor_count: usize,
    pub max_overlap: usize,
}

fn lookup(states: &[CandidateState], ip: Ipv4Addr) -> Option<&CandidateState> {
    states
        .binary_search_by(|s| s.ip.cmp(&ip))
        .ok()
        .map(|i| &states[i])
}

/// For every path through `ip`, the nearest anchor on each side; of the two,
/// the one with the smaller absolute RTT gap (the preceding one on ties).
/// `states` must be sorted by IP.
pub fn select_anchors<'a, I>(ip: Ipv4Addr, paths: I, states: &[CandidateState]) -> Vec<AnchorObservation>
where
    I: IntoIterator<Item = &'a CleanPath>,
{
    let anchor_at = |path: &CleanPath, k: usize| -> Option<(usize, &CityCluster)> {
        let h = path.hops[k];
        if h.ip == ip {
            return None;
        }
        lookup(states, h.ip).and_then(|s| s.anchor_cluster()).map(|c| (k, c))
    };

    let mut out = Vec::new();
    for path in paths {
        let Some(pos) = path.position(ip) else {
            continue;
        };
        let rtt = path.hops[pos].rtt_ms;
        let before = (0..pos).rev().find_map(|k| anchor_at(path, k));
        let after = (pos + 1..path.hops.len()).find_map(|k| anchor_at(path, k));
        let gap = |a: &Option<(usize, &CityCluster)>| a.map(|(k, _)| (rtt - path.hops[k].rtt_ms).abs());
        let chosen = match (gap(&before), gap(&after)) {
            (Some(b), Some(a)) if a < b => after,
            (Some(_), _) => before,
            (None, _) => after,
        };
        if let Some((k, cluster)) = chosen {
            out.push(AnchorObservation {
                anomalous_ip: ip,
                anchor_ip: path.hops[k].ip,
                anchor_location: cluster.centroid,
                anchor_country: cluster.country.clone(),
                delta_rtt_ms: rtt - path.hops[k].rtt_ms,
                anchor_rtt_ms: path.hops[k].rtt_ms,
            });
        }
    }
    out
}

/// Per-anchor medians of the RTT gap and of the anchor's own RTT, sorted by anchor IP.
pub fn aggregate_medians(observations: &[AnchorObservation]) -> Vec<AggregatedAnchor> {
    let mut groups: BTreeMap<Ipv4Addr, Vec<&AnchorObservation>> = BTreeMap::new();
    for o in observations {
        groups.entry(o.anchor_ip).or_default().push(o);
    }
    groups
        .into_iter()
        .map(|(anchor_ip, obs)| {
            let deltas: Vec<f64> = obs.iter().map(|o| o.delta_rtt_ms).collect();
            let rtts: Vec<f64> = obs.iter().map(|o| o.anchor_rtt_ms).collect();
            AggregatedAnchor {
                anchor_ip,
                median_delta_ms: median(&deltas).unwrap_or(0.0),
                median_anchor_rtt_ms: median(&rtts).unwrap_or(0.0),
                location: obs[0].anchor_location,
                country: obs[0].anchor_country.clone(),
                count: obs.len(),
            }
        })
        .collect()
}

/// True when no single country holds more than `country_dominance` of the
/// distinct anchors, i.e. the IP is treated as MPLS-affected.
pub fn mpls_country_filter(anchors: &[AggregatedAnchor], cfg: &ResolveConfig) -> bool {
    let mut per_country: BTreeMap<&str, BTreeSet<Ipv4Addr>> = BTreeMap::new();
    for a in anchors {
        per_country.entry(a.country.as_str()).or_default().insert(a.anchor_ip);
    }
    let total: usize = per_country.values().map(BTreeSet::len).sum();
    if total == 0 {
        return false;
    }
    let top = per_country.values().map(BTreeSet::len).max().unwrap_or(0);
    (top as f64 / total as f64) <= cfg.country_dominance
}

pub fn buffer_radius_km(anchor: &AggregatedAnchor, cfg: &ResolveConfig) -> f64 {
    let budget_ms = anchor.median_delta_ms.abs() + cfg.anchor_allowance_fraction * anchor.median_anchor_rtt_ms;
    sol_km(budget_ms).max(cfg.min_buffer_km)
}

pub fn build_buffers(aggregated: &[AggregatedAnchor], cfg: &ResolveConfig) -> Vec<BufferRegion> {
    aggregated
        .iter()
        .map(|a| BufferRegion {
            center: a.location,
            radius_km: buffer_radius_km(a, cfg),
            anchor_ip: a.anchor_ip,
        })
        .collect()
}

/// Highest number of buffers touching one polygon, and every polygon reaching it.
pub fn max_overlap_polygons(buffers: &[BufferRegion], index: &SpatialIndex) -> (usize, Vec<u32>) {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for b in buffers {
        for id in index.query_overlaps(b.center, b.radius_km) {
            *counts.entry(id).or_default() += 1;
        }
    }
    let max = counts.values().copied().max().unwrap_or(0);
    let ids = counts
        .into_iter()
        .filter(|&(_, c)| c == max && max > 0)
        .map(|(id, _)| id)
        .collect();
    (max, ids)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resolved {
    pub point: GeoPoint,
    pub polygon_id: u32,
    pub max_overlap: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Unresolvable {
    pub max_overlap: usize,
}

/// Single-linkage components over `points` with merge distance `threshold_km`.
fn linkage_components(points: &[GeoPoint], threshold_km: f64) -> usize {
    let n = points.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if haversine_km(points[i], points[j]) <= threshold_km {
                let (ri, rj) = (root(&mut parent, i), root(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    (0..n).filter(|&i| root(&mut parent, i) == i).count()
}

/// Picks the polygon with the most overlapping buffers. Ties are merged by
/// single linkage at growing distances up to `tie_merge_max_km`; if they never
/// collapse into one group the location is unresolvable.
pub fn resolve_location(
    buffers: &[BufferRegion],
    index: &SpatialIndex,
    cfg: &ResolveConfig,
) -> Result<Resolved, Unresolvable> {
    if buffers.len() < cfg.min_anchors {
        return Err(Unresolvable { max_overlap: 0 });
    }
    let (max_overlap, ids) = max_overlap_polygons(buffers, index);
    let polys: Vec<_> = ids.iter().filter_map(|&id| index.get(id)).collect();
    match polys.as_slice() {
        [] => Err(Unresolvable { max_overlap }),
        [only] => Ok(Resolved {
            point: only.centroid,
            polygon_id: only.polygon_id,
            max_overlap,
        }),
        many => {
            let points: Vec<GeoPoint> = many.iter().map(|p| p.centroid).collect();
            let mut threshold = cfg.tie_merge_km;
            loop {
                if linkage_components(&points, threshold) == 1 {
                    let mean = GeoPoint::mean(points.iter().copied()).expect("non-empty");
                    let nearest = many
                        .iter()
                        .min_by(|a, b| {
                            haversine_km(a.centroid, mean)
                                .total_cmp(&haversine_km(b.centroid, mean))
                                .then(a.polygon_id.cmp(&b.polygon_id))
                        })
                        .expect("non-empty");
                    return Ok(Resolved {
                        point: mean,
                        polygon_id: nearest.polygon_id,
                        max_overlap,
                    });
                }
                if threshold >= cfg.tie_merge_max_km {
                    return Err(Unresolvable { max_overlap });
                }
                threshold = (threshold + cfg.tie_merge_step_km).min(cfg.tie_merge_max_km);
            }
        }
    }
}

/// Compares a resolved point against the IP's original database candidates.
pub fn classify(resolved: &Resolved, original: &[CityCluster], cfg: &ResolveConfig) -> Verdict {
    let confirmed = original
        .iter()
        .map(|c| (haversine_km(c.centroid, resolved.point), c))
        .filter(|(d, _)| *d <= cfg.match_radius_km)
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cluster_id.cmp(&b.1.cluster_id)));
    match confirmed {
        Some((_, c)) => Verdict::FalsePositive(c.clone()),
        None => Verdict::InterfaceAffected {
            resolved: resolved.point,
            polygon_id: resolved.polygon_id,
        },
    }
}

/// Full resolution of one anomalous IP.
pub fn resolve_ip<'a, I>(
    ip: Ipv4Addr,
    paths: I,
    states: &[CandidateState],
    index: &SpatialIndex,
    cfg: &ResolveConfig,
) -> ResolutionOutcome
where
    I: IntoIterator<Item = &'a CleanPath>,
{
    let outcome = |verdict, anchor_count, max_overlap| ResolutionOutcome {
        ip,
        verdict,
        anchor_count,
        max_overlap,
    };
    let observations = select_anchors(ip, paths, states);
    if observations.is_empty() {
        return outcome(Verdict::MplsAffected(MplsReason::Unresolvable), 0, 0);
    }
    let anchors = aggregate_medians(&observations);
    if mpls_country_filter(&anchors, cfg) {
        return outcome(Verdict::MplsAffected(MplsReason::CountryDispersed), anchors.len(), 0);
    }
    let buffers = build_buffers(&anchors, cfg);
    match resolve_location(&buffers, index, cfg) {
        Err(u) => outcome(
            Verdict::MplsAffected(MplsReason::Unresolvable),
            anchors.len(),
            u.max_overlap,
        ),
        Ok(r) => {
            let original = lookup(states, ip).map(|s| s.original.as_slice()).unwrap_or(&[]);
            outcome(classify(&r, original, cfg), anchors.len(), r.max_overlap)
        }
    }
}

/// Resolves every anomalous state. Outcomes come back sorted by IP.
pub fn resolve_all<E: Executor>(
    states: &[CandidateState],
    paths: &[CleanPath],
    index: &SpatialIndex,
    cfg: &ResolveConfig,
    exec: &E,
) -> Vec<ResolutionOutcome> {
    let targets: Vec<Ipv4Addr> = states
        .iter()
        .filter(|s| s.status == Status::Anomalous)
        .map(|s| s.ip)
        .collect();
    let mut through: BTreeMap<Ipv4Addr, Vec<usize>> =
        targets.iter().map(|&ip| (ip, Vec::new())).collect();
    for (i, p) in paths.iter().enumerate() {
        for h in &p.hops {
            if let Some(v) = through.get_mut(&h.ip) {
                v.push(i);
            }
        }
    }
    exec.map(&targets, |&ip| {
        let idx = &through[&ip];
        resolve_ip(ip, idx.iter().map(|&i| &paths[i]), states, index, cfg)
    })
}

/// Narrows false positives to their confirmed cluster. Status is left as tagged.
pub fn apply_outcomes(states: &mut [CandidateState], outcomes: &[ResolutionOutcome]) {
    for o in outcomes {
        if let Verdict::FalsePositive(c) = &o.verdict {
            if let Ok(i) = states.binary_search_by(|s| s.ip.cmp(&o.ip)) {
                let s = &mut states[i];
                if let Some(k) = s.candidates.iter().position(|x| x.cluster_id == c.cluster_id) {
                    s.candidates = alloc::vec![s.candidates[k].clone()];
                    s.scores = alloc::vec![s.scores[k]];
                } else {
                    s.candidates = alloc::vec![c.clone()];
                    s.scores = alloc::vec![crate::refine::CandidateScore::UNSCORED];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::CityPolygon;
    use crate::geo::destination;
    use crate::index::linear_overlaps;
    use crate::path::Hop;
    use alloc::string::ToString;
    use alloc::vec;
    use proptest::prelude::*;

    fn ip(n: u8) -> Ipv4Addr {
        Ipv4Addr::new(30, 0, 0, n)
    }

    fn cluster(id: u32, p: GeoPoint, country: &str) -> CityCluster {
        CityCluster {
            cluster_id: id,
            centroid: p,
            city: String::new(),
            country: country.to_string(),
            supporting_sources: BTreeSet::from(["db".to_string()]),
            record_count: 1,
        }
    }

    fn origin() -> GeoPoint {
        GeoPoint { lat: 10.0, lon: 10.0 }
    }

    fn state(n: u8, status: Status, cands: usize) -> CandidateState {
        let mut s = CandidateState::new(
            ip(n),
            (0..cands).map(|i| cluster(i as u32, origin(), "FR")).collect(),
        );
        s.status = status;
        s
    }

    fn path(hops: &[(u8, f64)]) -> CleanPath {
        CleanPath {
            path_id: "p".into(),
            hops: hops.iter().map(|&(n, rtt_ms)| Hop { ip: ip(n), rtt_ms }).collect(),
        }
    }

    fn agg(n: u8, country: &str) -> AggregatedAnchor {
        AggregatedAnchor {
            anchor_ip: Ipv4Addr::from(u32::from(ip(0)) + n as u32),
            median_delta_ms: 0.0,
            median_anchor_rtt_ms: 0.0,
            location: origin(),
            country: country.to_string(),
            count: 1,
        }
    }

    fn many(country_counts: &[(&str, usize)]) -> Vec<AggregatedAnchor> {
        let mut v = Vec::new();
        let mut n = 0u32;
        for &(c, k) in country_counts {
            for _ in 0..k {
                let mut a = agg(0, c);
                a.anchor_ip = Ipv4Addr::from(0x0a00_0000 + n);
                n += 1;
                v.push(a);
            }
        }
        v
    }

    #[test]
    fn picks_smaller_gap() {
        // X(10) -> A(12) -> Y(30); X is 2 ms away, Y 18 ms
        let states = vec![
            state(1, Status::Active, 1),
            state(2, Status::Anomalous, 1),
            state(3, Status::Active, 1),
        ];
        let obs = select_anchors(ip(2), [&path(&[(1, 10.0), (2, 12.0), (3, 30.0)])], &states);
        assert_eq!(obs.len(), 1);
        assert_eq!(obs[0].anchor_ip, ip(1));
        assert_eq!(obs[0].delta_rtt_ms, 2.0);
        assert_eq!(obs[0].anchor_rtt_ms, 10.0);
    }

    #[test]
    fn ties_go_to_preceding_side() {
        let states = vec![
            state(1, Status::Active, 1),
            state(2, Status::Anomalous, 1),
            state(3, Status::Active, 1),
        ];
        let obs = select_anchors(ip(2), [&path(&[(1, 10.0), (2, 12.0), (3, 14.0)])], &states);
        assert_eq!(obs[0].anchor_ip, ip(1));
    }

    #[test]
    fn skips_non_anchors_and_uses_far_side() {
        // hop 1 anomalous, hop 3 has two candidates, hop 5 unknown: only hop 4 qualifies
        let states = vec![
            state(1, Status::Anomalous, 1),
            state(2, Status::Anomalous, 1),
            state(3, Status::Active, 2),
            state(4, Status::Active, 1),
        ];
        let p = path(&[(1, 5.0), (2, 12.0), (3, 13.0), (4, 30.0), (5, 31.0)]);
        let obs = select_anchors(ip(2), [&p], &states);
        assert_eq!(obs.len(), 1);
        assert_eq!(obs[0].anchor_ip, ip(4));
        assert_eq!(obs[0].delta_rtt_ms, -18.0);
    }

    #[test]
    fn no_anchor_contributes_nothing() {
        let states = vec![state(1, Status::Anomalous, 1), state(2, Status::Anomalous, 1)];
        assert!(select_anchors(ip(2), [&path(&[(1, 1.0), (2, 2.0)])], &states).is_empty());
    }

    fn obs(anchor: u8, delta: f64, rtt: f64) -> AnchorObservation {
        AnchorObservation {
            anomalous_ip: ip(100),
            anchor_ip: ip(anchor),
            anchor_location: origin(),
            anchor_country: "FR".into(),
            delta_rtt_ms: delta,
            anchor_rtt_ms: rtt,
        }
    }

    #[test]
    fn medians_damp_outliers() {
        let a = aggregate_medians(&[obs(1, 2.0, 10.0), obs(1, 4.0, 11.0), obs(1, 100.0, 12.0)]);
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].median_delta_ms, 4.0);
        assert_eq!(a[0].median_anchor_rtt_ms, 11.0);
        assert_eq!(a[0].count, 3);
        let b = aggregate_medians(&[obs(1, 2.0, 1.0), obs(1, 4.0, 1.0)]);
        assert_eq!(b[0].median_delta_ms, 3.0);
    }

    #[test]
    fn country_filter_examples() {
        let cfg = ResolveConfig::default();
        assert!(mpls_country_filter(&many(&[("US", 10), ("DE", 10)]), &cfg));
        assert!(!mpls_country_filter(&many(&[("FR", 20)]), &cfg));
        assert!(!mpls_country_filter(&many(&[("FR", 96), ("GB", 4)]), &cfg));
        assert!(mpls_country_filter(&many(&[("FR", 95), ("GB", 5)]), &cfg));
    }

    #[test]
    fn buffer_examples() {
        let cfg = ResolveConfig::default();
        let mut a = agg(1, "FR");
        a.median_anchor_rtt_ms = 10.0;
        assert_eq!(buffer_radius_km(&a, &cfg), 100.0);
        a.median_delta_ms = 10.0;
        a.median_anchor_rtt_ms = 50.0;
        assert_eq!(buffer_radius_km(&a, &cfg), 1500.0);
        a.median_delta_ms = 0.0;
        a.median_anchor_rtt_ms = 0.0;
        assert_eq!(buffer_radius_km(&a, &cfg), 20.0);
        a.median_delta_ms = -10.0;
        a.median_anchor_rtt_ms = 50.0;
        assert_eq!(buffer_radius_km(&a, &cfg), 1500.0);
    }

    fn poly(id: u32, p: GeoPoint) -> CityPolygon {
        CityPolygon {
            polygon_id: id,
            name: alloc::format!("c{id}"),
            country: "FR".into(),
            centroid: p,
            radius_km: 20.0,
        }
    }

    fn buf(center: GeoPoint, r: f64, n: u8) -> BufferRegion {
        BufferRegion { center, radius_km: r, anchor_ip: ip(n) }
    }

    /// Brute force: count of buffers intersecting each polygon.
    fn oracle_counts(buffers: &[BufferRegion], cat: &[CityPolygon]) -> (usize, Vec<u32>) {
        let counts: Vec<usize> = cat
            .iter()
            .map(|p| {
                buffers
                    .iter()
                    .filter(|b| haversine_km(b.center, p.centroid) <= b.radius_km + p.radius_km)
                    .count()
            })
            .collect();
        let max = counts.iter().copied().max().unwrap_or(0);
        let ids = cat
            .iter()
            .zip(&counts)
            .filter(|(_, &c)| c == max && max > 0)
            .map(|(p, _)| p.polygon_id)
            .collect();
        (max, ids)
    }

    #[test]
    fn max_overlap_polygon_wins() {
        let p = origin();
        let q = destination(p, 90.0, 400.0);
        let r = destination(p, 270.0, 400.0);
        let cat = vec![poly(0, p), poly(1, q), poly(2, r)];
        let index = SpatialIndex::build(cat.clone());
        let buffers = vec![
            buf(destination(p, 0.0, 100.0), 150.0, 1),
            buf(destination(p, 90.0, 200.0), 250.0, 2),
            buf(destination(p, 270.0, 200.0), 250.0, 3),
        ];
        let (max, ids) = oracle_counts(&buffers, &cat);
        assert_eq!((max, ids.clone()), (3, vec![0]));
        assert_eq!(max_overlap_polygons(&buffers, &index), (max, ids));
        let got = resolve_location(&buffers, &index, &ResolveConfig::default()).unwrap();
        assert_eq!(got.polygon_id, 0);
        assert_eq!(got.point, p);
        assert_eq!(got.max_overlap, 3);
    }

    #[test]
    fn close_ties_merge() {
        let p = origin();
        let q = destination(p, 90.0, 15.0);
        assert!(haversine_km(p, q) <= 20.0);
        let cat = vec![poly(0, p), poly(1, q)];
        let index = SpatialIndex::build(cat);
        let buffers = vec![buf(p, 100.0, 1), buf(q, 100.0, 2)];
        let got = resolve_location(&buffers, &index, &ResolveConfig::default()).unwrap();
        let mean = GeoPoint::mean([p, q]).unwrap();
        assert_eq!(got.point, mean);
        assert_eq!(got.max_overlap, 2);
    }

    #[test]
    fn ties_merge_after_escalation() {
        let p = origin();
        let q = destination(p, 90.0, 70.0);
        let index = SpatialIndex::build(vec![poly(0, p), poly(1, q)]);
        let buffers = vec![buf(p, 100.0, 1), buf(q, 100.0, 2)];
        assert!(resolve_location(&buffers, &index, &ResolveConfig::default()).is_ok());
    }

    #[test]
    fn far_ties_are_unresolvable() {
        let p = origin();
        let q = destination(p, 90.0, 500.0);
        let index = SpatialIndex::build(vec![poly(0, p), poly(1, q)]);
        let buffers = vec![buf(p, 600.0, 1), buf(q, 600.0, 2)];
        assert_eq!(
            resolve_location(&buffers, &index, &ResolveConfig::default()),
            Err(Unresolvable { max_overlap: 2 })
        );
    }

    #[test]
    fn too_few_buffers() {
        let index = SpatialIndex::build(vec![poly(0, origin())]);
        let r = resolve_location(&[buf(origin(), 50.0, 1)], &index, &ResolveConfig::default());
        assert!(r.is_err());
    }

    fn resolved_at(p: GeoPoint) -> Resolved {
        Resolved { point: p, polygon_id: 7, max_overlap: 2 }
    }

    #[test]
    fn classify_examples() {
        let cfg = ResolveConfig::default();
        let c = cluster(3, origin(), "FR");
        let near = destination(origin(), 10.0, 5.0);
        assert_eq!(classify(&resolved_at(near), std::slice::from_ref(&c), &cfg), Verdict::FalsePositive(c.clone()));
        let far = destination(origin(), 10.0, 1500.0);
        assert!(matches!(
            classify(&resolved_at(far), std::slice::from_ref(&c), &cfg),
            Verdict::InterfaceAffected { polygon_id: 7, .. }
        ));
        // exactly on the boundary, up to the rounding of destination()
        let edge = destination(origin(), 10.0, 20.0);
        let d = haversine_km(edge, origin());
        let cfg_edge = ResolveConfig { match_radius_km: d, ..cfg };
        assert_eq!(classify(&resolved_at(edge), std::slice::from_ref(&c), &cfg_edge), Verdict::FalsePositive(c));
    }

    #[test]
    fn end_to_end_single_ip() {
        // anchors in one city at 0 ms gap -> resolved to that city -> matches DB -> false positive
        let cat = vec![poly(0, origin()), poly(1, destination(origin(), 0.0, 800.0))];
        let index = SpatialIndex::build(cat);
        let mut states = vec![
            state(1, Status::Active, 1),
            state(2, Status::Anomalous, 1),
            state(3, Status::Active, 1),
        ];
        states[1].original = vec![cluster(0, origin(), "FR")];
        let paths = vec![path(&[(1, 1.0), (2, 1.0), (3, 1.1)]), path(&[(1, 0.5), (2, 1.0), (3, 1.0)])];
        let o = resolve_ip(ip(2), &paths, &states, &index, &ResolveConfig::default());
        assert_eq!(o.anchor_count, 2);
        assert!(matches!(o.verdict, Verdict::FalsePositive(_)));

        states[1].original = vec![cluster(0, destination(origin(), 0.0, 800.0), "FR")];
        let o = resolve_ip(ip(2), &paths, &states, &index, &ResolveConfig::default());
        assert!(matches!(o.verdict, Verdict::InterfaceAffected { polygon_id: 0, .. }));
    }

    proptest! {
        #[test]
        fn duplicate_observations_do_not_change_country_verdict(
            counts in prop::collection::vec(1usize..30, 1..4),
            dup in 1usize..20,
        ) {
            let cfg = ResolveConfig::default();
            let names = ["FR", "GB", "DE", "US"];
            let spec: Vec<(&str, usize)> = counts.iter().enumerate().map(|(i, &c)| (names[i], c)).collect();
            let base = many(&spec);
            let mut observations: Vec<AnchorObservation> = base
                .iter()
                .map(|a| AnchorObservation {
                    anomalous_ip: ip(1),
                    anchor_ip: a.anchor_ip,
                    anchor_location: a.location,
                    anchor_country: a.country.clone(),
                    delta_rtt_ms: 1.0,
                    anchor_rtt_ms: 1.0,
                })
                .collect();
            let before = mpls_country_filter(&aggregate_medians(&observations), &cfg);
            for _ in 0..dup {
                observations.push(observations[0].clone());
            }
            prop_assert_eq!(before, mpls_country_filter(&aggregate_medians(&observations), &cfg));
        }

        #[test]
        fn max_overlap_matches_brute_force(
            polys in prop::collection::vec((-30.0f64..30.0, -30.0f64..30.0, 5.0f64..60.0), 1..40),
            bufs in prop::collection::vec((-30.0f64..30.0, -30.0f64..30.0, 20.0f64..2000.0), 1..8),
        ) {
            let cat: Vec<CityPolygon> = polys
                .iter()
                .enumerate()
                .map(|(i, &(lat, lon, r))| CityPolygon { radius_km: r, ..poly(i as u32, GeoPoint { lat, lon }) })
                .collect();
            let buffers: Vec<BufferRegion> = bufs
                .iter()
                .enumerate()
                .map(|(i, &(lat, lon, r))| buf(GeoPoint { lat, lon }, r, i as u8))
                .collect();
            let index = SpatialIndex::build(cat.clone());
            prop_assert_eq!(max_overlap_polygons(&buffers, &index), oracle_counts(&buffers, &cat));
            for b in &buffers {
                prop_assert_eq!(index.query_overlaps(b.center, b.radius_km), linear_overlaps(&cat, b.center, b.radius_km));
            }
        }

        #[test]
        fn classify_ignores_candidate_order(
            offsets in prop::collection::vec((0.0f64..360.0, 0.0f64..60.0), 1..6),
            rot in 0usize..6,
        ) {
            let cfg = ResolveConfig::default();
            let cands: Vec<CityCluster> = offsets
                .iter()
                .enumerate()
                .map(|(i, &(b, d))| cluster(i as u32, destination(origin(), b, d), "FR"))
                .collect();
            let mut rotated = cands.clone();
            let k = rot % rotated.len();
            rotated.rotate_left(k);
            rotated.reverse();
            let r = resolved_at(origin());
            prop_assert_eq!(classify(&r, &cands, &cfg), classify(&r, &rotated, &cfg));
        }
    }
}
