//! Aggregate statistics over a finished analysis: affected-element summary,
//! cluster-count histogram against a speed-of-light baseline, distance from the
//! database consensus to resolved locations, and per-country deltas.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::net::Ipv4Addr;

use crate::analysis::initial_states;
use crate::cluster::{cluster_candidates, CityCluster, GeoRecord};
use crate::geo::{haversine_km, GeoPoint};
use crate::index::SpatialIndex;
use crate::path::CleanPath;
use crate::refine::{extract_pairs, rtt_budget_km, CandidateState, NeighborPair, RefineConfig};
use crate::resolve::{ResolutionOutcome, Verdict};

/// Distances below this count as agreeing with the database consensus.
pub const NEAR_CONSENSUS_KM: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Counts {
    pub ips: usize,
    pub links: usize,
    pub traceroutes: usize,
}

impl Counts {
    /// Element-wise percentages of `of`, `None` where `of` is zero.
    pub fn percent_of(&self, of: &Counts) -> [Option<f64>; 3] {
        let pct = |n: usize, d: usize| (d > 0).then(|| 100.0 * n as f64 / d as f64);
        [pct(self.ips, of.ips), pct(self.links, of.links), pct(self.traceroutes, of.traceroutes)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Category {
    MplsAffected,
    InterfaceAffected,
    TotalAffected,
    Corrected,
}

impl Category {
    pub const ALL: [Category; 4] =
        [Category::MplsAffected, Category::InterfaceAffected, Category::TotalAffected, Category::Corrected];

    pub fn label(self) -> &'static str {
        match self {
            Category::MplsAffected => "mpls_affected",
            Category::InterfaceAffected => "interface_affected",
            Category::TotalAffected => "total_affected",
            Category::Corrected => "corrected",
        }
    }
}

/// Affected IPs, links and traceroutes by anomaly kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SummaryTable {
    pub totals: Counts,
    pub mpls: Counts,
    pub interface: Counts,
    /// Elements involving an anomalous IP of either kind, each counted once.
    pub total_affected: Counts,
    /// Elements whose anomalous IPs are all interface-affected.
    pub corrected: Counts,
}

impl SummaryTable {
    pub fn counts(&self, c: Category) -> Counts {
        match c {
            Category::MplsAffected => self.mpls,
            Category::InterfaceAffected => self.interface,
            Category::TotalAffected => self.total_affected,
            Category::Corrected => self.corrected,
        }
    }

    /// Affected rows are relative to all elements, the corrected row to the affected ones.
    pub fn percentages(&self, c: Category) -> [Option<f64>; 3] {
        let of = match c {
            Category::Corrected => &self.total_affected,
            _ => &self.totals,
        };
        self.counts(c).percent_of(of)
    }
}

#[derive(Clone, Copy, Default)]
struct Kinds {
    mpls: bool,
    interface: bool,
}

impl Kinds {
    fn add(&mut self, k: Kinds) {
        self.mpls |= k.mpls;
        self.interface |= k.interface;
    }

    fn tally(self, t: &mut SummaryTable, pick: fn(&mut Counts) -> &mut usize) {
        *pick(&mut t.mpls) += self.mpls as usize;
        *pick(&mut t.interface) += self.interface as usize;
        *pick(&mut t.total_affected) += (self.mpls || self.interface) as usize;
        *pick(&mut t.corrected) += (self.interface && !self.mpls) as usize;
    }
}

/// Counts affected elements over every IP, unordered adjacent pair and
/// traceroute in `paths`. False positives affect nothing.
pub fn summarize(outcomes: &[ResolutionOutcome], paths: &[CleanPath]) -> SummaryTable {
    let kind: BTreeMap<Ipv4Addr, Kinds> = outcomes
        .iter()
        .filter_map(|o| match o.verdict {
            Verdict::MplsAffected(_) => Some((o.ip, Kinds { mpls: true, interface: false })),
            Verdict::InterfaceAffected { .. } => Some((o.ip, Kinds { mpls: false, interface: true })),
            Verdict::FalsePositive(_) => None,
        })
        .collect();
    let of = |ip: &Ipv4Addr| kind.get(ip).copied().unwrap_or_default();

    let mut ips = BTreeSet::new();
    let mut links = BTreeSet::new();
    let mut t = SummaryTable::default();
    for p in paths {
        let mut k = Kinds::default();
        for h in &p.hops {
            ips.insert(h.ip);
            k.add(of(&h.ip));
        }
        for w in p.hops.windows(2) {
            if w[0].ip != w[1].ip {
                links.insert((w[0].ip.min(w[1].ip), w[0].ip.max(w[1].ip)));
            }
        }
        k.tally(&mut t, |c| &mut c.traceroutes);
    }
    for ip in &ips {
        of(ip).tally(&mut t, |c| &mut c.ips);
    }
    for (a, b) in &links {
        let mut k = of(a);
        k.add(of(b));
        k.tally(&mut t, |c| &mut c.links);
    }
    t.totals = Counts { ips: ips.len(), links: links.len(), traceroutes: paths.len() };
    t
}

/// Single-pass speed-of-light filter: a cluster survives if, against every
/// neighbor pair, each observation leaves some neighbor candidate within the
/// RTT budget. Neighbors without candidates impose nothing. Every state stays active.
pub fn sol_filter(states: &[CandidateState], pairs: &[NeighborPair], cfg: &RefineConfig) -> Vec<CandidateState> {
    let pos: BTreeMap<Ipv4Addr, usize> = states.iter().enumerate().map(|(i, s)| (s.ip, i)).collect();
    // per state: (neighbor, tightest budget over the pair's observations)
    let mut limits: Vec<Vec<(usize, f64)>> = alloc::vec![Vec::new(); states.len()];
    for p in pairs {
        let (Some(&a), Some(&b)) = (pos.get(&p.ip_a), pos.get(&p.ip_b)) else {
            continue;
        };
        let tightest = p
            .observations
            .iter()
            .map(|o| rtt_budget_km(o.rtt_a_ms, o.rtt_b_ms, cfg))
            .fold(f64::INFINITY, f64::min);
        limits[a].push((b, tightest));
        limits[b].push((a, tightest));
    }
    states
        .iter()
        .zip(&limits)
        .map(|(s, lim)| {
            let keep: Vec<usize> = (0..s.candidates.len())
                .filter(|&k| {
                    let here = s.candidates[k].centroid;
                    lim.iter().all(|&(n, budget)| {
                        states[n].candidates.iter().any(|c| haversine_km(here, c.centroid) <= budget)
                    })
                })
                .collect();
            let mut out = CandidateState::new(s.ip, keep.iter().map(|&k| s.candidates[k].clone()).collect());
            out.original = s.original.clone();
            out
        })
        .collect()
}

/// The speed-of-light baseline over the same IPs and candidates the pipeline starts from.
pub fn sol_baseline(
    paths: &[CleanPath],
    snapshot: &BTreeMap<Ipv4Addr, Vec<GeoRecord>>,
    merge_radius_km: f64,
    cfg: &RefineConfig,
) -> Vec<CandidateState> {
    let states = initial_states(paths, snapshot, merge_radius_km);
    sol_filter(&states, &extract_pairs(paths), cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    Refined,
    SolBaseline,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Refined => "refined",
            Method::SolBaseline => "sol_baseline",
        }
    }
}

/// Cluster counts are bucketed as 0, 1, 2, 3 and 4-or-more.
pub const HISTOGRAM_BUCKETS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramRow {
    pub method: Method,
    /// Number of clusters; the last bucket means this many or more.
    pub clusters: usize,
    pub ips: usize,
    pub fraction: f64,
}

fn histogram(method: Method, states: &[CandidateState]) -> impl Iterator<Item = HistogramRow> {
    let mut counts = [0usize; HISTOGRAM_BUCKETS];
    for s in states {
        counts[s.candidates.len().min(HISTOGRAM_BUCKETS - 1)] += 1;
    }
    let n = states.len();
    (0..HISTOGRAM_BUCKETS).map(move |b| HistogramRow {
        method,
        clusters: b,
        ips: counts[b],
        fraction: if n > 0 { counts[b] as f64 / n as f64 } else { 0.0 },
    })
}

pub fn cluster_histogram(states: &[CandidateState], baseline: &[CandidateState]) -> Vec<HistogramRow> {
    histogram(Method::Refined, states).chain(histogram(Method::SolBaseline, baseline)).collect()
}

/// Fraction of IPs with exactly one cluster.
pub fn single_cluster_fraction(rows: &[HistogramRow], method: Method) -> f64 {
    rows.iter().find(|r| r.method == method && r.clusters == 1).map_or(0.0, |r| r.fraction)
}

/// The cluster holding the most records. Ties go to the cluster nearest `near`.
pub fn majority_cluster(records: &[GeoRecord], merge_radius_km: f64, near: GeoPoint) -> Option<CityCluster> {
    cluster_candidates(records, merge_radius_km).into_iter().max_by(|a, b| {
        a.record_count
            .cmp(&b.record_count)
            .then_with(|| haversine_km(b.centroid, near).total_cmp(&haversine_km(a.centroid, near)))
            .then_with(|| b.cluster_id.cmp(&a.cluster_id))
    })
}

fn corrected(outcomes: &[ResolutionOutcome]) -> impl Iterator<Item = (Ipv4Addr, GeoPoint, u32)> + '_ {
    outcomes.iter().filter_map(|o| match o.verdict {
        Verdict::InterfaceAffected { resolved, polygon_id } => Some((o.ip, resolved, polygon_id)),
        _ => None,
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DistanceCdf {
    /// `(ip, km)` from the consensus location to the resolved one, ascending by distance then IP.
    pub distances: Vec<(Ipv4Addr, f64)>,
    /// Corrected IPs without database records, left out.
    pub missing: Vec<Ipv4Addr>,
}

impl DistanceCdf {
    /// Share of distances strictly below `km`, `None` when there are none.
    pub fn fraction_below(&self, km: f64) -> Option<f64> {
        let n = self.distances.len();
        (n > 0).then(|| self.distances.iter().filter(|d| d.1 < km).count() as f64 / n as f64)
    }
}

pub fn distance_cdf(
    outcomes: &[ResolutionOutcome],
    snapshot: &BTreeMap<Ipv4Addr, Vec<GeoRecord>>,
    merge_radius_km: f64,
) -> DistanceCdf {
    let mut cdf = DistanceCdf::default();
    for (ip, resolved, _) in corrected(outcomes) {
        match snapshot.get(&ip).and_then(|r| majority_cluster(r, merge_radius_km, resolved)) {
            Some(m) => cdf.distances.push((ip, haversine_km(m.centroid, resolved))),
            None => cdf.missing.push(ip),
        }
    }
    cdf.distances.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    cdf
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CountryDelta {
    /// Corrected IPs resolution places in each country.
    pub resolved: BTreeMap<String, usize>,
    /// Corrected IPs the database consensus places in each country.
    pub consensus: BTreeMap<String, usize>,
    /// Corrected IPs compared.
    pub compared: usize,
    /// Of those, the ones whose resolved country differs from the consensus.
    pub changed: usize,
    pub missing: Vec<Ipv4Addr>,
}

impl CountryDelta {
    /// Resolved count minus consensus count for every country either side mentions.
    pub fn deltas(&self) -> BTreeMap<String, i64> {
        let mut d: BTreeMap<String, i64> = BTreeMap::new();
        for (c, &n) in &self.resolved {
            *d.entry(c.clone()).or_insert(0) += n as i64;
        }
        for (c, &n) in &self.consensus {
            *d.entry(c.clone()).or_insert(0) -= n as i64;
        }
        d
    }

    pub fn changed_fraction(&self) -> Option<f64> {
        (self.compared > 0).then(|| self.changed as f64 / self.compared as f64)
    }
}

/// Negative deltas mean the databases put more IPs in that country than resolution did.
pub fn country_delta(
    outcomes: &[ResolutionOutcome],
    snapshot: &BTreeMap<Ipv4Addr, Vec<GeoRecord>>,
    index: &SpatialIndex,
    merge_radius_km: f64,
) -> CountryDelta {
    let mut out = CountryDelta::default();
    for (ip, resolved, polygon_id) in corrected(outcomes) {
        let consensus = snapshot.get(&ip).and_then(|r| majority_cluster(r, merge_radius_km, resolved));
        let (Some(m), Some(poly)) = (consensus, index.get(polygon_id)) else {
            out.missing.push(ip);
            continue;
        };
        let to = crate::cluster::normalize_country(&poly.country);
        *out.resolved.entry(to.clone()).or_insert(0) += 1;
        *out.consensus.entry(m.country.clone()).or_insert(0) += 1;
        out.compared += 1;
        out.changed += (to != m.country) as usize;
    }
    out
}
