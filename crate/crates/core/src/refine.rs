//! Iterative neighbor-based evaluation of geolocation candidates.
//!
//! Every IP keeps a set of city clusters. Each round scores every candidate by
//! checking, for every traceroute in which the IP sits next to a neighbor, whether
//! the distance to each of the neighbor's candidates fits inside the RTT budget.
//! Candidates that fall too far behind the best one are pruned and the round
//! repeats until no candidate set changes.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::net::Ipv4Addr;

use crate::cluster::CityCluster;
use crate::exec::Executor;
use crate::geo::{haversine_km, sol_km, GeoPoint};
use crate::path::CleanPath;
use crate::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RefineConfig {
    /// RTT slack as a fraction of the sum of both hops' RTTs.
    pub deviation_fraction: f64,
    /// Candidates scoring below this fraction of the best ratio are dropped.
    pub prune_fraction: f64,
    pub anomaly_ratio_threshold: f64,
    pub direction_threshold: f64,
    pub max_iterations: u32,
    /// Minimum number of evaluations before an IP may be tagged.
    pub min_observations: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            deviation_fraction: 0.10,
            prune_fraction: 0.90,
            anomaly_ratio_threshold: 0.5,
            direction_threshold: 0.5,
            max_iterations: 20,
            min_observations: 3,
        }
    }
}

fn unit_interval(name: &'static str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(ConfigError::OutOfRange(name))
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        unit_interval("deviation_fraction", self.deviation_fraction)?;
        unit_interval("prune_fraction", self.prune_fraction)?;
        unit_interval("anomaly_ratio_threshold", self.anomaly_ratio_threshold)?;
        unit_interval("direction_threshold", self.direction_threshold)?;
        if self.max_iterations == 0 {
            return Err(ConfigError::OutOfRange("max_iterations"));
        }
        Ok(())
    }
}

/// One traceroute's view of an adjacent pair. `rtt_a_ms` always belongs to the
/// numerically smaller address of the pair.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Observation {
    pub rtt_a_ms: f64,
    pub rtt_b_ms: f64,
    /// Whether `ip_a` came before `ip_b` in the path.
    pub a_first: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NeighborPair {
    pub ip_a: Ipv4Addr,
    pub ip_b: Ipv4Addr,
    pub observations: Vec<Observation>,
}

/// Collects one pair per unordered adjacent address pair, sorted by `(ip_a, ip_b)`.
pub fn extract_pairs<'a, I>(paths: I) -> Vec<NeighborPair>
where
    I: IntoIterator<Item = &'a CleanPath>,
{
    let mut map: BTreeMap<(Ipv4Addr, Ipv4Addr), Vec<Observation>> = BTreeMap::new();
    for path in paths {
        for w in path.hops.windows(2) {
            let (x, y) = (w[0], w[1]);
            if x.ip == y.ip {
                continue;
            }
            let obs = if x.ip < y.ip {
                Observation {
                    rtt_a_ms: x.rtt_ms,
                    rtt_b_ms: y.rtt_ms,
                    a_first: true,
                }
            } else {
                Observation {
                    rtt_a_ms: y.rtt_ms,
                    rtt_b_ms: x.rtt_ms,
                    a_first: false,
                }
            };
            map.entry((x.ip.min(y.ip), x.ip.max(y.ip)))
                .or_default()
                .push(obs);
        }
    }
    map.into_iter()
        .map(|((ip_a, ip_b), observations)| NeighborPair {
            ip_a,
            ip_b,
            observations,
        })
        .collect()
}

/// Largest distance, in km, two hops with these RTTs may be apart.
pub fn rtt_budget_km(rtt_a_ms: f64, rtt_b_ms: f64, cfg: &RefineConfig) -> f64 {
    sol_km((rtt_a_ms - rtt_b_ms).abs() + cfg.deviation_fraction * (rtt_a_ms + rtt_b_ms))
}

/// Whether two candidate locations are compatible with the observed RTTs.
pub fn pair_feasible(
    loc_a: GeoPoint,
    loc_b: GeoPoint,
    rtt_a_ms: f64,
    rtt_b_ms: f64,
    cfg: &RefineConfig,
) -> bool {
    haversine_km(loc_a, loc_b) <= rtt_budget_km(rtt_a_ms, rtt_b_ms, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Status {
    Active,
    Anomalous,
}

/// Score of one candidate from the most recent round.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CandidateScore {
    pub ratio: f64,
    /// Ratio over evaluations against preceding neighbors; `None` when there were none.
    pub prev_ratio: Option<f64>,
    pub next_ratio: Option<f64>,
    pub evaluations: u64,
}

impl CandidateScore {
    /// Score before any evidence has been seen.
    pub const UNSCORED: CandidateScore = CandidateScore {
        ratio: 1.0,
        prev_ratio: None,
        next_ratio: None,
        evaluations: 0,
    };
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CandidateState {
    pub ip: Ipv4Addr,
    /// Surviving candidates; `scores[i]` belongs to `candidates[i]`.
    pub candidates: Vec<CityCluster>,
    pub scores: Vec<CandidateScore>,
    /// Candidates as first loaded from the databases.
    pub original: Vec<CityCluster>,
    pub status: Status,
}

impl CandidateState {
    pub fn new(ip: Ipv4Addr, candidates: Vec<CityCluster>) -> Self {
        CandidateState {
            ip,
            scores: alloc::vec![CandidateScore::UNSCORED; candidates.len()],
            original: candidates.clone(),
            candidates,
            status: Status::Active,
        }
    }

    /// Index of the highest-ratio candidate; the earliest wins ties.
    pub fn best(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, s) in self.scores.iter().enumerate() {
            if best.is_none_or(|b| s.ratio > self.scores[b].ratio) {
                best = Some(i);
            }
        }
        best
    }

    pub fn ratio_of(&self, cluster_id: u32) -> Option<f64> {
        self.candidates
            .iter()
            .position(|c| c.cluster_id == cluster_id)
            .map(|i| self.scores[i].ratio)
    }

    /// The single surviving candidate of an active IP.
    pub fn anchor_cluster(&self) -> Option<&CityCluster> {
        match (self.status, self.candidates.as_slice()) {
            (Status::Active, [only]) => Some(only),
            _ => None,
        }
    }
}

/// Builds one state per IP that has at least one candidate, sorted by address.
pub fn init_states(clusters: BTreeMap<Ipv4Addr, Vec<CityCluster>>) -> Vec<CandidateState> {
    clusters
        .into_iter()
        .filter(|(_, c)| !c.is_empty())
        .map(|(ip, c)| CandidateState::new(ip, c))
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct Edge {
    neighbor: usize,
    pair: usize,
    /// Whether this endpoint is `ip_a` of the pair.
    is_a: bool,
}

/// Neighbor structure over a fixed list of states, with per-pair RTT budgets
/// sorted so feasible observations can be counted by binary search.
#[derive(Debug, Clone)]
pub struct Problem {
    edges: Vec<Vec<Edge>>,
    /// `[budgets where a preceded b, budgets where b preceded a]`, ascending.
    budgets: Vec<[Vec<f64>; 2]>,
}

impl Problem {
    /// `states` must be sorted by IP (as produced by [`init_states`]).
    pub fn new(states: &[CandidateState], pairs: &[NeighborPair], cfg: &RefineConfig) -> Self {
        let lookup = |ip: Ipv4Addr| states.binary_search_by(|s| s.ip.cmp(&ip)).ok();
        let mut edges = alloc::vec![Vec::new(); states.len()];
        let mut budgets = Vec::new();
        for p in pairs {
            let (Some(a), Some(b)) = (lookup(p.ip_a), lookup(p.ip_b)) else {
                continue;
            };
            if a == b || p.observations.is_empty() {
                continue;
            }
            let mut fwd = Vec::new();
            let mut rev = Vec::new();
            for o in &p.observations {
                let budget = rtt_budget_km(o.rtt_a_ms, o.rtt_b_ms, cfg);
                if o.a_first {
                    fwd.push(budget);
                } else {
                    rev.push(budget);
                }
            }
            fwd.sort_by(f64::total_cmp);
            rev.sort_by(f64::total_cmp);
            let idx = budgets.len();
            budgets.push([fwd, rev]);
            edges[a].push(Edge {
                neighbor: b,
                pair: idx,
                is_a: true,
            });
            edges[b].push(Edge {
                neighbor: a,
                pair: idx,
                is_a: false,
            });
        }
        Problem { edges, budgets }
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Number of distinct neighbors with candidates.
    pub fn degree(&self, state_index: usize) -> usize {
        self.edges[state_index].len()
    }

    /// Scores every candidate of `states[i]` against its neighbors' current sets.
    /// Returns `None` when no evaluation was possible.
    pub fn score_ip(&self, states: &[CandidateState], i: usize) -> Option<Vec<CandidateScore>> {
        let me = &states[i];
        let mut out = Vec::with_capacity(me.candidates.len());
        for cand in &me.candidates {
            let (mut ok_prev, mut n_prev, mut ok_next, mut n_next) = (0u64, 0u64, 0u64, 0u64);
            for e in &self.edges[i] {
                let [fwd, rev] = &self.budgets[e.pair];
                // fwd: a before b. For a, the neighbor follows.
                let (prev, next) = if e.is_a { (rev, fwd) } else { (fwd, rev) };
                for nc in &states[e.neighbor].candidates {
                    let d = haversine_km(cand.centroid, nc.centroid);
                    ok_prev += count_at_least(prev, d);
                    ok_next += count_at_least(next, d);
                    n_prev += prev.len() as u64;
                    n_next += next.len() as u64;
                }
            }
            let total = n_prev + n_next;
            if total == 0 {
                return None;
            }
            out.push(CandidateScore {
                ratio: (ok_prev + ok_next) as f64 / total as f64,
                prev_ratio: (n_prev > 0).then(|| ok_prev as f64 / n_prev as f64),
                next_ratio: (n_next > 0).then(|| ok_next as f64 / n_next as f64),
                evaluations: total,
            });
        }
        Some(out)
    }
}

fn count_at_least(sorted: &[f64], d: f64) -> u64 {
    (sorted.len() - sorted.partition_point(|&b| b < d)) as u64
}

/// One simultaneous scoring round: every IP is scored against the candidate
/// sets as they were at the start of the round.
pub fn score_iteration<E: Executor>(
    states: &[CandidateState],
    problem: &Problem,
    exec: &E,
) -> Vec<Option<Vec<CandidateScore>>> {
    let indices: Vec<usize> = (0..states.len()).collect();
    exec.map(&indices, |&i| problem.score_ip(states, i))
}

/// Drops candidates whose ratio is below `prune_fraction` of the best ratio.
/// Keeps at least one candidate and does nothing when the best ratio is zero.
/// Returns whether the candidate set changed.
pub fn prune(state: &mut CandidateState, cfg: &RefineConfig) -> bool {
    let best = state.scores.iter().map(|s| s.ratio).fold(0.0f64, f64::max);
    if best <= 0.0 || state.candidates.len() <= 1 {
        return false;
    }
    let cutoff = cfg.prune_fraction * best;
    let keep: Vec<bool> = state.scores.iter().map(|s| s.ratio >= cutoff).collect();
    if keep.iter().all(|&k| k) {
        return false;
    }
    let mut idx = 0;
    state.candidates.retain(|_| {
        idx += 1;
        keep[idx - 1]
    });
    let mut idx = 0;
    state.scores.retain(|_| {
        idx += 1;
        keep[idx - 1]
    });
    true
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IterationReport {
    pub iterations: u32,
    pub converged: bool,
    /// Number of IPs whose candidate set changed, per round.
    pub changed_per_iteration: Vec<usize>,
}

/// Runs score + prune rounds to a fixed point of the candidate sets, or until
/// `max_iterations`. `states` must be sorted by IP.
pub fn iterate<E: Executor>(
    states: &mut [CandidateState],
    pairs: &[NeighborPair],
    cfg: &RefineConfig,
    exec: &E,
) -> IterationReport {
    let problem = Problem::new(states, pairs, cfg);
    iterate_problem(states, &problem, cfg, exec)
}

pub fn iterate_problem<E: Executor>(
    states: &mut [CandidateState],
    problem: &Problem,
    cfg: &RefineConfig,
    exec: &E,
) -> IterationReport {
    let mut report = IterationReport {
        iterations: 0,
        converged: false,
        changed_per_iteration: Vec::new(),
    };
    while report.iterations < cfg.max_iterations {
        let scores = score_iteration(states, problem, exec);
        let mut changed = 0;
        for (state, s) in states.iter_mut().zip(scores) {
            if let Some(s) = s {
                state.scores = s;
            }
            if prune(state, cfg) {
                changed += 1;
            }
        }
        report.iterations += 1;
        report.changed_per_iteration.push(changed);
        if changed == 0 {
            report.converged = true;
            break;
        }
    }
    report
}

/// Whether a converged state should be flagged, per the low-ratio and one-sided rules.
pub fn is_anomalous(state: &CandidateState, cfg: &RefineConfig) -> bool {
    let Some(b) = state.best() else {
        return false;
    };
    let s = &state.scores[b];
    if s.evaluations < cfg.min_observations {
        return false;
    }
    let low = |r: Option<f64>| r.is_some_and(|r| r < cfg.direction_threshold);
    s.ratio < cfg.anomaly_ratio_threshold || (low(s.prev_ratio) != low(s.next_ratio))
}

pub fn tag_anomalies(states: &mut [CandidateState], cfg: &RefineConfig) {
    for s in states.iter_mut() {
        s.status = if is_anomalous(s, cfg) {
            Status::Anomalous
        } else {
            Status::Active
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Sequential;
    use crate::geo::destination;
    use crate::path::Hop;
    use alloc::collections::BTreeSet;
    use alloc::string::{String, ToString};
    use alloc::vec;
    use proptest::prelude::*;

    fn ip(n: u8) -> Ipv4Addr {
        Ipv4Addr::new(20, 0, 0, n)
    }

    fn cluster(id: u32, p: GeoPoint) -> CityCluster {
        CityCluster {
            cluster_id: id,
            centroid: p,
            city: String::new(),
            country: "ZZ".to_string(),
            supporting_sources: BTreeSet::from(["db".to_string()]),
            record_count: 1,
        }
    }

    fn path(id: &str, hops: &[(u8, f64)]) -> CleanPath {
        CleanPath {
            path_id: id.to_string(),
            hops: hops
                .iter()
                .map(|&(n, rtt_ms)| Hop { ip: ip(n), rtt_ms })
                .collect(),
        }
    }

    fn origin() -> GeoPoint {
        GeoPoint::new(0.0, 0.0).unwrap()
    }

    fn east(km: f64) -> GeoPoint {
        destination(origin(), 90.0, km)
    }

    #[test]
    fn pairs_from_single_path() {
        let pairs = extract_pairs(&[path("p", &[(1, 1.0), (2, 2.0), (3, 3.0)])]);
        let keys: Vec<_> = pairs.iter().map(|p| (p.ip_a, p.ip_b)).collect();
        assert_eq!(keys, vec![(ip(1), ip(2)), (ip(2), ip(3))]);
    }

    #[test]
    fn pairs_aggregate_across_paths() {
        let paths: Vec<_> = (0..100).map(|i| path("p", &[(1, i as f64), (2, 5.0)])).collect();
        let pairs = extract_pairs(&paths);
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].observations.len(), 100);
    }

    #[test]
    fn pairs_canonicalize_direction() {
        let paths = [
            path("p1", &[(1, 10.0), (2, 12.0)]),
            path("p2", &[(2, 3.0), (1, 7.0)]),
            path("p3", &[(9, 1.0), (2, 4.0), (1, 6.0)]),
        ];
        let pairs = extract_pairs(&paths);
        let ab = pairs.iter().find(|p| p.ip_a == ip(1) && p.ip_b == ip(2)).unwrap();
        // hand-derived: rtt_a always belongs to .1, a_first follows path order
        assert_eq!(
            ab.observations,
            vec![
                Observation { rtt_a_ms: 10.0, rtt_b_ms: 12.0, a_first: true },
                Observation { rtt_a_ms: 7.0, rtt_b_ms: 3.0, a_first: false },
                Observation { rtt_a_ms: 6.0, rtt_b_ms: 4.0, a_first: false },
            ]
        );
    }

    #[test]
    fn feasibility_examples() {
        let cfg = RefineConfig::default();
        assert!(pair_feasible(origin(), origin(), 0.0, 500.0, &cfg));
        let a = origin();
        let b = east(1000.0);
        assert!((haversine_km(a, b) - 1000.0).abs() < 1e-6);
        // budget = |50-52| + 0.1*102 = 12.2 ms -> 1220 km
        assert!((rtt_budget_km(50.0, 52.0, &cfg) - 1220.0).abs() < 1e-9);
        assert!(pair_feasible(a, b, 50.0, 52.0, &cfg));
        // budget = 2 + 2.2 = 4.2 ms -> 420 km
        assert!((rtt_budget_km(10.0, 12.0, &cfg) - 420.0).abs() < 1e-9);
        assert!(!pair_feasible(a, b, 10.0, 12.0, &cfg));
    }

    fn run_round(states: &mut [CandidateState], pairs: &[NeighborPair]) {
        let cfg = RefineConfig::default();
        let problem = Problem::new(states, pairs, &cfg);
        let scores = score_iteration(states, &problem, &Sequential);
        for (s, sc) in states.iter_mut().zip(scores) {
            if let Some(sc) = sc {
                s.scores = sc;
            }
        }
    }

    #[test]
    fn single_feasible_observation_scores_one() {
        let mut states = vec![
            CandidateState::new(ip(1), vec![cluster(0, origin())]),
            CandidateState::new(ip(2), vec![cluster(0, east(100.0))]),
        ];
        let pairs = extract_pairs(&[path("p", &[(1, 1.0), (2, 3.0)])]);
        run_round(&mut states, &pairs);
        assert_eq!(states[0].scores[0].ratio, 1.0);
        assert_eq!(states[0].scores[0].evaluations, 1);
        assert_eq!(states[0].scores[0].next_ratio, Some(1.0));
        assert_eq!(states[0].scores[0].prev_ratio, None);
        assert_eq!(states[1].scores[0].prev_ratio, Some(1.0));
    }

    #[test]
    fn seven_of_ten_feasible() {
        // neighbor candidates at 0 km and 800 km; five observations whose budgets
        // are 100, 300, 500, 1000, 2000 km. Near candidate: 5/5, far: 2/5.
        let budgets_ms = [(0.0, 1.0), (0.0, 3.0), (0.0, 5.0), (0.0, 10.0), (0.0, 20.0)];
        let mut cfg = RefineConfig::default();
        cfg.deviation_fraction = 1e-12;
        let paths: Vec<_> = budgets_ms
            .iter()
            .map(|&(a, b)| path("p", &[(1, a), (2, b)]))
            .collect();
        let states = vec![
            CandidateState::new(ip(1), vec![cluster(0, origin())]),
            CandidateState::new(ip(2), vec![cluster(0, origin()), cluster(1, east(800.0))]),
        ];
        let pairs = extract_pairs(&paths);
        let problem = Problem::new(&states, &pairs, &cfg);
        let s = problem.score_ip(&states, 0).unwrap();
        assert_eq!(s[0].evaluations, 10);
        assert!((s[0].ratio - 0.7).abs() < 1e-12);
    }

    #[test]
    fn ip_without_neighbors_carries_scores_over() {
        let mut states = vec![CandidateState::new(ip(1), vec![cluster(0, origin())])];
        states[0].scores[0].ratio = 0.3;
        let pairs = extract_pairs(&[path("p", &[(1, 1.0), (7, 3.0)])]);
        run_round(&mut states, &pairs);
        assert_eq!(states[0].scores[0].ratio, 0.3);
    }

    fn with_ratios(ratios: &[f64]) -> CandidateState {
        let mut s = CandidateState::new(
            ip(1),
            ratios.iter().enumerate().map(|(i, _)| cluster(i as u32, origin())).collect(),
        );
        for (sc, &r) in s.scores.iter_mut().zip(ratios) {
            sc.ratio = r;
        }
        s
    }

    #[test]
    fn prune_examples() {
        let cfg = RefineConfig::default();
        let mut s = with_ratios(&[0.9, 0.85, 0.5]);
        assert!(prune(&mut s, &cfg));
        assert_eq!(s.scores.iter().map(|s| s.ratio).collect::<Vec<_>>(), vec![0.9, 0.85]);

        let mut s = with_ratios(&[0.0, 0.0, 0.0]);
        assert!(!prune(&mut s, &cfg));
        assert_eq!(s.candidates.len(), 3);

        let mut s = with_ratios(&[0.2]);
        assert!(!prune(&mut s, &cfg));
        assert_eq!(s.candidates.len(), 1);
    }

    /// A at 0 km, B at 300 km, C at 600 km on the equator, RTTs consistent with
    /// those positions. B has a second candidate 3000 km away.
    fn chain_fixture() -> (Vec<CandidateState>, Vec<NeighborPair>) {
        let states = vec![
            CandidateState::new(ip(1), vec![cluster(0, origin())]),
            CandidateState::new(
                ip(2),
                vec![cluster(0, east(300.0)), cluster(1, east(3300.0))],
            ),
            CandidateState::new(ip(3), vec![cluster(0, east(600.0))]),
        ];
        let paths: Vec<_> = (0..4)
            .map(|_| path("p", &[(1, 0.0), (2, 3.0), (3, 6.0)]))
            .collect();
        (states, extract_pairs(&paths))
    }

    #[test]
    fn chain_converges_to_single_candidate() {
        let cfg = RefineConfig::default();
        let (mut states, pairs) = chain_fixture();

        // exhaustive check of which B candidates are consistent with both neighbors
        let consistent: Vec<u32> = states[1]
            .candidates
            .iter()
            .filter(|c| {
                pair_feasible(origin(), c.centroid, 0.0, 3.0, &cfg)
                    && pair_feasible(c.centroid, east(600.0), 3.0, 6.0, &cfg)
            })
            .map(|c| c.cluster_id)
            .collect();
        assert_eq!(consistent, vec![0]);

        let report = iterate(&mut states, &pairs, &cfg, &Sequential);
        assert!(report.converged);
        assert!(report.iterations <= 2);
        assert_eq!(
            states[1].candidates.iter().map(|c| c.cluster_id).collect::<Vec<_>>(),
            consistent
        );
    }

    #[test]
    fn stable_states_converge_in_one_round() {
        let cfg = RefineConfig::default();
        let (mut states, pairs) = chain_fixture();
        iterate(&mut states, &pairs, &cfg, &Sequential);
        let report = iterate(&mut states, &pairs, &cfg, &Sequential);
        assert_eq!(report.iterations, 1);
        assert!(report.converged);
    }

    #[test]
    fn iteration_guard_stops_and_flags() {
        let cfg = RefineConfig {
            max_iterations: 1,
            ..RefineConfig::default()
        };
        let (mut states, pairs) = chain_fixture();
        let report = iterate(&mut states, &pairs, &cfg, &Sequential);
        assert_eq!(report.iterations, 1);
        assert!(!report.converged);
    }

    /// Knowledge that crosses one hop per round: IP k only drops its wrong
    /// candidate after IP k-1 did. Needs more than 20 rounds for a 30-hop chain.
    #[test]
    fn long_cascade_hits_default_guard() {
        let cfg = RefineConfig::default();
        let n = 30u8;
        let mut states = Vec::new();
        // true positions 190 km apart with a 200 km budget; every wrong candidate sits 150 km north of
        // its true one so wrong-wrong and true-true pairs are both feasible, but a
        // wrong candidate next to a true one is not.
        for k in 0..n {
            let t = east(190.0 * k as f64);
            let w = destination(t, 0.0, 150.0);
            let cands = if k == 0 {
                vec![cluster(0, t)]
            } else {
                vec![cluster(0, t), cluster(1, w)]
            };
            states.push(CandidateState::new(ip(k + 1), cands));
        }
        let hops: Vec<(u8, f64)> = (0..n).map(|k| (k + 1, 2.0 * k as f64)).collect();
        let tight = RefineConfig {
            deviation_fraction: 1e-9,
            ..cfg
        };
        let pairs = extract_pairs(&[path("p", &hops)]);
        let report = iterate(&mut states, &pairs, &tight, &Sequential);
        assert_eq!(report.iterations, 20);
        assert!(!report.converged);
    }

    #[test]
    fn tagging_rules() {
        let cfg = RefineConfig::default();
        let mut s = with_ratios(&[0.1, 0.1]);
        s.scores.iter_mut().for_each(|sc| sc.evaluations = 10);
        assert!(is_anomalous(&s, &cfg));

        let mut s = with_ratios(&[0.6]);
        s.scores[0].evaluations = 10;
        s.scores[0].prev_ratio = Some(0.9);
        s.scores[0].next_ratio = Some(0.2);
        assert!(is_anomalous(&s, &cfg));

        s.scores[0].prev_ratio = Some(0.2);
        assert!(!is_anomalous(&s, &cfg));

        let mut s = with_ratios(&[0.0]);
        s.scores[0].evaluations = 2;
        assert!(!is_anomalous(&s, &cfg), "too little evidence");
    }

    /// Direct reimplementation of a scoring round without sorted budgets.
    fn naive_scores(
        states: &[CandidateState],
        paths: &[CleanPath],
        cfg: &RefineConfig,
    ) -> Vec<Option<Vec<(u64, u64)>>> {
        let find = |a: Ipv4Addr| states.iter().position(|s| s.ip == a);
        states
            .iter()
            .map(|s| {
                let counts: Vec<(u64, u64)> = s
                    .candidates
                    .iter()
                    .map(|c| {
                        let (mut ok, mut n) = (0, 0);
                        for p in paths {
                            for w in p.hops.windows(2) {
                                let (me, other) = if w[0].ip == s.ip {
                                    (w[0], w[1])
                                } else if w[1].ip == s.ip {
                                    (w[1], w[0])
                                } else {
                                    continue;
                                };
                                let Some(j) = find(other.ip) else { continue };
                                for nc in &states[j].candidates {
                                    n += 1;
                                    if pair_feasible(c.centroid, nc.centroid, me.rtt_ms, other.rtt_ms, cfg) {
                                        ok += 1;
                                    }
                                }
                            }
                        }
                        (ok, n)
                    })
                    .collect();
                if counts.iter().all(|&(_, n)| n == 0) { None } else { Some(counts) }
            })
            .collect()
    }

    fn corpus() -> impl Strategy<Value = (Vec<CandidateState>, Vec<CleanPath>)> {
        let cands = prop::collection::vec(
            prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..4),
            2..8,
        );
        let paths = prop::collection::vec(
            prop::collection::vec((1u8..10, 0.0f64..30.0), 2..6),
            1..12,
        );
        (cands, paths).prop_map(|(cands, raw_paths)| {
            let states: Vec<_> = cands
                .into_iter()
                .enumerate()
                .map(|(i, cs)| {
                    CandidateState::new(
                        ip(i as u8 + 1),
                        cs.into_iter()
                            .enumerate()
                            .map(|(j, (lat, lon))| cluster(j as u32, GeoPoint { lat, lon }))
                            .collect(),
                    )
                })
                .collect();
            let paths = raw_paths
                .into_iter()
                .map(|hops| {
                    let mut seen = BTreeSet::new();
                    let hops: Vec<(u8, f64)> = hops.into_iter().filter(|h| seen.insert(h.0)).collect();
                    path("p", &hops)
                })
                .filter(|p| p.hops.len() >= 2)
                .collect();
            (states, paths)
        })
    }

    proptest! {
        #[test]
        fn feasibility_symmetric_in_rtt_roles(
            d in 0.0f64..5000.0, ra in 0.0f64..300.0, rb in 0.0f64..300.0
        ) {
            let cfg = RefineConfig::default();
            let b = east(d);
            prop_assert_eq!(
                pair_feasible(origin(), b, ra, rb, &cfg),
                pair_feasible(origin(), b, rb, ra, &cfg)
            );
        }

        #[test]
        fn counting_matches_naive_round((states, paths) in corpus()) {
            let cfg = RefineConfig::default();
            let pairs = extract_pairs(&paths);
            let problem = Problem::new(&states, &pairs, &cfg);
            let fast = score_iteration(&states, &problem, &Sequential);
            let slow = naive_scores(&states, &paths, &cfg);
            for (f, s) in fast.iter().zip(&slow) {
                match (f, s) {
                    (None, None) => {}
                    (Some(f), Some(s)) => {
                        for (fc, &(ok, n)) in f.iter().zip(s) {
                            prop_assert_eq!(fc.evaluations, n);
                            prop_assert!((fc.ratio - ok as f64 / n as f64).abs() < 1e-12);
                        }
                    }
                    _ => prop_assert!(false, "carry-over mismatch"),
                }
            }
        }

        #[test]
        fn ratios_bounded_sets_shrink_and_runs_repeat((states, paths) in corpus()) {
            let cfg = RefineConfig::default();
            let pairs = extract_pairs(&paths);
            let initial: usize = states.iter().map(|s| s.candidates.len()).sum();
            let mut a = states.clone();
            let mut b = states.clone();
            let ra = iterate(&mut a, &pairs, &cfg, &Sequential);
            let rb = iterate(&mut b, &pairs, &cfg, &Sequential);
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(ra.clone(), rb);
            prop_assert!(ra.converged);
            prop_assert!(ra.iterations as usize <= initial.max(1));
            for (before, after) in states.iter().zip(&a) {
                prop_assert!(!after.candidates.is_empty());
                for c in &after.candidates {
                    prop_assert!(before.candidates.contains(c));
                }
                for s in &after.scores {
                    prop_assert!((0.0..=1.0).contains(&s.ratio));
                    for r in [s.prev_ratio, s.next_ratio].into_iter().flatten() {
                        prop_assert!((0.0..=1.0).contains(&r));
                    }
                }
            }
        }
    }
}
