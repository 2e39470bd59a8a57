//! Synthetic worlds with known router locations, MPLS tunnels and corrupted
//! geolocation databases, plus scoring of pipeline output against the truth.

use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};
use core::net::Ipv4Addr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::catalog::CityPolygon;
use crate::cluster::GeoRecord;
use crate::exec::Executor;
use crate::geo::{destination, haversine_km, GeoPoint, FIBER_KM_PER_MS};
use crate::path::{CleanPath, Hop};
use crate::refine::{CandidateState, Status};
use crate::resolve::{ResolutionOutcome, Verdict};

/// Fiber length of a link between two routers in the same city.
pub const METRO_LINK_KM: f64 = 10.0;
/// Routing cost added per hop, so equal-length routes prefer fewer hops.
const HOP_PENALTY_KM: f64 = 1.0;
/// Relative slack under which two route costs count as equal.
const ECMP_TOLERANCE_KM: f64 = 1e-9;
/// Surviving candidates within this distance of the truth count as the true city.
pub const TRUE_CITY_KM: f64 = 20.0;

const SIM_SALT: u64 = 0x5117_u64 << 32;
const DB_SALT: u64 = 0xdb_u64 << 40;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SynthError {
    #[error("n_routers must be at least 2")]
    TooFewRouters,
    #[error("n_cities must be between 1 and the catalog size ({0})")]
    BadCityCount(usize),
    #[error("mpls_fraction must lie in [0, 1]")]
    BadFraction,
    #[error("{0} tunnels need more routers than the {1} available")]
    NotEnoughRouters(usize, usize),
    #[error("invalid injection spec: {0}")]
    BadSpec(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LinkKind {
    Metro,
    Backbone,
    Tunnel,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Router {
    pub ip: Ipv4Addr,
    pub location: GeoPoint,
    pub city: String,
    pub country: String,
    /// Label-switching router inside a tunnel.
    pub lsr: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Link {
    pub a: u32,
    pub b: u32,
    pub kind: LinkKind,
    /// Fiber length, which sets the RTT.
    pub length_km: f64,
    /// Routing metric. A tunnel as a whole costs the same as a direct link between its ends.
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub to: u32,
    pub length_km: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct World {
    pub routers: Vec<Router>,
    pub links: Vec<Link>,
    /// Router indices `[ingress, interior.., egress]`, contiguous along links.
    pub mpls_tunnels: Vec<Vec<u32>>,
    pub rng_seed: u64,
}

impl World {
    /// Per router, `(neighbor, fiber length, routing cost)` sorted by neighbor.
    pub fn adjacency(&self) -> Vec<Vec<Edge>> {
        let mut adj = vec![Vec::new(); self.routers.len()];
        for l in &self.links {
            adj[l.a as usize].push(Edge { to: l.b, length_km: l.length_km, cost: l.cost });
            adj[l.b as usize].push(Edge { to: l.a, length_km: l.length_km, cost: l.cost });
        }
        for v in &mut adj {
            v.sort_by_key(|x| x.to);
        }
        adj
    }

    /// Inter-city segments, counting each tunnel once.
    pub fn backbone_segments(&self) -> usize {
        self.links.iter().filter(|l| l.kind == LinkKind::Backbone).count() + self.mpls_tunnels.len()
    }

    pub fn router_by_ip(&self) -> BTreeMap<Ipv4Addr, usize> {
        self.routers.iter().enumerate().map(|(i, r)| (r.ip, i)).collect()
    }

    /// Tunnel members whose reported RTT is not their own: interior hops and egress points.
    pub fn tunnel_affected(&self) -> BTreeSet<Ipv4Addr> {
        self.mpls_tunnels
            .iter()
            .flat_map(|t| t[1..].iter())
            .map(|&i| self.routers[i as usize].ip)
            .collect()
    }

    pub fn tunnel_interior(&self) -> BTreeSet<Ipv4Addr> {
        self.mpls_tunnels
            .iter()
            .flat_map(|t| t[1..t.len() - 1].iter())
            .map(|&i| self.routers[i as usize].ip)
            .collect()
    }

    pub fn is_connected(&self) -> bool {
        if self.routers.is_empty() {
            return true;
        }
        let adj = self.adjacency();
        let mut seen = vec![false; self.routers.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for e in &adj[u] {
                let v = e.to;
                if !seen[v as usize] {
                    seen[v as usize] = true;
                    stack.push(v as usize);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Number of tunnels carved out of `segments` backbone segments.
pub fn tunnel_count(segments: usize, mpls_fraction: f64) -> usize {
    libm::round(segments as f64 * mpls_fraction) as usize
}

fn router_ip(index: usize) -> Ipv4Addr {
    Ipv4Addr::from(0x0b00_0001 + index as u32)
}

fn nearest_first(catalog: &[CityPolygon], from: GeoPoint) -> Vec<usize> {
    let mut order: Vec<usize> = (0..catalog.len()).collect();
    order.sort_by(|&a, &b| {
        haversine_km(from, catalog[a].centroid)
            .total_cmp(&haversine_km(from, catalog[b].centroid))
            .then(a.cmp(&b))
    });
    order
}

/// Core routers per city; each inter-city edge gets one link per core pair.
const CORES_PER_CITY: usize = 3;
/// A tunnel's intermediate city may lengthen the segment by at most this factor.
const MAX_TUNNEL_DETOUR: f64 = 1.5;

/// Builds a regional world around a randomly chosen catalog city.
///
/// Routers within a city form a full mesh. Cities are joined by a spanning tree
/// plus nearest-neighbor edges, every city getting at least two neighbors where
/// possible; each edge becomes parallel links between the cities' core routers,
/// so flows can balance over equal-cost routes. A `mpls_fraction` share of the
/// backbone segments, drawn with probability proportional to length, is
/// carried through a label-switching router at an intermediate catalog city.
pub fn generate_world(
    seed: u64,
    n_routers: usize,
    n_cities: usize,
    mpls_fraction: f64,
    catalog: &[CityPolygon],
) -> Result<World, SynthError> {
    if n_routers < 2 {
        return Err(SynthError::TooFewRouters);
    }
    if n_cities == 0 || n_cities > catalog.len() {
        return Err(SynthError::BadCityCount(catalog.len()));
    }
    if !(0.0..=1.0).contains(&mpls_fraction) {
        return Err(SynthError::BadFraction);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let home = rng.gen_range(0..catalog.len());
    let cities: Vec<usize> = nearest_first(catalog, catalog[home].centroid)
        .into_iter()
        .take(n_cities.min(n_routers))
        .collect();
    let at = |c: usize| catalog[cities[c]].centroid;
    let nc = cities.len();

    // city graph: Prim's tree, the two nearest neighbors, sometimes the third
    let mut city_edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut in_tree = vec![false; nc];
    let mut best: Vec<(f64, usize)> = vec![(f64::INFINITY, 0); nc];
    in_tree[0] = true;
    for c in 1..nc {
        best[c] = (haversine_km(at(0), at(c)), 0);
    }
    for _ in 1..nc {
        let next = (0..nc)
            .filter(|&c| !in_tree[c])
            .min_by(|&a, &b| best[a].0.total_cmp(&best[b].0).then(a.cmp(&b)))
            .expect("a city outside the tree");
        in_tree[next] = true;
        let p = best[next].1;
        city_edges.insert((p.min(next), p.max(next)));
        for c in 0..nc {
            if !in_tree[c] {
                let d = haversine_km(at(next), at(c));
                if d < best[c].0 {
                    best[c] = (d, next);
                }
            }
        }
    }
    for c in 0..nc {
        let mut others: Vec<usize> = (0..nc).filter(|&o| o != c).collect();
        others.sort_by(|&a, &b| haversine_km(at(c), at(a)).total_cmp(&haversine_km(at(c), at(b))).then(a.cmp(&b)));
        for (k, &o) in others.iter().take(3).enumerate() {
            if k < 2 || rng.gen_bool(0.5) {
                city_edges.insert((c.min(o), c.max(o)));
            }
        }
    }
    let city_edges: Vec<(usize, usize)> = city_edges.into_iter().collect();

    let mut cores = CORES_PER_CITY.min(n_routers / nc).max(1);
    let mut n_tunnels = tunnel_count(cores * city_edges.len(), mpls_fraction);
    while cores > 1 && cores * nc + n_tunnels > n_routers {
        cores -= 1;
        n_tunnels = tunnel_count(cores * city_edges.len(), mpls_fraction);
    }
    if nc + n_tunnels > n_routers {
        return Err(SynthError::NotEnoughRouters(n_tunnels, n_routers));
    }

    // routers per city: the cores first, the rest at random
    let mut per_city = vec![cores; nc];
    for _ in 0..n_routers - n_tunnels - cores * nc {
        per_city[rng.gen_range(0..nc)] += 1;
    }
    let mut routers = Vec::with_capacity(n_routers);
    let mut members: Vec<Vec<u32>> = Vec::with_capacity(nc);
    for (c, &k) in per_city.iter().enumerate() {
        let city = &catalog[cities[c]];
        let mut ids = Vec::with_capacity(k);
        for _ in 0..k {
            ids.push(routers.len() as u32);
            routers.push(Router {
                ip: router_ip(routers.len()),
                location: city.centroid,
                city: city.name.clone(),
                country: city.country.clone(),
                lsr: false,
            });
        }
        members.push(ids);
    }

    let mut links = Vec::new();
    for ids in &members {
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                links.push(Link { a, b, kind: LinkKind::Metro, length_km: METRO_LINK_KM, cost: METRO_LINK_KM });
            }
        }
    }
    let mut seg_list: Vec<(u32, u32)> = Vec::with_capacity(cores * city_edges.len());
    for &(ca, cb) in &city_edges {
        for i in 0..cores {
            seg_list.push((members[ca][i], members[cb][i]));
        }
    }

    let mut weights: Vec<f64> = seg_list
        .iter()
        .map(|&(a, b)| haversine_km(routers[a as usize].location, routers[b as usize].location))
        .collect();
    let mut tunnelled: BTreeSet<usize> = BTreeSet::new();
    for _ in 0..n_tunnels.min(seg_list.len()) {
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let mut x = rng.gen_range(0.0..total);
            let mut chosen = weights.len() - 1;
            for (i, &w) in weights.iter().enumerate() {
                if x < w {
                    chosen = i;
                    break;
                }
                x -= w;
            }
            chosen
        } else {
            (0..seg_list.len()).find(|i| !tunnelled.contains(i)).expect("segments remain")
        };
        weights[pick] = 0.0;
        tunnelled.insert(pick);
    }

    let mut mpls_tunnels = Vec::new();
    for (s, &(a, b)) in seg_list.iter().enumerate() {
        let pa = routers[a as usize].location;
        let pb = routers[b as usize].location;
        let direct = haversine_km(pa, pb);
        if !tunnelled.contains(&s) {
            links.push(Link { a, b, kind: LinkKind::Backbone, length_km: direct, cost: direct });
            continue;
        }
        let legs = |i: usize| (haversine_km(pa, catalog[i].centroid), haversine_km(catalog[i].centroid, pb));
        let others: Vec<usize> = (0..catalog.len())
            .filter(|&i| {
                let (x, y) = legs(i);
                x > 1.0 && y > 1.0
            })
            .collect();
        let balanced = others
            .iter()
            .copied()
            .filter(|&i| {
                let (x, y) = legs(i);
                x + y <= MAX_TUNNEL_DETOUR * direct
            })
            .max_by(|&x, &y| {
                let (x1, x2) = legs(x);
                let (y1, y2) = legs(y);
                x1.min(x2).total_cmp(&y1.min(y2)).then(y.cmp(&x))
            });
        let shortest = || {
            others.iter().copied().min_by(|&x, &y| {
                let (x1, x2) = legs(x);
                let (y1, y2) = legs(y);
                (x1 + x2).total_cmp(&(y1 + y2)).then(x.cmp(&y))
            })
        };
        let via = balanced.or_else(shortest).unwrap_or(cities[0]);
        let city = &catalog[via];
        let l = routers.len() as u32;
        routers.push(Router {
            ip: router_ip(routers.len()),
            location: city.centroid,
            city: city.name.clone(),
            country: city.country.clone(),
            lsr: true,
        });
        // equal to the direct link's cost once the extra hop is paid for
        let cost = ((direct - HOP_PENALTY_KM) / 2.0).max(0.0);
        links.push(Link { a, b: l, kind: LinkKind::Tunnel, length_km: haversine_km(pa, city.centroid), cost });
        links.push(Link { a: l, b, kind: LinkKind::Tunnel, length_km: haversine_km(city.centroid, pb), cost });
        mpls_tunnels.push(vec![a, l, b]);
    }
    links.sort_by_key(|x| (x.a.min(x.b), x.a.max(x.b)));

    Ok(World { routers, links, mpls_tunnels, rng_seed: seed })
}

#[derive(PartialEq)]
struct Cost(f64, u32);
impl Eq for Cost {}
impl PartialOrd for Cost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Cost {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// Least-cost route from `src` to `dst` as router indices, or `None` if
/// unreachable. Among equal-cost routes one is drawn at random, hop by hop
/// from the destination back, as per-flow load balancing would.
pub fn shortest_route<R: Rng>(adj: &[Vec<Edge>], src: u32, dst: u32, rng: &mut R) -> Option<Vec<u32>> {
    let n = adj.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut heap = BinaryHeap::new();
    dist[src as usize] = 0.0;
    heap.push(Reverse(Cost(0.0, src)));
    while let Some(Reverse(Cost(d, u))) = heap.pop() {
        if d > dist[u as usize] {
            continue;
        }
        for e in &adj[u as usize] {
            let nd = d + e.cost + HOP_PENALTY_KM;
            if nd < dist[e.to as usize] {
                dist[e.to as usize] = nd;
                heap.push(Reverse(Cost(nd, e.to)));
            }
        }
    }
    if !dist[dst as usize].is_finite() {
        return None;
    }
    let mut route = vec![dst];
    let mut cur = dst;
    while cur != src {
        let here = dist[cur as usize];
        let preds: Vec<u32> = adj[cur as usize]
            .iter()
            .filter(|e| {
                let via = dist[e.to as usize] + e.cost + HOP_PENALTY_KM;
                via.is_finite() && libm::fabs(via - here) <= ECMP_TOLERANCE_KM * (1.0 + here)
            })
            .map(|e| e.to)
            .collect();
        cur = *preds.choose(rng)?;
        route.push(cur);
    }
    route.reverse();
    Some(route)
}

/// Noise-free RTTs along `route`: twice the cumulative fiber distance over the
/// fiber speed, with every tunnel member after the ingress reporting the egress RTT.
pub fn route_rtts(world: &World, adj: &[Vec<Edge>], route: &[u32]) -> Vec<f64> {
    let mut rtt = Vec::with_capacity(route.len());
    let mut dist = 0.0;
    rtt.push(0.0);
    for w in route.windows(2) {
        let len = adj[w[0] as usize]
            .iter()
            .find(|e| e.to == w[1])
            .map(|e| e.length_km)
            .expect("consecutive route hops are linked");
        dist += len;
        rtt.push(2.0 * dist / FIBER_KM_PER_MS);
    }
    for t in &world.mpls_tunnels {
        let m = t.len();
        for start in 0..route.len().saturating_sub(m - 1) {
            let window = &route[start..start + m];
            let forward = window == t.as_slice();
            let backward = window.iter().rev().eq(t.iter());
            if forward || backward {
                let exit = rtt[start + m - 1];
                for r in &mut rtt[start + 1..start + m] {
                    *r = exit;
                }
            }
        }
    }
    rtt
}

/// Traceroutes between random pairs of non-LSR routers along shortest routes.
/// Each path draws from its own RNG stream, so paths can be built in parallel.
pub fn simulate_traceroutes<E: Executor>(
    world: &World,
    n_paths: usize,
    noise_fraction: f64,
    exec: &E,
) -> Vec<CleanPath> {
    let adj = world.adjacency();
    let endpoints: Vec<u32> = (0..world.routers.len() as u32)
        .filter(|&i| !world.routers[i as usize].lsr)
        .collect();
    if endpoints.len() < 2 {
        return Vec::new();
    }
    let noise = noise_fraction.abs();
    let indices: Vec<usize> = (0..n_paths).collect();
    let paths = exec.map(&indices, |&i| {
        let mut rng = ChaCha8Rng::seed_from_u64(world.rng_seed ^ SIM_SALT);
        rng.set_stream(i as u64);
        let src = endpoints[rng.gen_range(0..endpoints.len())];
        let mut dst = src;
        while dst == src {
            dst = endpoints[rng.gen_range(0..endpoints.len())];
        }
        let route = shortest_route(&adj, src, dst, &mut rng)?;
        let rtts = route_rtts(world, &adj, &route);
        let hops = route
            .iter()
            .zip(rtts)
            .map(|(&r, base)| {
                let f = if noise > 0.0 { 1.0 + rng.gen_range(-noise..=noise) } else { 1.0 };
                Hop { ip: world.routers[r as usize].ip, rtt_ms: base * f }
            })
            .collect();
        Some(CleanPath { path_id: format!("synth-{i}"), hops })
    });
    paths.into_iter().flatten().collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InjectionSpec {
    pub interface_error_fraction: f64,
    pub min_displacement_km: f64,
    pub db_count: usize,
    pub db_noise_km: f64,
    /// Per-record chance that a database places a non-displaced IP in a nearby wrong city.
    pub db_disagreement_fraction: f64,
}

impl Default for InjectionSpec {
    fn default() -> Self {
        InjectionSpec {
            interface_error_fraction: 0.05,
            min_displacement_km: 500.0,
            db_count: 8,
            db_noise_km: 2.0,
            db_disagreement_fraction: 0.0,
        }
    }
}

impl InjectionSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(0.0..=1.0).contains(&self.interface_error_fraction) {
            return Err(SynthError::BadSpec("interface_error_fraction"));
        }
        if !(self.min_displacement_km > 0.0) {
            return Err(SynthError::BadSpec("min_displacement_km"));
        }
        if self.db_count == 0 {
            return Err(SynthError::BadSpec("db_count"));
        }
        if !(self.db_noise_km >= 0.0) {
            return Err(SynthError::BadSpec("db_noise_km"));
        }
        if !(0.0..=1.0).contains(&self.db_disagreement_fraction) {
            return Err(SynthError::BadSpec("db_disagreement_fraction"));
        }
        Ok(())
    }
}

/// Number of nearby catalog cities a disagreeing database picks from.
const DISAGREEMENT_NEIGHBORS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct Corruption {
    pub snapshot: BTreeMap<Ipv4Addr, Vec<GeoRecord>>,
    pub displaced: BTreeSet<Ipv4Addr>,
    /// Chosen for displacement but no catalog city was far enough away.
    pub skipped: Vec<Ipv4Addr>,
}

pub fn source_name(db: usize) -> String {
    format!("db{}", db + 1)
}

/// Synthetic database snapshot. A `interface_error_fraction` share of the
/// non-LSR routers get every record moved to one catalog city at least
/// `min_displacement_km` away; the others get their true city with per-record jitter.
pub fn corrupt_geodb(
    world: &World,
    spec: &InjectionSpec,
    seed: u64,
    catalog: &[CityPolygon],
) -> Result<Corruption, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ DB_SALT);
    let mut eligible: Vec<usize> = (0..world.routers.len()).filter(|&i| !world.routers[i].lsr).collect();
    eligible.shuffle(&mut rng);
    let n_displaced = libm::round(spec.interface_error_fraction * eligible.len() as f64) as usize;
    let chosen: BTreeSet<usize> = eligible.into_iter().take(n_displaced).collect();

    let record = |r: &Router, db: usize, loc: GeoPoint, city: &str, country: &str| GeoRecord {
        ip: r.ip,
        source: source_name(db),
        location: loc,
        city: city.into(),
        country: country.into(),
    };
    let mut out = Corruption { snapshot: BTreeMap::new(), displaced: BTreeSet::new(), skipped: Vec::new() };
    for (i, r) in world.routers.iter().enumerate() {
        if chosen.contains(&i) {
            let far: Vec<&CityPolygon> = catalog
                .iter()
                .filter(|c| haversine_km(c.centroid, r.location) >= spec.min_displacement_km)
                .collect();
            if let Some(target) = far.choose(&mut rng) {
                let recs = (0..spec.db_count)
                    .map(|db| record(r, db, target.centroid, &target.name, &target.country))
                    .collect();
                out.snapshot.insert(r.ip, recs);
                out.displaced.insert(r.ip);
                continue;
            }
            out.skipped.push(r.ip);
        }
        let nearby: Vec<&CityPolygon> = nearest_first(catalog, r.location)
            .into_iter()
            .map(|k| &catalog[k])
            .filter(|c| haversine_km(c.centroid, r.location) > 1.0)
            .take(DISAGREEMENT_NEIGHBORS)
            .collect();
        let mut recs = Vec::with_capacity(spec.db_count);
        for db in 0..spec.db_count {
            let wrong = spec.db_disagreement_fraction > 0.0 && rng.gen_bool(spec.db_disagreement_fraction);
            match (wrong, nearby.choose(&mut rng)) {
                (true, Some(c)) => recs.push(record(r, db, c.centroid, &c.name, &c.country)),
                _ => {
                    let bearing = rng.gen_range(0.0..360.0);
                    let d = if spec.db_noise_km > 0.0 { rng.gen_range(0.0..=spec.db_noise_km) } else { 0.0 };
                    let loc = if d > 0.0 { destination(r.location, bearing, d) } else { r.location };
                    recs.push(record(r, db, loc, &r.city, &r.country));
                }
            }
        }
        out.snapshot.insert(r.ip, recs);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Confusion {
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub true_negative: usize,
}

impl Confusion {
    pub fn precision(&self) -> Option<f64> {
        let d = self.true_positive + self.false_positive;
        (d > 0).then(|| self.true_positive as f64 / d as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        let d = self.true_positive + self.false_negative;
        (d > 0).then(|| self.true_positive as f64 / d as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScoreReport {
    /// Tagging against the displaced set, over observed IPs that are not tunnel-affected.
    pub tagging: Confusion,
    /// Same, but counting an IP as detected only if resolution did not call it a false positive.
    pub verdict: Confusion,
    pub tunnel_interior: usize,
    /// Tunnel-interior IPs tagged anomalous or classified MPLS-affected.
    pub tunnel_interior_caught: usize,
    /// Resolved-to-true distances of interface-affected verdicts, ascending.
    pub interface_errors_km: Vec<f64>,
    pub active: usize,
    pub active_with_true_city: usize,
}

impl ScoreReport {
    pub fn tunnel_catch_rate(&self) -> Option<f64> {
        (self.tunnel_interior > 0).then(|| self.tunnel_interior_caught as f64 / self.tunnel_interior as f64)
    }

    pub fn interface_within(&self, km: f64) -> Option<f64> {
        let n = self.interface_errors_km.len();
        (n > 0).then(|| self.interface_errors_km.iter().filter(|&&d| d <= km).count() as f64 / n as f64)
    }

    pub fn active_true_city_rate(&self) -> Option<f64> {
        (self.active > 0).then(|| self.active_with_true_city as f64 / self.active as f64)
    }
}

/// Scores pipeline output against the world. IPs absent from the world are
/// reported back as an error.
pub fn score_against_truth(
    outcomes: &[ResolutionOutcome],
    states: &[CandidateState],
    world: &World,
    displaced: &BTreeSet<Ipv4Addr>,
) -> Result<ScoreReport, Ipv4Addr> {
    let by_ip = world.router_by_ip();
    let tunnel = world.tunnel_affected();
    let interior = world.tunnel_interior();
    let verdicts: BTreeMap<Ipv4Addr, &Verdict> = outcomes.iter().map(|o| (o.ip, &o.verdict)).collect();
    let mut report = ScoreReport::default();
    for s in states {
        let Some(&ri) = by_ip.get(&s.ip) else {
            return Err(s.ip);
        };
        let truth = world.routers[ri].location;
        let tagged = s.status == Status::Anomalous;
        let verdict = verdicts.get(&s.ip).copied();
        if interior.contains(&s.ip) {
            report.tunnel_interior += 1;
            if tagged || matches!(verdict, Some(Verdict::MplsAffected(_))) {
                report.tunnel_interior_caught += 1;
            }
        }
        if s.status == Status::Active {
            report.active += 1;
            if s.candidates.iter().any(|c| haversine_km(c.centroid, truth) <= TRUE_CITY_KM) {
                report.active_with_true_city += 1;
            }
        }
        if let Some(Verdict::InterfaceAffected { resolved, .. }) = verdict {
            report.interface_errors_km.push(haversine_km(*resolved, truth));
        }
        let positive = displaced.contains(&s.ip);
        if tunnel.contains(&s.ip) && !positive {
            continue;
        }
        let confirmed = tagged && !matches!(verdict, Some(Verdict::FalsePositive(_)));
        for (c, hit) in [(&mut report.tagging, tagged), (&mut report.verdict, confirmed)] {
            match (hit, positive) {
                (true, true) => c.true_positive += 1,
                (true, false) => c.false_positive += 1,
                (false, true) => c.false_negative += 1,
                (false, false) => c.true_negative += 1,
            }
        }
    }
    for o in outcomes {
        if !by_ip.contains_key(&o.ip) {
            return Err(o.ip);
        }
    }
    report.interface_errors_km.sort_by(f64::total_cmp);
    Ok(report)
}
