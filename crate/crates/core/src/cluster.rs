//! City-level merging of geolocation records coming from several databases.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::net::Ipv4Addr;

use crate::geo::{haversine_km, GeoPoint};

/// Default radius for folding a city-less record into a nearby cluster.
pub const DEFAULT_MERGE_RADIUS_KM: f64 = 20.0;

/// One row of a geolocation-database snapshot.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GeoRecord {
    pub ip: Ipv4Addr,
    pub source: String,
    pub location: GeoPoint,
    pub city: String,
    pub country: String,
}

/// A city-granularity location candidate for one IP, merged across sources.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CityCluster {
    pub cluster_id: u32,
    pub centroid: GeoPoint,
    pub city: String,
    pub country: String,
    pub supporting_sources: BTreeSet<String>,
    /// Number of input records folded into this cluster.
    pub record_count: u32,
}

/// Case-folded, trimmed city name used as the merge key.
pub fn normalize_city(name: &str) -> String {
    name.trim().to_lowercase()
}

pub fn normalize_country(code: &str) -> String {
    code.trim().to_uppercase()
}

struct Building {
    display_city: String,
    country: String,
    points: Vec<GeoPoint>,
    sources: BTreeSet<String>,
    centroid: GeoPoint,
}

impl Building {
    fn push(&mut self, r: &GeoRecord) {
        self.points.push(r.location);
        self.sources.insert(r.source.clone());
        self.centroid = GeoPoint::mean(self.points.iter().copied()).unwrap_or(r.location);
    }
}

fn cmp_point(a: &GeoPoint, b: &GeoPoint) -> Ordering {
    a.lat.total_cmp(&b.lat).then(a.lon.total_cmp(&b.lon))
}

/// Groups the records of a single IP into city clusters.
///
/// Named records merge on normalized `(city, country)`. Records without a city
/// join the nearest existing cluster within `merge_radius_km` of its centroid,
/// or start their own. The result is independent of input order.
pub fn cluster_candidates(records: &[GeoRecord], merge_radius_km: f64) -> Vec<CityCluster> {
    let mut named: BTreeMap<(String, String), Vec<&GeoRecord>> = BTreeMap::new();
    let mut unnamed: Vec<&GeoRecord> = Vec::new();
    for r in records {
        let city = normalize_city(&r.city);
        if city.is_empty() {
            unnamed.push(r);
        } else {
            named
                .entry((normalize_country(&r.country), city))
                .or_default()
                .push(r);
        }
    }

    let mut clusters: Vec<Building> = Vec::with_capacity(named.len() + unnamed.len());
    for (key, mut members) in named {
        members.sort_by(|a, b| {
            a.source
                .cmp(&b.source)
                .then_with(|| cmp_point(&a.location, &b.location))
        });
        let display_city = members
            .iter()
            .map(|r| r.city.trim())
            .min()
            .unwrap_or_default()
            .into();
        let mut b = Building {
            country: key.0.clone(),
            display_city,
            points: Vec::new(),
            sources: BTreeSet::new(),
            centroid: members[0].location,
        };
        for r in members {
            b.push(r);
        }
        clusters.push(b);
    }

    unnamed.sort_by(|a, b| {
        cmp_point(&a.location, &b.location)
            .then_with(|| a.source.cmp(&b.source))
            .then_with(|| a.country.cmp(&b.country))
    });
    for r in unnamed {
        let nearest = clusters
            .iter()
            .enumerate()
            .map(|(i, c)| (i, haversine_km(c.centroid, r.location)))
            .filter(|&(_, d)| d <= merge_radius_km)
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        match nearest {
            Some((i, _)) => clusters[i].push(r),
            None => {
                let country = normalize_country(&r.country);
                let mut b = Building {
                    display_city: String::new(),
                    country,
                    points: Vec::new(),
                    sources: BTreeSet::new(),
                    centroid: r.location,
                };
                b.push(r);
                clusters.push(b);
            }
        }
    }

    let mut out: Vec<CityCluster> = clusters
        .into_iter()
        .enumerate()
        .map(|(i, b)| CityCluster {
            cluster_id: i as u32,
            centroid: b.centroid,
            city: b.display_city,
            country: b.country,
            supporting_sources: b.sources,
            record_count: b.points.len() as u32,
        })
        .collect();
    out.sort_by(|a, b| {
        a.country
            .cmp(&b.country)
            .then_with(|| normalize_city(&a.city).cmp(&normalize_city(&b.city)))
            .then(a.cluster_id.cmp(&b.cluster_id))
    });
    out
}
