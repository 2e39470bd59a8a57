//! Grid index over city discs for overlap queries.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::catalog::CityPolygon;
use crate::geo::{haversine_km, GeoPoint, EARTH_RADIUS_KM};

const LAT_CELLS: usize = 180;
const LON_CELLS: usize = 360;

/// Immutable 1-degree latitude/longitude grid over polygon centroids.
///
/// Query results are exactly those of [`linear_overlaps`].
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    polygons: Vec<CityPolygon>,
    cells: Vec<Vec<u32>>,
    max_radius_km: f64,
}

fn lat_cell(lat: f64) -> usize {
    let i = libm::floor(lat + 90.0) as i64;
    i.clamp(0, LAT_CELLS as i64 - 1) as usize
}

fn lon_cell(lon: f64) -> usize {
    (libm::floor(lon + 180.0) as i64).rem_euclid(LON_CELLS as i64) as usize
}

impl SpatialIndex {
    pub fn build(polygons: Vec<CityPolygon>) -> Self {
        let mut cells = vec![Vec::new(); LAT_CELLS * LON_CELLS];
        let mut max_radius_km: f64 = 0.0;
        for (i, p) in polygons.iter().enumerate() {
            let c = lat_cell(p.centroid.lat) * LON_CELLS + lon_cell(p.centroid.lon);
            cells[c].push(i as u32);
            max_radius_km = max_radius_km.max(p.radius_km);
        }
        SpatialIndex {
            polygons,
            cells,
            max_radius_km,
        }
    }

    pub fn polygons(&self) -> &[CityPolygon] {
        &self.polygons
    }

    pub fn len(&self) -> usize {
        self.polygons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.polygons.is_empty()
    }

    pub fn get(&self, polygon_id: u32) -> Option<&CityPolygon> {
        // ids are usually positional; fall back to a scan for catalogs that are not
        self.polygons
            .get(polygon_id as usize)
            .filter(|p| p.polygon_id == polygon_id)
            .or_else(|| self.polygons.iter().find(|p| p.polygon_id == polygon_id))
    }

    /// Ids of every polygon whose disc intersects the query disc, ascending.
    ///
    /// A polygon matches when `haversine(center, centroid) <= radius_km + polygon.radius_km`.
    pub fn query_overlaps(&self, center: GeoPoint, radius_km: f64) -> Vec<u32> {
        let mut out = Vec::new();
        let mut check = |idx: u32| {
            let p = &self.polygons[idx as usize];
            if haversine_km(center, p.centroid) <= radius_km + p.radius_km {
                out.push(p.polygon_id);
            }
        };

        let reach = (radius_km.max(0.0) + self.max_radius_km) / EARTH_RADIUS_KM;
        if reach >= PI / 2.0 {
            for cell in &self.cells {
                cell.iter().copied().for_each(&mut check);
            }
            out.sort_unstable();
            return out;
        }

        let reach_deg = reach * 180.0 / PI;
        let lat_lo = center.lat - reach_deg;
        let lat_hi = center.lat + reach_deg;
        let all_lons = if lat_lo <= -90.0 || lat_hi >= 90.0 {
            true
        } else {
            let s = libm::sin(reach) / libm::cos(center.lat * PI / 180.0);
            s >= 1.0
        };

        let row_lo = lat_cell(lat_lo).saturating_sub(1);
        let row_hi = (lat_cell(lat_hi) + 1).min(LAT_CELLS - 1);

        let lon_span: Option<(i64, i64)> = if all_lons {
            None
        } else {
            let s = libm::sin(reach) / libm::cos(center.lat * PI / 180.0);
            let dlon = libm::asin(s) * 180.0 / PI;
            let lo = libm::floor(center.lon - dlon + 180.0) as i64 - 1;
            let hi = libm::floor(center.lon + dlon + 180.0) as i64 + 1;
            if hi - lo + 1 >= LON_CELLS as i64 {
                None
            } else {
                Some((lo, hi))
            }
        };

        for row in row_lo..=row_hi {
            let base = row * LON_CELLS;
            match lon_span {
                None => {
                    for col in 0..LON_CELLS {
                        self.cells[base + col].iter().copied().for_each(&mut check);
                    }
                }
                Some((lo, hi)) => {
                    for c in lo..=hi {
                        let col = c.rem_euclid(LON_CELLS as i64) as usize;
                        self.cells[base + col].iter().copied().for_each(&mut check);
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// Reference overlap query by exhaustive scan.
pub fn linear_overlaps(polygons: &[CityPolygon], center: GeoPoint, radius_km: f64) -> Vec<u32> {
    let mut out: Vec<u32> = polygons
        .iter()
        .filter(|p| haversine_km(center, p.centroid) <= radius_km + p.radius_km)
        .map(|p| p.polygon_id)
        .collect();
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::builtin_catalog;
    use alloc::string::String;
    use proptest::prelude::*;

    #[test]
    fn zero_radius_hits_own_centroid() {
        let cat = builtin_catalog();
        let idx = SpatialIndex::build(cat.clone());
        for p in &cat {
            assert!(idx.query_overlaps(p.centroid, 0.0).contains(&p.polygon_id));
        }
    }

    #[test]
    fn empty_when_far_from_everything() {
        let idx = SpatialIndex::build(builtin_catalog());
        // middle of the South Pacific
        let q = GeoPoint::new(-45.0, -130.0).unwrap();
        assert!(idx.query_overlaps(q, 100.0).is_empty());
    }

    #[test]
    fn huge_radius_returns_all() {
        let cat = builtin_catalog();
        let idx = SpatialIndex::build(cat.clone());
        let q = GeoPoint::new(10.0, 10.0).unwrap();
        assert_eq!(idx.query_overlaps(q, 30000.0).len(), cat.len());
    }

    fn catalog() -> impl Strategy<Value = Vec<CityPolygon>> {
        prop::collection::vec((-90.0f64..=90.0, -180.0f64..=180.0, 1.0f64..80.0), 0..60).prop_map(
            |v| {
                v.into_iter()
                    .enumerate()
                    .map(|(i, (lat, lon, r))| CityPolygon {
                        polygon_id: i as u32,
                        name: String::new(),
                        country: String::from("ZZ"),
                        centroid: GeoPoint { lat, lon },
                        radius_km: r,
                    })
                    .collect()
            },
        )
    }

    proptest! {
        #[test]
        fn matches_linear_scan(
            cat in catalog(),
            lat in -90.0f64..=90.0,
            lon in -180.0f64..=180.0,
            radius in prop_oneof![0.0f64..50.0, 0.0f64..3000.0, 0.0f64..20000.0],
        ) {
            let idx = SpatialIndex::build(cat.clone());
            let q = GeoPoint { lat, lon };
            prop_assert_eq!(idx.query_overlaps(q, radius), linear_overlaps(&cat, q, radius));
        }

        #[test]
        fn matches_linear_scan_near_poles_and_antimeridian(
            cat in catalog(),
            lat in prop_oneof![85.0f64..=90.0, -90.0f64..-85.0, -10.0f64..10.0],
            lon in prop_oneof![175.0f64..=180.0, -180.0f64..-175.0],
            radius in 0.0f64..1500.0,
        ) {
            let idx = SpatialIndex::build(cat.clone());
            let q = GeoPoint { lat, lon };
            prop_assert_eq!(idx.query_overlaps(q, radius), linear_overlaps(&cat, q, radius));
        }
    }
}
