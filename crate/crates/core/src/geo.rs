//! Great-circle geometry and the RTT-to-distance conversion.

use core::f64::consts::PI;

/// Mean Earth radius used for every distance in the crate.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Propagation speed of light in fiber, in km per millisecond (~2/3 c).
pub const FIBER_KM_PER_MS: f64 = 200.0;

/// A point on the sphere in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    /// Builds a point, rejecting coordinates outside `[-90,90] x [-180,180]` and NaNs.
    pub fn new(lat: f64, lon: f64) -> Option<Self> {
        if (-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon) {
            Some(GeoPoint { lat, lon })
        } else {
            None
        }
    }

    pub fn is_valid(&self) -> bool {
        GeoPoint::new(self.lat, self.lon).is_some()
    }

    /// Arithmetic mean of the coordinates. Returns `None` for an empty input.
    pub fn mean<I: IntoIterator<Item = GeoPoint>>(points: I) -> Option<GeoPoint> {
        let (mut lat, mut lon, mut n) = (0.0, 0.0, 0usize);
        for p in points {
            lat += p.lat;
            lon += p.lon;
            n += 1;
        }
        if n == 0 {
            return None;
        }
        Some(GeoPoint {
            lat: lat / n as f64,
            lon: lon / n as f64,
        })
    }
}

#[inline]
fn to_rad(deg: f64) -> f64 {
    deg * (PI / 180.0)
}

/// Haversine great-circle distance in kilometres.
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (to_rad(a.lat), to_rad(b.lat));
    let dlat = lat2 - lat1;
    let dlon = to_rad(b.lon - a.lon);

    let s_lat = libm::sin(dlat / 2.0);
    let s_lon = libm::sin(dlon / 2.0);
    let h = s_lat * s_lat + libm::cos(lat1) * libm::cos(lat2) * s_lon * s_lon;
    // rounding can push h a hair past 1 on antipodal pairs
    let h = h.clamp(0.0, 1.0);
    2.0 * EARTH_RADIUS_KM * libm::asin(libm::sqrt(h))
}

/// Maximum one-way distance light in fiber covers for a round-trip difference of `delta_ms`.
///
/// `(delta_ms / 2) * 200 km/ms`, i.e. 100 km per millisecond of RTT difference.
pub fn sol_km(delta_ms: f64) -> f64 {
    delta_ms / 2.0 * FIBER_KM_PER_MS
}

/// Inverse of [`sol_km`]: the round-trip time needed to cover `km` one way.
pub fn km_to_rtt_ms(km: f64) -> f64 {
    2.0 * km / FIBER_KM_PER_MS
}

/// Point reached travelling `distance_km` from `origin` along initial `bearing_deg`.
pub fn destination(origin: GeoPoint, bearing_deg: f64, distance_km: f64) -> GeoPoint {
    let delta = distance_km / EARTH_RADIUS_KM;
    let theta = to_rad(bearing_deg);
    let phi1 = to_rad(origin.lat);
    let lambda1 = to_rad(origin.lon);

    let sin_phi2 =
        libm::sin(phi1) * libm::cos(delta) + libm::cos(phi1) * libm::sin(delta) * libm::cos(theta);
    let phi2 = libm::asin(sin_phi2.clamp(-1.0, 1.0));
    let lambda2 = lambda1
        + libm::atan2(
            libm::sin(theta) * libm::sin(delta) * libm::cos(phi1),
            libm::cos(delta) - libm::sin(phi1) * sin_phi2,
        );

    let mut lon = lambda2 * 180.0 / PI;
    lon = ((lon + 540.0) % 360.0) - 180.0;
    GeoPoint {
        lat: (phi2 * 180.0 / PI).clamp(-90.0, 90.0),
        lon: lon.clamp(-180.0, 180.0),
    }
}
