//! City polygons, approximated as discs, and a built-in catalog of major cities.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::geo::GeoPoint;

/// City radius used when a catalog row carries none.
pub const DEFAULT_CITY_RADIUS_KM: f64 = 20.0;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CityPolygon {
    pub polygon_id: u32,
    pub name: String,
    pub country: String,
    pub centroid: GeoPoint,
    pub radius_km: f64,
}

// (name, country, lat, lon)
const BUILTIN: &[(&str, &str, f64, f64)] = &[
    ("London", "GB", 51.5074, -0.1278),
    ("Manchester", "GB", 53.4808, -2.2426),
    ("Birmingham", "GB", 52.4862, -1.8904),
    ("Glasgow", "GB", 55.8642, -4.2518),
    ("Edinburgh", "GB", 55.9533, -3.1883),
    ("Dublin", "IE", 53.3498, -6.2603),
    ("Paris", "FR", 48.8566, 2.3522),
    ("Lyon", "FR", 45.7640, 4.8357),
    ("Marseille", "FR", 43.2965, 5.3698),
    ("Toulouse", "FR", 43.6047, 1.4442),
    ("Bordeaux", "FR", 44.8378, -0.5792),
    ("Lille", "FR", 50.6292, 3.0573),
    ("Nantes", "FR", 47.2184, -1.5536),
    ("Strasbourg", "FR", 48.5734, 7.7521),
    ("Nice", "FR", 43.7102, 7.2620),
    ("Brussels", "BE", 50.8503, 4.3517),
    ("Amsterdam", "NL", 52.3676, 4.9041),
    ("Rotterdam", "NL", 51.9244, 4.4777),
    ("Luxembourg", "LU", 49.6116, 6.1319),
    ("Frankfurt", "DE", 50.1109, 8.6821),
    ("Berlin", "DE", 52.5200, 13.4050),
    ("Hamburg", "DE", 53.5511, 9.9937),
    ("Munich", "DE", 48.1351, 11.5820),
    ("Cologne", "DE", 50.9375, 6.9603),
    ("Stuttgart", "DE", 48.7758, 9.1829),
    ("Dusseldorf", "DE", 51.2277, 6.7735),
    ("Leipzig", "DE", 51.3397, 12.3731),
    ("Hanover", "DE", 52.3759, 9.7320),
    ("Nuremberg", "DE", 49.4521, 11.0767),
    ("Zurich", "CH", 47.3769, 8.5417),
    ("Geneva", "CH", 46.2044, 6.1432),
    ("Vienna", "AT", 48.2082, 16.3738),
    ("Prague", "CZ", 50.0755, 14.4378),
    ("Warsaw", "PL", 52.2297, 21.0122),
    ("Krakow", "PL", 50.0647, 19.9450),
    ("Budapest", "HU", 47.4979, 19.0402),
    ("Bratislava", "SK", 48.1486, 17.1077),
    ("Milan", "IT", 45.4642, 9.1900),
    ("Rome", "IT", 41.9028, 12.4964),
    ("Naples", "IT", 40.8518, 14.2681),
    ("Turin", "IT", 45.0703, 7.6869),
    ("Madrid", "ES", 40.4168, -3.7038),
    ("Barcelona", "ES", 41.3851, 2.1734),
    ("Valencia", "ES", 39.4699, -0.3763),
    ("Seville", "ES", 37.3891, -5.9845),
    ("Lisbon", "PT", 38.7223, -9.1393),
    ("Porto", "PT", 41.1579, -8.6291),
    ("Copenhagen", "DK", 55.6761, 12.5683),
    ("Stockholm", "SE", 59.3293, 18.0686),
    ("Gothenburg", "SE", 57.7089, 11.9746),
    ("Oslo", "NO", 59.9139, 10.7522),
    ("Helsinki", "FI", 60.1699, 24.9384),
    ("Tallinn", "EE", 59.4370, 24.7536),
    ("Riga", "LV", 56.9496, 24.1052),
    ("Vilnius", "LT", 54.6872, 25.2797),
    ("Bucharest", "RO", 44.4268, 26.1025),
    ("Sofia", "BG", 42.6977, 23.3219),
    ("Belgrade", "RS", 44.7866, 20.4489),
    ("Zagreb", "HR", 45.8150, 15.9819),
    ("Ljubljana", "SI", 46.0569, 14.5058),
    ("Athens", "GR", 37.9838, 23.7275),
    ("Istanbul", "TR", 41.0082, 28.9784),
    ("Ankara", "TR", 39.9334, 32.8597),
    ("Kyiv", "UA", 50.4501, 30.5234),
    ("Moscow", "RU", 55.7558, 37.6173),
    ("Saint Petersburg", "RU", 59.9311, 30.3609),
    ("Minsk", "BY", 53.9006, 27.5590),
    ("New York", "US", 40.7128, -74.0060),
    ("Washington", "US", 38.9072, -77.0369),
    ("Boston", "US", 42.3601, -71.0589),
    ("Philadelphia", "US", 39.9526, -75.1652),
    ("Atlanta", "US", 33.7490, -84.3880),
    ("Miami", "US", 25.7617, -80.1918),
    ("Chicago", "US", 41.8781, -87.6298),
    ("Dallas", "US", 32.7767, -96.7970),
    ("Houston", "US", 29.7604, -95.3698),
    ("Denver", "US", 39.7392, -104.9903),
    ("Phoenix", "US", 33.4484, -112.0740),
    ("Los Angeles", "US", 34.0522, -118.2437),
    ("San Francisco", "US", 37.7749, -122.4194),
    ("San Jose", "US", 37.3382, -121.8863),
    ("Seattle", "US", 47.6062, -122.3321),
    ("Kansas City", "US", 39.0997, -94.5786),
    ("Minneapolis", "US", 44.9778, -93.2650),
    ("Salt Lake City", "US", 40.7608, -111.8910),
    ("Toronto", "CA", 43.6532, -79.3832),
    ("Montreal", "CA", 45.5017, -73.5673),
    ("Vancouver", "CA", 49.2827, -123.1207),
    ("Mexico City", "MX", 19.4326, -99.1332),
    ("Sao Paulo", "BR", -23.5505, -46.6333),
    ("Rio de Janeiro", "BR", -22.9068, -43.1729),
    ("Buenos Aires", "AR", -34.6037, -58.3816),
    ("Santiago", "CL", -33.4489, -70.6693),
    ("Lima", "PE", -12.0464, -77.0428),
    ("Bogota", "CO", 4.7110, -74.0721),
    ("Tokyo", "JP", 35.6762, 139.6503),
    ("Osaka", "JP", 34.6937, 135.5023),
    ("Seoul", "KR", 37.5665, 126.9780),
    ("Beijing", "CN", 39.9042, 116.4074),
    ("Shanghai", "CN", 31.2304, 121.4737),
    ("Guangzhou", "CN", 23.1291, 113.2644),
    ("Shenzhen", "CN", 22.5431, 114.0579),
    ("Hong Kong", "HK", 22.3193, 114.1694),
    ("Taipei", "TW", 25.0330, 121.5654),
    ("Singapore", "SG", 1.3521, 103.8198),
    ("Kuala Lumpur", "MY", 3.1390, 101.6869),
    ("Bangkok", "TH", 13.7563, 100.5018),
    ("Jakarta", "ID", -6.2088, 106.8456),
    ("Manila", "PH", 14.5995, 120.9842),
    ("Hanoi", "VN", 21.0278, 105.8342),
    ("Ho Chi Minh City", "VN", 10.8231, 106.6297),
    ("Mumbai", "IN", 19.0760, 72.8777),
    ("Delhi", "IN", 28.7041, 77.1025),
    ("Bangalore", "IN", 12.9716, 77.5946),
    ("Chennai", "IN", 13.0827, 80.2707),
    ("Dubai", "AE", 25.2048, 55.2708),
    ("Riyadh", "SA", 24.7136, 46.6753),
    ("Tel Aviv", "IL", 32.0853, 34.7818),
    ("Tehran", "IR", 35.6892, 51.3890),
    ("Karachi", "PK", 24.8607, 67.0011),
    ("Cairo", "EG", 30.0444, 31.2357),
    ("Lagos", "NG", 6.5244, 3.3792),
    ("Nairobi", "KE", -1.2921, 36.8219),
    ("Johannesburg", "ZA", -26.2041, 28.0473),
    ("Cape Town", "ZA", -33.9249, 18.4241),
    ("Casablanca", "MA", 33.5731, -7.5898),
    ("Sydney", "AU", -33.8688, 151.2093),
    ("Melbourne", "AU", -37.8136, 144.9631),
    ("Perth", "AU", -31.9505, 115.8605),
    ("Auckland", "NZ", -36.8485, 174.7633),
];

/// The built-in catalog of major cities, every disc at the default 20 km radius.
pub fn builtin_catalog() -> Vec<CityPolygon> {
    BUILTIN
        .iter()
        .enumerate()
        .map(|(i, &(name, country, lat, lon))| CityPolygon {
            polygon_id: i as u32,
            name: name.to_string(),
            country: country.to_string(),
            centroid: GeoPoint { lat, lon },
            radius_km: DEFAULT_CITY_RADIUS_KM,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::haversine_km;

    #[test]
    fn builtin_is_valid_and_distinct() {
        let cat = builtin_catalog();
        assert!(cat.len() > 100);
        for (i, c) in cat.iter().enumerate() {
            assert!(c.centroid.is_valid(), "{}", c.name);
            assert_eq!(c.country.len(), 2);
            for d in &cat[i + 1..] {
                assert!(haversine_km(c.centroid, d.centroid) > 10.0, "{} {}", c.name, d.name);
            }
        }
    }
}
