//! City catalog CSV: `name,country,lat,lon` with an optional `radius_km` column.

use std::io::Read;
use std::path::Path;

use geofix_core::{CityPolygon, GeoPoint, DEFAULT_CITY_RADIUS_KM};
use serde::Deserialize;

use crate::diag::{Diagnostics, Warning};
use crate::error::{Error, Result};

#[derive(Deserialize)]
struct Row {
    name: String,
    country: String,
    lat: f64,
    lon: f64,
    radius_km: Option<f64>,
}

/// Polygon ids follow row order among the accepted rows.
pub fn read_catalog<R: Read>(input: R, diag: &Diagnostics) -> std::result::Result<Vec<CityPolygon>, csv::Error> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut out = Vec::new();
    for (n, row) in rdr.deserialize::<Row>().enumerate() {
        let row = match row {
            Ok(r) => r,
            Err(e) if e.is_io_error() => return Err(e),
            Err(e) => {
                diag.warn(Warning::MalformedCatalogRow, format!("row {}: {e}", n + 2));
                continue;
            }
        };
        let radius_km = row.radius_km.unwrap_or(DEFAULT_CITY_RADIUS_KM);
        match GeoPoint::new(row.lat, row.lon) {
            Some(centroid) if radius_km > 0.0 && radius_km.is_finite() => out.push(CityPolygon {
                polygon_id: out.len() as u32,
                name: row.name,
                country: row.country,
                centroid,
                radius_km,
            }),
            _ => diag.warn(Warning::MalformedCatalogRow, format!("row {}: bad coordinates or radius", n + 2)),
        }
    }
    Ok(out)
}

pub fn load_catalog(path: &Path, diag: &Diagnostics) -> Result<Vec<CityPolygon>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let cat = read_catalog(file, diag).map_err(|e| Error::input(path, e.to_string()))?;
    if cat.is_empty() {
        return Err(Error::input(path, "catalog has no cities"));
    }
    Ok(cat)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_radius_and_ids() {
        let d = Diagnostics::silent();
        let csv = "name,country,lat,lon,radius_km\nParis,FR,48.85,2.35,\nLyon,FR,95,4.8,\nNice,FR,43.7,7.26,15\n";
        let cat = read_catalog(csv.as_bytes(), &d).unwrap();
        assert_eq!(cat.len(), 2);
        assert_eq!(cat[0].radius_km, DEFAULT_CITY_RADIUS_KM);
        assert_eq!((cat[1].polygon_id, cat[1].radius_km), (1, 15.0));
        assert_eq!(d.count(Warning::MalformedCatalogRow), 1);
    }

    #[test]
    fn radius_column_optional() {
        let cat = read_catalog("name,country,lat,lon\nOslo,NO,59.9,10.75\n".as_bytes(), &Diagnostics::silent()).unwrap();
        assert_eq!(cat[0].name, "Oslo");
    }
}
