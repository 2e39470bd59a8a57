//! Geolocation snapshot CSV: `ip,source,lat,lon,city,country`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use geofix_core::{GeoPoint, GeoRecord};
use serde::{Deserialize, Serialize};

use crate::diag::{Diagnostics, Warning};
use crate::error::{Error, Result};

pub type Snapshot = BTreeMap<Ipv4Addr, Vec<GeoRecord>>;

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    ip: String,
    source: String,
    lat: String,
    lon: String,
    city: String,
    country: String,
}

/// Parses snapshot rows. Malformed and out-of-range rows are skipped, and a
/// repeated `(ip, source)` keeps its first row; each case is warned about.
/// Records come back sorted by source, whatever the row order.
pub fn read_snapshot<R: Read>(input: R, diag: &Diagnostics) -> std::result::Result<Snapshot, csv::Error> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut out: Snapshot = BTreeMap::new();
    let mut seen: BTreeSet<(Ipv4Addr, String)> = BTreeSet::new();
    for (n, row) in rdr.deserialize::<Row>().enumerate() {
        let line = n + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) if e.is_io_error() => return Err(e),
            Err(e) => {
                diag.warn(Warning::MalformedGeoRow, format!("row {line}: {e}"));
                continue;
            }
        };
        let (Ok(ip), Ok(lat), Ok(lon)) = (row.ip.parse::<Ipv4Addr>(), row.lat.parse::<f64>(), row.lon.parse::<f64>())
        else {
            diag.warn(Warning::MalformedGeoRow, format!("row {line}: unparseable ip or coordinates"));
            continue;
        };
        if row.source.is_empty() {
            diag.warn(Warning::MalformedGeoRow, format!("row {line}: empty source"));
            continue;
        }
        let Some(location) = GeoPoint::new(lat, lon) else {
            diag.warn(Warning::CoordinateOutOfRange, format!("row {line}: ({lat}, {lon})"));
            continue;
        };
        if !seen.insert((ip, row.source.clone())) {
            diag.warn(Warning::DuplicateGeoRow, format!("row {line}: {ip} from {} again", row.source));
            continue;
        }
        out.entry(ip).or_default().push(GeoRecord {
            ip,
            source: row.source,
            location,
            city: row.city,
            country: row.country,
        });
    }
    for recs in out.values_mut() {
        recs.sort_by(|a, b| a.source.cmp(&b.source));
    }
    Ok(out)
}

pub fn load_geo_snapshot(path: &Path, diag: &Diagnostics) -> Result<Snapshot> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_snapshot(file, diag).map_err(|e| Error::input(path, e.to_string()))
}

/// Rows in `(ip, source)` order.
pub fn write_snapshot<W: Write>(snapshot: &Snapshot, out: W) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["ip", "source", "lat", "lon", "city", "country"])?;
    for recs in snapshot.values() {
        let mut recs: Vec<&GeoRecord> = recs.iter().collect();
        recs.sort_by(|a, b| a.source.cmp(&b.source));
        for r in recs {
            w.write_record([
                r.ip.to_string(),
                r.source.clone(),
                r.location.lat.to_string(),
                r.location.lon.to_string(),
                r.city.clone(),
                r.country.clone(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
