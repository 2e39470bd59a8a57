//! Cache-first client for external geolocation services.
//!
//! Each `(source, ip)` response body is cached as `<cache>/<source>/<ip>.json`
//! and never requested again. Requests to one source are serialized and spaced
//! by `1 / rate_per_s`; sources run concurrently.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use geofix_core::{GeoPoint, GeoRecord, PrefixSet};
use serde_json::Value;

use crate::atlas::load_paths;
use crate::config::{PipelineConfig, SourceConfig};
use crate::diag::{Diagnostics, Warning};
use crate::error::{Error, Result};
use crate::snapshot::{write_snapshot, Snapshot};

const TIMEOUT: Duration = Duration::from_secs(10);

fn number(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn text(v: Option<&Value>) -> Option<String> {
    match v? {
        Value::String(s) => Some(s.clone()),
        Value::Object(m) => ["code", "name"].iter().find_map(|k| m.get(*k)?.as_str().map(String::from)),
        _ => None,
    }
}

fn first<'a>(obj: &'a serde_json::Map<String, Value>, keys: &[&str]) -> Option<&'a Value> {
    keys.iter().find_map(|k| obj.get(*k))
}

/// Pulls `(location, city, country)` out of the response shapes common
/// services use: flat `latitude`/`lat` fields, a `loc` string of `"lat,lon"`,
/// or the same fields under a `location` object.
pub fn extract(body: &Value) -> Option<(GeoPoint, String, String)> {
    let top = body.as_object()?;
    let nested = top.get("location").and_then(Value::as_object);
    let lookup = |keys: &[&str]| first(top, keys).or_else(|| nested.and_then(|n| first(n, keys)));
    let (lat, lon) = match (lookup(&["latitude", "lat"]), lookup(&["longitude", "lon", "lng"])) {
        (Some(a), Some(b)) => (number(a)?, number(b)?),
        _ => {
            let (a, b) = top.get("loc")?.as_str()?.split_once(',')?;
            (a.trim().parse().ok()?, b.trim().parse().ok()?)
        }
    };
    let city = text(lookup(&["city", "city_name"])).unwrap_or_default();
    let country = text(lookup(&["country_code", "countryCode", "country_code2", "country"])).unwrap_or_default();
    Some((GeoPoint::new(lat, lon)?, city, country))
}

fn cache_path(cache_dir: &Path, source: &str, ip: Ipv4Addr) -> PathBuf {
    cache_dir.join(source).join(format!("{ip}.json"))
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
        std::process::id()
    ));
    let mut f = std::fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    std::fs::rename(&tmp, path)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SourceStats {
    pub cached: usize,
    pub requested: usize,
    pub failed: usize,
}

#[derive(Debug, Default)]
pub struct FetchReport {
    pub snapshot: Snapshot,
    pub per_source: BTreeMap<String, SourceStats>,
}

impl FetchReport {
    pub fn requests(&self) -> usize {
        self.per_source.values().map(|s| s.requested).sum()
    }
}

fn request(url: &str) -> std::result::Result<String, String> {
    let resp = ureq::get(url).timeout(TIMEOUT).call().map_err(|e| e.to_string())?;
    resp.into_string().map_err(|e| e.to_string())
}

fn fetch_source(
    name: &str,
    src: &SourceConfig,
    ips: &[Ipv4Addr],
    cache_dir: &Path,
    diag: &Diagnostics,
) -> (Vec<GeoRecord>, SourceStats) {
    let mut stats = SourceStats::default();
    let mut out = Vec::new();
    let spacing = Duration::from_secs_f64(1.0 / src.rate_per_s);
    let mut next_slot: Option<Instant> = None;
    for &ip in ips {
        let cached = cache_path(cache_dir, name, ip);
        let body = match std::fs::read_to_string(&cached) {
            Ok(b) => {
                stats.cached += 1;
                b
            }
            Err(_) => {
                let now = Instant::now();
                let slot = next_slot.map_or(now, |s| s.max(now));
                std::thread::sleep(slot - now);
                next_slot = Some(slot + spacing);
                stats.requested += 1;
                let url = src.url.replace("{ip}", &ip.to_string()).replace("{key}", &src.key);
                match request(&url) {
                    Ok(b) => {
                        if let Err(e) = write_atomic(&cached, b.as_bytes()) {
                            diag.warn(Warning::FetchFailed, format!("{name}: caching {ip}: {e}"));
                        }
                        b
                    }
                    Err(e) => {
                        stats.failed += 1;
                        diag.warn(Warning::FetchFailed, format!("{name}: {ip}: {e}"));
                        continue;
                    }
                }
            }
        };
        match serde_json::from_str::<Value>(&body).ok().as_ref().and_then(extract) {
            Some((location, city, country)) => {
                out.push(GeoRecord { ip, source: name.to_string(), location, city, country })
            }
            None => {
                stats.failed += 1;
                diag.warn(Warning::FetchFailed, format!("{name}: {ip}: no usable location in response"));
            }
        }
    }
    // the last request holds its slot to the end
    if let Some(slot) = next_slot {
        let now = Instant::now();
        if slot > now {
            std::thread::sleep(slot - now);
        }
    }
    (out, stats)
}

/// Looks up every IP in every source. Fails only if no source yields a single record.
pub fn fetch_geo(
    ips: &[Ipv4Addr],
    sources: &BTreeMap<String, SourceConfig>,
    cache_dir: &Path,
    diag: &Diagnostics,
) -> Result<FetchReport> {
    if sources.is_empty() {
        return Err(Error::Config("no `source.<name>.url` entries configured".into()));
    }
    let results: Vec<(String, Vec<GeoRecord>, SourceStats)> = std::thread::scope(|s| {
        let handles: Vec<_> = sources
            .iter()
            .map(|(name, src)| {
                s.spawn(move || {
                    let (recs, stats) = fetch_source(name, src, ips, cache_dir, diag);
                    (name.clone(), recs, stats)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("fetch worker panicked")).collect()
    });
    let mut report = FetchReport::default();
    for (name, recs, stats) in results {
        for r in recs {
            report.snapshot.entry(r.ip).or_default().push(r);
        }
        report.per_source.insert(name, stats);
    }
    for recs in report.snapshot.values_mut() {
        recs.sort_by(|a, b| a.source.cmp(&b.source));
    }
    if !ips.is_empty() && report.snapshot.is_empty() {
        return Err(Error::Fetch("no source returned any location".into()));
    }
    Ok(report)
}

pub const FETCHED_SNAPSHOT: &str = "snapshot.csv";

/// The `fetch-geo` subcommand: look up every hop IP of the configured
/// traceroutes and write `snapshot.csv` into the output directory.
/// The cache defaults to `<out>/cache`.
pub fn fetch_cmd(cfg: &PipelineConfig, diag: &Diagnostics) -> Result<FetchReport> {
    let tr = cfg.traceroutes.as_deref().ok_or_else(|| Error::Config("`traceroutes` is not set".into()))?;
    let out = cfg.out.as_deref().ok_or_else(|| Error::Config("no output directory (`out` or --out)".into()))?;
    if !tr.exists() {
        return Err(Error::Config(format!("`traceroutes`: {} does not exist", tr.display())));
    }
    if cfg.sources.is_empty() {
        return Err(Error::Config("no `source.<name>.url` entries configured".into()));
    }
    let bogons = if cfg.drop_bogons { PrefixSet::bogons() } else { PrefixSet::empty() };
    let paths = load_paths(tr, &bogons, diag)?;
    let ips: Vec<Ipv4Addr> =
        paths.iter().flat_map(|p| p.hops.iter().map(|h| h.ip)).collect::<BTreeSet<_>>().into_iter().collect();
    let cache = cfg.cache_dir.clone().unwrap_or_else(|| out.join("cache"));
    let report = fetch_geo(&ips, &cfg.sources, &cache, diag)?;
    let mut bytes = Vec::new();
    write_snapshot(&report.snapshot, &mut bytes).map_err(|e| Error::Fetch(format!("csv: {e}")))?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let p = out.join(FETCHED_SNAPSHOT);
    write_atomic(&p, &bytes).map_err(|e| Error::io(&p, e))?;
    Ok(report)
}
