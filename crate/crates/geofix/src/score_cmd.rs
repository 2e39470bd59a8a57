//! The `score` subcommand: compare a run's `ips.jsonl` with a synthetic world's ground truth.

use std::io::BufRead;
use std::path::Path;

use geofix_core::resolve::{MplsReason, ResolutionOutcome, Verdict};
use geofix_core::synth::{score_against_truth, ScoreReport};
use geofix_core::{CandidateState, CityCluster, GeoPoint, Status};

use crate::error::{Error, Result};
use crate::fetch::write_atomic;
use crate::pipeline::IpRecord;
use crate::synth_cmd::{read_displaced, read_world};

pub const SCORE_FILE: &str = "score.csv";
/// Distance under which an interface correction counts as accurate.
pub const INTERFACE_OK_KM: f64 = 100.0;

pub fn read_ip_records(path: &Path) -> Result<Vec<IpRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: IpRecord =
            serde_json::from_str(&line).map_err(|e| Error::input(path, format!("line {}: {e}", n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

fn point(lat: f64, lon: f64) -> std::result::Result<GeoPoint, String> {
    GeoPoint::new(lat, lon).ok_or_else(|| format!("coordinates ({lat}, {lon}) out of range"))
}

/// Rebuilds the states and outcomes scoring needs. Details the file does not
/// carry (MPLS reasons, false-positive clusters) get placeholders that scoring ignores.
pub fn rebuild(records: &[IpRecord]) -> std::result::Result<(Vec<CandidateState>, Vec<ResolutionOutcome>), String> {
    let mut states = Vec::with_capacity(records.len());
    let mut outcomes = Vec::new();
    for r in records {
        let mut clusters = Vec::with_capacity(r.clusters.len());
        for (i, c) in r.clusters.iter().enumerate() {
            clusters.push(CityCluster {
                cluster_id: i as u32,
                centroid: point(c.lat, c.lon)?,
                city: c.city.clone(),
                country: c.country.clone(),
                supporting_sources: Default::default(),
                record_count: 0,
            });
        }
        let mut s = CandidateState::new(r.ip, clusters);
        s.status = match r.status.as_str() {
            "active" => Status::Active,
            "anomalous" => Status::Anomalous,
            other => return Err(format!("{}: unknown status `{other}`", r.ip)),
        };
        if let Some(v) = &r.verdict {
            let verdict = match (v.as_str(), &r.resolved) {
                ("interface_affected", Some(p)) => {
                    Verdict::InterfaceAffected { resolved: point(p.lat, p.lon)?, polygon_id: 0 }
                }
                ("interface_affected", None) => return Err(format!("{}: interface verdict without a location", r.ip)),
                ("mpls_affected", _) => Verdict::MplsAffected(MplsReason::Unresolvable),
                ("false_positive", _) => {
                    let c = s.candidates.first().cloned().ok_or_else(|| format!("{}: false positive with no cluster", r.ip))?;
                    Verdict::FalsePositive(c)
                }
                (other, _) => return Err(format!("{}: unknown verdict `{other}`", r.ip)),
            };
            outcomes.push(ResolutionOutcome { ip: r.ip, verdict, anchor_count: r.anchors, max_overlap: 0 });
        }
        states.push(s);
    }
    Ok((states, outcomes))
}

fn rate(v: Option<f64>) -> String {
    v.map_or_else(|| "N/A".to_string(), |x| format!("{x:.6}"))
}

/// `metric,value` rows.
pub fn score_rows(r: &ScoreReport) -> Vec<(&'static str, String)> {
    let t = &r.tagging;
    let v = &r.verdict;
    vec![
        ("true_positive", t.true_positive.to_string()),
        ("false_positive", t.false_positive.to_string()),
        ("false_negative", t.false_negative.to_string()),
        ("true_negative", t.true_negative.to_string()),
        ("precision", rate(t.precision())),
        ("recall", rate(t.recall())),
        ("verdict_true_positive", v.true_positive.to_string()),
        ("verdict_false_positive", v.false_positive.to_string()),
        ("verdict_false_negative", v.false_negative.to_string()),
        ("verdict_precision", rate(v.precision())),
        ("verdict_recall", rate(v.recall())),
        ("tunnel_interior", r.tunnel_interior.to_string()),
        ("tunnel_interior_caught", r.tunnel_interior_caught.to_string()),
        ("tunnel_catch_rate", rate(r.tunnel_catch_rate())),
        ("interface_resolved", r.interface_errors_km.len().to_string()),
        ("interface_within_100km", rate(r.interface_within(INTERFACE_OK_KM))),
        ("active", r.active.to_string()),
        ("active_true_city_rate", rate(r.active_true_city_rate())),
    ]
}

pub fn score_csv(r: &ScoreReport) -> Vec<u8> {
    let mut s = String::from("metric,value\n");
    for (k, v) in score_rows(r) {
        s.push_str(k);
        s.push(',');
        s.push_str(&v);
        s.push('\n');
    }
    s.into_bytes()
}

pub fn score_files(ips: &Path, world: &Path, displaced: &Path) -> Result<ScoreReport> {
    let records = read_ip_records(ips)?;
    let world = read_world(world)?;
    let displaced = read_displaced(displaced)?;
    let (states, outcomes) = rebuild(&records).map_err(|e| Error::input(ips, e))?;
    score_against_truth(&outcomes, &states, &world, &displaced.displaced)
        .map_err(|ip| Error::input(ips, format!("{ip} is not a router of the given world")))
}

/// Scores and writes `score.csv` into `out`.
pub fn score(ips: &Path, world: &Path, displaced: &Path, out: &Path) -> Result<ScoreReport> {
    let report = score_files(ips, world, displaced)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let p = out.join(SCORE_FILE);
    write_atomic(&p, &score_csv(&report)).map_err(|e| Error::io(&p, e))?;
    Ok(report)
}
