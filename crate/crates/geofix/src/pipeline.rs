//! The `run` subcommand: load inputs, analyze, and write `ips.jsonl` plus the report CSVs.

use std::collections::BTreeSet;
use std::net::Ipv4Addr;
use std::path::Path;

use geofix_core::analysis::{analyze, Analysis};
use geofix_core::report::{
    cluster_histogram, country_delta, distance_cdf, single_cluster_fraction, sol_baseline, summarize, Category,
    CountryDelta, DistanceCdf, HistogramRow, Method, SummaryTable, HISTOGRAM_BUCKETS, NEAR_CONSENSUS_KM,
};
use geofix_core::resolve::{ResolutionOutcome, Verdict};
use geofix_core::{builtin_catalog, CandidateState, CityPolygon, CleanPath, PrefixSet, SpatialIndex, Status};
use serde::{Deserialize, Serialize};

use crate::atlas::load_paths;
use crate::catalog::load_catalog;
use crate::config::PipelineConfig;
use crate::diag::{Diagnostics, Warning};
use crate::error::{Error, Result};
use crate::fetch::write_atomic;
use crate::parallel::RayonExecutor;
use crate::snapshot::{load_geo_snapshot, Snapshot};

pub const IPS_FILE: &str = "ips.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const HISTOGRAM_FILE: &str = "clusters_hist.csv";
pub const DISTANCE_FILE: &str = "distance_cdf.csv";
pub const COUNTRY_FILE: &str = "country_delta.csv";
pub const OUTPUT_FILES: [&str; 5] = [IPS_FILE, SUMMARY_FILE, HISTOGRAM_FILE, DISTANCE_FILE, COUNTRY_FILE];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub lat: f64,
    pub lon: f64,
    pub city: String,
    pub country: String,
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub lat: f64,
    pub lon: f64,
}

/// One line of `ips.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpRecord {
    pub ip: Ipv4Addr,
    pub status: String,
    pub verdict: Option<String>,
    pub clusters: Vec<ClusterRecord>,
    pub resolved: Option<PointRecord>,
    pub anchors: usize,
}

pub fn status_label(s: Status) -> &'static str {
    match s {
        Status::Active => "active",
        Status::Anomalous => "anomalous",
    }
}

pub fn verdict_label(v: &Verdict) -> &'static str {
    match v {
        Verdict::MplsAffected(_) => "mpls_affected",
        Verdict::InterfaceAffected { .. } => "interface_affected",
        Verdict::FalsePositive(_) => "false_positive",
    }
}

pub fn ip_records(states: &[CandidateState], outcomes: &[ResolutionOutcome]) -> Vec<IpRecord> {
    states
        .iter()
        .map(|s| {
            let o = outcomes.binary_search_by(|o| o.ip.cmp(&s.ip)).ok().map(|i| &outcomes[i]);
            let resolved = match o.map(|o| &o.verdict) {
                Some(Verdict::InterfaceAffected { resolved, .. }) => {
                    Some(PointRecord { lat: resolved.lat, lon: resolved.lon })
                }
                _ => None,
            };
            IpRecord {
                ip: s.ip,
                status: status_label(s.status).into(),
                verdict: o.map(|o| verdict_label(&o.verdict).into()),
                clusters: s
                    .candidates
                    .iter()
                    .zip(&s.scores)
                    .map(|(c, sc)| ClusterRecord {
                        lat: c.centroid.lat,
                        lon: c.centroid.lon,
                        city: c.city.clone(),
                        country: c.country.clone(),
                        ratio: sc.ratio,
                    })
                    .collect(),
                resolved,
                anchors: o.map_or(0, |o| o.anchor_count),
            }
        })
        .collect()
}

fn pct(v: Option<f64>) -> String {
    v.map(|p| format!("{p:.4}")).unwrap_or_default()
}

fn csv_bytes<F>(header: &[&str], fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> csv::Result<()>,
{
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let run = |w: &mut csv::Writer<&mut Vec<u8>>| -> csv::Result<()> {
            w.write_record(header)?;
            fill(w)?;
            w.flush()?;
            Ok(())
        };
        run(&mut w).map_err(|e| Error::Config(format!("csv: {e}")))?;
    }
    Ok(buf)
}

/// Table layout: an `all` row with the element totals, then one row per category.
pub fn summary_csv(t: &SummaryTable) -> Result<Vec<u8>> {
    csv_bytes(&["category", "ips", "ips_pct", "links", "links_pct", "traceroutes", "traceroutes_pct"], |w| {
        let all = t.totals.percent_of(&t.totals);
        w.write_record([
            "all".to_string(),
            t.totals.ips.to_string(),
            pct(all[0]),
            t.totals.links.to_string(),
            pct(all[1]),
            t.totals.traceroutes.to_string(),
            pct(all[2]),
        ])?;
        for c in Category::ALL {
            let n = t.counts(c);
            let p = t.percentages(c);
            w.write_record([
                c.label().to_string(),
                n.ips.to_string(),
                pct(p[0]),
                n.links.to_string(),
                pct(p[1]),
                n.traceroutes.to_string(),
                pct(p[2]),
            ])?;
        }
        Ok(())
    })
}

pub fn histogram_csv(rows: &[HistogramRow]) -> Result<Vec<u8>> {
    csv_bytes(&["method", "clusters", "ips", "fraction"], |w| {
        for r in rows {
            let bucket = if r.clusters == HISTOGRAM_BUCKETS - 1 {
                format!("{}+", r.clusters)
            } else {
                r.clusters.to_string()
            };
            w.write_record([r.method.label().to_string(), bucket, r.ips.to_string(), format!("{:.6}", r.fraction)])?;
        }
        Ok(())
    })
}

pub fn distance_csv(cdf: &DistanceCdf) -> Result<Vec<u8>> {
    let n = cdf.distances.len();
    csv_bytes(&["ip", "distance_km", "cumulative_fraction"], |w| {
        for (i, (ip, km)) in cdf.distances.iter().enumerate() {
            w.write_record([ip.to_string(), format!("{km:.3}"), format!("{:.6}", (i + 1) as f64 / n as f64)])?;
        }
        Ok(())
    })
}

pub fn country_csv(d: &CountryDelta) -> Result<Vec<u8>> {
    csv_bytes(&["country", "resolved", "consensus", "delta"], |w| {
        for (c, delta) in d.deltas() {
            let r = d.resolved.get(&c).copied().unwrap_or(0);
            let k = d.consensus.get(&c).copied().unwrap_or(0);
            w.write_record([c, r.to_string(), k.to_string(), delta.to_string()])?;
        }
        Ok(())
    })
}

/// Figures printed after a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub paths: usize,
    pub ips: usize,
    pub anomalous: usize,
    pub mpls: usize,
    pub interface: usize,
    pub false_positive: usize,
    pub iterations: u32,
    pub converged: bool,
    pub single_cluster_refined: f64,
    pub single_cluster_baseline: f64,
    pub near_consensus: Option<f64>,
    pub country_changed: Option<f64>,
}

impl std::fmt::Display for RunSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{:.1}%", 100.0 * x));
        writeln!(f, "paths: {}, ips: {}", self.paths, self.ips)?;
        writeln!(
            f,
            "anomalous: {} (mpls {}, interface {}, false positive {})",
            self.anomalous, self.mpls, self.interface, self.false_positive
        )?;
        writeln!(f, "iterations: {}{}", self.iterations, if self.converged { "" } else { " (not converged)" })?;
        writeln!(
            f,
            "single-cluster ips: {:.1}% refined, {:.1}% speed-of-light baseline",
            100.0 * self.single_cluster_refined,
            100.0 * self.single_cluster_baseline
        )?;
        writeln!(f, "corrected within {NEAR_CONSENSUS_KM} km of database consensus: {}", opt(self.near_consensus))?;
        write!(f, "corrected with a country change: {}", opt(self.country_changed))
    }
}

/// Everything a run computes, before anything is written.
pub struct RunResult {
    pub analysis: Analysis,
    pub summary: SummaryTable,
    pub histogram: Vec<HistogramRow>,
    pub distances: DistanceCdf,
    pub countries: CountryDelta,
    pub report: RunSummary,
}

pub fn analyze_inputs(
    paths: &[CleanPath],
    snapshot: &Snapshot,
    catalog: Vec<CityPolygon>,
    cfg: &PipelineConfig,
    diag: &Diagnostics,
) -> Result<RunResult> {
    let exec = RayonExecutor::new(cfg.threads)?;
    let index = SpatialIndex::build(catalog);
    let a = &cfg.analysis;

    let missing: BTreeSet<Ipv4Addr> =
        paths.iter().flat_map(|p| p.hops.iter().map(|h| h.ip)).filter(|ip| !snapshot.contains_key(ip)).collect();
    for ip in &missing {
        diag.warn(Warning::MissingFromSnapshot, format!("{ip} has no geolocation records"));
    }

    let analysis = analyze(paths, snapshot, &index, a, &exec);
    let baseline = sol_baseline(paths, snapshot, a.merge_radius_km, &a.refine);
    let histogram = cluster_histogram(&analysis.states, &baseline);
    let distances = distance_cdf(&analysis.outcomes, snapshot, a.merge_radius_km);
    let countries = country_delta(&analysis.outcomes, snapshot, &index, a.merge_radius_km);
    let summary = summarize(&analysis.outcomes, paths);

    let count = |f: fn(&Verdict) -> bool| analysis.outcomes.iter().filter(|o| f(&o.verdict)).count();
    let report = RunSummary {
        paths: paths.len(),
        ips: analysis.states.len(),
        anomalous: analysis.outcomes.len(),
        mpls: count(|v| matches!(v, Verdict::MplsAffected(_))),
        interface: count(|v| matches!(v, Verdict::InterfaceAffected { .. })),
        false_positive: count(|v| matches!(v, Verdict::FalsePositive(_))),
        iterations: analysis.iteration.iterations,
        converged: analysis.iteration.converged,
        single_cluster_refined: single_cluster_fraction(&histogram, Method::Refined),
        single_cluster_baseline: single_cluster_fraction(&histogram, Method::SolBaseline),
        near_consensus: distances.fraction_below(NEAR_CONSENSUS_KM),
        country_changed: countries.changed_fraction(),
    };
    Ok(RunResult { analysis, summary, histogram, distances, countries, report })
}

pub fn write_outputs(out: &Path, r: &RunResult) -> Result<()> {
    let mut ips = Vec::new();
    for rec in ip_records(&r.analysis.states, &r.analysis.outcomes) {
        serde_json::to_writer(&mut ips, &rec).map_err(|e| Error::Config(format!("json: {e}")))?;
        ips.push(b'\n');
    }
    let files = [
        (IPS_FILE, ips),
        (SUMMARY_FILE, summary_csv(&r.summary)?),
        (HISTOGRAM_FILE, histogram_csv(&r.histogram)?),
        (DISTANCE_FILE, distance_csv(&r.distances)?),
        (COUNTRY_FILE, country_csv(&r.countries)?),
    ];
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for (name, bytes) in files {
        let p = out.join(name);
        write_atomic(&p, &bytes).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

/// The whole `run` subcommand.
pub fn run(cfg: &PipelineConfig, diag: &Diagnostics) -> Result<RunSummary> {
    cfg.validate_run()?;
    let (Some(tr), Some(snap), Some(out)) = (&cfg.traceroutes, &cfg.snapshot, &cfg.out) else {
        unreachable!("validated above");
    };
    let bogons = if cfg.drop_bogons { PrefixSet::bogons() } else { PrefixSet::empty() };
    let paths = load_paths(tr, &bogons, diag)?;
    if paths.is_empty() {
        return Err(Error::input(tr, "no traceroute survived normalization"));
    }
    let snapshot = load_geo_snapshot(snap, diag)?;
    let catalog = match &cfg.catalog {
        Some(c) => load_catalog(c, diag)?,
        None => builtin_catalog(),
    };
    let result = analyze_inputs(&paths, &snapshot, catalog, cfg, diag)?;
    for ip in result.distances.missing.iter().chain(&result.countries.missing) {
        diag.warn(Warning::MissingFromSnapshot, format!("corrected {ip} left out of the consensus reports"));
    }
    write_outputs(out, &result)?;
    Ok(result.report)
}
