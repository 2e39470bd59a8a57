use std::path::PathBuf;

use geofix::atlas::{load_paths, parse_native};
use geofix::catalog::read_catalog;
use geofix::diag::{Diagnostics, Warning};
use geofix::snapshot::{read_snapshot, write_snapshot};
use geofix_core::PrefixSet;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn atlas_sample_matches_reference_parser() {
    let diag = Diagnostics::silent();
    let got = load_paths(&fixture("atlas_sample.jsonl"), &PrefixSet::bogons(), &diag).unwrap();

    let expected_text = std::fs::read_to_string(fixture("atlas_sample.expected.jsonl")).unwrap();
    let (records, trailer) = expected_text.trim_end().rsplit_once('\n').unwrap();
    let expected = parse_native(records.as_bytes(), &Diagnostics::silent()).unwrap();
    let rejected: serde_json::Value = serde_json::from_str(trailer).unwrap();

    assert_eq!(got.len(), expected.len());
    for (g, e) in got.iter().zip(&expected) {
        assert_eq!(g.path_id, e.path_id);
        assert_eq!(g.hops.len(), e.hops.len(), "{}", g.path_id);
        for (a, b) in g.hops.iter().zip(&e.hops) {
            assert_eq!(a.ip, b.ip, "{}", g.path_id);
            assert!((a.rtt_ms - b.rtt_ms).abs() < 1e-9, "{}: {} vs {}", g.path_id, a.rtt_ms, b.rtt_ms);
        }
    }
    assert_eq!(diag.count(Warning::RejectedPath), rejected["rejected"].as_u64().unwrap());
    assert_eq!(diag.count(Warning::MalformedTraceroute), 0);
}

#[test]
fn keeping_bogons_changes_the_sample() {
    let diag = Diagnostics::silent();
    let kept = load_paths(&fixture("atlas_sample.jsonl"), &PrefixSet::empty(), &diag).unwrap();
    let first = &kept[0];
    assert_eq!(first.hops[0].ip.to_string(), "192.168.1.1");
    assert!((first.hops[0].rtt_ms - 0.488).abs() < 1e-12);
}

#[test]
fn diagnostics_count_each_problem() {
    let text = "ip,source,lat,lon,city,country\n\
                8.8.8.8,a,37.4,-122.1,Mountain View,US\n\
                8.8.8.8,a,37.5,-122.1,Mountain View,US\n\
                8.8.8.8,b,137.4,-122.1,Nowhere,US\n\
                not-an-ip,a,1,1,x,y\n\
                1.1.1.1,,1,1,x,y\n\
                1.1.1.1,c,-33.9,151.2,Sydney,AU\n";
    let buf = std::sync::Arc::new(std::sync::Mutex::new(Vec::new()));
    struct Shared(std::sync::Arc<std::sync::Mutex<Vec<u8>>>);
    impl std::io::Write for Shared {
        fn write(&mut self, b: &[u8]) -> std::io::Result<usize> {
            self.0.lock().unwrap().write(b)
        }
        fn flush(&mut self) -> std::io::Result<()> {
            Ok(())
        }
    }
    let diag = Diagnostics::new(Box::new(Shared(buf.clone())));
    let snap = read_snapshot(text.as_bytes(), &diag).unwrap();
    assert_eq!(snap.len(), 2);
    assert_eq!(snap[&"8.8.8.8".parse().unwrap()].len(), 1);
    assert_eq!(diag.count(Warning::DuplicateGeoRow), 1);
    assert_eq!(diag.count(Warning::CoordinateOutOfRange), 1);
    assert_eq!(diag.count(Warning::MalformedGeoRow), 2);
    assert_eq!(diag.total(), 4);
    diag.finish();
    let printed = String::from_utf8(buf.lock().unwrap().clone()).unwrap();
    assert_eq!(printed.lines().filter(|l| l.starts_with("warning[")).count(), 4);
    assert!(printed.ends_with(&format!("{}\n", diag.summary_line())));
    assert!(diag.summary_line().starts_with("warnings: 4 ("));
}

#[test]
fn snapshot_round_trip() {
    let text = "ip,source,lat,lon,city,country\n\
                9.9.9.9,b,52.37,4.9,Amsterdam,NL\n\
                9.9.9.9,a,52.36,4.89,Amsterdam,NL\n";
    let diag = Diagnostics::silent();
    let snap = read_snapshot(text.as_bytes(), &diag).unwrap();
    let mut out = Vec::new();
    write_snapshot(&snap, &mut out).unwrap();
    let again = read_snapshot(out.as_slice(), &diag).unwrap();
    assert_eq!(snap, again);
    assert_eq!(diag.total(), 0);
}

#[test]
fn catalog_rows_and_radius() {
    let text = "name,country,lat,lon,radius_km\nParis,FR,48.86,2.35,30\nLyon,FR,45.76,4.84,\nbad,FR,x,1,\n";
    let diag = Diagnostics::silent();
    let cat = read_catalog(text.as_bytes(), &diag).unwrap();
    assert_eq!(cat.len(), 2);
    assert_eq!(cat[0].radius_km, 30.0);
    assert_eq!(cat[1].radius_km, 20.0);
    assert_eq!(cat[1].polygon_id, 1);
    assert_eq!(diag.count(Warning::MalformedCatalogRow), 1);
}
