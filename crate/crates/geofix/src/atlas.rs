//! Traceroute files: RIPE Atlas results and the native one-path-per-line format.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use geofix_core::path::{normalize_hops, to_raw_hops};
use geofix_core::{CleanPath, Hop, PrefixSet, RawHop, RawTraceroute, Rejection, Reply};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::diag::{Diagnostics, Warning};
use crate::error::{Error, Result};

fn id_field(obj: &Map<String, Value>, key: &str) -> Result<String, String> {
    match obj.get(key) {
        Some(Value::Number(n)) => Ok(n.to_string()),
        Some(Value::String(s)) if !s.is_empty() => Ok(s.clone()),
        _ => Err(format!("missing `{key}`")),
    }
}

fn parse_reply(v: &Value) -> Result<Reply, String> {
    let obj = v.as_object().ok_or("reply is not an object")?;
    if obj.contains_key("x") {
        return Ok(Reply::TIMEOUT);
    }
    // IPv6 and unparseable responders are kept as anonymous replies
    let ip = obj.get("from").and_then(Value::as_str).and_then(|s| s.parse::<Ipv4Addr>().ok());
    let rtt_ms = match obj.get("rtt") {
        None | Some(Value::Null) => None,
        Some(r) => {
            let r = r.as_f64().ok_or("non-numeric rtt")?;
            if !(r >= 0.0) || !r.is_finite() {
                return Err(format!("rtt {r} is negative or not finite"));
            }
            Some(r)
        }
    };
    Ok(Reply { ip, rtt_ms })
}

/// One Atlas result object. Only `msm_id`, `prb_id`, `timestamp` and the hop
/// results are read; everything else is ignored.
pub fn parse_atlas_record(line: &str) -> Result<RawTraceroute, String> {
    let v: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let obj = v.as_object().ok_or("record is not an object")?;
    let measurement_id = id_field(obj, "msm_id")?;
    let probe_id = id_field(obj, "prb_id")?;
    let timestamp = obj.get("timestamp").and_then(Value::as_u64).filter(|&t| t > 0).ok_or("bad `timestamp`")?;
    let results = obj.get("result").and_then(Value::as_array).ok_or("missing `result`")?;
    let mut hops: Vec<RawHop> = Vec::with_capacity(results.len());
    for h in results {
        let h = h.as_object().ok_or("hop is not an object")?;
        let hop_index = h
            .get("hop")
            .and_then(Value::as_u64)
            .filter(|&i| i >= 1 && i <= u32::MAX as u64)
            .ok_or("bad hop index")? as u32;
        if hops.last().is_some_and(|p| p.hop_index >= hop_index) {
            return Err(format!("hop {hop_index} out of order"));
        }
        let replies = match h.get("result") {
            Some(Value::Array(rs)) => rs.iter().map(parse_reply).collect::<Result<Vec<_>, _>>()?,
            // a hop-level error such as a network unreachable
            _ => Vec::new(),
        };
        hops.push(RawHop { hop_index, replies });
    }
    Ok(RawTraceroute { measurement_id, probe_id, timestamp, hops })
}

/// Reads newline-delimited Atlas results. Bad records are skipped with a warning.
pub fn parse_atlas<R: BufRead>(input: R, diag: &Diagnostics) -> std::io::Result<Vec<RawTraceroute>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_atlas_record(&line) {
            Ok(rt) => out.push(rt),
            Err(e) => diag.warn(Warning::MalformedTraceroute, format!("line {}: {e}", n + 1)),
        }
    }
    Ok(out)
}

fn id_value(id: &str) -> Value {
    match id.parse::<u64>() {
        Ok(n) if n.to_string() == id => json!(n),
        _ => json!(id),
    }
}

pub fn write_atlas<W: Write>(traces: &[RawTraceroute], mut out: W) -> std::io::Result<()> {
    for t in traces {
        let result: Vec<Value> = t
            .hops
            .iter()
            .map(|h| {
                let replies: Vec<Value> = h
                    .replies
                    .iter()
                    .map(|r| {
                        let mut m = Map::new();
                        match (r.ip, r.rtt_ms) {
                            (None, None) => {
                                m.insert("x".into(), json!("*"));
                            }
                            (ip, rtt) => {
                                if let Some(ip) = ip {
                                    m.insert("from".into(), json!(ip.to_string()));
                                }
                                if let Some(rtt) = rtt {
                                    m.insert("rtt".into(), json!(rtt));
                                }
                            }
                        }
                        Value::Object(m)
                    })
                    .collect();
                json!({ "hop": h.hop_index, "result": replies })
            })
            .collect();
        let rec = json!({
            "msm_id": id_value(&t.measurement_id),
            "prb_id": id_value(&t.probe_id),
            "timestamp": t.timestamp,
            "result": result,
        });
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NativeHop {
    ip: Ipv4Addr,
    rtt: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NativePath {
    path_id: String,
    hops: Vec<NativeHop>,
}

pub fn parse_native_record(line: &str) -> Result<CleanPath, String> {
    let p: NativePath = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if let Some(h) = p.hops.iter().find(|h| !(h.rtt >= 0.0) || !h.rtt.is_finite()) {
        return Err(format!("hop {} has rtt {}", h.ip, h.rtt));
    }
    Ok(CleanPath { path_id: p.path_id, hops: p.hops.into_iter().map(|h| Hop { ip: h.ip, rtt_ms: h.rtt }).collect() })
}

pub fn parse_native<R: BufRead>(input: R, diag: &Diagnostics) -> std::io::Result<Vec<CleanPath>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_native_record(&line) {
            Ok(p) => out.push(p),
            Err(e) => diag.warn(Warning::MalformedTraceroute, format!("line {}: {e}", n + 1)),
        }
    }
    Ok(out)
}

pub fn write_native<W: Write>(paths: &[CleanPath], mut out: W) -> std::io::Result<()> {
    for p in paths {
        let rec = NativePath {
            path_id: p.path_id.clone(),
            hops: p.hops.iter().map(|h| NativeHop { ip: h.ip, rtt: h.rtt_ms }).collect(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Native,
    Atlas,
}

/// Native records carry `path_id`; anything else is read as Atlas.
pub fn detect_format(first_line: &str) -> Format {
    match serde_json::from_str::<Value>(first_line) {
        Ok(Value::Object(m)) if m.contains_key("path_id") => Format::Native,
        _ => Format::Atlas,
    }
}

fn describe(r: Rejection) -> String {
    match r {
        Rejection::TooFewHops(n) => format!("{n} usable hops"),
        Rejection::RoutingLoop(ip) => format!("routing loop through {ip}"),
    }
}

/// Loads and normalizes a traceroute file of either format. A file with no
/// readable records is a fatal input error.
pub fn load_paths(path: &Path, bogons: &PrefixSet, diag: &Diagnostics) -> Result<Vec<CleanPath>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    while first.trim().is_empty() {
        first.clear();
        if reader.read_line(&mut first).map_err(|e| Error::io(path, e))? == 0 {
            return Err(Error::input(path, "no traceroutes in file"));
        }
    }
    let format = detect_format(first.trim());
    let input = std::io::Cursor::new(first).chain(reader);
    let raw: Vec<(String, Vec<RawHop>)> = match format {
        Format::Native => parse_native(input, diag)
            .map_err(|e| Error::io(path, e))?
            .into_iter()
            .map(|p| {
                let hops = to_raw_hops(&p);
                (p.path_id, hops)
            })
            .collect(),
        Format::Atlas => parse_atlas(input, diag)
            .map_err(|e| Error::io(path, e))?
            .into_iter()
            .map(|t| (t.path_id(), t.hops))
            .collect(),
    };
    if raw.is_empty() {
        return Err(Error::input(path, "no readable traceroutes in file"));
    }
    let mut paths = Vec::with_capacity(raw.len());
    for (id, hops) in raw {
        match normalize_hops(&id, &hops, bogons) {
            Ok(p) => paths.push(p),
            Err(r) => diag.warn(Warning::RejectedPath, format!("{id}: {}", describe(r))),
        }
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    const RECORD: &str = r#"{"msm_id":5051,"prb_id":17,"timestamp":1709596800,"fw":5080,"result":[{"hop":1,"result":[{"from":"8.8.8.1","rtt":1.5,"ttl":255},{"from":"8.8.8.1","rtt":1.7}]},{"hop":2,"result":[{"x":"*"},{"x":"*"},{"x":"*"}]},{"hop":3,"result":[{"from":"8.8.8.3","rtt":10.1},{"from":"8.8.8.3","rtt":10.5},{"from":"8.8.8.3","rtt":9.9}]}]}"#;

    #[test]
    fn timeout_hop_kept_as_nulls() {
        let rt = parse_atlas_record(RECORD).unwrap();
        assert_eq!(rt.measurement_id, "5051");
        assert_eq!(rt.probe_id, "17");
        assert_eq!(rt.hops.len(), 3);
        assert_eq!(rt.hops[1].replies, vec![Reply::TIMEOUT; 3]);
        let rtts: Vec<f64> = rt.hops[2].replies.iter().map(|r| r.rtt_ms.unwrap()).collect();
        assert_eq!(rtts, vec![10.1, 10.5, 9.9]);
    }

    #[test]
    fn empty_stream_is_empty() {
        let d = Diagnostics::silent();
        assert!(parse_atlas("".as_bytes(), &d).unwrap().is_empty());
        assert_eq!(d.total(), 0);
    }

    #[test]
    fn malformed_records_skipped_and_counted() {
        let d = Diagnostics::silent();
        let bad = [
            "not json",
            r#"{"prb_id":1,"timestamp":5,"result":[]}"#,
            r#"{"msm_id":1,"prb_id":1,"timestamp":0,"result":[]}"#,
            r#"{"msm_id":1,"prb_id":1,"timestamp":5,"result":[{"hop":2,"result":[]},{"hop":1,"result":[]}]}"#,
            r#"{"msm_id":1,"prb_id":1,"timestamp":5,"result":[{"hop":1,"result":[{"from":"8.8.8.8","rtt":-1}]}]}"#,
        ];
        let input = format!("{}\n{RECORD}\n\n{}\n", bad[..3].join("\n"), bad[3..].join("\n"));
        let got = parse_atlas(input.as_bytes(), &d).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(d.count(Warning::MalformedTraceroute), 5);
    }

    #[test]
    fn atlas_round_trip() {
        let mut rt = parse_atlas_record(RECORD).unwrap();
        rt.hops.push(RawHop { hop_index: 7, replies: vec![Reply { ip: None, rtt_ms: Some(3.0) }, Reply { ip: Some(Ipv4Addr::new(9, 9, 9, 9)), rtt_ms: None }] });
        rt.probe_id = "probe-x".into();
        let mut buf = Vec::new();
        write_atlas(std::slice::from_ref(&rt), &mut buf).unwrap();
        let back = parse_atlas(&buf[..], &Diagnostics::silent()).unwrap();
        assert_eq!(back, vec![rt]);
    }

    #[test]
    fn native_round_trip() {
        let p = CleanPath {
            path_id: "p-1".into(),
            hops: vec![Hop { ip: Ipv4Addr::new(8, 8, 8, 1), rtt_ms: 0.1 + 0.2 }, Hop { ip: Ipv4Addr::new(8, 8, 8, 2), rtt_ms: 12.0 }],
        };
        let mut buf = Vec::new();
        write_native(std::slice::from_ref(&p), &mut buf).unwrap();
        assert_eq!(detect_format(std::str::from_utf8(&buf).unwrap().lines().next().unwrap()), Format::Native);
        assert_eq!(parse_native(&buf[..], &Diagnostics::silent()).unwrap(), vec![p]);
    }

    #[test]
    fn native_rejects_bad_hops() {
        assert!(parse_native_record(r#"{"path_id":"a","hops":[{"ip":"1.2.3.4","rtt":-2}]}"#).is_err());
        assert!(parse_native_record(r#"{"path_id":"a","hops":[{"ip":"1.2.3","rtt":2}]}"#).is_err());
        assert_eq!(detect_format(RECORD), Format::Atlas);
    }
}
