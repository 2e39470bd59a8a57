//! Raw traceroute records and their normalization into clean hop sequences.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::net::Ipv4Addr;
use core::str::FromStr;

use crate::stats::median;

/// One probe reply at a hop. Timeouts carry neither address nor RTT.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Reply {
    pub ip: Option<Ipv4Addr>,
    pub rtt_ms: Option<f64>,
}

impl Reply {
    pub const TIMEOUT: Reply = Reply {
        ip: None,
        rtt_ms: None,
    };

    pub fn new(ip: Ipv4Addr, rtt_ms: f64) -> Self {
        Reply {
            ip: Some(ip),
            rtt_ms: Some(rtt_ms),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RawHop {
    pub hop_index: u32,
    pub replies: Vec<Reply>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RawTraceroute {
    pub measurement_id: String,
    pub probe_id: String,
    pub timestamp: u64,
    pub hops: Vec<RawHop>,
}

impl RawTraceroute {
    pub fn path_id(&self) -> String {
        format!("{}-{}-{}", self.measurement_id, self.probe_id, self.timestamp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Hop {
    pub ip: Ipv4Addr,
    pub rtt_ms: f64,
}

/// A traceroute reduced to responding, routable, loop-free hops.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CleanPath {
    pub path_id: String,
    pub hops: Vec<Hop>,
}

impl CleanPath {
    pub fn position(&self, ip: Ipv4Addr) -> Option<usize> {
        self.hops.iter().position(|h| h.ip == ip)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    /// Fewer than two hops survived filtering.
    TooFewHops(usize),
    /// An address reappeared non-consecutively.
    RoutingLoop(Ipv4Addr),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Prefix {
    network: u32,
    len: u8,
}

impl Prefix {
    pub fn new(addr: Ipv4Addr, len: u8) -> Option<Self> {
        if len > 32 {
            return None;
        }
        let mask = Self::mask(len);
        Some(Prefix {
            network: u32::from(addr) & mask,
            len,
        })
    }

    fn mask(len: u8) -> u32 {
        if len == 0 {
            0
        } else {
            u32::MAX << (32 - len)
        }
    }

    pub fn contains(&self, ip: Ipv4Addr) -> bool {
        u32::from(ip) & Self::mask(self.len) == self.network
    }
}

impl FromStr for Prefix {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        let (addr, len) = s.split_once('/').ok_or(())?;
        let addr: Ipv4Addr = addr.trim().parse().map_err(|_| ())?;
        let len: u8 = len.trim().parse().map_err(|_| ())?;
        Prefix::new(addr, len).ok_or(())
    }
}

/// Addresses that can never be geolocated.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PrefixSet {
    prefixes: BTreeSet<Prefix>,
}

const BOGONS: &[&str] = &[
    "0.0.0.0/8",
    "10.0.0.0/8",
    "100.64.0.0/10",
    "127.0.0.0/8",
    "169.254.0.0/16",
    "172.16.0.0/12",
    "192.0.0.0/24",
    "192.0.2.0/24",
    "192.168.0.0/16",
    "198.18.0.0/15",
    "198.51.100.0/24",
    "203.0.113.0/24",
    "224.0.0.0/4",
    "240.0.0.0/4",
];

impl PrefixSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// RFC 1918, loopback, link-local, CGNAT, documentation, multicast and reserved space.
    pub fn bogons() -> Self {
        let mut set = Self::default();
        for p in BOGONS {
            set.insert(p.parse().expect("static prefix"));
        }
        set
    }

    pub fn insert(&mut self, p: Prefix) {
        self.prefixes.insert(p);
    }

    pub fn contains(&self, ip: Ipv4Addr) -> bool {
        self.prefixes.iter().any(|p| p.contains(ip))
    }
}

/// The hop's responder (most frequent replying address, first seen wins ties)
/// and the median of its RTTs.
fn hop_response(hop: &RawHop) -> Option<Hop> {
    let mut tally: Vec<(Ipv4Addr, Vec<f64>)> = Vec::new();
    for r in &hop.replies {
        let (Some(ip), Some(rtt)) = (r.ip, r.rtt_ms) else {
            continue;
        };
        if !(rtt >= 0.0) || !rtt.is_finite() {
            continue;
        }
        match tally.iter_mut().find(|(a, _)| *a == ip) {
            Some((_, v)) => v.push(rtt),
            None => tally.push((ip, alloc::vec![rtt])),
        }
    }
    let mut best: Option<&(Ipv4Addr, Vec<f64>)> = None;
    for entry in &tally {
        if best.is_none_or(|b| entry.1.len() > b.1.len()) {
            best = Some(entry);
        }
    }
    let (ip, rtts) = best?;
    Some(Hop {
        ip: *ip,
        rtt_ms: median(rtts)?,
    })
}

/// Normalizes a hop list under the given path id.
pub fn normalize_hops(
    path_id: &str,
    hops: &[RawHop],
    bogons: &PrefixSet,
) -> Result<CleanPath, Rejection> {
    let mut out: Vec<Hop> = Vec::with_capacity(hops.len());
    let mut seen: BTreeSet<Ipv4Addr> = BTreeSet::new();
    for raw in hops {
        let Some(hop) = hop_response(raw) else {
            continue;
        };
        if bogons.contains(hop.ip) {
            continue;
        }
        if out.last().is_some_and(|h| h.ip == hop.ip) {
            continue;
        }
        if !seen.insert(hop.ip) {
            return Err(Rejection::RoutingLoop(hop.ip));
        }
        out.push(hop);
    }
    if out.len() < 2 {
        return Err(Rejection::TooFewHops(out.len()));
    }
    Ok(CleanPath {
        path_id: path_id.into(),
        hops: out,
    })
}

/// Drops timeouts and unroutable hops, takes the median RTT per hop, collapses
/// consecutive repeats and rejects looping or too-short paths.
pub fn normalize(rt: &RawTraceroute, bogons: &PrefixSet) -> Result<CleanPath, Rejection> {
    normalize_hops(&rt.path_id(), &rt.hops, bogons)
}

/// Re-expresses a clean path as single-reply raw hops.
pub fn to_raw_hops(path: &CleanPath) -> Vec<RawHop> {
    path.hops
        .iter()
        .enumerate()
        .map(|(i, h)| RawHop {
            hop_index: i as u32 + 1,
            replies: alloc::vec![Reply::new(h.ip, h.rtt_ms)],
        })
        .collect()
}
