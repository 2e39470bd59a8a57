//! Warning counters. Each warning is printed as it happens and tallied for the
//! closing summary line.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Mutex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Warning {
    MalformedTraceroute,
    RejectedPath,
    MalformedGeoRow,
    CoordinateOutOfRange,
    DuplicateGeoRow,
    MalformedCatalogRow,
    DisplacementSkipped,
    MissingFromSnapshot,
    FetchFailed,
}

impl Warning {
    pub fn key(self) -> &'static str {
        match self {
            Warning::MalformedTraceroute => "malformed_traceroute",
            Warning::RejectedPath => "rejected_path",
            Warning::MalformedGeoRow => "malformed_geo_row",
            Warning::CoordinateOutOfRange => "coordinate_out_of_range",
            Warning::DuplicateGeoRow => "duplicate_geo_row",
            Warning::MalformedCatalogRow => "malformed_catalog_row",
            Warning::DisplacementSkipped => "displacement_skipped",
            Warning::MissingFromSnapshot => "missing_from_snapshot",
            Warning::FetchFailed => "fetch_failed",
        }
    }
}

pub struct Diagnostics {
    counts: Mutex<BTreeMap<Warning, u64>>,
    sink: Mutex<Box<dyn Write + Send>>,
}

impl Default for Diagnostics {
    fn default() -> Self {
        Self::new(Box::new(std::io::stderr()))
    }
}

impl Diagnostics {
    pub fn new(sink: Box<dyn Write + Send>) -> Self {
        Diagnostics { counts: Mutex::new(BTreeMap::new()), sink: Mutex::new(sink) }
    }

    /// Counts without printing anything.
    pub fn silent() -> Self {
        Self::new(Box::new(std::io::sink()))
    }

    pub fn warn(&self, kind: Warning, message: impl std::fmt::Display) {
        *self.counts.lock().unwrap().entry(kind).or_insert(0) += 1;
        let _ = writeln!(self.sink.lock().unwrap(), "warning[{}]: {message}", kind.key());
    }

    pub fn count(&self, kind: Warning) -> u64 {
        self.counts.lock().unwrap().get(&kind).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.lock().unwrap().values().sum()
    }

    /// `warnings: N total (kind=n, ...)`, kinds in a fixed order.
    pub fn summary_line(&self) -> String {
        let counts = self.counts.lock().unwrap();
        let total: u64 = counts.values().sum();
        if total == 0 {
            return "warnings: 0".into();
        }
        let parts: Vec<String> = counts.iter().map(|(k, n)| format!("{}={n}", k.key())).collect();
        format!("warnings: {total} ({})", parts.join(", "))
    }

    pub fn finish(&self) {
        let line = self.summary_line();
        let _ = writeln!(self.sink.lock().unwrap(), "{line}");
    }
}
