//! Flat `key = value` configuration. Lines starting with `#` are comments.
//! Relative paths are taken relative to the file's own directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use geofix_core::analysis::AnalysisConfig;
use geofix_core::synth::InjectionSpec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub n_routers: usize,
    pub n_cities: usize,
    pub mpls_fraction: f64,
    pub n_paths: usize,
    pub noise_fraction: f64,
    pub injection: InjectionSpec,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n_routers: 200,
            n_cities: 20,
            mpls_fraction: 0.03,
            n_paths: 5000,
            noise_fraction: 0.05,
            injection: InjectionSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceConfig {
    /// Request URL; `{ip}` and `{key}` are substituted.
    pub url: String,
    pub key: String,
    pub rate_per_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub traceroutes: Option<PathBuf>,
    pub snapshot: Option<PathBuf>,
    /// Built-in catalog when unset.
    pub catalog: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub seed: u64,
    pub drop_bogons: bool,
    pub analysis: AnalysisConfig,
    pub synth: SynthParams,
    pub cache_dir: Option<PathBuf>,
    pub sources: BTreeMap<String, SourceConfig>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            traceroutes: None,
            snapshot: None,
            catalog: None,
            out: None,
            threads: 0,
            seed: 42,
            drop_bogons: true,
            analysis: AnalysisConfig::default(),
            synth: SynthParams::default(),
            cache_dir: None,
            sources: BTreeMap::new(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{value}`"))),
    }
}

/// Splits the text into key-value pairs, rejecting malformed lines and repeated keys.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut seen = BTreeMap::new();
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected `key = value`", n + 1)));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        if let Some(prev) = seen.insert(k.to_string(), n + 1) {
            return Err(Error::Config(format!("line {}: `{k}` already set on line {prev}", n + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_text(&text, base)
    }

    pub fn from_text(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        let mut partial: BTreeMap<String, (Option<String>, Option<String>, Option<f64>)> = BTreeMap::new();
        for (k, v) in parse_pairs(text)? {
            if let Some(rest) = k.strip_prefix("source.") {
                let Some((name, field)) = rest.rsplit_once('.') else {
                    return Err(Error::Config(format!("`{k}`: expected source.<name>.<field>")));
                };
                let entry = partial.entry(name.to_string()).or_default();
                match field {
                    "url" => entry.0 = Some(v),
                    "key" => entry.1 = Some(v),
                    "rate_per_s" => entry.2 = Some(parse(&k, &v)?),
                    _ => return Err(Error::Config(format!("unknown key `{k}`"))),
                }
                continue;
            }
            cfg.set(&k, &v, base)?;
        }
        for (name, (url, key, rate)) in partial {
            let url = url.ok_or_else(|| Error::Config(format!("source `{name}` has no url")))?;
            let rate_per_s = rate.unwrap_or(1.0);
            if !(rate_per_s > 0.0) || !rate_per_s.is_finite() {
                return Err(Error::Config(format!("source `{name}`: rate_per_s must be positive")));
            }
            cfg.sources.insert(name, SourceConfig { url, key: key.unwrap_or_default(), rate_per_s });
        }
        Ok(cfg)
    }

    fn set(&mut self, k: &str, v: &str, base: &Path) -> Result<()> {
        let path = || Some(base.join(v));
        let r = &mut self.analysis.refine;
        let s = &mut self.analysis.resolve;
        let y = &mut self.synth;
        match k {
            "traceroutes" => self.traceroutes = path(),
            "snapshot" => self.snapshot = path(),
            "catalog" => self.catalog = path(),
            "out" => self.out = path(),
            "cache_dir" => self.cache_dir = path(),
            "threads" => self.threads = parse(k, v)?,
            "seed" => self.seed = parse(k, v)?,
            "drop_bogons" => self.drop_bogons = parse_bool(k, v)?,
            "merge_radius_km" => self.analysis.merge_radius_km = parse(k, v)?,
            "refine.deviation_fraction" => r.deviation_fraction = parse(k, v)?,
            "refine.prune_fraction" => r.prune_fraction = parse(k, v)?,
            "refine.anomaly_ratio_threshold" => r.anomaly_ratio_threshold = parse(k, v)?,
            "refine.direction_threshold" => r.direction_threshold = parse(k, v)?,
            "refine.max_iterations" => r.max_iterations = parse(k, v)?,
            "refine.min_observations" => r.min_observations = parse(k, v)?,
            "resolve.country_dominance" => s.country_dominance = parse(k, v)?,
            "resolve.anchor_allowance_fraction" => s.anchor_allowance_fraction = parse(k, v)?,
            "resolve.tie_merge_km" => s.tie_merge_km = parse(k, v)?,
            "resolve.tie_merge_max_km" => s.tie_merge_max_km = parse(k, v)?,
            "resolve.tie_merge_step_km" => s.tie_merge_step_km = parse(k, v)?,
            "resolve.match_radius_km" => s.match_radius_km = parse(k, v)?,
            "resolve.min_anchors" => s.min_anchors = parse(k, v)?,
            "resolve.min_buffer_km" => s.min_buffer_km = parse(k, v)?,
            "synth.n_routers" => y.n_routers = parse(k, v)?,
            "synth.n_cities" => y.n_cities = parse(k, v)?,
            "synth.mpls_fraction" => y.mpls_fraction = parse(k, v)?,
            "synth.n_paths" => y.n_paths = parse(k, v)?,
            "synth.noise_fraction" => y.noise_fraction = parse(k, v)?,
            "synth.interface_error_fraction" => y.injection.interface_error_fraction = parse(k, v)?,
            "synth.min_displacement_km" => y.injection.min_displacement_km = parse(k, v)?,
            "synth.db_count" => y.injection.db_count = parse(k, v)?,
            "synth.db_noise_km" => y.injection.db_noise_km = parse(k, v)?,
            "synth.db_disagreement_fraction" => y.injection.db_disagreement_fraction = parse(k, v)?,
            _ => return Err(Error::Config(format!("unknown key `{k}`"))),
        }
        Ok(())
    }

    /// Checks everything a `run` needs: input paths that exist, an output directory, sane knobs.
    pub fn validate_run(&self) -> Result<()> {
        self.analysis.validate()?;
        for (name, p) in [("traceroutes", &self.traceroutes), ("snapshot", &self.snapshot)] {
            match p {
                None => return Err(Error::Config(format!("`{name}` is not set"))),
                Some(p) if !p.exists() => {
                    return Err(Error::Config(format!("`{name}`: {} does not exist", p.display())))
                }
                _ => {}
            }
        }
        if let Some(c) = self.catalog.as_ref().filter(|c| !c.exists()) {
            return Err(Error::Config(format!("`catalog`: {} does not exist", c.display())));
        }
        if self.out.is_none() {
            return Err(Error::Config("no output directory (`out` or --out)".into()));
        }
        Ok(())
    }

    pub fn validate_synth(&self) -> Result<()> {
        let y = &self.synth;
        y.injection.validate()?;
        if !(0.0..=1.0).contains(&y.noise_fraction) {
            return Err(Error::Config("`synth.noise_fraction` must lie in [0, 1]".into()));
        }
        if self.out.is_none() {
            return Err(Error::Config("no output directory (`out` or --out)".into()));
        }
        Ok(())
    }
}
