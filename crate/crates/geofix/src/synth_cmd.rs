//! The `synth` subcommand: a ground-truth world, traceroutes over it, and a partly corrupted snapshot.

use std::collections::BTreeSet;
use std::net::Ipv4Addr;
use std::path::Path;

use geofix_core::synth::{corrupt_geodb, generate_world, simulate_traceroutes, World};
use geofix_core::{builtin_catalog, CityPolygon};
use serde::{Deserialize, Serialize};

use crate::atlas::write_native;
use crate::catalog::load_catalog;
use crate::config::PipelineConfig;
use crate::diag::{Diagnostics, Warning};
use crate::error::{Error, Result};
use crate::fetch::write_atomic;
use crate::parallel::RayonExecutor;
use crate::snapshot::write_snapshot;

pub const WORLD_FILE: &str = "world.json";
pub const TRACES_FILE: &str = "traces.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.csv";
pub const DISPLACED_FILE: &str = "displaced.json";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Displaced {
    pub displaced: BTreeSet<Ipv4Addr>,
    /// Picked for displacement but left in place for lack of a distant city.
    pub skipped: Vec<Ipv4Addr>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub routers: usize,
    pub links: usize,
    pub tunnels: usize,
    pub paths: usize,
    pub displaced: usize,
}

impl std::fmt::Display for SynthSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "routers: {}, links: {}, tunnels: {}, traceroutes: {}, displaced ips: {}",
            self.routers, self.links, self.tunnels, self.paths, self.displaced
        )
    }
}

pub fn catalog_for(cfg: &PipelineConfig, diag: &Diagnostics) -> Result<Vec<CityPolygon>> {
    match &cfg.catalog {
        Some(c) => load_catalog(c, diag),
        None => Ok(builtin_catalog()),
    }
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value).map_err(|e| Error::Config(format!("json: {e}")))?;
    v.push(b'\n');
    Ok(v)
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let p = dir.join(name);
    write_atomic(&p, bytes).map_err(|e| Error::io(&p, e))
}

pub fn synth(cfg: &PipelineConfig, diag: &Diagnostics) -> Result<SynthSummary> {
    cfg.validate_synth()?;
    let out = cfg.out.as_deref().expect("validated");
    let y = &cfg.synth;
    let catalog = catalog_for(cfg, diag)?;
    let world = generate_world(cfg.seed, y.n_routers, y.n_cities, y.mpls_fraction, &catalog)?;
    let exec = RayonExecutor::new(cfg.threads)?;
    let paths = simulate_traceroutes(&world, y.n_paths, y.noise_fraction, &exec);
    let corruption = corrupt_geodb(&world, &y.injection, cfg.seed, &catalog)?;
    for ip in &corruption.skipped {
        diag.warn(Warning::DisplacementSkipped, format!("{ip}: no catalog city far enough away"));
    }

    let mut traces = Vec::new();
    write_native(&paths, &mut traces).map_err(|e| Error::io(out, e))?;
    let mut snapshot = Vec::new();
    write_snapshot(&corruption.snapshot, &mut snapshot).map_err(|e| Error::Config(format!("csv: {e}")))?;
    let displaced = Displaced { displaced: corruption.displaced, skipped: corruption.skipped };

    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_file(out, WORLD_FILE, &json_bytes(&world)?)?;
    write_file(out, TRACES_FILE, &traces)?;
    write_file(out, SNAPSHOT_FILE, &snapshot)?;
    write_file(out, DISPLACED_FILE, &json_bytes(&displaced)?)?;
    Ok(SynthSummary {
        routers: world.routers.len(),
        links: world.links.len(),
        tunnels: world.mpls_tunnels.len(),
        paths: paths.len(),
        displaced: displaced.displaced.len(),
    })
}

pub fn read_world(path: &Path) -> Result<World> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::input(path, e.to_string()))
}

pub fn read_displaced(path: &Path) -> Result<Displaced> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::input(path, e.to_string()))
}
