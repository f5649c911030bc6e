//! The `vislabel` subcommands, as plain functions over a data directory.

use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use vislabel_core::agreement::{AgreementSummary, ReliabilityData};
use vislabel_core::ingest::Manifest;
use vislabel_core::loops::SimulatedOracle;
use vislabel_core::session::{DatasetExport, OracleMode, SessionConfig, SessionStats};
use vislabel_core::synth::{self, ReferenceFile};
use vislabel_core::{Hierarchy, LabelPath, ObjectId};

use crate::api;
use crate::store::{lock, Store};

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_seed(path: Option<&Path>) -> Result<Option<Hierarchy>> {
    path.map(|p| {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        Hierarchy::from_json(&text).with_context(|| format!("seed hierarchy {}", p.display()))
    })
    .transpose()
}

/// Creates a session from a config file and manifest; returns its id.
pub fn init(store: &Store, manifest: &Path, config: &Path, seed: Option<&Path>) -> Result<String> {
    let mut config: SessionConfig = read_json(config)?;
    let manifest_data = Manifest::load(manifest).with_context(|| format!("manifest {}", manifest.display()))?;
    if config.manifest_uri.is_empty() {
        config.manifest_uri = manifest.display().to_string();
    }
    let seed = read_seed(seed)?;
    let id = config.session_id.clone();
    let session = store.create(config, &manifest_data, seed.as_ref())?;
    let objects = lock(&session).state().objects().len();
    log::info!("created session {id} with {objects} objects");
    Ok(id)
}

#[derive(Debug, Clone, Default)]
pub struct SimArgs {
    pub session: String,
    pub reference: PathBuf,
    /// Falls back to the session's simulated oracle config, then 0.
    pub flip_p: Option<f64>,
    pub seed: Option<u64>,
}

/// Answers every pending prompt of a session with a simulated oracle.
pub fn run_sim(store: &Store, args: &SimArgs) -> Result<SessionStats> {
    let reference: ReferenceFile = read_json(&args.reference)?;
    let taxonomy = reference.taxonomy().context("reference taxonomy")?;
    let session = store.get(&args.session)?;
    let mut session = lock(&session);
    if session.state().manifest().is_none() {
        bail!(
            "session {} stopped before its manifest was recorded; remove it and run init again",
            args.session
        );
    }
    let (cfg_flip, cfg_seed) = match session.state().config().oracle {
        OracleMode::Simulated { flip_p, seed } => (flip_p, seed),
        OracleMode::Interactive => (0.0, 0),
    };
    let mut oracle = SimulatedOracle::new(
        &taxonomy,
        reference.ground_truth,
        args.flip_p.unwrap_or(cfg_flip),
        args.seed.unwrap_or(cfg_seed),
    )?;
    session.run_with(&mut oracle)?;
    Ok(session.state().stats())
}

/// Writes a session's export files into `out`.
pub fn export(store: &Store, session: &str, out: &Path) -> Result<DatasetExport> {
    let export = DatasetExport::from_state(&store.snapshot(session)?);
    export
        .write_dir(out)
        .with_context(|| format!("writing export to {}", out.display()))?;
    Ok(export)
}

/// Labels of a coder given as an export directory or a session id.
fn labels_of(store: &Store, item: &str) -> Result<(String, BTreeMap<ObjectId, LabelPath>)> {
    let dir = Path::new(item);
    let export = if dir.join("dataset.jsonl").is_file() {
        DatasetExport::read_dir(dir).with_context(|| format!("reading export {item}"))?
    } else {
        DatasetExport::from_state(&store.snapshot(item)?)
    };
    Ok((export.session_id.clone(), export.labels()))
}

/// Agreement over two or more sessions or export directories.
pub fn alpha(store: &Store, items: &[String]) -> Result<AgreementSummary> {
    if items.len() < 2 {
        bail!("alpha needs at least two sessions");
    }
    let labelings = items
        .iter()
        .map(|item| labels_of(store, item))
        .collect::<Result<Vec<_>>>()?;
    let data = ReliabilityData::from_labelings(&labelings)?;
    Ok(AgreementSummary::new(&data)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Counts {
    Expert1,
    Expert2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub manifest: PathBuf,
    pub reference: PathBuf,
    pub seed_hierarchy: PathBuf,
    pub config: PathBuf,
    pub objects: usize,
    pub feature_dim: usize,
}

/// Writes a synthetic nine-category fixture: manifest, reference for the
/// simulated oracle, the reference skeleton as a seed, and a config.
pub fn synth(out: &Path, counts: Counts, seed: u64, flip_p: f64) -> Result<SynthSummary> {
    let counts = match counts {
        Counts::Expert1 => &synth::TABLE1_EXPERT1,
        Counts::Expert2 => &synth::TABLE1_EXPERT2,
    };
    let data = synth::table1_dataset(counts, seed);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let summary = SynthSummary {
        manifest: out.join("manifest.jsonl"),
        reference: out.join("reference.json"),
        seed_hierarchy: out.join("seed-hierarchy.json"),
        config: out.join("config.json"),
        objects: data.manifest.object_count(),
        feature_dim: data.manifest.feature_dim,
    };
    let mut config = SessionConfig::new(
        format!("synth-{seed}"),
        data.manifest.feature_dim,
        summary.manifest.display().to_string(),
    );
    config.oracle = OracleMode::Simulated { flip_p, seed };
    let reference = ReferenceFile::new(&data.reference, data.ground_truth.clone());
    fs::write(&summary.manifest, data.manifest.to_jsonl())?;
    fs::write(&summary.reference, serde_json::to_string_pretty(&reference)? + "\n")?;
    fs::write(&summary.seed_hierarchy, data.reference.skeleton().to_canonical_json())?;
    fs::write(&summary.config, serde_json::to_string_pretty(&config)? + "\n")?;
    Ok(summary)
}

pub async fn serve(store: Store, addr: SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    log::info!("serving {} on http://{}", store.root().display(), listener.local_addr()?);
    axum::serve(listener, api::router(Arc::new(store)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
