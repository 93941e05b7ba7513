//! End-to-end pipeline with content-addressed stage caching.
//!
//! Each stage writes into `<workdir>/<stage>/` and records a `.stamp.json`
//! holding the stage key (a hash of its configuration and upstream keys or
//! input-file hashes) and the hash of every file it produced. A stage whose
//! stamp matches and whose files are intact is skipped.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::clustering::{
    self, largest_cluster_persistence_ps, qt_from_matrix, size_series, ClusterLabels, ClusterMethod, ClusterSizeSeries,
    HdbscanConfig, RefClusterConfig, RmsdMatrix,
};
use crate::contacts::{self, ContactConfig, ContactMatrix, DynamismTensor, ProteinSelection};
use crate::cvae::{arch_seed, train, write_checkpoint, ArchSpec, CvaeError, Dataset, EnsembleConfig, LatentSeries, TrainConfig};
use crate::geometry::subtype_rmsf;
use crate::model_io::{self, read_artifact, write_artifact, ModelIoError, Tensor, Topology, TrajectoryFrameSeries};
use crate::ranking::{metric_rmsf_scatter, pca_project, rank_subtypes, RankingOptions, RankingReport, ReferenceMethod};
use crate::render;
use crate::subtypes::{build_subtype_map, SubtypeMap, DEFAULT_TOLERANCE};

pub const CONFIG_VERSION: u32 = 1;
pub const WORKDIR_ENV: &str = "CASTELO_WORKDIR";
const STAMP: &str = ".stamp.json";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Parse,
    Divergence,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{message}")]
pub struct PipelineError {
    pub kind: ErrorKind,
    pub message: String,
}

impl PipelineError {
    pub fn config(m: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Config,
            message: m.into(),
        }
    }

    pub fn parse(m: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Parse,
            message: m.into(),
        }
    }

    pub fn internal(m: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Internal,
            message: m.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Config => 1,
            ErrorKind::Parse => 2,
            ErrorKind::Divergence => 3,
            ErrorKind::Internal => 4,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            ErrorKind::Config => "config",
            ErrorKind::Parse => "parse",
            ErrorKind::Divergence => "divergence",
            ErrorKind::Internal => "internal",
        }
    }

    /// One-line machine-readable form for standard error.
    pub fn to_json_line(&self) -> String {
        json!({"error": self.kind_name(), "exit_code": self.exit_code(), "message": self.message}).to_string()
    }
}

fn internal(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::internal(e.to_string())
}

fn from_cvae(e: CvaeError) -> PipelineError {
    match e {
        CvaeError::Diverged { .. } | CvaeError::NonFiniteActivation => PipelineError {
            kind: ErrorKind::Divergence,
            message: e.to_string(),
        },
        CvaeError::InvalidArch(_) | CvaeError::InvalidConfig(_) => PipelineError::config(e.to_string()),
        _ => internal(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct Paths {
    pub topology: Option<PathBuf>,
    pub trajectory: Option<PathBuf>,
    pub workdir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    pub paths: Paths,
    pub contacts: ContactConfig,
    /// Relative σ/ε tolerance for grouping atom types.
    pub tolerance: f64,
    pub ensemble: EnsembleConfig,
    /// `train.seed` is ignored; the top-level `seed` is used.
    pub train: TrainConfig,
    pub hdbscan: HdbscanConfig,
    pub refcluster: RefClusterConfig,
    pub ranking: RankingOptions,
    /// Concurrent training jobs.
    pub jobs: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            paths: Paths::default(),
            contacts: ContactConfig::default(),
            tolerance: DEFAULT_TOLERANCE,
            ensemble: EnsembleConfig::default(),
            train: TrainConfig::default(),
            hdbscan: HdbscanConfig::default(),
            refcluster: RefClusterConfig::default(),
            ranking: RankingOptions::default(),
            jobs: 1,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.version != CONFIG_VERSION {
            return Err(PipelineError::config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.contacts.validate().map_err(|e| PipelineError::config(e.to_string()))?;
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(PipelineError::config(format!("tolerance {} outside (0, 1)", self.tolerance)));
        }
        self.ensemble.validate().map_err(from_cvae)?;
        self.train.validate().map_err(from_cvae)?;
        self.hdbscan.validate().map_err(|e| PipelineError::config(e.to_string()))?;
        self.refcluster.validate().map_err(|e| PipelineError::config(e.to_string()))?;
        if self.jobs == 0 {
            return Err(PipelineError::config("jobs must be >= 1"));
        }
        Ok(())
    }

    /// Flag > config file > `CASTELO_WORKDIR` > `./castelo-work`.
    pub fn workdir(&self) -> PathBuf {
        self.paths
            .workdir
            .clone()
            .or_else(|| std::env::var_os(WORKDIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("castelo-work"))
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Subtype,
    Contacts,
    RefCluster,
    Train,
    Cluster,
    Rank,
    Report,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageLog {
    pub stage: String,
    pub status: String,
    pub wall_ms: u128,
    pub input_hash: String,
    pub output_hash: String,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub workdir: PathBuf,
    pub stages: Vec<StageLog>,
    pub report: Option<RankingReport>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct StageStamp {
    stage: String,
    key: String,
    outputs: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_hash(path: &Path) -> Result<String, PipelineError> {
    let bytes = fs::read(path).map_err(|e| PipelineError::parse(format!("{}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

fn list_files(dir: &Path, base: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let path = entry.path();
        if path.is_dir() {
            list_files(&path, base, out)?;
        } else if entry.file_name() != STAMP && !entry.file_name().to_string_lossy().starts_with(".tmp") {
            out.push(path.strip_prefix(base).unwrap().to_path_buf());
        }
    }
    Ok(())
}

fn hash_outputs(dir: &Path) -> Result<BTreeMap<String, String>, PipelineError> {
    let mut files = Vec::new();
    list_files(dir, dir, &mut files).map_err(internal)?;
    files
        .into_iter()
        .map(|rel| {
            let h = file_hash(&dir.join(&rel))?;
            Ok((rel.to_string_lossy().replace('\\', "/"), h))
        })
        .collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(internal)?;
    }
    model_io::write_atomic(path, bytes).map_err(internal)
}

fn write_art<A: model_io::Artifact>(value: &A, path: &Path) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(internal)?;
    }
    write_artifact(value, path).map_err(internal)
}

fn read_art<A: model_io::Artifact>(path: &Path) -> Result<A, PipelineError> {
    read_artifact(path).map_err(internal)
}

struct Runner {
    workdir: PathBuf,
    logs: Vec<StageLog>,
    quiet: bool,
}

impl Runner {
    /// Runs `compute` into a fresh stage directory unless a valid stamp for
    /// `key_material` exists. Returns the stage key.
    fn stage(
        &mut self,
        name: &str,
        key_material: serde_json::Value,
        compute: impl FnOnce(&Path) -> Result<(), PipelineError>,
    ) -> Result<String, PipelineError> {
        let start = Instant::now();
        let key = sha256_hex(format!("{name}\n{key_material}").as_bytes());
        let dir = self.workdir.join(name);
        let stamp_path = dir.join(STAMP);
        let cached = fs::read(&stamp_path)
            .ok()
            .and_then(|b| serde_json::from_slice::<StageStamp>(&b).ok())
            .filter(|s| s.key == key)
            .filter(|s| hash_outputs(&dir).map(|o| o == s.outputs).unwrap_or(false));
        let (status, outputs) = match cached {
            Some(stamp) => ("cached", stamp.outputs),
            None => {
                if dir.exists() {
                    fs::remove_dir_all(&dir).map_err(internal)?;
                }
                fs::create_dir_all(&dir).map_err(internal)?;
                compute(&dir)?;
                let outputs = hash_outputs(&dir)?;
                let stamp = StageStamp {
                    stage: name.into(),
                    key: key.clone(),
                    outputs: outputs.clone(),
                };
                write_file(&stamp_path, &model_io::to_json_bytes(&stamp).map_err(internal)?)?;
                ("computed", outputs)
            }
        };
        let output_hash = sha256_hex(serde_json::to_string(&outputs).map_err(internal)?.as_bytes());
        let log = StageLog {
            stage: name.into(),
            status: status.into(),
            wall_ms: start.elapsed().as_millis(),
            input_hash: key.clone(),
            output_hash,
        };
        if !self.quiet {
            eprintln!("{}", serde_json::to_string(&log).map_err(internal)?);
        }
        self.logs.push(log);
        Ok(key)
    }
}

struct Inputs {
    topology: Topology,
    trajectory: TrajectoryFrameSeries,
    topology_hash: String,
    trajectory_hash: String,
}

fn load_inputs(config: &PipelineConfig) -> Result<Inputs, PipelineError> {
    let topo_path = config
        .paths
        .topology
        .as_ref()
        .ok_or_else(|| PipelineError::config("no topology path (paths.topology or --topology)"))?;
    let traj_path = config
        .paths
        .trajectory
        .as_ref()
        .ok_or_else(|| PipelineError::config("no trajectory path (paths.trajectory or --trajectory)"))?;
    let parse_err = |e: ModelIoError| PipelineError::parse(e.to_string());
    let topology = model_io::parse_topology(topo_path).map_err(parse_err)?;
    let trajectory = model_io::parse_trajectory(traj_path, &topology).map_err(parse_err)?;
    Ok(Inputs {
        topology_hash: file_hash(topo_path)?,
        trajectory_hash: file_hash(traj_path)?,
        topology,
        trajectory,
    })
}

fn binary_tensor(series: &[&ContactMatrix]) -> Tensor {
    let (rows, cols) = series.first().map_or((0, 0), |m| (m.rows(), m.cols()));
    let data = series.iter().flat_map(|m| m.values().iter().map(|&v| v as f32)).collect();
    Tensor::new(vec![series.len(), rows, cols], data)
}

fn matrices_from_tensor(t: &Tensor) -> Result<Vec<ContactMatrix>, PipelineError> {
    if t.dims.len() != 3 {
        return Err(PipelineError::internal("contact tensor must be 3-D"));
    }
    let (frames, rows, cols) = (t.dims[0], t.dims[1], t.dims[2]);
    Ok((0..frames)
        .map(|f| {
            let block = &t.data[f * rows * cols..(f + 1) * rows * cols];
            let rows: Vec<Vec<u8>> = block
                .chunks(cols.max(1))
                .take(rows)
                .map(|r| r.iter().map(|&v| (v != 0.0) as u8).collect())
                .collect();
            ContactMatrix::from_rows(f, &rows)
        })
        .collect())
}

fn arch_dir(spec: &ArchSpec) -> String {
    format!("f{}_d{}", spec.filters, spec.latent_dim)
}

/// Contact and dynamism tensors as saved by the contacts stage.
fn load_dynamism(workdir: &Path, delta: usize) -> Result<Vec<DynamismTensor>, PipelineError> {
    let contacts = matrices_from_tensor(&Tensor::read(&workdir.join("contacts/contacts.f32")).map_err(internal)?)?;
    Ok(contacts::dynamism_from_contacts(&contacts, delta))
}

/// Training datasets: one per subtype, plus the whole molecule when it is the reference.
fn datasets(
    tensors: &[DynamismTensor],
    map: &SubtypeMap,
    whole: bool,
) -> Result<Vec<(String, Dataset)>, PipelineError> {
    let width = tensors.first().map_or(0, |t| t.width());
    let mut out = Vec::new();
    for s in 0..map.subtype_count() {
        let mut data = Vec::with_capacity(tensors.len() * 2 * width);
        for t in tensors {
            data.extend(contacts::subtype_input(t, map, s).map_err(internal)?);
        }
        out.push((format!("subtype_{s}"), Dataset::new(2, width, data).map_err(from_cvae)?));
    }
    if whole {
        let height = 2 * tensors.first().map_or(0, |t| t.ligand_rows());
        let data: Vec<u8> = tensors.iter().flat_map(contacts::whole_molecule_input).collect();
        out.push(("whole".into(), Dataset::new(height, width, data).map_err(from_cvae)?));
    }
    Ok(out)
}

pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutcome, PipelineError> {
    run_until(config, Stage::Report, false)
}

/// Runs every stage up to and including `last`.
pub fn run_until(config: &PipelineConfig, last: Stage, quiet: bool) -> Result<PipelineOutcome, PipelineError> {
    config.validate()?;
    let workdir = config.workdir();
    fs::create_dir_all(&workdir)
        .map_err(|e| PipelineError::config(format!("workdir {} not writable: {e}", workdir.display())))?;
    let inputs = load_inputs(config)?;
    let mut runner = Runner {
        workdir: workdir.clone(),
        logs: Vec::new(),
        quiet,
    };
    let whole_ref = config.ranking.reference == ReferenceMethod::WholeMolecule;

    let topo = &inputs.topology;
    let subtype_key = runner.stage(
        "subtype",
        json!({"tolerance": config.tolerance, "topology": inputs.topology_hash}),
        |dir| {
            let map = build_subtype_map(topo, config.tolerance).map_err(|e| PipelineError::parse(e.to_string()))?;
            write_art(&map, &dir.join("subtype_map.json"))
        },
    )?;
    if last == Stage::Subtype {
        return Ok(finish(workdir, runner, None));
    }

    let contacts_key = runner.stage(
        "contacts",
        json!({"contacts": config.contacts, "topology": inputs.topology_hash, "trajectory": inputs.trajectory_hash}),
        |dir| {
            let selection = contacts::select_pocket(&inputs.trajectory, topo, &config.contacts)
                .map_err(|e| PipelineError::config(e.to_string()))?;
            let series = contacts::contact_series(&inputs.trajectory, topo, &selection, &config.contacts);
            let dyn_series = contacts::dynamism_from_contacts(&series, config.contacts.delta);
            write_art(&selection, &dir.join("selection.json"))?;
            binary_tensor(&series.iter().collect::<Vec<_>>())
                .write(&dir.join("contacts.f32"))
                .map_err(internal)?;
            binary_tensor(&dyn_series.iter().map(|d| &d.dynamism).collect::<Vec<_>>())
                .write(&dir.join("dynamism.f32"))
                .map_err(internal)
        },
    )?;
    if last == Stage::Contacts {
        return Ok(finish(workdir, runner, None));
    }

    let selection: ProteinSelection = read_art(&workdir.join("contacts/selection.json"))?;
    let ligand = topo.ligand_indices().to_vec();
    let rmsd_key = runner.stage(
        "rmsd",
        json!({"contacts": contacts_key, "trajectory": inputs.trajectory_hash}),
        |dir| {
            let m = clustering::pairwise_rmsd(&inputs.trajectory, &selection.protein_atom_indices, &ligand)
                .map_err(|e| PipelineError::parse(e.to_string()))?;
            Tensor::new(vec![m.n, m.n], m.values.iter().map(|&v| v as f32).collect())
                .write(&dir.join("matrix.f32"))
                .map_err(internal)
        },
    )?;
    let stride = inputs.trajectory.frame_stride_ps;
    let refcluster_key = runner.stage(
        "refcluster",
        json!({"refcluster": config.refcluster, "rmsd": rmsd_key, "persistence_ps": config.ranking.persistence_threshold_ps, "stride_ps": stride}),
        |dir| {
            let t = Tensor::read(&workdir.join("rmsd/matrix.f32")).map_err(internal)?;
            let matrix = RmsdMatrix {
                n: t.dims[0],
                values: t.data.iter().map(|&v| v as f64).collect(),
            };
            let labels = ClusterLabels {
                labels: qt_from_matrix(&matrix, &config.refcluster).map_err(|e| PipelineError::config(e.to_string()))?,
                method: ClusterMethod::RmsdQt,
            };
            write_file(&dir.join("labels.csv"), labels.to_csv().as_bytes())?;
            write_art(&size_series(&labels), &dir.join("sizes.csv"))?;
            let run_ps = largest_cluster_persistence_ps(&labels, stride);
            write_art(
                &Persistence {
                    largest_cluster_run_ps: run_ps,
                    frame_stride_ps: stride,
                    threshold_ps: config.ranking.persistence_threshold_ps,
                    persisted: run_ps >= config.ranking.persistence_threshold_ps,
                },
                &dir.join("persistence.json"),
            )
        },
    )?;
    if last == Stage::RefCluster {
        return Ok(finish(workdir, runner, None));
    }

    let map: SubtypeMap = read_art(&workdir.join("subtype/subtype_map.json"))?;
    let train_cfg = config.train_config();
    let train_key = runner.stage(
        "train",
        json!({"train": train_cfg, "ensemble": config.ensemble, "subtype": subtype_key, "contacts": contacts_key, "whole": whole_ref}),
        |dir| {
            let tensors = load_dynamism(&workdir, config.contacts.delta)?;
            let sets = datasets(&tensors, &map, whole_ref)?;
            // whole-molecule reference uses the first architecture only
            let mut jobs: Vec<(usize, ArchSpec)> = Vec::new();
            for (i, (name, _)) in sets.iter().enumerate() {
                let specs: &[ArchSpec] = if name == "whole" {
                    &config.ensemble.architectures[..1]
                } else {
                    &config.ensemble.architectures
                };
                jobs.extend(specs.iter().map(|s| (i, *s)));
            }
            let run_one = |&(i, spec): &(usize, ArchSpec)| {
                let data = &sets[i].1;
                let arch = config.ensemble.arch_for(spec, data)?;
                let cfg = TrainConfig {
                    seed: arch_seed(train_cfg.seed, spec),
                    ..train_cfg.clone()
                };
                train(data, arch, &cfg).map(|o| (cfg, o))
            };
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(config.jobs)
                .build()
                .map_err(internal)?;
            let results: Vec<_> = pool.install(|| jobs.par_iter().map(run_one).collect());
            for ((i, spec), result) in jobs.iter().zip(results) {
                let (cfg, outcome) = result.map_err(|e| {
                    let mut err = from_cvae(e);
                    err.message = format!("{} {}: {}", sets[*i].0, arch_dir(spec), err.message);
                    err
                })?;
                let sub = dir.join(&sets[*i].0).join(arch_dir(spec));
                write_art(&outcome.latent, &sub.join("latent.json"))?;
                write_file(&sub.join("curve.json"), &model_io::to_json_bytes(&outcome.curve).map_err(internal)?)?;
                let best = outcome.curve.iter().find(|r| r.epoch == outcome.best_epoch).map_or(f64::NAN, |r| r.loss);
                write_checkpoint(&sub.join("checkpoint.bin"), &outcome.params, &cfg, outcome.best_epoch, best)
                    .map_err(internal)?;
            }
            Ok(())
        },
    )?;
    if last == Stage::Train {
        return Ok(finish(workdir, runner, None));
    }

    let mut groups: Vec<(String, Vec<ArchSpec>)> = (0..map.subtype_count())
        .map(|s| (format!("subtype_{s}"), config.ensemble.architectures.clone()))
        .collect();
    if whole_ref {
        groups.push(("whole".into(), config.ensemble.architectures[..1].to_vec()));
    }
    let cluster_key = runner.stage(
        "cluster",
        json!({"hdbscan": config.hdbscan, "train": train_key}),
        |dir| {
            for (group, specs) in &groups {
                for spec in specs {
                    let rel = format!("{group}/{}", arch_dir(spec));
                    let latent: LatentSeries = read_art(&workdir.join("train").join(&rel).join("latent.json"))?;
                    let labels = clustering::hdbscan(&latent.vectors, &config.hdbscan)
                        .map_err(|e| PipelineError::internal(e.to_string()))?;
                    write_file(&dir.join(&rel).join("labels.csv"), labels.to_csv().as_bytes())?;
                    write_art(&size_series(&labels), &dir.join(&rel).join("sizes.csv"))?;
                }
            }
            Ok(())
        },
    )?;
    if last == Stage::Cluster {
        return Ok(finish(workdir, runner, None));
    }

    let rank_key = runner.stage(
        "rank",
        json!({"ranking": config.ranking, "cluster": cluster_key, "refcluster": refcluster_key, "subtype": subtype_key, "contacts": contacts_key, "trajectory": inputs.trajectory_hash}),
        |dir| {
            let report = build_report(&workdir, config, &map, &groups)?;
            write_art(&report, &dir.join("report.json"))?;
            write_file(&dir.join("summary.csv"), report.summary_csv().as_bytes())?;
            let rmsf = subtype_rmsf(&inputs.trajectory, &map, &selection.protein_atom_indices)
                .map_err(|e| PipelineError::parse(e.to_string()))?;
            let scatter = metric_rmsf_scatter(&report, &rmsf).map_err(internal)?;
            write_art(&scatter, &dir.join("rmsf_scatter.json"))
        },
    )?;
    let report: RankingReport = read_art(&workdir.join("rank/report.json"))?;
    if last == Stage::Rank {
        return Ok(finish(workdir, runner, Some(report)));
    }

    runner.stage(
        "report",
        json!({"rank": rank_key, "cluster": cluster_key, "train": train_key, "refcluster": refcluster_key}),
        |dir| render_report(&workdir, dir, &report, config, &map, &groups),
    )?;
    Ok(finish(workdir, runner, Some(report)))
}

fn finish(workdir: PathBuf, runner: Runner, report: Option<RankingReport>) -> PipelineOutcome {
    PipelineOutcome {
        workdir,
        stages: runner.logs,
        report,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Persistence {
    pub largest_cluster_run_ps: f64,
    pub frame_stride_ps: f64,
    pub threshold_ps: f64,
    pub persisted: bool,
}

crate::json_artifact!(Persistence);

fn read_sizes(path: &Path) -> Result<ClusterSizeSeries, PipelineError> {
    read_art(path)
}

fn build_report(
    workdir: &Path,
    config: &PipelineConfig,
    map: &SubtypeMap,
    groups: &[(String, Vec<ArchSpec>)],
) -> Result<RankingReport, PipelineError> {
    let mut per_subtype = BTreeMap::new();
    for s in 0..map.subtype_count() {
        let (group, specs) = &groups[s];
        let members = specs
            .iter()
            .map(|spec| {
                let p = workdir.join("cluster").join(group).join(arch_dir(spec)).join("sizes.csv");
                Ok((*spec, read_sizes(&p)?))
            })
            .collect::<Result<Vec<_>, PipelineError>>()?;
        per_subtype.insert(s, members);
    }
    let (reference, stable) = match config.ranking.reference {
        ReferenceMethod::RmsdQt => {
            let p: Persistence = read_art(&workdir.join("refcluster/persistence.json"))?;
            (read_sizes(&workdir.join("refcluster/sizes.csv"))?, p.persisted)
        }
        ReferenceMethod::WholeMolecule => {
            let rel = Path::new("cluster/whole").join(arch_dir(&config.ensemble.architectures[0]));
            let text = fs::read_to_string(workdir.join(&rel).join("labels.csv")).map_err(internal)?;
            let labels = ClusterLabels::from_csv(&text, ClusterMethod::Hdbscan, &rel).map_err(internal)?;
            let p: Persistence = read_art(&workdir.join("refcluster/persistence.json"))?;
            let run = largest_cluster_persistence_ps(&labels, p.frame_stride_ps);
            (size_series(&labels), run >= config.ranking.persistence_threshold_ps)
        }
    };
    let mut report = rank_subtypes(&per_subtype, &reference, &config.ranking).map_err(internal)?;
    report.stability_flag = Some(stable);
    Ok(report)
}

fn render_report(
    workdir: &Path,
    dir: &Path,
    report: &RankingReport,
    config: &PipelineConfig,
    map: &SubtypeMap,
    groups: &[(String, Vec<ArchSpec>)],
) -> Result<(), PipelineError> {
    let mut rows = Vec::new();
    let mut frames = 0;
    for s in 0..map.subtype_count() {
        let (group, specs) = &groups[s];
        let series = specs
            .iter()
            .map(|spec| read_sizes(&workdir.join("cluster").join(group).join(arch_dir(spec)).join("sizes.csv")))
            .collect::<Result<Vec<_>, _>>()?;
        let avg = clustering::average_size_series(&series).map_err(internal)?;
        frames = avg.len();
        rows.push((format!("subtype {s}"), avg));
    }
    let reference = match config.ranking.reference {
        ReferenceMethod::RmsdQt => read_sizes(&workdir.join("refcluster/sizes.csv"))?,
        ReferenceMethod::WholeMolecule => read_sizes(
            &workdir
                .join("cluster/whole")
                .join(arch_dir(&config.ensemble.architectures[0]))
                .join("sizes.csv"),
        )?,
    };
    rows.push(("reference".into(), reference.as_f64()));
    write_file(&dir.join("heatmap.svg"), render::heat_strips(&rows, frames as f64).as_bytes())?;
    write_file(&dir.join("metrics.svg"), render::metric_bars(report).as_bytes())?;

    let first = arch_dir(&config.ensemble.architectures[0]);
    for (group, _) in groups {
        let latent: LatentSeries = read_art(&workdir.join("train").join(group).join(&first).join("latent.json"))?;
        let text = fs::read_to_string(workdir.join("cluster").join(group).join(&first).join("labels.csv")).map_err(internal)?;
        let labels = ClusterLabels::from_csv(&text, ClusterMethod::Hdbscan, Path::new("labels.csv")).map_err(internal)?;
        if latent.vectors.len() < 2 {
            continue;
        }
        let proj = pca_project(&latent.vectors, 2).map_err(internal)?;
        let title = format!("{group} {first} latent PCA");
        write_file(
            &dir.join(format!("pca_{group}.svg")),
            render::pca_scatter(&title, &proj.coords, &labels.labels).as_bytes(),
        )?;
    }
    Ok(())
}

/// Every relative path under `dir` with its SHA-256, sorted; used to compare runs.
pub fn tree_digest(dir: &Path) -> Result<BTreeMap<String, String>, PipelineError> {
    let mut files = Vec::new();
    fn walk(dir: &Path, base: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
        let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let p = e.path();
            if p.is_dir() {
                walk(&p, base, out)?;
            } else {
                out.push(p.strip_prefix(base).unwrap().to_path_buf());
            }
        }
        Ok(())
    }
    walk(dir, dir, &mut files).map_err(internal)?;
    files
        .into_iter()
        .map(|rel| Ok((rel.to_string_lossy().into_owned(), file_hash(&dir.join(&rel))?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_round_trip() {
        let c = PipelineConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        let back: PipelineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        assert!(c.validate().is_ok());
        let partial: PipelineConfig = serde_json::from_str(r#"{"version":1,"seed":4}"#).unwrap();
        assert_eq!(partial.seed, 4);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"versoin":1}"#).is_err());
    }

    #[test]
    fn version_checked() {
        let c = PipelineConfig {
            version: 2,
            ..Default::default()
        };
        assert_eq!(c.validate().unwrap_err().exit_code(), 1);
    }

    #[test]
    fn error_line_is_json() {
        let e = PipelineError::parse("bad file");
        let v: serde_json::Value = serde_json::from_str(&e.to_json_line()).unwrap();
        assert_eq!(v["exit_code"], 2);
        assert_eq!(v["error"], "parse");
    }
}
