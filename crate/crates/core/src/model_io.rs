//! Topology and trajectory parsing, plus on-disk formats for every pipeline
//! artifact (CSV series, JSON documents, raw float32 tensors).
//!
//! All writers are deterministic: equal values produce equal bytes. Files are
//! written to a temporary sibling and renamed into place.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Version stamped into tensor sidecars.
pub const TENSOR_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid JSON in {path}: {message}")]
    Json { path: PathBuf, message: String },
    #[error("atom {atom}: missing field `{field}`")]
    MissingField { atom: usize, field: &'static str },
    #[error("atom {0}: duplicate index")]
    DuplicateIndex(usize),
    #[error("atom {0}: index out of order (expected contiguous indices from 0)")]
    NonContiguousIndex(usize),
    #[error("atom {0}: sigma must be > 0")]
    NonPositiveSigma(usize),
    #[error("atom {0}: epsilon must be finite and >= 0")]
    InvalidEpsilon(usize),
    #[error("atom {0}: unknown role")]
    UnknownRole(usize),
    #[error("topology has no ligand atoms")]
    NoLigandAtoms,
    #[error("topology has no protein atoms")]
    NoProteinAtoms,
    #[error("frame {frame}: atom count does not match topology")]
    AtomCountMismatch { frame: usize },
    #[error("line {line}: malformed frame header")]
    MalformedFrameHeader { line: usize },
    #[error("line {line}: malformed atom line")]
    MalformedAtomLine { line: usize },
    #[error("frame {frame}, atom {atom}: non-finite coordinate")]
    NonFiniteCoordinate { frame: usize, atom: usize },
    #[error("trajectory contains no frames")]
    EmptyTrajectory,
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, ModelIoError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Ligand,
    Protein,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomRecord {
    pub index: usize,
    pub name: String,
    pub element: String,
    #[serde(rename = "type")]
    pub atom_type: String,
    /// Lennard-Jones size in Å.
    pub sigma: f64,
    /// Well depth in kcal/mol.
    pub epsilon: f64,
    pub role: Role,
    pub residue_id: i64,
    pub residue_name: String,
}

impl AtomRecord {
    pub fn is_hydrogen(&self) -> bool {
        self.element.eq_ignore_ascii_case("H")
    }
}

/// Ordered atom list; the order is the coordinate order of every trajectory
/// read against it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TopologyFile", into = "TopologyFile")]
pub struct Topology {
    atoms: Vec<AtomRecord>,
    ligand: Vec<usize>,
    protein: Vec<usize>,
}

impl Topology {
    pub fn new(atoms: Vec<AtomRecord>) -> Result<Self> {
        let mut seen = vec![false; atoms.len()];
        for (pos, atom) in atoms.iter().enumerate() {
            if atom.index < seen.len() && seen[atom.index] {
                return Err(ModelIoError::DuplicateIndex(atom.index));
            }
            if atom.index != pos {
                return Err(ModelIoError::NonContiguousIndex(atom.index));
            }
            seen[pos] = true;
            if !(atom.sigma > 0.0) || !atom.sigma.is_finite() {
                return Err(ModelIoError::NonPositiveSigma(atom.index));
            }
            if !(atom.epsilon >= 0.0) || !atom.epsilon.is_finite() {
                return Err(ModelIoError::InvalidEpsilon(atom.index));
            }
        }
        let ligand: Vec<usize> = atoms
            .iter()
            .filter(|a| a.role == Role::Ligand)
            .map(|a| a.index)
            .collect();
        let protein: Vec<usize> = atoms
            .iter()
            .filter(|a| a.role == Role::Protein)
            .map(|a| a.index)
            .collect();
        if ligand.is_empty() {
            return Err(ModelIoError::NoLigandAtoms);
        }
        if protein.is_empty() {
            return Err(ModelIoError::NoProteinAtoms);
        }
        Ok(Self {
            atoms,
            ligand,
            protein,
        })
    }

    pub fn atoms(&self) -> &[AtomRecord] {
        &self.atoms
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    /// N, the number of ligand atoms.
    pub fn ligand_count(&self) -> usize {
        self.ligand.len()
    }

    pub fn protein_count(&self) -> usize {
        self.protein.len()
    }

    /// Topology indices of ligand atoms, ascending. Row `r` of a contact
    /// matrix belongs to atom `ligand_indices()[r]`.
    pub fn ligand_indices(&self) -> &[usize] {
        &self.ligand
    }

    pub fn protein_indices(&self) -> &[usize] {
        &self.protein
    }
}

#[derive(Serialize, Deserialize)]
struct TopologyFile {
    atoms: Vec<RawAtom>,
}

#[derive(Serialize, Deserialize)]
struct RawAtom {
    index: Option<usize>,
    name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    element: Option<String>,
    #[serde(rename = "type")]
    atom_type: Option<String>,
    sigma: Option<f64>,
    epsilon: Option<f64>,
    role: Option<String>,
    residue_id: Option<i64>,
    residue_name: Option<String>,
}

/// Element symbol guessed from an atom name: its first alphabetic character.
fn element_from_name(name: &str) -> String {
    name.chars()
        .find(|c| c.is_ascii_alphabetic())
        .map(|c| c.to_ascii_uppercase().to_string())
        .unwrap_or_default()
}

impl TryFrom<TopologyFile> for Topology {
    type Error = ModelIoError;

    fn try_from(file: TopologyFile) -> Result<Self> {
        let mut atoms = Vec::with_capacity(file.atoms.len());
        for (pos, raw) in file.atoms.into_iter().enumerate() {
            let at = raw.index.unwrap_or(pos);
            let missing = |field| ModelIoError::MissingField { atom: at, field };
            let index = raw.index.ok_or_else(|| missing("index"))?;
            let name = raw.name.ok_or_else(|| missing("name"))?;
            let role = match raw.role.ok_or_else(|| missing("role"))?.as_str() {
                "ligand" => Role::Ligand,
                "protein" => Role::Protein,
                "other" => Role::Other,
                _ => return Err(ModelIoError::UnknownRole(index)),
            };
            let element = raw
                .element
                .filter(|e| !e.is_empty())
                .unwrap_or_else(|| element_from_name(&name));
            atoms.push(AtomRecord {
                index,
                element,
                atom_type: raw.atom_type.ok_or_else(|| missing("type"))?,
                sigma: raw.sigma.ok_or_else(|| missing("sigma"))?,
                epsilon: raw.epsilon.ok_or_else(|| missing("epsilon"))?,
                role,
                residue_id: raw.residue_id.ok_or_else(|| missing("residue_id"))?,
                residue_name: raw.residue_name.ok_or_else(|| missing("residue_name"))?,
                name,
            });
        }
        Topology::new(atoms)
    }
}

impl From<Topology> for TopologyFile {
    fn from(top: Topology) -> Self {
        let atoms = top
            .atoms
            .into_iter()
            .map(|a| RawAtom {
                index: Some(a.index),
                name: Some(a.name),
                element: Some(a.element),
                atom_type: Some(a.atom_type),
                sigma: Some(a.sigma),
                epsilon: Some(a.epsilon),
                role: Some(
                    match a.role {
                        Role::Ligand => "ligand",
                        Role::Protein => "protein",
                        Role::Other => "other",
                    }
                    .to_string(),
                ),
                residue_id: Some(a.residue_id),
                residue_name: Some(a.residue_name),
            })
            .collect();
        TopologyFile { atoms }
    }
}

pub fn parse_topology(path: &Path) -> Result<Topology> {
    let text = read_to_string(path)?;
    parse_topology_str(&text).map_err(|e| match e {
        ModelIoError::Json { message, .. } => ModelIoError::Json {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

pub fn parse_topology_str(text: &str) -> Result<Topology> {
    let file: TopologyFile = serde_json::from_str(text).map_err(|e| ModelIoError::Json {
        path: PathBuf::new(),
        message: e.to_string(),
    })?;
    Topology::try_from(file)
}

/// T frames of Natoms × 3 coordinates in Å, stored frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFrameSeries {
    n_atoms: usize,
    coords: Vec<[f64; 3]>,
    /// Picoseconds between consecutive frames (0 for single-frame input).
    pub frame_stride_ps: f64,
}

impl TrajectoryFrameSeries {
    pub fn new(n_atoms: usize, coords: Vec<[f64; 3]>, frame_stride_ps: f64) -> Result<Self> {
        if n_atoms == 0 || coords.is_empty() {
            return Err(ModelIoError::EmptyTrajectory);
        }
        if !coords.len().is_multiple_of(n_atoms) {
            return Err(ModelIoError::AtomCountMismatch {
                frame: coords.len() / n_atoms,
            });
        }
        for (k, c) in coords.iter().enumerate() {
            if !c.iter().all(|v| v.is_finite()) {
                return Err(ModelIoError::NonFiniteCoordinate {
                    frame: k / n_atoms,
                    atom: k % n_atoms,
                });
            }
        }
        Ok(Self {
            n_atoms,
            coords,
            frame_stride_ps,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.coords.len() / self.n_atoms
    }

    pub fn atom_count(&self) -> usize {
        self.n_atoms
    }

    pub fn frame(&self, t: usize) -> &[[f64; 3]] {
        &self.coords[t * self.n_atoms..(t + 1) * self.n_atoms]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[[f64; 3]]> {
        self.coords.chunks(self.n_atoms)
    }

    pub fn raw_coords(&self) -> &[[f64; 3]] {
        &self.coords
    }
}

/// Reads extended-XYZ frame blocks: count line, `frame=<i> time_ps=<t>`
/// comment line, then one `name x y z` line per atom.
pub fn parse_trajectory(path: &Path, topology: &Topology) -> Result<TrajectoryFrameSeries> {
    let text = read_to_string(path)?;
    parse_trajectory_str(&text, topology)
}

pub fn parse_trajectory_str(text: &str, topology: &Topology) -> Result<TrajectoryFrameSeries> {
    let n_atoms = topology.atom_count();
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).peekable();
    let mut coords = Vec::new();
    let mut times = Vec::new();
    let mut frame = 0usize;
    loop {
        // skip blank separators between blocks
        while matches!(lines.peek(), Some((_, l)) if l.trim().is_empty()) {
            lines.next();
        }
        let Some((count_line, count_text)) = lines.next() else {
            break;
        };
        let count: usize = count_text
            .trim()
            .parse()
            .map_err(|_| ModelIoError::MalformedFrameHeader { line: count_line })?;
        if count != n_atoms {
            return Err(ModelIoError::AtomCountMismatch { frame });
        }
        let (comment_line, comment) = lines
            .next()
            .ok_or(ModelIoError::MalformedFrameHeader { line: count_line + 1 })?;
        times.push(parse_frame_comment(comment, comment_line)?);
        for atom in 0..n_atoms {
            let Some((line_no, line)) = lines.next() else {
                return Err(ModelIoError::AtomCountMismatch { frame });
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() < 4 {
                return Err(ModelIoError::AtomCountMismatch { frame });
            }
            let mut xyz = [0.0f64; 3];
            for (k, field) in fields[1..4].iter().enumerate() {
                xyz[k] = field
                    .parse()
                    .map_err(|_| ModelIoError::MalformedAtomLine { line: line_no })?;
            }
            if !xyz.iter().all(|v| v.is_finite()) {
                return Err(ModelIoError::NonFiniteCoordinate { frame, atom });
            }
            coords.push(xyz);
        }
        frame += 1;
    }
    if frame == 0 {
        return Err(ModelIoError::EmptyTrajectory);
    }
    let stride = if times.len() >= 2 { times[1] - times[0] } else { 0.0 };
    TrajectoryFrameSeries::new(n_atoms, coords, stride)
}

fn parse_frame_comment(comment: &str, line: usize) -> Result<f64> {
    let mut time = None;
    let mut saw_frame = false;
    for token in comment.split_whitespace() {
        if let Some(v) = token.strip_prefix("frame=") {
            v.parse::<usize>()
                .map_err(|_| ModelIoError::MalformedFrameHeader { line })?;
            saw_frame = true;
        } else if let Some(v) = token.strip_prefix("time_ps=") {
            time = Some(
                v.parse::<f64>()
                    .map_err(|_| ModelIoError::MalformedFrameHeader { line })?,
            );
        }
    }
    match time {
        Some(t) if saw_frame && t.is_finite() => Ok(t),
        _ => Err(ModelIoError::MalformedFrameHeader { line }),
    }
}

/// Renders a trajectory as extended-XYZ with 6 decimals per coordinate.
pub fn format_trajectory(traj: &TrajectoryFrameSeries, topology: &Topology) -> String {
    let mut out = String::with_capacity(traj.raw_coords().len() * 40);
    for (t, frame) in traj.frames().enumerate() {
        let _ = writeln!(out, "{}", traj.atom_count());
        let _ = writeln!(out, "frame={} time_ps={}", t, t as f64 * traj.frame_stride_ps);
        for (atom, c) in topology.atoms().iter().zip(frame) {
            let _ = writeln!(out, "{} {:.6} {:.6} {:.6}", atom.name, c[0], c[1], c[2]);
        }
    }
    out
}

pub fn write_trajectory(traj: &TrajectoryFrameSeries, topology: &Topology, path: &Path) -> Result<()> {
    write_atomic(path, format_trajectory(traj, topology).as_bytes())
}

pub fn write_topology(topology: &Topology, path: &Path) -> Result<()> {
    write_json(topology, path)
}

// ---------------------------------------------------------------------------
// generic artifact plumbing

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| ModelIoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| ModelIoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `bytes` to a temporary sibling, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io_err = |source| ModelIoError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.tmp{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

/// Pretty JSON with a trailing newline. Struct fields serialize in
/// declaration order and maps are BTreeMaps, so output is byte-stable.
pub fn to_json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| ModelIoError::Json {
        path: PathBuf::new(),
        message: e.to_string(),
    })?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let bytes = to_json_bytes(value).map_err(|e| match e {
        ModelIoError::Json { message, .. } => ModelIoError::Json {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })?;
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| ModelIoError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Two-column integer CSV: `<index_name>,<value_name>` header then one row per entry.
pub fn format_int_csv(index_name: &str, value_name: &str, values: &[i64]) -> String {
    let mut out = format!("{index_name},{value_name}\n");
    for (i, v) in values.iter().enumerate() {
        let _ = writeln!(out, "{i},{v}");
    }
    out
}

pub fn parse_int_csv(text: &str, path: &Path) -> Result<Vec<i64>> {
    parse_two_column(text, path, |s| s.parse::<i64>().ok())
}

/// Two-column CSV of reals using shortest round-trip formatting.
pub fn format_real_csv(index_name: &str, value_name: &str, rows: &[(i64, f64)]) -> String {
    let mut out = format!("{index_name},{value_name}\n");
    for (i, v) in rows {
        let _ = writeln!(out, "{i},{v:?}");
    }
    out
}

pub fn parse_real_csv(text: &str, path: &Path) -> Result<Vec<(i64, f64)>> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || ModelIoError::Format {
            path: path.to_path_buf(),
            message: format!("line {}: expected `<int>,<real>`", n + 1),
        };
        let (a, b) = line.split_once(',').ok_or_else(bad)?;
        let i = a.trim().parse::<i64>().map_err(|_| bad())?;
        let v = b.trim().parse::<f64>().map_err(|_| bad())?;
        rows.push((i, v));
    }
    Ok(rows)
}

fn parse_two_column<T>(text: &str, path: &Path, parse: impl Fn(&str) -> Option<T>) -> Result<Vec<T>> {
    let mut values = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || ModelIoError::Format {
            path: path.to_path_buf(),
            message: format!("line {}: expected `<frame>,<value>` in order", n + 1),
        };
        let (a, b) = line.split_once(',').ok_or_else(bad)?;
        if a.trim().parse::<usize>().ok() != Some(values.len()) {
            return Err(bad());
        }
        values.push(parse(b.trim()).ok_or_else(bad)?);
    }
    Ok(values)
}

/// Dense float32 tensor, row-major over `dims`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSidecar {
    pub dims: Vec<usize>,
    pub dtype: String,
    pub version: u32,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(dims.iter().product::<usize>(), data.len(), "tensor dims/data mismatch");
        Self { dims, data }
    }

    fn sidecar_path(path: &Path) -> PathBuf {
        let mut name = path.as_os_str().to_owned();
        name.push(".json");
        PathBuf::from(name)
    }

    /// Writes raw little-endian f32 to `path` and the sidecar to `path.json`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        write_atomic(path, &bytes)?;
        let sidecar = TensorSidecar {
            dims: self.dims.clone(),
            dtype: "float32".to_string(),
            version: TENSOR_FORMAT_VERSION,
        };
        write_json(&sidecar, &Self::sidecar_path(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let sidecar: TensorSidecar = read_json(&Self::sidecar_path(path))?;
        let bad = |message: String| ModelIoError::Format {
            path: path.to_path_buf(),
            message,
        };
        if sidecar.dtype != "float32" || sidecar.version != TENSOR_FORMAT_VERSION {
            return Err(bad(format!(
                "unsupported tensor dtype/version {}/{}",
                sidecar.dtype, sidecar.version
            )));
        }
        let bytes = read_bytes(path)?;
        let expected = sidecar.dims.iter().product::<usize>() * 4;
        if bytes.len() != expected {
            return Err(bad(format!("expected {expected} bytes, found {}", bytes.len())));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self {
            dims: sidecar.dims,
            data,
        })
    }
}

/// A value with a canonical on-disk form.
pub trait Artifact: Sized {
    fn to_bytes(&self) -> Result<Vec<u8>>;
    fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self>;

    fn write_to(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    fn read_from(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_bytes(path)?, path)
    }
}

/// Implements [`Artifact`] as pretty JSON for a serde type.
#[macro_export]
macro_rules! json_artifact {
    ($ty:ty) => {
        impl $crate::model_io::Artifact for $ty {
            fn to_bytes(&self) -> $crate::model_io::Result<Vec<u8>> {
                $crate::model_io::to_json_bytes(self)
            }

            fn from_bytes(bytes: &[u8], path: &std::path::Path) -> $crate::model_io::Result<Self> {
                serde_json::from_slice(bytes).map_err(|e| $crate::model_io::ModelIoError::Json {
                    path: path.to_path_buf(),
                    message: e.to_string(),
                })
            }
        }
    };
}

/// Writes any artifact; thin wrapper so call sites read like the pipeline stage list.
pub fn write_artifact<A: Artifact>(value: &A, path: &Path) -> Result<()> {
    value.write_to(path)
}

pub fn read_artifact<A: Artifact>(path: &Path) -> Result<A> {
    A::read_from(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn atom_json(index: usize, role: &str, sigma: f64) -> String {
        format!(
            r#"{{"index":{index},"name":"A{index}","type":"T{index}","sigma":{sigma},"epsilon":0.1,"role":"{role}","residue_id":1,"residue_name":"RES"}}"#
        )
    }

    fn topo_json(atoms: &[String]) -> String {
        format!(r#"{{"atoms":[{}]}}"#, atoms.join(","))
    }

    fn small_topology() -> Topology {
        let text = topo_json(&[
            atom_json(0, "ligand", 3.0),
            atom_json(1, "ligand", 3.0),
            atom_json(2, "protein", 3.0),
        ]);
        parse_topology_str(&text).unwrap()
    }

    #[test]
    fn three_atom_topology() {
        let top = small_topology();
        assert_eq!(top.ligand_count(), 2);
        assert_eq!(top.protein_count(), 1);
        assert_eq!(top.atoms()[1].name, "A1");
        assert_eq!(top.atoms()[0].element, "A");
    }

    #[test]
    fn zero_sigma_names_atom() {
        let mut atoms: Vec<String> = (0..7).map(|i| atom_json(i, "ligand", 3.0)).collect();
        atoms[5] = atom_json(5, "ligand", 0.0);
        atoms.push(atom_json(7, "protein", 3.0));
        let err = parse_topology_str(&topo_json(&atoms)).unwrap_err();
        assert!(matches!(err, ModelIoError::NonPositiveSigma(5)), "{err}");
    }

    #[test]
    fn topology_errors() {
        let dup = topo_json(&[atom_json(0, "ligand", 3.0), atom_json(0, "protein", 3.0)]);
        assert!(matches!(
            parse_topology_str(&dup).unwrap_err(),
            ModelIoError::DuplicateIndex(0)
        ));
        let no_lig = topo_json(&[atom_json(0, "protein", 3.0)]);
        assert!(matches!(
            parse_topology_str(&no_lig).unwrap_err(),
            ModelIoError::NoLigandAtoms
        ));
        let missing = r#"{"atoms":[{"index":0,"name":"C1","type":"X","epsilon":0.1,"role":"ligand","residue_id":1,"residue_name":"L"}]}"#;
        assert!(matches!(
            parse_topology_str(missing).unwrap_err(),
            ModelIoError::MissingField { atom: 0, field: "sigma" }
        ));
    }

    #[test]
    fn one_frame_exact() {
        let top = small_topology();
        let text = "3\nframe=0 time_ps=0\nA0 0 0 0\nA1 1 0 0\nA2 0.25 -3.5 1e-3\n";
        let traj = parse_trajectory_str(text, &top).unwrap();
        assert_eq!(traj.frame_count(), 1);
        assert_eq!(traj.frame(0)[1], [1.0, 0.0, 0.0]);
        assert_eq!(traj.frame(0)[2], [0.25, -3.5, 0.001]);
    }

    #[test]
    fn missing_atom_in_frame_three() {
        let top = small_topology();
        let mut text = String::new();
        for f in 0..5 {
            let n = if f == 3 { 2 } else { 3 };
            text += &format!("{n}\nframe={f} time_ps={}\n", f * 20);
            for a in 0..n {
                text += &format!("A{a} {a} 0 0\n");
            }
        }
        let err = parse_trajectory_str(&text, &top).unwrap_err();
        assert!(matches!(err, ModelIoError::AtomCountMismatch { frame: 3 }), "{err}");
    }

    #[test]
    fn malformed_header_and_nan() {
        let top = small_topology();
        let bad_header = "3\nhello\nA0 0 0 0\nA1 1 0 0\nA2 2 0 0\n";
        assert!(matches!(
            parse_trajectory_str(bad_header, &top).unwrap_err(),
            ModelIoError::MalformedFrameHeader { line: 2 }
        ));
        let nan = "3\nframe=0 time_ps=0\nA0 0 0 0\nA1 NaN 0 0\nA2 2 0 0\n";
        assert!(matches!(
            parse_trajectory_str(nan, &top).unwrap_err(),
            ModelIoError::NonFiniteCoordinate { frame: 0, atom: 1 }
        ));
    }

    #[test]
    fn stride_from_times() {
        let top = small_topology();
        let text = "3\nframe=0 time_ps=100\nA0 0 0 0\nA1 1 0 0\nA2 2 0 0\n\
                    3\nframe=1 time_ps=120\nA0 0 0 0\nA1 1 0 0\nA2 2 0 0\n";
        let traj = parse_trajectory_str(text, &top).unwrap();
        assert_eq!(traj.frame_count(), 2);
        assert_eq!(traj.frame_stride_ps, 20.0);
    }

    #[test]
    fn int_csv_format() {
        assert_eq!(format_int_csv("frame", "size", &[3, 3, 1]), "frame,size\n0,3\n1,3\n2,1\n");
        let p = Path::new("x.csv");
        assert_eq!(parse_int_csv("frame,size\n0,3\n1,3\n2,1\n", p).unwrap(), vec![3, 3, 1]);
        assert!(parse_int_csv("frame,size\n1,3\n", p).is_err());
    }

    #[test]
    fn topology_json_round_trip() {
        let top = small_topology();
        let bytes = to_json_bytes(&top).unwrap();
        let back = parse_topology_str(std::str::from_utf8(&bytes).unwrap()).unwrap();
        assert_eq!(top, back);
    }
}
