//! Ligand–protein contact matrices and dynamism tensors.
//!
//! A contact matrix is N × M binary: ligand atom rows against the selected
//! protein atoms. The dynamism tensor pairs the contacts at frame t with
//! |C(t) − C(max(0, t − δ))|.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model_io::{Role, Topology, TrajectoryFrameSeries};
use crate::subtypes::{SubtypeError, SubtypeMap};

#[derive(Debug, Error, PartialEq)]
pub enum ContactError {
    #[error("no protein atom within {radius} Å of the ligand")]
    EmptySelection { radius: f64 },
    #[error("invalid contact config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Subtype(#[from] SubtypeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContactConfig {
    /// Contact distance in Å (inclusive).
    pub cutoff: f64,
    /// Pocket radius in Å around the frame-0 ligand.
    pub pocket_radius: f64,
    /// Use every protein atom instead of the pocket.
    pub all_protein: bool,
    /// Exclude hydrogens from the protein selection and zero ligand hydrogen rows.
    pub heavy_atoms_only: bool,
    /// δ in frames.
    pub delta: usize,
}

impl Default for ContactConfig {
    fn default() -> Self {
        Self {
            cutoff: 4.5,
            pocket_radius: 10.0,
            all_protein: false,
            heavy_atoms_only: false,
            delta: 500,
        }
    }
}

impl ContactConfig {
    pub fn validate(&self) -> Result<(), ContactError> {
        if !(self.cutoff > 0.0 && self.cutoff.is_finite()) {
            return Err(ContactError::InvalidConfig(format!("cutoff {} must be > 0", self.cutoff)));
        }
        if !(self.pocket_radius > 0.0 && self.pocket_radius.is_finite()) {
            return Err(ContactError::InvalidConfig(format!(
                "pocket_radius {} must be > 0",
                self.pocket_radius
            )));
        }
        if self.delta < 1 {
            return Err(ContactError::InvalidConfig("delta must be >= 1".into()));
        }
        Ok(())
    }
}

/// The M protein atoms that form the columns of every contact matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProteinSelection {
    pub protein_atom_indices: Vec<usize>,
}

crate::json_artifact!(ProteinSelection);

impl ProteinSelection {
    pub fn len(&self) -> usize {
        self.protein_atom_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.protein_atom_indices.is_empty()
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Uniform grid over a point set, cell edge ≥ the query radius, so all
/// neighbors within the radius lie in the 27 surrounding cells.
pub struct CellList {
    origin: [f64; 3],
    cell: f64,
    dims: [usize; 3],
    /// Start offsets into `items` per cell (CSR layout).
    starts: Vec<usize>,
    items: Vec<usize>,
}

impl CellList {
    pub fn new(points: &[[f64; 3]], radius: f64) -> Self {
        // slight inflation keeps floor() rounding from splitting a pair at exactly `radius`
        let cell = radius * (1.0 + 1e-9);
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        if points.is_empty() {
            lo = [0.0; 3];
            hi = [0.0; 3];
        }
        let mut dims = [1usize; 3];
        for k in 0..3 {
            dims[k] = ((hi[k] - lo[k]) / cell).floor() as usize + 1;
        }
        let n_cells = dims[0] * dims[1] * dims[2];
        let mut counts = vec![0usize; n_cells + 1];
        let cell_ids: Vec<usize> = points
            .iter()
            .map(|p| {
                let c = Self::coords_of(&lo, cell, p);
                (c[0] as usize * dims[1] + c[1] as usize) * dims[2] + c[2] as usize
            })
            .collect();
        for &c in &cell_ids {
            counts[c + 1] += 1;
        }
        for i in 0..n_cells {
            counts[i + 1] += counts[i];
        }
        let starts = counts.clone();
        let mut fill = counts;
        let mut items = vec![0usize; points.len()];
        for (i, &c) in cell_ids.iter().enumerate() {
            items[fill[c]] = i;
            fill[c] += 1;
        }
        Self {
            origin: lo,
            cell,
            dims,
            starts,
            items,
        }
    }

    fn coords_of(origin: &[f64; 3], cell: f64, p: &[f64; 3]) -> [i64; 3] {
        [
            ((p[0] - origin[0]) / cell).floor() as i64,
            ((p[1] - origin[1]) / cell).floor() as i64,
            ((p[2] - origin[2]) / cell).floor() as i64,
        ]
    }

    /// Calls `visit(i)` for every indexed point i in the cells adjacent to `p`.
    /// Candidates still need an exact distance check.
    pub fn for_each_candidate(&self, p: &[f64; 3], mut visit: impl FnMut(usize)) {
        let c = Self::coords_of(&self.origin, self.cell, p);
        let range = |k: usize| {
            let lo = c[k].saturating_sub(1).max(0);
            let hi = c[k].saturating_add(1).min(self.dims[k] as i64 - 1);
            lo..=hi
        };
        for x in range(0) {
            for y in range(1) {
                for z in range(2) {
                    let id = (x as usize * self.dims[1] + y as usize) * self.dims[2] + z as usize;
                    for &i in &self.items[self.starts[id]..self.starts[id + 1]] {
                        visit(i);
                    }
                }
            }
        }
    }
}

/// Protein atoms within `pocket_radius` of any ligand atom in frame 0, ascending.
pub fn select_pocket(
    trajectory: &TrajectoryFrameSeries,
    topology: &Topology,
    config: &ContactConfig,
) -> Result<ProteinSelection, ContactError> {
    config.validate()?;
    let keep = |i: &usize| !config.heavy_atoms_only || !topology.atoms()[*i].is_hydrogen();
    let candidates: Vec<usize> = topology.protein_indices().iter().copied().filter(keep).collect();
    if config.all_protein {
        if candidates.is_empty() {
            return Err(ContactError::EmptySelection {
                radius: f64::INFINITY,
            });
        }
        return Ok(ProteinSelection {
            protein_atom_indices: candidates,
        });
    }
    let frame = trajectory.frame(0);
    let points: Vec<[f64; 3]> = candidates.iter().map(|&i| frame[i]).collect();
    let grid = CellList::new(&points, config.pocket_radius);
    let r2 = config.pocket_radius * config.pocket_radius;
    let mut inside = vec![false; candidates.len()];
    for &l in topology.ligand_indices() {
        let lp = &frame[l];
        grid.for_each_candidate(lp, |j| {
            if !inside[j] && dist2(lp, &points[j]) <= r2 {
                inside[j] = true;
            }
        });
    }
    let selected: Vec<usize> = candidates
        .iter()
        .zip(&inside)
        .filter(|(_, &inn)| inn)
        .map(|(&i, _)| i)
        .collect();
    if selected.is_empty() {
        return Err(ContactError::EmptySelection {
            radius: config.pocket_radius,
        });
    }
    Ok(ProteinSelection {
        protein_atom_indices: selected,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContactMatrix {
    pub frame_index: usize,
    rows: usize,
    cols: usize,
    values: Vec<u8>,
}

impl ContactMatrix {
    pub fn zeros(frame_index: usize, rows: usize, cols: usize) -> Self {
        Self {
            frame_index,
            rows,
            cols,
            values: vec![0; rows * cols],
        }
    }

    pub fn from_rows(frame_index: usize, rows: &[Vec<u8>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut m = Self::zeros(frame_index, rows.len(), cols);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), cols, "ragged contact rows");
            m.values[i * cols..(i + 1) * cols].copy_from_slice(r);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.values[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }
}

fn ligand_mask(topology: &Topology, config: &ContactConfig) -> Vec<bool> {
    topology
        .ligand_indices()
        .iter()
        .map(|&i| !config.heavy_atoms_only || !topology.atoms()[i].is_hydrogen())
        .collect()
}

/// values[i][j] = 1 iff ‖ligand_i − protein_j‖ ≤ cutoff, via a cell list.
pub fn contact_matrix(
    frame: &[[f64; 3]],
    frame_index: usize,
    topology: &Topology,
    selection: &ProteinSelection,
    config: &ContactConfig,
) -> ContactMatrix {
    let lig = topology.ligand_indices();
    let mask = ligand_mask(topology, config);
    let points: Vec<[f64; 3]> = selection.protein_atom_indices.iter().map(|&i| frame[i]).collect();
    let grid = CellList::new(&points, config.cutoff);
    let c2 = config.cutoff * config.cutoff;
    let mut m = ContactMatrix::zeros(frame_index, lig.len(), points.len());
    for (row, &l) in lig.iter().enumerate() {
        if !mask[row] {
            continue;
        }
        let lp = &frame[l];
        let out = &mut m.values[row * points.len()..(row + 1) * points.len()];
        grid.for_each_candidate(lp, |j| {
            if dist2(lp, &points[j]) <= c2 {
                out[j] = 1;
            }
        });
    }
    m
}

/// All-pairs reference implementation of [`contact_matrix`].
pub fn contact_matrix_naive(
    frame: &[[f64; 3]],
    frame_index: usize,
    topology: &Topology,
    selection: &ProteinSelection,
    config: &ContactConfig,
) -> ContactMatrix {
    let lig = topology.ligand_indices();
    let mask = ligand_mask(topology, config);
    let m_cols = selection.len();
    let c2 = config.cutoff * config.cutoff;
    let mut m = ContactMatrix::zeros(frame_index, lig.len(), m_cols);
    for (row, &l) in lig.iter().enumerate() {
        if !mask[row] {
            continue;
        }
        for (j, &p) in selection.protein_atom_indices.iter().enumerate() {
            if dist2(&frame[l], &frame[p]) <= c2 {
                m.values[row * m_cols + j] = 1;
            }
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DynamismTensor {
    pub frame_index: usize,
    pub reference_frame: usize,
    pub contact: ContactMatrix,
    /// |C(t) − C(reference_frame)| elementwise.
    pub dynamism: ContactMatrix,
}

impl DynamismTensor {
    pub fn from_contacts(current: &ContactMatrix, reference: &ContactMatrix) -> Self {
        let values = current
            .values
            .iter()
            .zip(&reference.values)
            .map(|(a, b)| a ^ b)
            .collect();
        Self {
            frame_index: current.frame_index,
            reference_frame: reference.frame_index,
            contact: current.clone(),
            dynamism: ContactMatrix {
                frame_index: current.frame_index,
                rows: current.rows,
                cols: current.cols,
                values,
            },
        }
    }

    pub fn ligand_rows(&self) -> usize {
        self.contact.rows
    }

    pub fn width(&self) -> usize {
        self.contact.cols
    }
}

pub fn contact_series(
    trajectory: &TrajectoryFrameSeries,
    topology: &Topology,
    selection: &ProteinSelection,
    config: &ContactConfig,
) -> Vec<ContactMatrix> {
    trajectory
        .frames()
        .enumerate()
        .map(|(t, frame)| contact_matrix(frame, t, topology, selection, config))
        .collect()
}

/// One dynamism tensor per frame; reference frame is max(0, t − δ).
pub fn dynamism_series(
    trajectory: &TrajectoryFrameSeries,
    topology: &Topology,
    selection: &ProteinSelection,
    config: &ContactConfig,
) -> Vec<DynamismTensor> {
    let contacts = contact_series(trajectory, topology, selection, config);
    dynamism_from_contacts(&contacts, config.delta)
}

pub fn dynamism_from_contacts(contacts: &[ContactMatrix], delta: usize) -> Vec<DynamismTensor> {
    (0..contacts.len())
        .map(|t| DynamismTensor::from_contacts(&contacts[t], &contacts[t.saturating_sub(delta)]))
        .collect()
}

/// 2 × M input for one subtype: each channel OR-reduced over the member rows.
pub fn subtype_input(
    tensor: &DynamismTensor,
    map: &SubtypeMap,
    subtype: usize,
) -> Result<Vec<u8>, ContactError> {
    let rows = map.rows(subtype)?;
    let m = tensor.width();
    let mut out = vec![0u8; 2 * m];
    for &r in rows {
        for (o, v) in out[..m].iter_mut().zip(tensor.contact.row(r)) {
            *o |= v;
        }
        for (o, v) in out[m..].iter_mut().zip(tensor.dynamism.row(r)) {
            *o |= v;
        }
    }
    Ok(out)
}

/// 2N × M input: the N contact rows stacked above the N dynamism rows.
pub fn whole_molecule_input(tensor: &DynamismTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(2 * tensor.contact.values.len());
    out.extend_from_slice(&tensor.contact.values);
    out.extend_from_slice(&tensor.dynamism.values);
    out
}

/// Protein role check used by tests and validation.
pub fn selection_is_protein(selection: &ProteinSelection, topology: &Topology) -> bool {
    selection
        .protein_atom_indices
        .iter()
        .all(|&i| topology.atoms()[i].role == Role::Protein)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_io::AtomRecord;
    use crate::subtypes::build_subtype_map;

    fn atom(index: usize, role: Role, ty: &str, element: &str) -> AtomRecord {
        AtomRecord {
            index,
            name: format!("{element}{index}"),
            element: element.into(),
            atom_type: ty.into(),
            sigma: if ty == "A" { 2.0 } else { 4.0 },
            epsilon: 0.1,
            role,
            residue_id: 1,
            residue_name: "X".into(),
        }
    }

    fn pair_system(distance: f64) -> (Topology, TrajectoryFrameSeries) {
        let top = Topology::new(vec![
            atom(0, Role::Ligand, "A", "C"),
            atom(1, Role::Protein, "P", "C"),
        ])
        .unwrap();
        let traj = TrajectoryFrameSeries::new(2, vec![[0.0; 3], [distance, 0.0, 0.0]], 20.0).unwrap();
        (top, traj)
    }

    #[test]
    fn cutoff_boundary() {
        let config = ContactConfig::default();
        for (d, expected) in [(4.4, 1), (4.6, 0), (4.5, 1)] {
            let (top, traj) = pair_system(d);
            let sel = select_pocket(&traj, &top, &config).unwrap();
            let m = contact_matrix(traj.frame(0), 0, &top, &sel, &config);
            assert_eq!(m.get(0, 0), expected, "distance {d}");
        }
    }

    #[test]
    fn pocket_membership() {
        let config = ContactConfig::default();
        let (top, traj) = pair_system(3.0);
        assert_eq!(select_pocket(&traj, &top, &config).unwrap().protein_atom_indices, vec![1]);
        let (top, traj) = pair_system(50.0);
        assert_eq!(
            select_pocket(&traj, &top, &config),
            Err(ContactError::EmptySelection { radius: 10.0 })
        );
        let all = ContactConfig {
            all_protein: true,
            ..config
        };
        assert_eq!(select_pocket(&traj, &top, &all).unwrap().len(), 1);
    }

    #[test]
    fn heavy_only_skips_hydrogens() {
        let top = Topology::new(vec![
            atom(0, Role::Ligand, "A", "H"),
            atom(1, Role::Ligand, "A", "C"),
            atom(2, Role::Protein, "P", "H"),
            atom(3, Role::Protein, "P", "C"),
        ])
        .unwrap();
        let traj = TrajectoryFrameSeries::new(4, vec![[0.0; 3], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]], 1.0)
            .unwrap();
        let config = ContactConfig {
            heavy_atoms_only: true,
            ..Default::default()
        };
        let sel = select_pocket(&traj, &top, &config).unwrap();
        assert_eq!(sel.protein_atom_indices, vec![3]);
        let m = contact_matrix(traj.frame(0), 0, &top, &sel, &config);
        assert_eq!(m.row(0), &[0]);
        assert_eq!(m.row(1), &[1]);
    }

    fn dyn_from(rows_now: &[Vec<u8>], rows_ref: &[Vec<u8>]) -> DynamismTensor {
        DynamismTensor::from_contacts(
            &ContactMatrix::from_rows(5, rows_now),
            &ContactMatrix::from_rows(0, rows_ref),
        )
    }

    #[test]
    fn new_contact_is_dynamic() {
        let t = dyn_from(&[vec![1, 0]], &[vec![0, 0]]);
        assert_eq!(t.dynamism.row(0), &[1, 0]);
        assert_eq!(t.reference_frame, 0);
    }

    #[test]
    fn first_frame_clamps_to_itself() {
        let c = vec![
            ContactMatrix::from_rows(0, &[vec![1, 1]]),
            ContactMatrix::from_rows(1, &[vec![0, 1]]),
        ];
        let series = dynamism_from_contacts(&c, 500);
        assert_eq!(series[0].reference_frame, 0);
        assert!(series[0].dynamism.values().iter().all(|&v| v == 0));
        assert_eq!(series[1].reference_frame, 0);
        assert_eq!(series[1].dynamism.row(0), &[1, 0]);
    }

    #[test]
    fn subtype_or_reduction() {
        let top = Topology::new(vec![
            atom(0, Role::Ligand, "A", "C"),
            atom(1, Role::Ligand, "A", "C"),
            atom(2, Role::Ligand, "B", "C"),
            atom(3, Role::Protein, "P", "C"),
        ])
        .unwrap();
        let map = build_subtype_map(&top, 0.1).unwrap();
        let t = dyn_from(&[vec![1, 0], vec![0, 1], vec![1, 1]], &[vec![1, 0], vec![0, 0], vec![0, 0]]);
        assert_eq!(subtype_input(&t, &map, 0).unwrap(), vec![1, 1, 0, 1]);
        assert_eq!(subtype_input(&t, &map, 1).unwrap(), vec![1, 1, 1, 1]);
        assert!(subtype_input(&t, &map, 2).is_err());
    }

    #[test]
    fn whole_molecule_layout() {
        let t = dyn_from(&[vec![1, 0, 1]], &[vec![0, 0, 1]]);
        assert_eq!(whole_molecule_input(&t), vec![1, 0, 1, 1, 0, 0]);
        let z = dyn_from(&[vec![0, 0], vec![0, 0]], &[vec![0, 0], vec![0, 0]]);
        assert_eq!(whole_molecule_input(&z), vec![0; 8]);
    }
}
