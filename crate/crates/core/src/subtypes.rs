//! Grouping of force-field atom types into atom subtypes by Lennard-Jones
//! parameter proximity.
//!
//! Two types are related when both their σ and their ε differ by at most the
//! tolerance, measured relative to the larger of the pair. Subtypes are the
//! connected components of that relation over the ligand's atom types.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contacts::ContactMatrix;
use crate::model_io::Topology;

pub const DEFAULT_TOLERANCE: f64 = 0.10;

#[derive(Debug, Error, PartialEq)]
pub enum SubtypeError {
    #[error("topology has no ligand atoms")]
    EmptyLigand,
    #[error("tolerance {0} outside (0, 1)")]
    InvalidTolerance(f64),
    #[error("atom {atom}: type `{atom_type}` has parameters that differ from an earlier atom of the same type")]
    InconsistentType { atom: usize, atom_type: String },
    #[error("unknown subtype {0}")]
    UnknownSubtype(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtypeMap {
    pub type_to_subtype: BTreeMap<String, usize>,
    /// Topology indices of the ligand atoms in each subtype, ascending.
    pub subtype_members: Vec<Vec<usize>>,
    /// Contact-matrix row of each member (position among ligand atoms).
    pub member_rows: Vec<Vec<usize>>,
}

crate::json_artifact!(SubtypeMap);

impl SubtypeMap {
    pub fn subtype_count(&self) -> usize {
        self.subtype_members.len()
    }

    pub fn rows(&self, subtype: usize) -> Result<&[usize], SubtypeError> {
        self.member_rows
            .get(subtype)
            .map(Vec::as_slice)
            .ok_or(SubtypeError::UnknownSubtype(subtype))
    }

    pub fn subtype_of_atom(&self, atom: usize) -> Option<usize> {
        self.subtype_members
            .iter()
            .position(|members| members.binary_search(&atom).is_ok())
    }
}

/// |a − b| / max(|a|, |b|), and 0 when both are 0.
pub fn relative_difference(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

pub fn build_subtype_map(topology: &Topology, tolerance: f64) -> Result<SubtypeMap, SubtypeError> {
    if !(tolerance > 0.0 && tolerance < 1.0) {
        return Err(SubtypeError::InvalidTolerance(tolerance));
    }
    let ligand = topology.ligand_indices();
    if ligand.is_empty() {
        return Err(SubtypeError::EmptyLigand);
    }

    // distinct ligand atom types, in order of first appearance
    let mut types: Vec<(String, f64, f64)> = Vec::new();
    let mut type_slot: BTreeMap<&str, usize> = BTreeMap::new();
    for &idx in ligand {
        let atom = &topology.atoms()[idx];
        match type_slot.get(atom.atom_type.as_str()) {
            Some(&slot) => {
                let (_, s, e) = &types[slot];
                if *s != atom.sigma || *e != atom.epsilon {
                    return Err(SubtypeError::InconsistentType {
                        atom: idx,
                        atom_type: atom.atom_type.clone(),
                    });
                }
            }
            None => {
                type_slot.insert(&atom.atom_type, types.len());
                types.push((atom.atom_type.clone(), atom.sigma, atom.epsilon));
            }
        }
    }

    let mut uf = UnionFind::new(types.len());
    for i in 0..types.len() {
        for j in i + 1..types.len() {
            let (_, si, ei) = &types[i];
            let (_, sj, ej) = &types[j];
            if relative_difference(*si, *sj) <= tolerance && relative_difference(*ei, *ej) <= tolerance {
                uf.union(i, j);
            }
        }
    }

    // component → smallest (σ, ε, name) member, used to order subtype ids
    let mut components: BTreeMap<usize, (f64, f64, String)> = BTreeMap::new();
    for (i, (name, s, e)) in types.iter().enumerate() {
        let root = uf.find(i);
        let key = (*s, *e, name.clone());
        components
            .entry(root)
            .and_modify(|best| {
                if cmp_key(&key, best).is_lt() {
                    *best = key.clone();
                }
            })
            .or_insert(key);
    }
    let mut roots: Vec<(usize, (f64, f64, String))> = components.into_iter().collect();
    roots.sort_by(|a, b| cmp_key(&a.1, &b.1));
    let root_to_id: BTreeMap<usize, usize> = roots
        .iter()
        .enumerate()
        .map(|(id, (root, _))| (*root, id))
        .collect();

    let mut type_to_subtype = BTreeMap::new();
    for (i, (name, _, _)) in types.iter().enumerate() {
        type_to_subtype.insert(name.clone(), root_to_id[&uf.find(i)]);
    }
    let mut subtype_members = vec![Vec::new(); roots.len()];
    let mut member_rows = vec![Vec::new(); roots.len()];
    for (row, &idx) in ligand.iter().enumerate() {
        let id = type_to_subtype[&topology.atoms()[idx].atom_type];
        subtype_members[id].push(idx);
        member_rows[id].push(row);
    }
    Ok(SubtypeMap {
        type_to_subtype,
        subtype_members,
        member_rows,
    })
}

fn cmp_key(a: &(f64, f64, String), b: &(f64, f64, String)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0)
        .then(a.1.total_cmp(&b.1))
        .then_with(|| a.2.cmp(&b.2))
}

/// Rows of `matrix` belonging to one subtype, in ascending atom order.
pub fn select_subtype_rows(
    matrix: &ContactMatrix,
    map: &SubtypeMap,
    subtype: usize,
) -> Result<Vec<Vec<u8>>, SubtypeError> {
    Ok(map
        .rows(subtype)?
        .iter()
        .map(|&r| matrix.row(r).to_vec())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_io::{AtomRecord, Role};

    fn atom(index: usize, ty: &str, sigma: f64, epsilon: f64, role: Role) -> AtomRecord {
        AtomRecord {
            index,
            name: format!("X{index}"),
            element: "C".into(),
            atom_type: ty.into(),
            sigma,
            epsilon,
            role,
            residue_id: 1,
            residue_name: "LIG".into(),
        }
    }

    fn topology(ligand: &[(&str, f64, f64)]) -> Topology {
        let mut atoms: Vec<AtomRecord> = ligand
            .iter()
            .enumerate()
            .map(|(i, (t, s, e))| atom(i, t, *s, *e, Role::Ligand))
            .collect();
        atoms.push(atom(atoms.len(), "PROT", 3.0, 0.1, Role::Protein));
        Topology::new(atoms).unwrap()
    }

    #[test]
    fn close_types_merge() {
        assert!((relative_difference(2.0, 2.1) - 0.1 / 2.1).abs() < 1e-15);
        let top = topology(&[("A", 2.0, 0.100), ("B", 2.1, 0.105)]);
        let map = build_subtype_map(&top, 0.1).unwrap();
        assert_eq!(map.subtype_count(), 1);
    }

    #[test]
    fn distant_types_split() {
        let top = topology(&[("C", 4.0, 0.30), ("A", 2.0, 0.10)]);
        let map = build_subtype_map(&top, 0.1).unwrap();
        assert_eq!(map.subtype_count(), 2);
        // ordered by smallest (σ, ε): A first
        assert_eq!(map.type_to_subtype["A"], 0);
        assert_eq!(map.subtype_members[0], vec![1]);
    }

    #[test]
    fn single_type_one_subtype() {
        let top = topology(&[("A", 2.0, 0.1), ("A", 2.0, 0.1), ("A", 2.0, 0.1)]);
        let map = build_subtype_map(&top, 0.1).unwrap();
        assert_eq!(map.subtype_members, vec![vec![0, 1, 2]]);
    }

    #[test]
    fn chains_merge_transitively() {
        // A~B and B~C but not A~C
        let top = topology(&[("A", 2.0, 0.1), ("B", 2.18, 0.1), ("C", 2.38, 0.1)]);
        let map = build_subtype_map(&top, 0.1).unwrap();
        assert!(relative_difference(2.0, 2.38) > 0.1);
        assert_eq!(map.subtype_count(), 1);
    }

    #[test]
    fn errors() {
        let top = topology(&[("A", 2.0, 0.1)]);
        assert_eq!(build_subtype_map(&top, 0.0), Err(SubtypeError::InvalidTolerance(0.0)));
        let bad = topology(&[("A", 2.0, 0.1), ("A", 2.5, 0.1)]);
        assert!(matches!(
            build_subtype_map(&bad, 0.1),
            Err(SubtypeError::InconsistentType { atom: 1, .. })
        ));
        let map = build_subtype_map(&top, 0.1).unwrap();
        assert_eq!(map.rows(3), Err(SubtypeError::UnknownSubtype(3)));
    }

    #[test]
    fn row_selection() {
        let top = topology(&[("A", 2.0, 0.1), ("B", 4.0, 0.3), ("A", 2.0, 0.1), ("B", 4.0, 0.3)]);
        let map = build_subtype_map(&top, 0.1).unwrap();
        let matrix = ContactMatrix::from_rows(
            0,
            &[vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1], vec![1, 1, 0]],
        );
        assert_eq!(
            select_subtype_rows(&matrix, &map, 1).unwrap(),
            vec![vec![0, 1, 0], vec![1, 1, 0]]
        );
        let all = topology(&[("A", 2.0, 0.1), ("A", 2.0, 0.1)]);
        let map = build_subtype_map(&all, 0.1).unwrap();
        let m = ContactMatrix::from_rows(0, &[vec![1, 0], vec![0, 1]]);
        assert_eq!(select_subtype_rows(&m, &map, 0).unwrap(), vec![vec![1, 0], vec![0, 1]]);
    }
}
