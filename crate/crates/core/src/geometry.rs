//! Rigid superposition (Kabsch), protein-aligned ligand RMSD and per-subtype RMSF.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model_io::TrajectoryFrameSeries;
use crate::subtypes::SubtypeMap;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("superposition needs at least 3 paired points, got {0}")]
    TooFewPoints(usize),
    #[error("point sets differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("degenerate geometry: covariance rank < 2")]
    DegenerateGeometry,
}

/// Proper rotation R and translation t mapping `moving` onto `target`:
/// x ↦ R x + t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Superposition {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub rmsd_after: f64,
}

impl Superposition {
    pub fn apply(&self, p: &[f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + t[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + t[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + t[2],
        ]
    }
}

fn centroid<'a>(points: impl Iterator<Item = &'a [f64; 3]>) -> Vector3<f64> {
    let mut c = Vector3::zeros();
    let mut n = 0.0;
    for p in points {
        c += Vector3::new(p[0], p[1], p[2]);
        n += 1.0;
    }
    c / n
}

pub fn kabsch(moving: &[[f64; 3]], target: &[[f64; 3]]) -> Result<Superposition, GeometryError> {
    kabsch_indexed(moving, target, None)
}

/// Kabsch on the subset `idx` of both frames (all points when `None`).
fn kabsch_indexed(
    moving: &[[f64; 3]],
    target: &[[f64; 3]],
    idx: Option<&[usize]>,
) -> Result<Superposition, GeometryError> {
    if moving.len() != target.len() {
        return Err(GeometryError::LengthMismatch(moving.len(), target.len()));
    }
    let all: Vec<usize>;
    let idx = match idx {
        Some(i) => i,
        None => {
            all = (0..moving.len()).collect();
            &all
        }
    };
    if idx.len() < 3 {
        return Err(GeometryError::TooFewPoints(idx.len()));
    }
    let cm = centroid(idx.iter().map(|&i| &moving[i]));
    let ct = centroid(idx.iter().map(|&i| &target[i]));
    let mut h = Matrix3::zeros();
    for &i in idx {
        let m = Vector3::new(moving[i][0], moving[i][1], moving[i][2]) - cm;
        let t = Vector3::new(target[i][0], target[i][1], target[i][2]) - ct;
        h += m * t.transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    let scale = idx
        .iter()
        .map(|&i| {
            let m = Vector3::new(moving[i][0], moving[i][1], moving[i][2]) - cm;
            m.norm_squared()
        })
        .sum::<f64>()
        .max(f64::MIN_POSITIVE);
    if s[1] <= 1e-12 * scale {
        return Err(GeometryError::DegenerateGeometry);
    }
    if idx.iter().all(|&i| moving[i] == target[i]) {
        return Ok(Superposition {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
            rmsd_after: 0.0,
        });
    }
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let r = v * correction * u.transpose();
    let t = ct - r * cm;
    let mut rotation = [[0.0; 3]; 3];
    for (a, row) in rotation.iter_mut().enumerate() {
        for (b, x) in row.iter_mut().enumerate() {
            *x = r[(a, b)];
        }
    }
    let mut sup = Superposition {
        rotation,
        translation: [t[0], t[1], t[2]],
        rmsd_after: 0.0,
    };
    sup.rmsd_after = rmsd_after(&sup, moving, target, idx);
    Ok(sup)
}

fn rmsd_after(sup: &Superposition, moving: &[[f64; 3]], target: &[[f64; 3]], idx: &[usize]) -> f64 {
    let sum: f64 = idx
        .iter()
        .map(|&i| {
            let p = sup.apply(&moving[i]);
            (p[0] - target[i][0]).powi(2) + (p[1] - target[i][1]).powi(2) + (p[2] - target[i][2]).powi(2)
        })
        .sum();
    (sum / idx.len() as f64).sqrt()
}

/// Superposes `frame_b` onto `frame_a` using the `align_on` atoms, then
/// returns the RMSD over the `measure_on` atoms.
pub fn ligand_rmsd(
    frame_a: &[[f64; 3]],
    frame_b: &[[f64; 3]],
    align_on: &[usize],
    measure_on: &[usize],
) -> Result<f64, GeometryError> {
    let sup = kabsch_indexed(frame_b, frame_a, Some(align_on))?;
    Ok(rmsd_after(&sup, frame_b, frame_a, measure_on))
}

/// Every frame superposed onto frame 0 using `align_on`.
pub fn align_to_first(
    trajectory: &TrajectoryFrameSeries,
    align_on: &[usize],
) -> Result<Vec<Vec<[f64; 3]>>, GeometryError> {
    let reference = trajectory.frame(0);
    trajectory
        .frames()
        .map(|frame| {
            let sup = kabsch_indexed(frame, reference, Some(align_on))?;
            Ok(frame.iter().map(|p| sup.apply(p)).collect())
        })
        .collect()
}

/// Per-atom RMSF over aligned frames for the atoms in `atoms`.
pub fn atom_rmsf(aligned: &[Vec<[f64; 3]>], atoms: &[usize]) -> Vec<f64> {
    let t = aligned.len() as f64;
    let Some(first) = aligned.first() else {
        return vec![0.0; atoms.len()];
    };
    atoms
        .iter()
        .map(|&a| {
            // offsets from frame 0 keep a static atom at exactly zero
            let origin = first[a];
            let mut mean = [0.0; 3];
            for frame in aligned {
                for k in 0..3 {
                    mean[k] += frame[a][k] - origin[k];
                }
            }
            for m in &mut mean {
                *m /= t;
            }
            let msd: f64 = aligned
                .iter()
                .map(|frame| (0..3).map(|k| (frame[a][k] - origin[k] - mean[k]).powi(2)).sum::<f64>())
                .sum::<f64>()
                / t;
            msd.sqrt()
        })
        .collect()
}

/// Subtype → mean RMSF (Å) of its member atoms, frames aligned on `align_on`.
pub fn subtype_rmsf(
    trajectory: &TrajectoryFrameSeries,
    map: &SubtypeMap,
    align_on: &[usize],
) -> Result<BTreeMap<usize, f64>, GeometryError> {
    let aligned = align_to_first(trajectory, align_on)?;
    Ok(map
        .subtype_members
        .iter()
        .enumerate()
        .map(|(id, members)| {
            let per_atom = atom_rmsf(&aligned, members);
            (id, per_atom.iter().sum::<f64>() / per_atom.len() as f64)
        })
        .collect())
}

/// Rotation about a unit axis by `angle` radians (Rodrigues).
pub fn axis_angle_rotation(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let r = nalgebra::Rotation3::from_axis_angle(
        &nalgebra::Unit::new_normalize(Vector3::new(axis[0], axis[1], axis[2])),
        angle,
    );
    let m = r.matrix();
    [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ]
}
