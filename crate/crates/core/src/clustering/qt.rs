//! Quality-threshold clustering of frames by protein-aligned ligand RMSD.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ClusteringError;
use crate::geometry::ligand_rmsd;
use crate::model_io::TrajectoryFrameSeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefClusterConfig {
    /// Å.
    pub rmsd_cutoff: f64,
    pub max_clusters: usize,
}

impl Default for RefClusterConfig {
    fn default() -> Self {
        Self {
            rmsd_cutoff: 2.0,
            max_clusters: 5,
        }
    }
}

impl RefClusterConfig {
    pub fn validate(&self) -> Result<(), ClusteringError> {
        if !(self.rmsd_cutoff > 0.0 && self.rmsd_cutoff.is_finite()) {
            return Err(ClusteringError::InvalidConfig("rmsd_cutoff must be > 0".into()));
        }
        if self.max_clusters == 0 {
            return Err(ClusteringError::InvalidConfig("max_clusters must be >= 1".into()));
        }
        Ok(())
    }
}

/// Symmetric T × T matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsdMatrix {
    pub n: usize,
    pub values: Vec<f64>,
}

impl RmsdMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }
}

/// Pairwise ligand RMSD after superposing on `align_on`; rows in parallel.
pub fn pairwise_rmsd(
    trajectory: &TrajectoryFrameSeries,
    align_on: &[usize],
    measure_on: &[usize],
) -> Result<RmsdMatrix, ClusteringError> {
    let n = trajectory.frame_count();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = trajectory.frame(i);
            (i + 1..n)
                .map(|j| ligand_rmsd(a, trajectory.frame(j), align_on, measure_on))
                .collect::<Result<Vec<f64>, _>>()
        })
        .collect::<Result<_, _>>()?;
    let mut values = vec![0.0; n * n];
    for (i, row) in rows.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            let j = i + 1 + k;
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    Ok(RmsdMatrix { n, values })
}

/// Greedy QT over a precomputed matrix: seeds by most unassigned neighbours
/// within the cutoff (lowest index on ties), at most `max_clusters` clusters.
pub fn qt_from_matrix(matrix: &RmsdMatrix, config: &RefClusterConfig) -> Result<Vec<i64>, ClusteringError> {
    config.validate()?;
    let n = matrix.n;
    let mut labels = vec![-1i64; n];
    for cluster in 0..config.max_clusters {
        let mut best: Option<(usize, usize)> = None;
        for i in (0..n).filter(|&i| labels[i] < 0) {
            let count = (0..n)
                .filter(|&j| labels[j] < 0 && matrix.get(i, j) <= config.rmsd_cutoff)
                .count();
            if best.is_none_or(|(_, c)| count > c) {
                best = Some((i, count));
            }
        }
        let Some((seed, _)) = best else { break };
        for j in 0..n {
            if labels[j] < 0 && matrix.get(seed, j) <= config.rmsd_cutoff {
                labels[j] = cluster as i64;
            }
        }
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix_from_groups(groups: &[usize]) -> RmsdMatrix {
        let n = groups.len();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                values[i * n + j] = if groups[i] == groups[j] { 0.1 * (i != j) as u8 as f64 } else { 5.0 };
            }
        }
        RmsdMatrix { n, values }
    }

    #[test]
    fn two_conformations() {
        let m = matrix_from_groups(&[0, 1, 0, 1, 0]);
        let labels = qt_from_matrix(&m, &RefClusterConfig::default()).unwrap();
        assert_eq!(labels, vec![0, 1, 0, 1, 0]);
        let capped = RefClusterConfig {
            max_clusters: 1,
            ..Default::default()
        };
        assert_eq!(qt_from_matrix(&m, &capped).unwrap(), vec![0, -1, 0, -1, 0]);
    }

    #[test]
    fn bad_cutoff() {
        let cfg = RefClusterConfig {
            rmsd_cutoff: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
