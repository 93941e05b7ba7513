//! Frame clustering (HDBSCAN on latent vectors, QT on ligand RMSD) and
//! per-frame cluster-size series.

mod hdbscan;
mod qt;

pub use hdbscan::{hdbscan_labels, HdbscanConfig};
pub use qt::{pairwise_rmsd, qt_from_matrix, RefClusterConfig, RmsdMatrix};

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::GeometryError;
use crate::model_io::{self, Artifact, ModelIoError, TrajectoryFrameSeries};

#[derive(Debug, Error, PartialEq)]
pub enum ClusteringError {
    #[error("invalid clustering config: {0}")]
    InvalidConfig(String),
    #[error("series lengths differ")]
    LengthMismatch,
    #[error("no series to average")]
    Empty,
    #[error("non-finite coordinate in input points")]
    NonFinite,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMethod {
    Hdbscan,
    RmsdQt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLabels {
    /// −1 is noise, clusters are 0..k−1.
    pub labels: Vec<i64>,
    pub method: ClusterMethod,
}

crate::json_artifact!(ClusterLabels);

impl ClusterLabels {
    pub fn cluster_count(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize)
    }

    /// Members per cluster id.
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.cluster_count()];
        for &l in &self.labels {
            if l >= 0 {
                sizes[l as usize] += 1;
            }
        }
        sizes
    }

    /// `frame,label` CSV.
    pub fn to_csv(&self) -> String {
        model_io::format_int_csv("frame", "label", &self.labels)
    }

    pub fn from_csv(text: &str, method: ClusterMethod, path: &Path) -> Result<Self, ModelIoError> {
        Ok(Self {
            labels: model_io::parse_int_csv(text, path)?,
            method,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSizeSeries {
    pub sizes: Vec<usize>,
}

impl Artifact for ClusterSizeSeries {
    fn to_bytes(&self) -> model_io::Result<Vec<u8>> {
        let values: Vec<i64> = self.sizes.iter().map(|&s| s as i64).collect();
        Ok(model_io::format_int_csv("frame", "size", &values).into_bytes())
    }

    fn from_bytes(bytes: &[u8], path: &Path) -> model_io::Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|e| ModelIoError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let values = model_io::parse_int_csv(text, path)?;
        let sizes = values
            .into_iter()
            .map(|v| {
                usize::try_from(v).ok().filter(|&s| s >= 1).ok_or_else(|| ModelIoError::Format {
                    path: path.to_path_buf(),
                    message: format!("cluster size {v} must be >= 1"),
                })
            })
            .collect::<model_io::Result<_>>()?;
        Ok(Self { sizes })
    }
}

impl ClusterSizeSeries {
    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.sizes.iter().map(|&s| s as f64).collect()
    }
}

pub fn hdbscan(points: &[Vec<f64>], config: &HdbscanConfig) -> Result<ClusterLabels, ClusteringError> {
    Ok(ClusterLabels {
        labels: hdbscan_labels(points, config)?,
        method: ClusterMethod::Hdbscan,
    })
}

/// QT clustering of frames; superposition on `align_on`, RMSD over `measure_on`.
pub fn rmsd_qt_cluster(
    trajectory: &TrajectoryFrameSeries,
    align_on: &[usize],
    measure_on: &[usize],
    config: &RefClusterConfig,
) -> Result<ClusterLabels, ClusteringError> {
    config.validate()?;
    let matrix = pairwise_rmsd(trajectory, align_on, measure_on)?;
    Ok(ClusterLabels {
        labels: qt_from_matrix(&matrix, config)?,
        method: ClusterMethod::RmsdQt,
    })
}

/// Size of each frame's cluster; noise frames count as singletons.
pub fn size_series(labels: &ClusterLabels) -> ClusterSizeSeries {
    let counts = labels.cluster_sizes();
    ClusterSizeSeries {
        sizes: labels
            .labels
            .iter()
            .map(|&l| if l < 0 { 1 } else { counts[l as usize] })
            .collect(),
    }
}

pub fn average_size_series(series: &[ClusterSizeSeries]) -> Result<Vec<f64>, ClusteringError> {
    let first = series.first().ok_or(ClusteringError::Empty)?;
    if series.iter().any(|s| s.len() != first.len()) {
        return Err(ClusteringError::LengthMismatch);
    }
    let k = series.len() as f64;
    Ok((0..first.len())
        .map(|t| series.iter().map(|s| s.sizes[t] as f64).sum::<f64>() / k)
        .collect())
}

/// Longest stretch (in frames) that the reference's largest cluster occupies
/// consecutively, times the frame stride.
pub fn largest_cluster_persistence_ps(labels: &ClusterLabels, frame_stride_ps: f64) -> f64 {
    let sizes = labels.cluster_sizes();
    let Some(largest) = (0..sizes.len()).max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a))) else {
        return 0.0;
    };
    let mut best = 0usize;
    let mut run = 0usize;
    for &l in &labels.labels {
        if l == largest as i64 {
            run += 1;
            best = best.max(run);
        } else {
            run = 0;
        }
    }
    best as f64 * frame_stride_ps
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(v: &[i64]) -> ClusterLabels {
        ClusterLabels {
            labels: v.to_vec(),
            method: ClusterMethod::Hdbscan,
        }
    }

    #[test]
    fn sizes_with_noise() {
        assert_eq!(size_series(&labels(&[0, 0, 0, 1, 1, -1])).sizes, vec![3, 3, 3, 2, 2, 1]);
        assert_eq!(size_series(&labels(&[-1, -1])).sizes, vec![1, 1]);
    }

    #[test]
    fn averages() {
        let a = ClusterSizeSeries { sizes: vec![2, 2] };
        let b = ClusterSizeSeries { sizes: vec![4, 4] };
        assert_eq!(average_size_series(&[a.clone(), b]).unwrap(), vec![3.0, 3.0]);
        assert_eq!(average_size_series(std::slice::from_ref(&a)).unwrap(), vec![2.0, 2.0]);
        let c = ClusterSizeSeries { sizes: vec![1] };
        assert_eq!(average_size_series(&[a, c]), Err(ClusteringError::LengthMismatch));
        assert_eq!(average_size_series(&[]), Err(ClusteringError::Empty));
    }

    #[test]
    fn size_csv_contract() {
        let s = ClusterSizeSeries { sizes: vec![3, 3, 1] };
        assert_eq!(s.to_bytes().unwrap(), b"frame,size\n0,3\n1,3\n2,1\n");
        let back = ClusterSizeSeries::from_bytes(&s.to_bytes().unwrap(), Path::new("x")).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn persistence_counts_longest_run() {
        let l = labels(&[0, 0, 1, 0, 0, 0, -1]);
        assert_eq!(largest_cluster_persistence_ps(&l, 20.0), 60.0);
        assert_eq!(largest_cluster_persistence_ps(&labels(&[-1]), 20.0), 0.0);
    }
}
