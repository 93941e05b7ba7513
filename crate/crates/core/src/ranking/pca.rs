//! Two-component PCA of latent vectors for scatter plots.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::RankingError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaProjection {
    /// T rows of `dims` coordinates.
    pub coords: Vec<Vec<f64>>,
    /// Leading covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    /// Unit loadings, one per component; the largest-magnitude entry is positive.
    pub components: Vec<Vec<f64>>,
}

crate::json_artifact!(PcaProjection);

/// Projection of mean-centred points onto the leading `dims` principal axes
/// of the sample covariance (T − 1 denominator). Missing axes (d < dims)
/// project to zero.
pub fn pca_project(points: &[Vec<f64>], dims: usize) -> Result<PcaProjection, RankingError> {
    let t = points.len();
    if t < 2 {
        return Err(RankingError::TooFewPoints(2));
    }
    let d = points[0].len();
    if points.iter().any(|p| p.len() != d) {
        return Err(RankingError::LengthMismatch(d, points.iter().map(Vec::len).find(|&l| l != d).unwrap_or(d)));
    }
    let mut mean = vec![0.0; d];
    for p in points {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= t as f64;
    }
    let centered = DMatrix::from_fn(t, d, |i, j| points[i][j] - mean[j]);
    let cov = (centered.transpose() * &centered) / (t as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();

    let mut components = Vec::with_capacity(dims);
    let mut eigenvalues = Vec::with_capacity(dims);
    for k in 0..dims {
        match idx.get(k) {
            Some(&i) => {
                let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
                let lead = v
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
                    .map(|(_, x)| *x)
                    .unwrap_or(1.0);
                if lead < 0.0 {
                    v.iter_mut().for_each(|x| *x = -*x);
                }
                components.push(v);
                eigenvalues.push(eig.eigenvalues[i].max(0.0));
            }
            None => {
                components.push(vec![0.0; d]);
                eigenvalues.push(0.0);
            }
        }
    }
    let coords = (0..t)
        .map(|i| {
            components
                .iter()
                .map(|c| c.iter().zip(centered.row(i).iter()).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect();
    let explained_variance_ratio = eigenvalues
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    Ok(PcaProjection {
        coords,
        eigenvalues,
        explained_variance_ratio,
        components,
    })
}
