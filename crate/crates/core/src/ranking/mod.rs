//! Subtype-vs-reference comparison of cluster-size series and the ranking
//! of subtypes across the architecture ensemble.

mod pca;

pub use pca::{pca_project, PcaProjection};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::ClusterSizeSeries;
use crate::cvae::ArchSpec;

#[derive(Debug, Error, PartialEq)]
pub enum RankingError {
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("subtype {0} has no ensemble members")]
    EmptyEnsemble(usize),
    #[error("no subtypes to rank")]
    NoSubtypes,
    #[error("subtype sets differ between report and RMSF table")]
    KeyMismatch,
    #[error("series must be non-empty with positive entries")]
    InvalidSeries,
    #[error("need at least {0} points")]
    TooFewPoints(usize),
}

fn check_lengths(a: &[f64], s: &[f64]) -> Result<(), RankingError> {
    if a.len() != s.len() {
        return Err(RankingError::LengthMismatch(a.len(), s.len()));
    }
    if a.is_empty() {
        return Err(RankingError::InvalidSeries);
    }
    Ok(())
}

/// Σ aₜsₜ / (‖a‖ ‖s‖).
pub fn cossim_values(a: &[f64], s: &[f64]) -> Result<f64, RankingError> {
    check_lengths(a, s)?;
    let dot: f64 = a.iter().zip(s).map(|(x, y)| x * y).sum();
    let na2: f64 = a.iter().map(|x| x * x).sum();
    let ns2: f64 = s.iter().map(|x| x * x).sum();
    if na2 == 0.0 || ns2 == 0.0 {
        return Err(RankingError::InvalidSeries);
    }
    // one square root of the product keeps cossim(a, a) exactly 1
    Ok((dot / (na2 * ns2).sqrt()).min(1.0))
}

/// Σ (aₜ − sₜ) / T; negative when `a` sits in smaller clusters than `s`.
pub fn avgdiff_values(a: &[f64], s: &[f64]) -> Result<f64, RankingError> {
    check_lengths(a, s)?;
    Ok(a.iter().zip(s).map(|(x, y)| x - y).sum::<f64>() / a.len() as f64)
}

pub fn cossim(a: &ClusterSizeSeries, s: &ClusterSizeSeries) -> Result<f64, RankingError> {
    cossim_values(&a.as_f64(), &s.as_f64())
}

pub fn avgdiff(a: &ClusterSizeSeries, s: &ClusterSizeSeries) -> Result<f64, RankingError> {
    avgdiff_values(&a.as_f64(), &s.as_f64())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMethod {
    #[default]
    RmsdQt,
    WholeMolecule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankingOptions {
    pub reference: ReferenceMethod,
    /// Subtract the across-subtype mean from each metric's means.
    pub mean_centered: bool,
    /// Minimum run of the reference's largest cluster for the stability flag.
    pub persistence_threshold_ps: f64,
}

impl Default for RankingOptions {
    fn default() -> Self {
        Self {
            reference: ReferenceMethod::RmsdQt,
            mean_centered: false,
            persistence_threshold_ps: 50_000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchMetrics {
    pub filters: usize,
    pub latent_dim: usize,
    pub cossim: f64,
    pub avgdiff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonMetrics {
    pub subtype_id: usize,
    pub cossim_mean: f64,
    pub cossim_std: f64,
    pub avgdiff_mean: f64,
    pub avgdiff_std: f64,
    /// 1 = most stable; the highest rank is the modification suggestion.
    pub rank: usize,
    pub per_arch: Vec<ArchMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    /// Sorted by subtype id.
    pub metrics: Vec<ComparisonMetrics>,
    /// Subtype ids, most malicious first (ascending cossim, then avgdiff, then id).
    pub order: Vec<usize>,
    pub reference_method: ReferenceMethod,
    pub mean_centered: bool,
    /// Whether the reference's largest cluster persisted past the threshold;
    /// unset until the reference labels are known.
    pub stability_flag: Option<bool>,
}

crate::json_artifact!(RankingReport);

impl RankingReport {
    pub fn suggestion(&self) -> Option<usize> {
        self.order.first().copied()
    }

    /// `subtype_id,cossim_mean,cossim_std,avgdiff_mean,avgdiff_std,rank`.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("subtype_id,cossim_mean,cossim_std,avgdiff_mean,avgdiff_std,rank\n");
        for m in &self.metrics {
            let _ = writeln!(
                out,
                "{},{:?},{:?},{:?},{:?},{}",
                m.subtype_id, m.cossim_mean, m.cossim_std, m.avgdiff_mean, m.avgdiff_std, m.rank
            );
        }
        out
    }
}

/// Mean and population standard deviation.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn rank_subtypes(
    per_subtype: &BTreeMap<usize, Vec<(ArchSpec, ClusterSizeSeries)>>,
    reference: &ClusterSizeSeries,
    options: &RankingOptions,
) -> Result<RankingReport, RankingError> {
    if per_subtype.is_empty() {
        return Err(RankingError::NoSubtypes);
    }
    let r = reference.as_f64();
    let mut metrics = Vec::with_capacity(per_subtype.len());
    for (&id, members) in per_subtype {
        if members.is_empty() {
            return Err(RankingError::EmptyEnsemble(id));
        }
        let per_arch = members
            .iter()
            .map(|(spec, series)| {
                let s = series.as_f64();
                Ok(ArchMetrics {
                    filters: spec.filters,
                    latent_dim: spec.latent_dim,
                    cossim: cossim_values(&s, &r)?,
                    avgdiff: avgdiff_values(&s, &r)?,
                })
            })
            .collect::<Result<Vec<_>, RankingError>>()?;
        let (cossim_mean, cossim_std) = mean_std(&per_arch.iter().map(|m| m.cossim).collect::<Vec<_>>());
        let (avgdiff_mean, avgdiff_std) = mean_std(&per_arch.iter().map(|m| m.avgdiff).collect::<Vec<_>>());
        metrics.push(ComparisonMetrics {
            subtype_id: id,
            cossim_mean,
            cossim_std,
            avgdiff_mean,
            avgdiff_std,
            rank: 0,
            per_arch,
        });
    }
    if options.mean_centered {
        let n = metrics.len() as f64;
        let c = metrics.iter().map(|m| m.cossim_mean).sum::<f64>() / n;
        let a = metrics.iter().map(|m| m.avgdiff_mean).sum::<f64>() / n;
        for m in &mut metrics {
            m.cossim_mean -= c;
            m.avgdiff_mean -= a;
        }
    }
    let mut order: Vec<usize> = (0..metrics.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&metrics[i], &metrics[j]);
        a.cossim_mean
            .total_cmp(&b.cossim_mean)
            .then(a.avgdiff_mean.total_cmp(&b.avgdiff_mean))
            .then(a.subtype_id.cmp(&b.subtype_id))
    });
    let n = metrics.len();
    for (pos, &i) in order.iter().enumerate() {
        metrics[i].rank = n - pos;
    }
    Ok(RankingReport {
        order: order.iter().map(|&i| metrics[i].subtype_id).collect(),
        metrics,
        reference_method: options.reference,
        mean_centered: options.mean_centered,
        stability_flag: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub subtype_id: usize,
    pub cossim_mean: f64,
    pub avgdiff_mean: f64,
    pub rmsf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRmsfScatter {
    pub rows: Vec<ScatterRow>,
    pub cossim_r2: f64,
    pub avgdiff_r2: f64,
}

crate::json_artifact!(MetricRmsfScatter);

/// Coefficient of determination of the least-squares line y ~ x; 0 when
/// either variable is constant.
pub fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
}

pub fn metric_rmsf_scatter(report: &RankingReport, rmsf: &BTreeMap<usize, f64>) -> Result<MetricRmsfScatter, RankingError> {
    let ids: Vec<usize> = report.metrics.iter().map(|m| m.subtype_id).collect();
    if ids.len() != rmsf.len() || ids.iter().any(|id| !rmsf.contains_key(id)) {
        return Err(RankingError::KeyMismatch);
    }
    let rows: Vec<ScatterRow> = report
        .metrics
        .iter()
        .map(|m| ScatterRow {
            subtype_id: m.subtype_id,
            cossim_mean: m.cossim_mean,
            avgdiff_mean: m.avgdiff_mean,
            rmsf: rmsf[&m.subtype_id],
        })
        .collect();
    let x: Vec<f64> = rows.iter().map(|r| r.rmsf).collect();
    let cs: Vec<f64> = rows.iter().map(|r| r.cossim_mean).collect();
    let ad: Vec<f64> = rows.iter().map(|r| r.avgdiff_mean).collect();
    Ok(MetricRmsfScatter {
        cossim_r2: r_squared(&x, &cs),
        avgdiff_r2: r_squared(&x, &ad),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(v: &[usize]) -> ClusterSizeSeries {
        ClusterSizeSeries { sizes: v.to_vec() }
    }

    const SPEC: ArchSpec = ArchSpec {
        filters: 32,
        latent_dim: 3,
    };

    #[test]
    fn metric_examples() {
        assert!((cossim_values(&[3.0, 1.0], &[1.0, 3.0]).unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(avgdiff_values(&[1.0, 2.0, 3.0], &[3.0, 3.0, 3.0]).unwrap(), -1.0);
        assert_eq!(cossim(&series(&[1, 1]), &series(&[7, 7])).unwrap(), 1.0);
        assert_eq!(
            cossim_values(&[1.0], &[1.0, 2.0]),
            Err(RankingError::LengthMismatch(1, 2))
        );
    }

    #[test]
    fn single_subtype_identical_series() {
        let r = series(&[3, 3, 1]);
        let per = BTreeMap::from([(0, vec![(SPEC, r.clone())])]);
        let report = rank_subtypes(&per, &r, &RankingOptions::default()).unwrap();
        let m = &report.metrics[0];
        assert!((m.cossim_mean - 1.0).abs() < 1e-15);
        assert_eq!((m.avgdiff_mean, m.cossim_std, m.avgdiff_std, m.rank), (0.0, 0.0, 0.0, 1));
        assert_eq!(report.order, vec![0]);
    }

    #[test]
    fn hand_built_ordering() {
        let r = series(&[4, 4, 4, 4]);
        let stable = series(&[4, 4, 4, 3]);
        let unstable = series(&[1, 4, 1, 4]);
        let per = BTreeMap::from([
            (0, vec![(SPEC, stable.clone()), (SPEC, stable)]),
            (1, vec![(SPEC, unstable.clone()), (SPEC, unstable)]),
        ]);
        let report = rank_subtypes(&per, &r, &RankingOptions::default()).unwrap();
        assert_eq!(report.order, vec![1, 0]);
        assert_eq!(report.metrics[1].rank, 2);
        assert_eq!(report.metrics[0].rank, 1);
        assert_eq!(report.metrics[1].cossim_std, 0.0);
        // oracle: cossim([1,4,1,4],[4,4,4,4]) = 40 / (√34 · 8)
        let expected = 40.0 / (34f64.sqrt() * 8.0);
        assert!((report.metrics[1].cossim_mean - expected).abs() < 1e-12);
        assert_eq!(report.suggestion(), Some(1));

        let centered = rank_subtypes(
            &per,
            &r,
            &RankingOptions {
                mean_centered: true,
                ..Default::default()
            },
        )
        .unwrap();
        let sum: f64 = centered.metrics.iter().map(|m| m.cossim_mean).sum();
        assert!(sum.abs() < 1e-12);
        assert_eq!(centered.order, report.order);
    }

    #[test]
    fn csv_summary_header() {
        let r = series(&[2, 2]);
        let per = BTreeMap::from([(5, vec![(SPEC, r.clone())])]);
        let csv = rank_subtypes(&per, &r, &RankingOptions::default()).unwrap().summary_csv();
        assert_eq!(
            csv,
            "subtype_id,cossim_mean,cossim_std,avgdiff_mean,avgdiff_std,rank\n5,1.0,0.0,0.0,0.0,1\n"
        );
    }

    #[test]
    fn empty_inputs() {
        let r = series(&[1]);
        assert_eq!(
            rank_subtypes(&BTreeMap::new(), &r, &RankingOptions::default()),
            Err(RankingError::NoSubtypes)
        );
        let per = BTreeMap::from([(2, vec![])]);
        assert_eq!(
            rank_subtypes(&per, &r, &RankingOptions::default()),
            Err(RankingError::EmptyEnsemble(2))
        );
    }

    #[test]
    fn r2_cases() {
        let x = [0.1, 0.5, 0.9, 1.3];
        let linear: Vec<f64> = x.iter().map(|v| 2.0 * v - 1.0).collect();
        assert!((r_squared(&x, &linear) - 1.0).abs() < 1e-12);
        assert_eq!(r_squared(&x, &[0.3; 4]), 0.0);
    }
}
