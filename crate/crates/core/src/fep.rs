//! Exponential averaging of energy differences, thermodynamic-cycle
//! composition and computed relative sweetness.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Gas constant, kcal/(mol·K).
pub const GAS_CONSTANT: f64 = 0.0019872041;
pub const DEFAULT_TEMPERATURE: f64 = 310.0;
pub const BOOTSTRAP_BLOCKS: usize = 10;
pub const BOOTSTRAP_RESAMPLES: usize = 100;
pub const DEFAULT_BOOTSTRAP_SEED: u64 = 0x5eed;

#[derive(Debug, Error, PartialEq)]
pub enum FepError {
    #[error("no energy samples")]
    EmptySamples,
    #[error("sample {0} is not finite")]
    NonFinite(usize),
    #[error("temperature must be > 0 (got {0})")]
    InvalidTemperature(f64),
    #[error("{path}: line {line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergySamples {
    /// kcal/mol.
    pub delta_u: Vec<f64>,
    /// K.
    pub temperature: f64,
}

impl EnergySamples {
    pub fn new(delta_u: Vec<f64>, temperature: f64) -> Result<Self, FepError> {
        if delta_u.is_empty() {
            return Err(FepError::EmptySamples);
        }
        if let Some(i) = delta_u.iter().position(|v| !v.is_finite()) {
            return Err(FepError::NonFinite(i));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(FepError::InvalidTemperature(temperature));
        }
        Ok(Self { delta_u, temperature })
    }

    pub fn kt(&self) -> f64 {
        GAS_CONSTANT * self.temperature
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergyResult {
    pub delta_f: f64,
    pub stderr: f64,
}

/// ln Σ exp(xᵢ), shifted by the maximum.
fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn delta_f_of(samples: &[f64], kt: f64) -> f64 {
    let lse = logsumexp(samples.iter().map(|u| -u / kt));
    -kt * (lse - (samples.len() as f64).ln())
}

pub fn zwanzig(samples: &EnergySamples) -> Result<FreeEnergyResult, FepError> {
    zwanzig_seeded(samples, DEFAULT_BOOTSTRAP_SEED)
}

/// ΔF = −kT ln⟨exp(−ΔU/kT)⟩; the standard error is the spread of ΔF over
/// resamples of contiguous blocks drawn with replacement.
pub fn zwanzig_seeded(samples: &EnergySamples, seed: u64) -> Result<FreeEnergyResult, FepError> {
    let checked = EnergySamples::new(samples.delta_u.clone(), samples.temperature)?;
    let kt = checked.kt();
    let u = &checked.delta_u;
    let delta_f = delta_f_of(u, kt);

    let blocks = BOOTSTRAP_BLOCKS.min(u.len());
    if blocks < 2 {
        return Ok(FreeEnergyResult { delta_f, stderr: 0.0 });
    }
    // per-block (log-sum-exp, count); resampled ΔF combines them exactly
    let bounds: Vec<usize> = (0..=blocks).map(|b| b * u.len() / blocks).collect();
    let stats: Vec<(f64, f64)> = bounds
        .windows(2)
        .map(|w| {
            let block = &u[w[0]..w[1]];
            (logsumexp(block.iter().map(|v| -v / kt)), block.len() as f64)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = vec![0usize; blocks];
    let estimates: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| {
            for p in &mut picks {
                *p = rng.gen_range(0..blocks);
            }
            let lse = logsumexp(picks.iter().map(|&b| stats[b].0));
            let n: f64 = picks.iter().map(|&b| stats[b].1).sum();
            -kt * (lse - n.ln())
        })
        .collect();
    let m = estimates.iter().sum::<f64>() / estimates.len() as f64;
    let var = estimates.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (estimates.len() as f64 - 1.0);
    Ok(FreeEnergyResult {
        delta_f,
        stderr: var.sqrt(),
    })
}

/// ΔΔF = ΔF_free − ΔF_bind, errors added in quadrature.
pub fn relative_binding_free_energy(bind: &FreeEnergyResult, free: &FreeEnergyResult) -> FreeEnergyResult {
    FreeEnergyResult {
        delta_f: free.delta_f - bind.delta_f,
        stderr: free.stderr.hypot(bind.stderr),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweetnessResult {
    pub crs: f64,
    pub log10_crs: f64,
}

/// exp(−(ΔΔF − ΔΔF_ref) / RT).
pub fn computed_relative_sweetness(ddf: f64, ddf_reference: f64, temperature: f64) -> Result<SweetnessResult, FepError> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(FepError::InvalidTemperature(temperature));
    }
    let exponent = -(ddf - ddf_reference) / (GAS_CONSTANT * temperature);
    Ok(SweetnessResult {
        crs: exponent.exp(),
        log10_crs: exponent / std::f64::consts::LN_10,
    })
}

/// One ΔU value per line; a non-numeric first line is taken as a header,
/// blank lines and `#` comments are skipped. Extra columns are ignored.
pub fn parse_energy_csv(text: &str, source: &str) -> Result<Vec<f64>, FepError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let field = line.split(',').next().unwrap_or("").trim();
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            Ok(_) => {
                return Err(FepError::Parse {
                    path: source.into(),
                    line: n + 1,
                    message: "non-finite value".into(),
                })
            }
            Err(_) if out.is_empty() && n == 0 => {}
            Err(_) => {
                return Err(FepError::Parse {
                    path: source.into(),
                    line: n + 1,
                    message: format!("`{field}` is not a number"),
                })
            }
        }
    }
    if out.is_empty() {
        return Err(FepError::EmptySamples);
    }
    Ok(out)
}

pub fn read_energy_csv(path: &Path) -> Result<Vec<f64>, FepError> {
    let text = std::fs::read_to_string(path).map_err(|e| FepError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_energy_csv(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_samples() {
        for t in [250.0, 310.0] {
            let r = zwanzig(&EnergySamples::new(vec![1.0; 37], t).unwrap()).unwrap();
            assert!((r.delta_f - 1.0).abs() < 1e-12);
            assert!(r.stderr < 1e-12);
        }
    }

    #[test]
    fn two_point_closed_form() {
        let (delta, t) = (0.8, 300.0);
        let kt = GAS_CONSTANT * t;
        let r = zwanzig(&EnergySamples::new(vec![0.0, delta], t).unwrap()).unwrap();
        let expected = -kt * ((1.0 + (-delta / kt).exp()) / 2.0).ln();
        assert!((r.delta_f - expected).abs() < 1e-12);
    }

    #[test]
    fn offset_shifts_result() {
        let u: Vec<f64> = (0..200).map(|i| ((i * 37 % 101) as f64) * 0.03 - 1.0).collect();
        let a = zwanzig(&EnergySamples::new(u.clone(), 310.0).unwrap()).unwrap();
        let b = zwanzig(&EnergySamples::new(u.iter().map(|v| v + 250.0).collect(), 310.0).unwrap()).unwrap();
        assert!((b.delta_f - a.delta_f - 250.0).abs() < 1e-9);
    }

    #[test]
    fn composition_and_sweetness() {
        let bind = FreeEnergyResult { delta_f: -10.0, stderr: 0.4 };
        let free = FreeEnergyResult { delta_f: -3.0, stderr: 0.3 };
        let dd = relative_binding_free_energy(&bind, &free);
        assert_eq!(dd.delta_f, 7.0);
        assert!((dd.stderr - 0.5).abs() < 1e-15);
        let same = computed_relative_sweetness(-4.2, -4.2, 310.0).unwrap();
        assert_eq!((same.crs, same.log10_crs), (1.0, 0.0));
        assert!(computed_relative_sweetness(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn energy_csv() {
        let v = parse_energy_csv("delta_u\n1.5\n\n# note\n-2\n", "x").unwrap();
        assert_eq!(v, vec![1.5, -2.0]);
        assert!(parse_energy_csv("1\nabc\n", "x").is_err());
        assert_eq!(parse_energy_csv("delta_u\n", "x"), Err(FepError::EmptySamples));
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(EnergySamples::new(vec![], 300.0), Err(FepError::EmptySamples));
        assert_eq!(EnergySamples::new(vec![1.0, f64::NAN], 300.0), Err(FepError::NonFinite(1)));
    }
}
