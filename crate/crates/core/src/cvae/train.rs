//! RMSProp training loop with early stopping, latent encoding and ensembles.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{per_sample_loss, Cvae, CvaeArch, Params};
use super::CvaeError;
use crate::model_io::{self, ModelIoError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// RMSProp moving-average decay.
    pub rho: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    /// β weight of the KL term.
    pub kl_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            rho: 0.9,
            epsilon: 1e-8,
            max_epochs: 600,
            patience: 10,
            batch_size: 64,
            kl_weight: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CvaeError> {
        let bad = |m: &str| Err(CvaeError::InvalidConfig(m.into()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and >= 0");
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad("rho must lie in [0, 1)");
        }
        if self.patience < 1 {
            return bad("patience must be >= 1");
        }
        if self.batch_size < 1 || self.max_epochs < 1 {
            return bad("batch_size and max_epochs must be >= 1");
        }
        if !(self.kl_weight >= 0.0) {
            return bad("kl_weight must be >= 0");
        }
        Ok(())
    }
}

/// T binary samples of shape H × W.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    data: Vec<u8>,
}

impl Dataset {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self, CvaeError> {
        let per = height * width;
        if per == 0 || data.is_empty() || !data.len().is_multiple_of(per) {
            return Err(CvaeError::ShapeMismatch(format!(
                "{} values do not form whole {height}×{width} samples",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn len(&self) -> usize {
        self.data.len() / (self.height * self.width)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[u8] {
        let per = self.height * self.width;
        &self.data[i * per..(i + 1) * per]
    }

    fn gather(&self, indices: &[usize], out: &mut Vec<f64>) {
        out.clear();
        for &i in indices {
            out.extend(self.sample(i).iter().map(|&v| v as f64));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sample loss with the decoder fed μ (no sampling); drives early stopping.
    pub loss: f64,
    pub bce: f64,
    pub kld: f64,
    /// Mean per-sample loss of the sampled training objective.
    pub sampled_loss: f64,
}

/// Posterior means for every frame, in frame order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSeries {
    pub arch: CvaeArch,
    pub vectors: Vec<Vec<f64>>,
    pub final_loss: f64,
}

crate::json_artifact!(LatentSeries);

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: Params,
    pub latent: LatentSeries,
    pub curve: Vec<EpochRecord>,
    pub best_epoch: usize,
}

fn rmsprop_step(params: &mut [f64], grad: &[f64], sq: &mut [f64], config: &TrainConfig) {
    let (lr, rho, eps) = (config.learning_rate, config.rho, config.epsilon);
    for ((p, g), v) in params.iter_mut().zip(grad).zip(sq.iter_mut()) {
        *v = rho * *v + (1.0 - rho) * g * g;
        *p -= lr * g / (v.sqrt() + eps);
    }
}

/// Encodes every sample with `params`, batch by batch in frame order.
pub fn encode_dataset(model: &Cvae, params: &Params, data: &Dataset, batch_size: usize) -> Result<Vec<Vec<f64>>, CvaeError> {
    let d = model.arch.latent_dim;
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut x = Vec::new();
    let mut out = Vec::with_capacity(data.len());
    for chunk in idx.chunks(batch_size) {
        data.gather(chunk, &mut x);
        let mu = model.encode(&params.data, &x, chunk.len())?;
        out.extend(mu.chunks(d).map(<[f64]>::to_vec));
    }
    Ok(out)
}

pub fn train(data: &Dataset, arch: CvaeArch, config: &TrainConfig) -> Result<TrainOutcome, CvaeError> {
    config.validate()?;
    let model = Cvae::new(arch)?;
    if data.height != arch.height || data.width != arch.width {
        return Err(CvaeError::ShapeMismatch(format!(
            "dataset is {}×{}, architecture expects {}×{}",
            data.height, data.width, arch.height, arch.width
        )));
    }
    let t = data.len();
    let d = arch.latent_dim;
    let beta = config.kl_weight;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = Params::init(arch, &mut rng);
    let mut sq = vec![0.0; params.data.len()];
    let mut order: Vec<usize> = (0..t).collect();
    let mut x = Vec::new();
    let mut noise = vec![0.0; config.batch_size * d];

    let mut curve = Vec::new();
    let mut best = f64::INFINITY;
    let mut best_params = params.clone();
    let mut best_epoch = 0;
    let mut stale = 0;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut monitored = vec![(0.0, 0.0); t];
        let mut sampled = vec![0.0; t];
        for chunk in order.chunks(config.batch_size) {
            let b = chunk.len();
            data.gather(chunk, &mut x);
            for e in &mut noise[..b * d] {
                *e = rng.sample(StandardNormal);
            }
            let fp = model
                .forward(&params.data, &x, b, &noise[..b * d])
                .map_err(|_| CvaeError::Diverged { epoch })?;
            let train_parts = per_sample_loss(&x, &fp.reconstruction, &fp.mu, &fp.logvar, b);
            let recon_mu = model.decode(&params.data, &fp.mu, b);
            let mon_parts = per_sample_loss(&x, &recon_mu, &fp.mu, &fp.logvar, b);
            for (k, &i) in chunk.iter().enumerate() {
                sampled[i] = train_parts[k].0 + beta * train_parts[k].1;
                monitored[i] = mon_parts[k];
            }
            let grad = model.backward(&params.data, &x, &fp, beta);
            if !grad.iter().all(|g| g.is_finite()) {
                return Err(CvaeError::Diverged { epoch });
            }
            rmsprop_step(&mut params.data, &grad, &mut sq, config);
        }
        // summed in frame order so the value does not depend on the shuffle
        let n = t as f64;
        let bce = monitored.iter().map(|m| m.0).sum::<f64>() / n;
        let kld = monitored.iter().map(|m| m.1).sum::<f64>() / n;
        let loss = monitored.iter().map(|m| m.0 + beta * m.1).sum::<f64>() / n;
        let sampled_loss = sampled.iter().sum::<f64>() / n;
        if !loss.is_finite() || !sampled_loss.is_finite() {
            return Err(CvaeError::Diverged { epoch });
        }
        curve.push(EpochRecord {
            epoch,
            loss,
            bce,
            kld,
            sampled_loss,
        });
        if loss < best {
            best = loss;
            best_params = params.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }

    let vectors = encode_dataset(&model, &best_params, data, config.batch_size)?;
    Ok(TrainOutcome {
        params: best_params,
        latent: LatentSeries {
            arch,
            vectors,
            final_loss: best,
        },
        curve,
        best_epoch,
    })
}

/// One (filters, latent_dim) grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ArchSpec {
    pub filters: usize,
    pub latent_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub architectures: Vec<ArchSpec>,
    pub conv_layers: usize,
}

impl Default for EnsembleConfig {
    /// f ∈ {32, 64} × d ∈ {3, 5, 10}.
    fn default() -> Self {
        let mut architectures = Vec::new();
        for filters in [32, 64] {
            for latent_dim in [3, 5, 10] {
                architectures.push(ArchSpec { filters, latent_dim });
            }
        }
        Self {
            architectures,
            conv_layers: CvaeArch::DEFAULT_CONV_LAYERS,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<(), CvaeError> {
        if self.architectures.is_empty() {
            return Err(CvaeError::InvalidConfig("ensemble is empty".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for a in &self.architectures {
            if !seen.insert(*a) {
                return Err(CvaeError::InvalidConfig(format!(
                    "duplicate architecture f={} d={}",
                    a.filters, a.latent_dim
                )));
            }
        }
        Ok(())
    }

    pub fn arch_for(&self, spec: ArchSpec, data: &Dataset) -> Result<CvaeArch, CvaeError> {
        CvaeArch::with_layers(spec.filters, spec.latent_dim, self.conv_layers, data.height, data.width)
    }
}

/// seed ⊕ hash(f, d), with a splitmix64 finalizer as the hash.
pub fn arch_seed(seed: u64, spec: ArchSpec) -> u64 {
    let mut z = ((spec.filters as u64) << 32 | spec.latent_dim as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    seed ^ (z ^ (z >> 31))
}

#[derive(Debug, Clone)]
pub struct EnsembleMember {
    pub spec: ArchSpec,
    pub result: Result<TrainOutcome, CvaeError>,
}

/// Trains every architecture independently (at most `jobs` at once); output
/// follows ensemble order and failures do not stop the others.
pub fn train_ensemble(data: &Dataset, ensemble: &EnsembleConfig, config: &TrainConfig, jobs: usize) -> Result<Vec<EnsembleMember>, CvaeError> {
    ensemble.validate()?;
    config.validate()?;
    let run = |spec: &ArchSpec| {
        let result = ensemble.arch_for(*spec, data).and_then(|arch| {
            let cfg = TrainConfig {
                seed: arch_seed(config.seed, *spec),
                ..config.clone()
            };
            train(data, arch, &cfg)
        });
        EnsembleMember { spec: *spec, result }
    };
    if jobs <= 1 {
        return Ok(ensemble.architectures.iter().map(run).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CvaeError::InvalidConfig(e.to_string()))?;
    Ok(pool.install(|| ensemble.architectures.par_iter().map(run).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub arch: CvaeArch,
    pub config: TrainConfig,
    pub epoch: usize,
    pub loss: f64,
    pub param_count: usize,
}

/// One-line JSON header, newline, then little-endian f64 parameters.
pub fn write_checkpoint(path: &Path, params: &Params, config: &TrainConfig, epoch: usize, loss: f64) -> Result<(), ModelIoError> {
    let header = CheckpointHeader {
        format: "cvae-checkpoint".into(),
        version: 1,
        arch: params.arch,
        config: config.clone(),
        epoch,
        loss,
        param_count: params.data.len(),
    };
    let mut bytes = serde_json::to_vec(&header).map_err(|e| ModelIoError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    bytes.push(b'\n');
    for v in &params.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    model_io::write_atomic(path, &bytes)
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, Params), CvaeError> {
    let bytes = std::fs::read(path).map_err(|e| CvaeError::Checkpoint(format!("{}: {e}", path.display())))?;
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| CvaeError::Checkpoint("missing header line".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[..split]).map_err(|e| CvaeError::Checkpoint(e.to_string()))?;
    let blob = &bytes[split + 1..];
    if blob.len() != header.param_count * 8 {
        return Err(CvaeError::Checkpoint(format!(
            "expected {} parameter bytes, found {}",
            header.param_count * 8,
            blob.len()
        )));
    }
    let data = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let params = Params {
        arch: header.arch,
        data,
    };
    if params.data.len() != params.layout().total {
        return Err(CvaeError::Checkpoint("parameter count does not match architecture".into()));
    }
    Ok((header, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_data(t: usize, width: usize) -> Dataset {
        let mut data = Vec::with_capacity(t * 2 * width);
        for i in 0..t {
            let on = i % 2 == 0;
            for j in 0..2 * width {
                data.push(((j % 10 < 3) == on) as u8);
            }
        }
        Dataset::new(2, width, data).unwrap()
    }

    #[test]
    fn zero_learning_rate_stops_after_patience() {
        let data = toy_data(70, 91);
        let arch = CvaeArch::new(2, 2, 2, 91).unwrap();
        let config = TrainConfig {
            learning_rate: 0.0,
            seed: 3,
            ..Default::default()
        };
        let out = train(&data, arch, &config).unwrap();
        assert_eq!(out.curve.len(), config.patience + 1);
        assert_eq!(out.best_epoch, 1);
    }

    #[test]
    fn same_seed_same_curve() {
        let data = toy_data(40, 91);
        let arch = CvaeArch::new(2, 2, 2, 91).unwrap();
        let config = TrainConfig {
            max_epochs: 3,
            batch_size: 16,
            seed: 11,
            ..Default::default()
        };
        let a = train(&data, arch, &config).unwrap();
        let b = train(&data, arch, &config).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.latent, b.latent);
        assert_eq!(a.latent.vectors.len(), 40);
    }

    #[test]
    fn ensemble_validation_and_seeds() {
        let e = EnsembleConfig::default();
        assert_eq!(e.architectures.len(), 6);
        let dup = EnsembleConfig {
            architectures: vec![ArchSpec { filters: 2, latent_dim: 2 }; 2],
            ..Default::default()
        };
        assert!(dup.validate().is_err());
        let s = arch_seed(7, ArchSpec { filters: 32, latent_dim: 3 });
        assert_ne!(s, arch_seed(7, ArchSpec { filters: 32, latent_dim: 5 }));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let arch = CvaeArch::new(2, 2, 2, 91).unwrap();
        let params = Params::init(arch, &mut ChaCha8Rng::seed_from_u64(5));
        let path = dir.path().join("ckpt.bin");
        write_checkpoint(&path, &params, &TrainConfig::default(), 4, 1.25).unwrap();
        let (header, back) = read_checkpoint(&path).unwrap();
        assert_eq!(back, params);
        assert_eq!(header.epoch, 4);
    }
}
