//! Architecture, parameter layout, forward pass, loss and manual backward pass.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::{self, conv_out_width, Span, KERNEL};
use super::CvaeError;

/// Probabilities are clamped to [BCE_CLAMP, 1 − BCE_CLAMP] before the log.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CvaeArch {
    pub filters: usize,
    pub latent_dim: usize,
    pub conv_layers: usize,
    pub height: usize,
    pub width: usize,
}

impl CvaeArch {
    pub const DEFAULT_CONV_LAYERS: usize = 4;

    pub fn new(filters: usize, latent_dim: usize, height: usize, width: usize) -> Result<Self, CvaeError> {
        Self::with_layers(filters, latent_dim, Self::DEFAULT_CONV_LAYERS, height, width)
    }

    /// Explicit layer count, for pockets narrower than the four-layer minimum.
    pub fn with_layers(
        filters: usize,
        latent_dim: usize,
        conv_layers: usize,
        height: usize,
        width: usize,
    ) -> Result<Self, CvaeError> {
        let arch = Self {
            filters,
            latent_dim,
            conv_layers,
            height,
            width,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Smallest input width that survives `layers` valid stride-2 convolutions.
    pub fn min_width(layers: usize) -> usize {
        (0..layers).fold(1, |w, _| ops::STRIDE * w + (KERNEL - ops::STRIDE))
    }

    pub fn validate(&self) -> Result<(), CvaeError> {
        let bad = |m: String| Err(CvaeError::InvalidArch(m));
        if self.filters == 0 || self.latent_dim == 0 {
            return bad("filters and latent_dim must be >= 1".into());
        }
        if self.conv_layers == 0 {
            return bad("conv_layers must be >= 1".into());
        }
        if self.height < 2 {
            return bad(format!("input height {} < 2", self.height));
        }
        let min = Self::min_width(self.conv_layers);
        if self.width < min {
            return bad(format!(
                "input width {} < {} required by {} stride-2 layers",
                self.width, min, self.conv_layers
            ));
        }
        Ok(())
    }

    /// [W, w1, …, wL] with wᵢ = floor((wᵢ₋₁ − 7)/2) + 1.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.width];
        for _ in 0..self.conv_layers {
            let last = *w.last().unwrap();
            w.push(conv_out_width(last).expect("validated width"));
        }
        w
    }

    /// Length of the flattened encoder output.
    pub fn flat_dim(&self) -> usize {
        self.filters * self.height * self.widths()[self.conv_layers]
    }

    pub fn input_len(&self) -> usize {
        self.height * self.width
    }
}

/// Offsets of every parameter tensor inside one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub enc: Vec<(Range<usize>, Range<usize>)>,
    pub mu_w: Range<usize>,
    pub mu_b: Range<usize>,
    pub lv_w: Range<usize>,
    pub lv_b: Range<usize>,
    pub fc_w: Range<usize>,
    pub fc_b: Range<usize>,
    pub dec: Vec<(Range<usize>, Range<usize>)>,
    pub total: usize,
}

impl ParamLayout {
    pub fn new(arch: &CvaeArch) -> Self {
        let f = arch.filters;
        let d = arch.latent_dim;
        let flat = arch.flat_dim();
        let mut next = 0;
        let mut take = |n: usize| {
            let r = next..next + n;
            next += n;
            r
        };
        let enc = (0..arch.conv_layers)
            .map(|l| {
                let c_in = if l == 0 { 1 } else { f };
                (take(KERNEL * c_in * f), take(f))
            })
            .collect();
        let mu_w = take(flat * d);
        let mu_b = take(d);
        let lv_w = take(flat * d);
        let lv_b = take(d);
        let fc_w = take(d * flat);
        let fc_b = take(flat);
        let dec = (0..arch.conv_layers)
            .map(|l| {
                let c_out = if l + 1 == arch.conv_layers { 1 } else { f };
                (take(f * KERNEL * c_out), take(c_out))
            })
            .collect();
        Self {
            enc,
            mu_w,
            mu_b,
            lv_w,
            lv_b,
            fc_w,
            fc_b,
            dec,
            total: next,
        }
    }

    /// (name, range, fan_in, is_bias) for every tensor.
    pub fn tensors(&self, arch: &CvaeArch) -> Vec<(String, Range<usize>, usize, bool)> {
        let f = arch.filters;
        let flat = arch.flat_dim();
        let mut out = Vec::new();
        for (l, (w, b)) in self.enc.iter().enumerate() {
            let c_in = if l == 0 { 1 } else { f };
            out.push((format!("enc{l}.weight"), w.clone(), KERNEL * c_in, false));
            out.push((format!("enc{l}.bias"), b.clone(), 0, true));
        }
        out.push(("mu.weight".into(), self.mu_w.clone(), flat, false));
        out.push(("mu.bias".into(), self.mu_b.clone(), 0, true));
        out.push(("logvar.weight".into(), self.lv_w.clone(), flat, false));
        out.push(("logvar.bias".into(), self.lv_b.clone(), 0, true));
        out.push(("dec_fc.weight".into(), self.fc_w.clone(), arch.latent_dim, false));
        out.push(("dec_fc.bias".into(), self.fc_b.clone(), 0, true));
        for (l, (w, b)) in self.dec.iter().enumerate() {
            out.push((format!("dec{l}.weight"), w.clone(), KERNEL * f, false));
            out.push((format!("dec{l}.bias"), b.clone(), 0, true));
        }
        out
    }
}

/// Flat parameter vector plus the architecture it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub arch: CvaeArch,
    pub data: Vec<f64>,
}

impl Params {
    pub fn zeros(arch: CvaeArch) -> Self {
        let n = ParamLayout::new(&arch).total;
        Self { arch, data: vec![0.0; n] }
    }

    /// Weights ~ U(−√(1/fan_in), √(1/fan_in)); biases zero.
    pub fn init<R: Rng>(arch: CvaeArch, rng: &mut R) -> Self {
        let layout = ParamLayout::new(&arch);
        let mut p = Self::zeros(arch);
        for (_, range, fan_in, is_bias) in layout.tensors(&arch) {
            if is_bias {
                continue;
            }
            let bound = (1.0 / fan_in as f64).sqrt();
            for v in &mut p.data[range] {
                *v = rng.gen_range(-bound..bound);
            }
        }
        p
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(&self.arch)
    }
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub batch: usize,
    /// Encoder activations after ReLU, `enc_acts[l]` is the output of layer l.
    enc_acts: Vec<Vec<f64>>,
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
    pub noise: Vec<f64>,
    pub z: Vec<f64>,
    /// Decoder inputs per transposed conv (post-ReLU), `dec_in[0]` is the dense output.
    dec_in: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
    pub reconstruction: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub bce: f64,
    pub kld: f64,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn relu_inplace(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// BCE (sum over elements) and KL (sum over latent dims) for each sample.
pub fn per_sample_loss(
    input: &[f64],
    reconstruction: &[f64],
    mu: &[f64],
    logvar: &[f64],
    batch: usize,
) -> Vec<(f64, f64)> {
    let n_el = input.len() / batch;
    let d = mu.len() / batch;
    (0..batch)
        .map(|s| {
            let mut bce = 0.0;
            for (x, p) in input[s * n_el..(s + 1) * n_el]
                .iter()
                .zip(&reconstruction[s * n_el..(s + 1) * n_el])
            {
                let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                bce -= x * p.ln() + (1.0 - x) * (1.0 - p).ln();
            }
            let mut kld = 0.0;
            for (m, lv) in mu[s * d..(s + 1) * d].iter().zip(&logvar[s * d..(s + 1) * d]) {
                kld += 1.0 + lv - m * m - lv.exp();
            }
            (bce, -0.5 * kld)
        })
        .collect()
}

/// total = bce + β·kld, both summed per sample and averaged over the batch.
pub fn loss(input: &[f64], reconstruction: &[f64], mu: &[f64], logvar: &[f64], batch: usize, beta: f64) -> LossParts {
    let parts = per_sample_loss(input, reconstruction, mu, logvar, batch);
    let bce = parts.iter().map(|p| p.0).sum::<f64>() / batch as f64;
    let kld = parts.iter().map(|p| p.1).sum::<f64>() / batch as f64;
    LossParts {
        total: bce + beta * kld,
        bce,
        kld,
    }
}

/// Stateless model: all state lives in [`Params`].
#[derive(Debug, Clone)]
pub struct Cvae {
    pub arch: CvaeArch,
    layout: ParamLayout,
    widths: Vec<usize>,
}

impl Cvae {
    pub fn new(arch: CvaeArch) -> Result<Self, CvaeError> {
        arch.validate()?;
        Ok(Self {
            layout: ParamLayout::new(&arch),
            widths: arch.widths(),
            arch,
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn span(&self, batch: usize, layer: usize) -> Span {
        Span {
            seqs: batch * self.arch.height,
            long: self.widths[layer],
            short: self.widths[layer + 1],
        }
    }

    fn check(&self, params: &[f64], input: &[f64], batch: usize) -> Result<(), CvaeError> {
        if params.len() != self.layout.total {
            return Err(CvaeError::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.layout.total,
                params.len()
            )));
        }
        if batch == 0 || input.len() != batch * self.arch.input_len() {
            return Err(CvaeError::ShapeMismatch(format!(
                "input of length {} is not {batch} × {} × {}",
                input.len(),
                self.arch.height,
                self.arch.width
            )));
        }
        Ok(())
    }

    /// Encoder: returns post-ReLU activations per layer plus (μ, log σ²).
    fn encode_full(&self, params: &[f64], input: &[f64], batch: usize) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
        let f = self.arch.filters;
        let d = self.arch.latent_dim;
        let flat = self.arch.flat_dim();
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.arch.conv_layers);
        for (l, (wr, br)) in self.layout.enc.iter().enumerate() {
            let span = self.span(batch, l);
            let c_in = if l == 0 { 1 } else { f };
            let mut out = vec![0.0; span.seqs * span.short * f];
            let x = if l == 0 { input } else { &acts[l - 1] };
            ops::conv_forward(x, span, c_in, &params[wr.clone()], &params[br.clone()], f, &mut out);
            relu_inplace(&mut out);
            acts.push(out);
        }
        let h = acts.last().unwrap();
        let dense = |wr: &Range<usize>, br: &Range<usize>| {
            let mut out = Vec::with_capacity(batch * d);
            for _ in 0..batch {
                out.extend_from_slice(&params[br.clone()]);
            }
            ops::gemm(batch, flat, d, h, flat, 1, &params[wr.clone()], d, 1, 1.0, &mut out, d, 1);
            out
        };
        let mu = dense(&self.layout.mu_w, &self.layout.mu_b);
        let logvar = dense(&self.layout.lv_w, &self.layout.lv_b);
        (acts, mu, logvar)
    }

    /// Posterior means μ for a batch (deterministic).
    pub fn encode(&self, params: &[f64], input: &[f64], batch: usize) -> Result<Vec<f64>, CvaeError> {
        self.check(params, input, batch)?;
        let (_, mu, _) = self.encode_full(params, input, batch);
        if !mu.iter().all(|v| v.is_finite()) {
            return Err(CvaeError::NonFiniteActivation);
        }
        Ok(mu)
    }

    /// Decoder from latent codes: returns post-ReLU inputs of each transposed
    /// conv and the output logits.
    fn decode_full(&self, params: &[f64], z: &[f64], batch: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let f = self.arch.filters;
        let d = self.arch.latent_dim;
        let flat = self.arch.flat_dim();
        let layers = self.arch.conv_layers;
        let mut g = Vec::with_capacity(batch * flat);
        for _ in 0..batch {
            g.extend_from_slice(&params[self.layout.fc_b.clone()]);
        }
        ops::gemm(batch, d, flat, z, d, 1, &params[self.layout.fc_w.clone()], flat, 1, 1.0, &mut g, flat, 1);
        relu_inplace(&mut g);
        let mut dec_in = vec![g];
        let mut logits = Vec::new();
        for (l, (wr, br)) in self.layout.dec.iter().enumerate() {
            let span = self.span(batch, layers - 1 - l);
            let c_out = if l + 1 == layers { 1 } else { f };
            let mut out = vec![0.0; span.seqs * span.long * c_out];
            ops::tconv_forward(dec_in.last().unwrap(), span, f, &params[wr.clone()], &params[br.clone()], c_out, &mut out);
            if l + 1 == layers {
                logits = out;
            } else {
                relu_inplace(&mut out);
                dec_in.push(out);
            }
        }
        (dec_in, logits)
    }

    /// Reconstruction probabilities decoded from latent codes.
    pub fn decode(&self, params: &[f64], z: &[f64], batch: usize) -> Vec<f64> {
        let (_, logits) = self.decode_full(params, z, batch);
        logits.into_iter().map(sigmoid).collect()
    }

    /// Full pass with reparameterized sampling z = μ + exp(½ log σ²) ⊙ ε.
    pub fn forward(&self, params: &[f64], input: &[f64], batch: usize, noise: &[f64]) -> Result<ForwardPass, CvaeError> {
        self.check(params, input, batch)?;
        if noise.len() != batch * self.arch.latent_dim {
            return Err(CvaeError::ShapeMismatch("noise length != batch × latent_dim".into()));
        }
        let (enc_acts, mu, logvar) = self.encode_full(params, input, batch);
        let z: Vec<f64> = mu
            .iter()
            .zip(&logvar)
            .zip(noise)
            .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
            .collect();
        if !z.iter().chain(&logvar).all(|v| v.is_finite()) {
            return Err(CvaeError::NonFiniteActivation);
        }
        let (dec_in, logits) = self.decode_full(params, &z, batch);
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(CvaeError::NonFiniteActivation);
        }
        let reconstruction = logits.iter().map(|&x| sigmoid(x)).collect();
        Ok(ForwardPass {
            batch,
            enc_acts,
            mu,
            logvar,
            noise: noise.to_vec(),
            z,
            dec_in,
            logits,
            reconstruction,
        })
    }

    /// Gradient of `loss(..., beta)` w.r.t. every parameter, with the
    /// recorded noise held fixed.
    pub fn backward(&self, params: &[f64], input: &[f64], fp: &ForwardPass, beta: f64) -> Vec<f64> {
        let batch = fp.batch;
        let f = self.arch.filters;
        let d = self.arch.latent_dim;
        let flat = self.arch.flat_dim();
        let layers = self.arch.conv_layers;
        let inv_b = 1.0 / batch as f64;
        let lay = &self.layout;
        let mut grad = vec![0.0; lay.total];

        // d(bce)/d(logit) through the clamped sigmoid
        let mut dout: Vec<f64> = fp
            .reconstruction
            .iter()
            .zip(input)
            .map(|(&p, &x)| {
                if p > BCE_CLAMP && p < 1.0 - BCE_CLAMP {
                    (p - x) * inv_b
                } else {
                    0.0
                }
            })
            .collect();

        for l in (0..layers).rev() {
            let span = self.span(batch, layers - 1 - l);
            let c_out = if l + 1 == layers { 1 } else { f };
            let (wr, br) = &lay.dec[l];
            let x = &fp.dec_in[l];
            let mut dx = vec![0.0; x.len()];
            let (gw, gb) = split_two(&mut grad, wr, br);
            ops::tconv_backward(x, span, f, &params[wr.clone()], c_out, &dout, gw, gb, Some(&mut dx));
            for (g, a) in dx.iter_mut().zip(x) {
                if *a <= 0.0 {
                    *g = 0.0;
                }
            }
            dout = dx;
        }

        // dense decoder input: g = relu(z · Wfc + b)
        let dg = dout;
        {
            let (gw, gb) = split_two(&mut grad, &lay.fc_w, &lay.fc_b);
            ops::gemm(d, batch, flat, &fp.z, 1, d, &dg, flat, 1, 1.0, gw, flat, 1);
            for row in dg.chunks(flat) {
                for (g, v) in gb.iter_mut().zip(row) {
                    *g += v;
                }
            }
        }
        let mut dz = vec![0.0; batch * d];
        ops::gemm(batch, flat, d, &dg, flat, 1, &params[lay.fc_w.clone()], 1, flat, 0.0, &mut dz, d, 1);

        let mut dmu = vec![0.0; batch * d];
        let mut dlv = vec![0.0; batch * d];
        for i in 0..batch * d {
            let sd = (0.5 * fp.logvar[i]).exp();
            dmu[i] = dz[i] + beta * fp.mu[i] * inv_b;
            dlv[i] = dz[i] * fp.noise[i] * 0.5 * sd + beta * 0.5 * (fp.logvar[i].exp() - 1.0) * inv_b;
        }

        let h = fp.enc_acts.last().unwrap();
        let mut dh = vec![0.0; batch * flat];
        for (dhead, wr, br) in [(&dmu, &lay.mu_w, &lay.mu_b), (&dlv, &lay.lv_w, &lay.lv_b)] {
            let (gw, gb) = split_two(&mut grad, wr, br);
            ops::gemm(flat, batch, d, h, 1, flat, dhead, d, 1, 1.0, gw, d, 1);
            for row in dhead.chunks(d) {
                for (g, v) in gb.iter_mut().zip(row) {
                    *g += v;
                }
            }
            ops::gemm(batch, d, flat, dhead, d, 1, &params[wr.clone()], 1, d, 1.0, &mut dh, flat, 1);
        }

        let mut dact = dh;
        for l in (0..layers).rev() {
            let span = self.span(batch, l);
            let c_in = if l == 0 { 1 } else { f };
            for (g, a) in dact.iter_mut().zip(&fp.enc_acts[l]) {
                if *a <= 0.0 {
                    *g = 0.0;
                }
            }
            let (wr, br) = &lay.enc[l];
            let x = if l == 0 { input } else { &fp.enc_acts[l - 1][..] };
            let (gw, gb) = split_two(&mut grad, wr, br);
            if l == 0 {
                ops::conv_backward(x, span, c_in, &params[wr.clone()], f, &dact, gw, gb, None);
            } else {
                let mut dx = vec![0.0; x.len()];
                ops::conv_backward(x, span, c_in, &params[wr.clone()], f, &dact, gw, gb, Some(&mut dx));
                dact = dx;
            }
        }
        grad
    }
}

/// Disjoint mutable views of two non-overlapping ranges (weight before bias).
fn split_two<'a>(v: &'a mut [f64], a: &Range<usize>, b: &Range<usize>) -> (&'a mut [f64], &'a mut [f64]) {
    assert!(a.end <= b.start);
    let (left, right) = v.split_at_mut(b.start);
    (&mut left[a.clone()], &mut right[..b.len()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn min_width_is_91_for_four_layers() {
        assert_eq!(CvaeArch::min_width(4), 91);
        assert_eq!(CvaeArch::min_width(1), 7);
        assert!(CvaeArch::new(2, 2, 2, 90).is_err());
        assert!(CvaeArch::new(2, 2, 2, 91).is_ok());
        assert!(CvaeArch::new(2, 2, 1, 91).is_err());
    }

    #[test]
    fn zero_params_give_half() {
        let arch = CvaeArch::new(3, 2, 2, 100).unwrap();
        let model = Cvae::new(arch).unwrap();
        let p = Params::zeros(arch);
        let x: Vec<f64> = (0..2 * arch.input_len()).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let fp = model.forward(&p.data, &x, 2, &[0.3, -1.0, 0.2, 0.5]).unwrap();
        assert!(fp.reconstruction.iter().all(|&r| r == 0.5));
        assert!(fp.mu.iter().all(|&m| m == 0.0));
        assert_eq!(fp.reconstruction.len(), x.len());
    }

    #[test]
    fn clamp_floor_bce() {
        let x = [0.0, 1.0, 1.0, 0.0];
        let parts = loss(&x, &x, &[0.0, 0.0], &[0.0, 0.0], 1, 1.0);
        let per = -(1.0f64 - 1e-7).ln();
        assert!((parts.bce - 4.0 * per).abs() < 1e-18);
        assert_eq!(parts.kld, 0.0);
    }

    #[test]
    fn output_bias_gradient_closed_form() {
        // all weights zero: logits ≡ final bias b, so dL/db = Σ(σ(b) − x) / B
        let arch = CvaeArch::new(2, 2, 2, 91).unwrap();
        let model = Cvae::new(arch).unwrap();
        let mut p = Params::zeros(arch);
        let lay = p.layout();
        let b = 0.37;
        p.data[lay.dec.last().unwrap().1.start] = b;
        let batch = 3;
        let x: Vec<f64> = (0..batch * arch.input_len()).map(|i| ((i * 7) % 5 == 0) as u8 as f64).collect();
        let fp = model.forward(&p.data, &x, batch, &vec![0.0; batch * 2]).unwrap();
        let g = model.backward(&p.data, &x, &fp, 1.0);
        let s = 1.0 / (1.0 + (-b).exp());
        let expected: f64 = x.iter().map(|xi| s - xi).sum::<f64>() / batch as f64;
        let got = g[lay.dec.last().unwrap().1.start];
        assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
    }

    #[test]
    fn gradient_shape_matches_params() {
        let arch = CvaeArch::new(2, 3, 2, 95).unwrap();
        let model = Cvae::new(arch).unwrap();
        let p = Params::init(arch, &mut ChaCha8Rng::seed_from_u64(1));
        let x = vec![1.0; arch.input_len()];
        let fp = model.forward(&p.data, &x, 1, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(model.backward(&p.data, &x, &fp, 1.0).len(), p.data.len());
    }
}
