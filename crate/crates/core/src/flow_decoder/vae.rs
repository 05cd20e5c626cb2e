use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::LatentSeq;
use crate::error::{Error, Result};
use crate::numerics::nn::Linear;
use crate::numerics::{cosine_lr, Adam, AdamConfig, Graph, ParamStore, Real, Tensor, Var};
use crate::synthdata::world::{SAMPLES_PER_TOKEN, SAMPLE_RATE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub frame: usize,
    pub hidden: usize,
    pub d_lat: usize,
    pub beta: f64,
    pub steps: usize,
    /// Frames per optimizer step.
    pub batch: usize,
    pub lr_max: f64,
    pub lr_min: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            frame: SAMPLES_PER_TOKEN,
            hidden: 128,
            d_lat: 16,
            beta: 1e-4,
            steps: 1500,
            batch: 256,
            lr_max: 2e-3,
            lr_min: 2e-5,
        }
    }
}

pub const MIN_VAE_WAVES: usize = 64;

/// Frame-wise variational autoencoder over non-overlapping waveform frames.
#[derive(Debug, Clone)]
pub struct ToyVae {
    pub cfg: VaeConfig,
    pub store: ParamStore,
    enc: Linear,
    enc_mu: Linear,
    enc_lv: Linear,
    dec: Linear,
    dec_out: Linear,
}

/// `[n_frames, frame]`; a trailing partial frame is dropped.
pub fn frame_wave(wave: &[f32], frame: usize) -> Tensor {
    let n = wave.len() / frame;
    Tensor::new([n, frame], wave[..n * frame].to_vec()).expect("frame shape")
}

impl ToyVae {
    pub fn new(cfg: &VaeConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (f, h, d) = (cfg.frame, cfg.hidden, cfg.d_lat);
        Self {
            enc: Linear::init(&mut store, "vae.enc", f, h, true, &mut rng),
            enc_mu: Linear::init(&mut store, "vae.mu", h, d, true, &mut rng),
            enc_lv: Linear::new(&mut store, "vae.logvar", h, d, true, 0.01, &mut rng),
            dec: Linear::init(&mut store, "vae.dec", d, h, true, &mut rng),
            dec_out: Linear::init(&mut store, "vae.out", h, f, true, &mut rng),
            cfg: cfg.clone(),
            store,
        }
    }

    pub fn d_lat(&self) -> usize {
        self.cfg.d_lat
    }

    fn encoder<S: Real>(&self, g: &mut Graph<'_, S>, x: Var) -> (Var, Var) {
        let h = self.enc.forward(g, x);
        let h = g.gelu(h);
        (self.enc_mu.forward(g, h), self.enc_lv.forward(g, h))
    }

    fn decoder<S: Real>(&self, g: &mut Graph<'_, S>, z: Var) -> Var {
        let h = self.dec.forward(g, z);
        let h = g.gelu(h);
        self.dec_out.forward(g, h)
    }

    /// Reconstruction MSE per sample plus `beta` times the mean per-frame KL
    /// to a standard normal. `eps` holds the reparameterization noise.
    pub fn loss<S: Real>(&self, g: &mut Graph<'_, S>, frames: Var, eps: &Tensor) -> Result<(Var, f64, f64)> {
        let (mu, lv) = self.encoder(g, frames);
        if g.shape(mu) != eps.shape() {
            return Err(Error::shape("vae loss", "noise shape differs from latent shape"));
        }
        let half = g.scale(lv, S::lit(0.5));
        let std = g.exp(half);
        let e = g.constant(eps.cast());
        let noise = g.mul(std, e);
        let z = g.add(mu, noise);
        let recon = self.decoder(g, z);
        let diff = g.sub(recon, frames);
        let sq = g.mul(diff, diff);
        let mse = g.mean(sq);
        // KL = 0.5 Σ (mu² + e^lv − 1 − lv)
        let mu2 = g.mul(mu, mu);
        let var = g.exp(lv);
        let t = g.add(mu2, var);
        let t = g.sub(t, lv);
        let ones = g.constant(Tensor::from_fn(eps.shape().to_vec(), |_| S::one()));
        let t = g.sub(t, ones);
        let total = g.sum(t);
        let kl = g.scale(total, S::lit(0.5 / g.rows(frames) as f64));
        let weighted = g.scale(kl, S::lit(self.cfg.beta));
        let loss = g.add(mse, weighted);
        let (m, k) = (g.scalar(mse).as_f64(), g.scalar(kl).as_f64());
        Ok((loss, m, k))
    }

    pub fn encode_mean(&self, wave: &[f32]) -> LatentSeq {
        let frames = frame_wave(wave, self.cfg.frame);
        let mut g = Graph::new(&self.store);
        let x = g.input(&frames);
        let (mu, _) = self.encoder(&mut g, x);
        LatentSeq { z: g.tensor(mu), rate_hz: SAMPLE_RATE as f64 / self.cfg.frame as f64 }
    }

    /// Frames back to a contiguous waveform.
    pub fn decode(&self, z: &LatentSeq) -> Result<Vec<f32>> {
        if z.z.shape().len() != 2 || z.z.cols() != self.cfg.d_lat {
            return Err(Error::shape("vae decode", format!("latent shape {:?}, expected [_, {}]", z.z.shape(), self.cfg.d_lat)));
        }
        let mut g = Graph::new(&self.store);
        let zi = g.input(&z.z);
        let out = self.decoder(&mut g, zi);
        Ok(g.value(out).to_vec())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VaeLog {
    pub losses: Vec<f64>,
}

/// Trains on random frames drawn from every waveform. The returned VAE is
/// meant to be used frozen.
pub fn vae_train(waves: &[Vec<f32>], cfg: &VaeConfig, seed: u64) -> Result<(ToyVae, VaeLog)> {
    if waves.len() < MIN_VAE_WAVES {
        return Err(Error::InvalidArgument(format!("VAE training needs at least {MIN_VAE_WAVES} waveforms, got {}", waves.len())));
    }
    let mut all = Vec::new();
    for w in waves {
        all.extend_from_slice(frame_wave(w, cfg.frame).data());
    }
    let n_frames = all.len() / cfg.frame;
    let frames = Tensor::new([n_frames, cfg.frame], all)?;
    let mut vae = ToyVae::new(cfg, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7ae);
    let mut adam = Adam::new(AdamConfig::default());
    let b = cfg.batch.min(n_frames);
    let mut log = VaeLog::default();
    for step in 0..cfg.steps {
        let idx = sample(&mut rng, n_frames, b).into_vec();
        let batch = crate::frontend::take_rows(&frames, &idx);
        let eps = Tensor::from_fn([b, cfg.d_lat], |_| StandardNormal.sample(&mut rng));
        let grads = {
            let mut g = Graph::new(&vae.store);
            let x = g.input(&batch);
            let (loss, _, _) = vae.loss(&mut g, x, &eps)?;
            let v = g.scalar(loss) as f64;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("VAE loss at step {step}")));
            }
            log.losses.push(v);
            g.backward(loss)
        };
        vae.store.zero_grad();
        grads.accumulate_into(&mut vae.store);
        adam.step(&mut vae.store, cosine_lr(step + 1, cfg.steps / 20 + 1, cfg.lr_min, cfg.lr_max, cfg.steps) as f32)?;
    }
    vae.store.zero_grad();
    Ok((vae, log))
}
