use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fm_loss, integrate, LatentSeq, ToyVae};
use crate::error::{Error, Result};
use crate::frontend::nearest_indices;
use crate::numerics::nn::{Linear, RmsNorm, TransformerBlock};
use crate::numerics::{cosine_lr, Adam, AdamConfig, AttentionMask, Graph, ParamId, ParamStore, Real, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub vocab: usize,
    pub d_lat: usize,
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub t_dim: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub euler_steps: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            vocab: 256,
            d_lat: 16,
            d: 32,
            layers: 2,
            heads: 2,
            d_ff: 64,
            t_dim: 16,
            steps: 1500,
            batch: 16,
            lr_max: 2e-3,
            lr_min: 2e-5,
            euler_steps: 32,
        }
    }
}

/// `[sin(π2^i t), cos(π2^i t)]` for `i < dim/2`.
pub fn time_embedding(t: f64, dim: usize) -> Tensor {
    let half = dim / 2;
    Tensor::from_fn([1, dim], |j| {
        let w = PI * 2f64.powi((j % half) as i32);
        (if j < half { (w * t).sin() } else { (w * t).cos() }) as f32
    })
}

/// Token embedding table plus a small non-causal transformer predicting
/// `dz/dt` from `(z_t, t)`.
#[derive(Debug, Clone)]
pub struct FlowNet {
    pub cfg: FlowConfig,
    pub store: ParamStore,
    pub table: ParamId,
    in_proj: Linear,
    time_proj: Linear,
    blocks: Vec<TransformerBlock>,
    norm: RmsNorm,
    out: Linear,
}

impl FlowNet {
    pub fn new(cfg: &FlowConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = cfg.d;
        Self {
            table: store.add_normal("flow.table", &[cfg.vocab, cfg.d_lat], 1.0, &mut rng),
            in_proj: Linear::init(&mut store, "flow.in", cfg.d_lat, d, true, &mut rng),
            time_proj: Linear::init(&mut store, "flow.time", cfg.t_dim, d, true, &mut rng),
            blocks: (0..cfg.layers)
                .map(|l| TransformerBlock::new(&mut store, &format!("flow.block{l}"), d, cfg.heads, cfg.d_ff, 0.02, &mut rng))
                .collect(),
            norm: RmsNorm::new(&mut store, "flow.norm", d),
            out: Linear::new(&mut store, "flow.out", d, cfg.d_lat, true, 0.02, &mut rng),
            cfg: cfg.clone(),
            store,
        }
    }

    fn rows_for(&self, tokens: &[u32], l_lat: usize) -> Result<Vec<usize>> {
        if tokens.is_empty() {
            return Err(Error::Empty("token sequence"));
        }
        nearest_indices(tokens.len(), l_lat)
            .into_iter()
            .map(|i| {
                let id = tokens[i];
                if (id as usize) < self.cfg.vocab {
                    Ok(id as usize)
                } else {
                    Err(Error::TokenOutOfRange { id, vocab: self.cfg.vocab })
                }
            })
            .collect()
    }

    /// Token embeddings stretched to `l_lat` rows by nearest-neighbour
    /// interpolation, as a graph node.
    pub fn z0_var<S: Real>(&self, g: &mut Graph<'_, S>, tokens: &[u32], l_lat: usize) -> Result<Var> {
        let rows = self.rows_for(tokens, l_lat)?;
        let table = g.param(self.table);
        Ok(g.gather(table, &rows))
    }

    pub fn tokens_to_z0(&self, tokens: &[u32], l_lat: usize, rate_hz: f64) -> Result<LatentSeq> {
        let mut g = Graph::new(&self.store);
        let z = self.z0_var(&mut g, tokens, l_lat)?;
        Ok(LatentSeq { z: g.tensor(z), rate_hz })
    }

    pub fn velocity<S: Real>(&self, g: &mut Graph<'_, S>, z: Var, t: f64) -> Result<Var> {
        let l = g.rows(z);
        let h = self.in_proj.forward(g, z);
        let te = g.constant(time_embedding(t, self.cfg.t_dim).cast());
        let te = self.time_proj.forward(g, te);
        let mut h = g.add_row(h, te);
        let mask = AttentionMask::non_causal(l, l);
        for b in &self.blocks {
            h = b.forward(g, h, &mask)?;
        }
        let h = self.norm.forward(g, h);
        Ok(self.out.forward(g, h))
    }

    pub fn velocity_tensor(&self, z: &Tensor, t: f64) -> Result<Tensor> {
        let mut g = Graph::new(&self.store);
        let zi = g.input(z);
        let v = self.velocity(&mut g, zi, t)?;
        Ok(g.tensor(v))
    }

    /// Integrates from the token embedding to an estimate of the latent.
    pub fn sample(&self, tokens: &[u32], l_lat: usize, rate_hz: f64, n_steps: usize) -> Result<LatentSeq> {
        let z0 = self.tokens_to_z0(tokens, l_lat, rate_hz)?;
        let z = integrate(|z, t| self.velocity_tensor(z, t), &z0.z, n_steps)?;
        Ok(LatentSeq { z, rate_hz })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowLog {
    pub losses: Vec<f64>,
}

/// Trains the table and velocity network on `(tokens, waveform)` pairs with
/// targets taken from the frozen VAE's encoder mean.
pub fn flow_train(vae: &ToyVae, data: &[(Vec<u32>, Vec<f32>)], cfg: &FlowConfig, seed: u64) -> Result<(FlowNet, FlowLog)> {
    if data.is_empty() {
        return Err(Error::Empty("flow training set"));
    }
    if vae.d_lat() != cfg.d_lat {
        return Err(Error::ConfigMismatch { expected: format!("d_lat {}", cfg.d_lat), found: format!("d_lat {}", vae.d_lat()) });
    }
    let targets: Vec<Tensor> = data.iter().map(|(_, w)| vae.encode_mean(w).z).collect();
    let mut net = FlowNet::new(cfg, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf10);
    let mut adam = Adam::new(AdamConfig::default());
    let b = cfg.batch.min(data.len());
    let mut log = FlowLog::default();
    for step in 0..cfg.steps {
        let idx = sample(&mut rng, data.len(), b).into_vec();
        let ts: Vec<f64> = (0..b).map(|_| rng.random::<f64>()).collect();
        let grads = {
            let mut g = Graph::new(&net.store);
            let mut pairs = Vec::with_capacity(b);
            for &i in &idx {
                let z1 = g.input(&targets[i]);
                let z0 = net.z0_var(&mut g, &data[i].0, targets[i].rows())?;
                pairs.push((z0, z1));
            }
            let loss = fm_loss(&mut g, |g, z, t| net.velocity(g, z, t), &pairs, &ts)?;
            let v = g.scalar(loss) as f64;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("flow-matching loss at step {step}")));
            }
            log.losses.push(v);
            g.backward(loss)
        };
        net.store.zero_grad();
        grads.accumulate_into(&mut net.store);
        adam.step(&mut net.store, cosine_lr(step + 1, cfg.steps / 20 + 1, cfg.lr_min, cfg.lr_max, cfg.steps) as f32)?;
    }
    net.store.zero_grad();
    Ok((net, log))
}

/// `‖ẑ1 − z1‖² / ‖z1‖²` after integrating from the tokens.
pub fn recovery_error(net: &FlowNet, tokens: &[u32], z1: &Tensor, n_steps: usize) -> Result<f64> {
    let est = net.sample(tokens, z1.rows(), 0.0, n_steps)?;
    let num: f64 = est.z.data().iter().zip(z1.data()).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
    let den: f64 = z1.data().iter().map(|x| (*x as f64).powi(2)).sum();
    Ok(num / den.max(1e-12))
}
