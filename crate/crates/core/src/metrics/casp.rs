//! Contrastive audio/speech model: two encoders of identical architecture
//! with separate parameters, attention pooling, and a symmetric in-batch
//! contrastive objective with a learned temperature.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::nn::{Linear, TransformerBlock};
use crate::numerics::{cosine_lr, Adam, AdamConfig, AttentionMask, Graph, ParamId, ParamStore, Real, Tensor, Var};
use crate::synthdata::CASP_BINS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaspConfig {
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub d_out: usize,
    /// 5 s at 10 frames per second.
    pub crop_frames: usize,
    pub init_log_scale: f64,
    pub max_log_scale: f64,
    pub batch: usize,
    pub steps: usize,
    pub warmup: usize,
    pub lr_max: f64,
    pub lr_min: f64,
}

impl Default for CaspConfig {
    fn default() -> Self {
        Self {
            d: 32,
            layers: 2,
            heads: 2,
            d_ff: 64,
            d_out: 32,
            crop_frames: 50,
            init_log_scale: 10f64.ln(),
            max_log_scale: 100f64.ln(),
            batch: 32,
            steps: 600,
            warmup: 40,
            lr_max: 3e-3,
            lr_min: 3e-5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Branch {
    pub in_proj: Linear,
    pub pos: ParamId,
    pub blocks: Vec<TransformerBlock>,
    pub pool_query: ParamId,
    pub out_proj: Linear,
}

/// Crops (at `start`) or zero-pads to `len` rows; returns the number of
/// real rows.
pub fn crop_or_pad(feats: &Tensor, len: usize, start: usize) -> (Tensor, usize) {
    let c = feats.cols();
    let valid = feats.rows().saturating_sub(start).min(len);
    let mut data = vec![0.0f32; len * c];
    data[..valid * c].copy_from_slice(&feats.data()[start * c..(start + valid) * c]);
    (Tensor::new([len, c], data).unwrap(), valid)
}

/// Softmax-weighted average of the first `valid` rows of `x`, scored
/// against a learned query.
pub fn attention_pool<S: Real>(g: &mut Graph<'_, S>, x: Var, query: Var, valid: usize) -> Var {
    let n = g.rows(x);
    let d = g.cols(x);
    let scores = g.matmul_bt(query, x);
    let scores = g.scale(scores, S::lit(1.0 / (d as f64).sqrt()));
    let mask: Arc<[bool]> = (0..n).map(|j| j < valid).collect::<Vec<_>>().into();
    let w = g.softmax_rows(scores, Some(mask));
    g.matmul(w, x)
}

impl Branch {
    fn new(store: &mut ParamStore, name: &str, cfg: &CaspConfig, rng: &mut impl Rng) -> Self {
        let out_std = 0.5 / (cfg.d as f64).sqrt();
        Self {
            in_proj: Linear::init(store, &format!("{name}.in"), CASP_BINS, cfg.d, true, rng),
            pos: store.add_normal(format!("{name}.pos"), &[cfg.crop_frames, cfg.d], 0.1, rng),
            blocks: (0..cfg.layers)
                .map(|l| TransformerBlock::new(store, &format!("{name}.block{l}"), cfg.d, cfg.heads, cfg.d_ff, out_std, rng))
                .collect(),
            pool_query: store.add_normal(format!("{name}.pool"), &[1, cfg.d], 1.0 / (cfg.d as f64).sqrt(), rng),
            out_proj: Linear::init(store, &format!("{name}.out"), cfg.d, cfg.d_out, false, rng),
        }
    }

    /// Unit-norm `[1, d_out]` embedding of a padded crop.
    pub fn forward<S: Real>(&self, g: &mut Graph<'_, S>, crop: &Tensor, valid: usize) -> Result<Var> {
        if valid == 0 {
            return Err(Error::Empty("contrastive encoder input"));
        }
        let n = crop.rows();
        let x = g.input(crop);
        let x = self.in_proj.forward(g, x);
        let pos = g.param(self.pos);
        let mut x = g.add(x, pos);
        let mask = AttentionMask::key_padding(n, n, valid)?;
        for b in &self.blocks {
            x = b.forward(g, x, &mask)?;
        }
        let q = g.param(self.pool_query);
        let pooled = attention_pool(g, x, q, valid);
        let out = self.out_proj.forward(g, pooled);
        Ok(g.row_normalize(out))
    }
}

#[derive(Debug, Clone)]
pub struct CaspModel {
    pub cfg: CaspConfig,
    pub store: ParamStore,
    pub audio: Branch,
    pub speech: Branch,
    pub log_scale: ParamId,
}

impl CaspModel {
    pub fn new(cfg: &CaspConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let audio = Branch::new(&mut store, "casp.audio", cfg, &mut rng);
        let speech = Branch::new(&mut store, "casp.speech", cfg, &mut rng);
        let log_scale = store.add_const("casp.log_scale", &[1], cfg.init_log_scale);
        Self { cfg: cfg.clone(), store, audio, speech, log_scale }
    }

    pub fn embed_audio(&self, feats: &Tensor) -> Result<Vec<f32>> {
        self.embed(&self.audio, feats)
    }

    pub fn embed_speech(&self, feats: &Tensor) -> Result<Vec<f32>> {
        self.embed(&self.speech, feats)
    }

    fn embed(&self, branch: &Branch, feats: &Tensor) -> Result<Vec<f32>> {
        let (crop, valid) = crop_or_pad(feats, self.cfg.crop_frames, 0);
        let mut g = Graph::new(&self.store);
        let v = branch.forward(&mut g, &crop, valid)?;
        Ok(g.value(v).to_vec())
    }

    /// Symmetric contrastive loss on one batch of `(audio, speech)` crops;
    /// returns the loss node and the two directional losses.
    pub fn batch_loss<S: Real>(
        &self,
        g: &mut Graph<'_, S>,
        batch: &[((Tensor, usize), (Tensor, usize))],
    ) -> Result<(Var, f64, f64)> {
        let b = batch.len();
        if b < 2 {
            return Err(Error::InvalidArgument(format!("contrastive batch needs at least 2 pairs, got {b}")));
        }
        let mut a_rows = Vec::with_capacity(b);
        let mut s_rows = Vec::with_capacity(b);
        for ((ac, av), (sc, sv)) in batch {
            a_rows.push(self.audio.forward(g, ac, *av)?);
            s_rows.push(self.speech.forward(g, sc, *sv)?);
        }
        let a = g.concat_rows(&a_rows);
        let s = g.concat_rows(&s_rows);
        let sim = g.matmul_bt(a, s);
        let ls = g.param(self.log_scale);
        let scale = g.exp(ls);
        let logits = g.mul_scalar(sim, scale);
        let targets: Vec<Option<usize>> = (0..b).map(Some).collect();
        let (l_as, _) = g.cross_entropy_raw(logits, targets.clone());
        let lt = g.transpose(logits);
        let (l_sa, _) = g.cross_entropy_raw(lt, targets);
        let (x, y) = (g.scalar(l_as).as_f64(), g.scalar(l_sa).as_f64());
        let sum = g.add(l_as, l_sa);
        Ok((g.scale(sum, S::lit(0.5)), x, y))
    }
}

/// Matrix of scores `[speech i][audio j]`.
pub fn score_matrix(model: &CaspModel, pairs: &[(Tensor, Tensor)]) -> Result<Vec<Vec<f64>>> {
    let a: Vec<Vec<f32>> = pairs.iter().map(|(a, _)| model.embed_audio(a)).collect::<Result<_>>()?;
    let s: Vec<Vec<f32>> = pairs.iter().map(|(_, s)| model.embed_speech(s)).collect::<Result<_>>()?;
    Ok(s.iter().map(|si| a.iter().map(|aj| cosine(si, aj)).collect()).collect())
}

fn cosine(x: &[f32], y: &[f32]) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(&a, &b)| a as f64 * b as f64).sum();
    let nx = x.iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt();
    let ny = y.iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt();
    (dot / (nx * ny).max(1e-12)).clamp(-1.0, 1.0)
}

/// Cosine between the pooled audio and speech embeddings.
pub fn dual_score(model: &CaspModel, audio: &Tensor, speech: &Tensor) -> Result<f64> {
    Ok(cosine(&model.embed_audio(audio)?, &model.embed_speech(speech)?))
}

/// For each speech item, the fraction whose own audio ranks within the top
/// `k` of all audio items; ties go to the lower index.
pub fn topk_from_scores(scores: &[Vec<f64>], ks: &[usize]) -> Vec<f64> {
    let n = scores.len();
    let ranks: Vec<usize> = (0..n)
        .map(|i| {
            let own = scores[i][i];
            (0..n).filter(|&j| scores[i][j] > own || (scores[i][j] == own && j < i)).count()
        })
        .collect();
    ks.iter().map(|&k| ranks.iter().filter(|&&r| r < k).count() as f64 / n.max(1) as f64).collect()
}

pub fn topk_retrieval(model: &CaspModel, pairs: &[(Tensor, Tensor)], ks: &[usize]) -> Result<Vec<f64>> {
    let max_k = ks.iter().copied().max().unwrap_or(1);
    if pairs.len() < max_k {
        return Err(Error::InvalidArgument(format!("{} pairs cannot rank top-{max_k}", pairs.len())));
    }
    Ok(topk_from_scores(&score_matrix(model, pairs)?, ks))
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct CaspLog {
    pub losses: Vec<f64>,
    pub initial_directional: (f64, f64),
}

/// Trains from `pairs` of (audio, speech) feature sequences. Items longer
/// than the crop are cropped at a random offset.
pub fn casp_train(pairs: &[(Tensor, Tensor)], cfg: &CaspConfig, seed: u64) -> Result<(CaspModel, CaspLog)> {
    if pairs.len() < 2 {
        return Err(Error::InvalidArgument(format!("contrastive training needs at least 2 pairs, got {}", pairs.len())));
    }
    let mut model = CaspModel::new(cfg, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xca5b);
    let mut adam = Adam::new(AdamConfig::default());
    let b = cfg.batch.min(pairs.len()).max(2);
    let mut log = CaspLog::default();
    for step in 0..cfg.steps {
        let idx = sample(&mut rng, pairs.len(), b).into_vec();
        let batch: Vec<_> = idx
            .iter()
            .map(|&i| {
                let (a, s) = &pairs[i];
                let sa = rng.random_range(0..=a.rows().saturating_sub(cfg.crop_frames));
                let ss = rng.random_range(0..=s.rows().saturating_sub(cfg.crop_frames));
                (crop_or_pad(a, cfg.crop_frames, sa), crop_or_pad(s, cfg.crop_frames, ss))
            })
            .collect();
        let grads = {
            let mut g = Graph::new(&model.store);
            let (loss, la, lb) = model.batch_loss(&mut g, &batch)?;
            let v = g.scalar(loss) as f64;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("contrastive loss at step {step}")));
            }
            if step == 0 {
                log.initial_directional = (la, lb);
            }
            log.losses.push(v);
            g.backward(loss)
        };
        model.store.zero_grad();
        grads.accumulate_into(&mut model.store);
        let lr = cosine_lr(step + 1, cfg.warmup, cfg.lr_min, cfg.lr_max, cfg.steps);
        adam.step(&mut model.store, lr as f32)?;
        let ls = model.store.get_mut(model.log_scale);
        ls.data_mut()[0] = ls.data()[0].min(cfg.max_log_scale as f32);
    }
    Ok((model, log))
}
