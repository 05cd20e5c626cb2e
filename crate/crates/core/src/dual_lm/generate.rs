use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{HeadMask, LmInput, LmModel};
use crate::error::{Error, Result};
use crate::frontend::DualTokenStreams;
use crate::numerics::{Graph, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Sampling {
    Greedy,
    TopK { k: usize, temperature: f64 },
}

#[derive(Debug, Clone)]
pub struct GenerateRequest {
    pub speaker: Tensor,
    pub text: Vec<u32>,
    /// `[max_t, d_v]`, already resampled to the output length.
    pub video: Tensor,
    pub max_t: usize,
    /// Streams to generate; a disabled stream is fed the NULL embedding and
    /// returned as PAD.
    pub streams: HeadMask,
    pub sampling: Sampling,
    pub seed: u64,
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

fn pick(row: &[f32], sampling: Sampling, rng: &mut ChaCha8Rng) -> usize {
    match sampling {
        Sampling::Greedy => argmax(row),
        Sampling::TopK { k, temperature } => {
            if k <= 1 || temperature <= 1e-6 {
                return argmax(row);
            }
            let mut idx: Vec<usize> = (0..row.len()).collect();
            idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            idx.truncate(k);
            let top = row[idx[0]] as f64;
            let w: Vec<f64> = idx.iter().map(|&i| ((row[i] as f64 - top) / temperature).exp()).collect();
            let mut u = rng.random::<f64>() * w.iter().sum::<f64>();
            for (j, wj) in w.iter().enumerate() {
                u -= wj;
                if u <= 0.0 {
                    return idx[j];
                }
            }
            idx[k - 1]
        }
    }
}

/// Autoregressive decoding. Each step re-runs the full `max_t` window with
/// not-yet-generated positions set to PAD; causal masking makes the row for
/// step `t` independent of them. After a stream emits its EOS it emits PAD.
/// Stops at `max_t` or once both enabled streams have ended.
pub fn generate(model: &LmModel, req: &GenerateRequest) -> Result<DualTokenStreams> {
    if model.stage.is_none() {
        return Err(Error::NotLoaded("language model has no trained or loaded weights".into()));
    }
    if req.max_t == 0 {
        return Err(Error::InvalidArgument("max_t must be positive".into()));
    }
    if req.video.rows() != req.max_t {
        return Err(Error::shape("generate", format!("video has {} rows, max_t is {}", req.video.rows(), req.max_t)));
    }
    let cfg = model.cfg();
    let pad = cfg.pad_id;
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let mut audio = vec![pad; req.max_t];
    let mut speech = vec![pad; req.max_t];
    let mut done_a = !req.streams.audio;
    let mut done_s = !req.streams.speech;
    let mut len = req.max_t;
    for t in 0..req.max_t {
        let input = LmInput {
            video: req.video.clone(),
            text: req.text.clone(),
            speaker: req.speaker.clone(),
            audio: req.streams.audio.then(|| audio.clone()),
            speech: req.streams.speech.then(|| speech.clone()),
        };
        let mut g = Graph::new(&model.store);
        let (logits, _) = model.arch.forward(&mut g, &input)?;
        let v = cfg.codec_vocab;
        if !done_a {
            let row = &g.value(logits.audio)[t * v..(t + 1) * v];
            let a = pick(row, req.sampling, &mut rng) as u32;
            audio[t] = a;
            done_a = a == cfg.audio_eos;
        }
        if !done_s {
            let row = &g.value(logits.speech)[t * v..(t + 1) * v];
            let s = pick(row, req.sampling, &mut rng) as u32;
            speech[t] = s;
            done_s = s == cfg.speech_eos;
        }
        if done_a && done_s {
            len = t + 1;
            break;
        }
    }
    audio.truncate(len);
    speech.truncate(len);
    Ok(DualTokenStreams { audio_ids: audio, speech_ids: speech, rate_hz: 40.0 })
}

impl GenerateRequest {
    /// Request conditioned exactly like a teacher-forced input.
    pub fn from_input(input: &LmInput, streams: HeadMask, sampling: Sampling, seed: u64) -> Self {
        Self {
            speaker: input.speaker.clone(),
            text: input.text.clone(),
            video: input.video.clone(),
            max_t: input.t(),
            streams,
            sampling,
            seed,
        }
    }
}

/// Fraction of non-PAD reference positions reproduced exactly; missing
/// generated positions count as PAD.
pub fn token_recall(generated: &[u32], reference: &[u32], pad: u32) -> f64 {
    let mut hit = 0usize;
    let mut n = 0usize;
    for (t, &r) in reference.iter().enumerate() {
        if r == pad {
            continue;
        }
        n += 1;
        hit += usize::from(generated.get(t) == Some(&r));
    }
    if n == 0 {
        1.0
    } else {
        hit as f64 / n as f64
    }
}

/// Per-step argmax of both heads under teacher forcing.
pub fn teacher_forced_argmax(model: &LmModel, input: &LmInput) -> Result<(Vec<u32>, Vec<u32>)> {
    let mut g = Graph::new(&model.store);
    let (logits, layout) = model.arch.forward(&mut g, input)?;
    let v = model.cfg().codec_vocab;
    let rows = |x: &[f32]| (0..layout.t).map(|t| argmax(&x[t * v..(t + 1) * v]) as u32).collect::<Vec<_>>();
    Ok((rows(g.value(logits.audio)), rows(g.value(logits.speech))))
}
