//! Decoder-only transformer over `[speaker, text, BOS, fused streams]` with
//! one output head per codec stream.

mod generate;

pub use generate::{generate, teacher_forced_argmax, token_recall, GenerateRequest, Sampling};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aligner::{Aligner, AlignerConfig, FusedStreams};
use crate::error::{Error, Result};
use crate::frontend::{DualTokenEmbedding, SpeakerEncoder, Stream};
use crate::numerics::nn::{Linear, RmsNorm, TransformerBlock};
use crate::numerics::{cross_entropy, AttentionMask, Graph, ParamId, ParamStore, Real, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub codec_vocab: usize,
    pub text_vocab: usize,
    pub max_text: usize,
    pub max_t: usize,
    pub d_spk: usize,
    pub d_mel: usize,
    pub d_v: usize,
    pub embed_std: f64,
    pub head_std: f64,
    pub aligner_out_std: f64,
    pub pad_id: u32,
    pub audio_eos: u32,
    pub speech_eos: u32,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            d: 64,
            layers: 4,
            heads: 4,
            d_ff: 256,
            codec_vocab: 256,
            text_vocab: 320,
            max_text: 40,
            max_t: 40,
            d_spk: 64,
            d_mel: 32,
            d_v: 64,
            embed_std: 0.02,
            head_std: 0.02,
            aligner_out_std: 0.02,
            pad_id: 0,
            audio_eos: 254,
            speech_eos: 255,
        }
    }
}

impl LmConfig {
    pub fn max_len(&self) -> usize {
        2 + self.max_text + self.max_t
    }
}

/// Row spans of the model input: speaker `[0,1)`, text `[1, 1+L)`, then the
/// multimodal span `[1+L, 2+L+T)` whose first row is BOS.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SequenceLayout {
    pub l_text: usize,
    pub t: usize,
}

impl SequenceLayout {
    pub fn spk_span(&self) -> std::ops::Range<usize> {
        0..1
    }

    pub fn text_span(&self) -> std::ops::Range<usize> {
        1..1 + self.l_text
    }

    pub fn mm_span(&self) -> std::ops::Range<usize> {
        1 + self.l_text..2 + self.l_text + self.t
    }

    pub fn bos(&self) -> usize {
        1 + self.l_text
    }

    pub fn total(&self) -> usize {
        2 + self.l_text + self.t
    }

    /// Hidden rows whose head outputs predict tokens `0..T`: BOS for token 0,
    /// the fused row of step `t−1` for token `t`.
    pub fn logit_rows(&self) -> std::ops::Range<usize> {
        self.bos()..self.bos() + self.t
    }
}

/// One teacher-forced model input. `None` streams are filled with the
/// learned NULL embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct LmInput {
    /// `[T, d_v]`, already at the token rate.
    pub video: Tensor,
    pub text: Vec<u32>,
    /// `[1, d_mel]` mean of the reference crop; zeros for no speaker.
    pub speaker: Tensor,
    pub audio: Option<Vec<u32>>,
    pub speech: Option<Vec<u32>>,
}

impl LmInput {
    pub fn t(&self) -> usize {
        self.video.rows()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DualLogits {
    pub audio: Var,
    pub speech: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadMask {
    pub audio: bool,
    pub speech: bool,
}

#[derive(Debug, Clone)]
pub struct DualLm {
    pub cfg: LmConfig,
    pub speaker: SpeakerEncoder,
    pub spk_proj: Linear,
    pub text_emb: ParamId,
    pub tokens: DualTokenEmbedding,
    pub null_audio: ParamId,
    pub null_speech: ParamId,
    pub bos: ParamId,
    pub pos: ParamId,
    pub aligner: Aligner,
    pub blocks: Vec<TransformerBlock>,
    pub final_norm: RmsNorm,
    pub head_audio: Linear,
    pub head_speech: Linear,
}

/// Architecture plus parameters. `stage` is set once weights are trained or
/// loaded; generation refuses to run without it.
#[derive(Debug, Clone)]
pub struct LmModel {
    pub arch: DualLm,
    pub store: ParamStore,
    pub stage: Option<String>,
}

impl LmModel {
    pub fn new(cfg: &LmConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let arch = DualLm::new(&mut store, cfg, &mut rng);
        Self { arch, store, stage: None }
    }

    pub fn cfg(&self) -> &LmConfig {
        &self.arch.cfg
    }
}

impl DualLm {
    fn new(store: &mut ParamStore, cfg: &LmConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.d;
        let es = cfg.embed_std;
        let out_std = 0.02 / (2.0 * cfg.layers as f64).sqrt();
        let acfg = AlignerConfig { d, d_v: cfg.d_v, max_t: cfg.max_t, out_std: cfg.aligner_out_std };
        Self {
            speaker: SpeakerEncoder::new(store, "lm.speaker", cfg.d_mel, cfg.d_spk, rng),
            spk_proj: Linear::init(store, "lm.spk_proj", cfg.d_spk, d, true, rng),
            text_emb: store.add_normal("lm.text", &[cfg.text_vocab, d], es, rng),
            tokens: DualTokenEmbedding::new(store, "lm.codec", cfg.codec_vocab, d, es, rng),
            null_audio: store.add_normal("lm.null_audio", &[1, d], es, rng),
            null_speech: store.add_normal("lm.null_speech", &[1, d], es, rng),
            bos: store.add_normal("lm.bos", &[1, d], es, rng),
            pos: store.add_normal("lm.pos", &[cfg.max_len(), d], es, rng),
            aligner: Aligner::new(store, "lm.aligner", &acfg, rng),
            blocks: (0..cfg.layers)
                .map(|l| TransformerBlock::new(store, &format!("lm.block{l}"), d, cfg.heads, cfg.d_ff, out_std, rng))
                .collect(),
            final_norm: RmsNorm::new(store, "lm.final_norm", d),
            head_audio: Linear::new(store, "lm.head_audio", d, cfg.codec_vocab, true, cfg.head_std, rng),
            head_speech: Linear::new(store, "lm.head_speech", d, cfg.codec_vocab, true, cfg.head_std, rng),
            cfg: cfg.clone(),
        }
    }

    fn check_ids(ids: &[u32], vocab: usize) -> Result<Vec<usize>> {
        ids.iter()
            .map(|&id| if (id as usize) < vocab { Ok(id as usize) } else { Err(Error::TokenOutOfRange { id, vocab }) })
            .collect()
    }

    fn stream_rows<S: Real>(&self, g: &mut Graph<'_, S>, ids: Option<&[u32]>, stream: Stream, t: usize) -> Result<Var> {
        match ids {
            Some(ids) => {
                if ids.len() != t {
                    return Err(Error::shape("lm input", format!("{stream:?} stream has {} tokens, video has {t}", ids.len())));
                }
                self.tokens.embed(g, ids, stream)
            }
            None => {
                let null = match stream {
                    Stream::Audio => self.null_audio,
                    Stream::Speech => self.null_speech,
                };
                let table = g.param(null);
                Ok(g.gather(table, &vec![0; t]))
            }
        }
    }

    /// Concatenates speaker row, text rows, BOS and `H_a + H_s`, then adds
    /// learned positions.
    pub fn build_sequence<S: Real>(
        &self,
        g: &mut Graph<'_, S>,
        spk_row: Var,
        text_rows: Option<Var>,
        fused: FusedStreams,
    ) -> (Var, SequenceLayout) {
        let l_text = text_rows.map_or(0, |v| g.rows(v));
        let t = g.rows(fused.h_a);
        let mm = g.add(fused.h_a, fused.h_s);
        let bos = g.param(self.bos);
        let mut parts = vec![spk_row];
        parts.extend(text_rows);
        parts.push(bos);
        parts.push(mm);
        let seq = g.concat_rows(&parts);
        let layout = SequenceLayout { l_text, t };
        let table = g.param(self.pos);
        let pos = g.slice_rows(table, 0, layout.total());
        (g.add(seq, pos), layout)
    }

    /// Causal pre-norm transformer stack followed by the final norm.
    pub fn forward_hidden<S: Real>(&self, g: &mut Graph<'_, S>, seq: Var) -> Result<Var> {
        let l = g.rows(seq);
        let mask = AttentionMask::causal(l, l);
        let mut x = seq;
        for b in &self.blocks {
            x = b.forward(g, x, &mask)?;
        }
        Ok(self.final_norm.forward(g, x))
    }

    pub fn dual_heads<S: Real>(&self, g: &mut Graph<'_, S>, hidden: Var, layout: &SequenceLayout) -> DualLogits {
        let rows = g.slice_rows(hidden, layout.logit_rows().start, layout.t);
        DualLogits { audio: self.head_audio.forward(g, rows), speech: self.head_speech.forward(g, rows) }
    }

    pub fn forward<S: Real>(&self, g: &mut Graph<'_, S>, input: &LmInput) -> Result<(DualLogits, SequenceLayout)> {
        let t = input.t();
        if t == 0 || t > self.cfg.max_t {
            return Err(Error::shape("lm input", format!("T = {t}, supported 1..={}", self.cfg.max_t)));
        }
        if input.text.len() > self.cfg.max_text {
            return Err(Error::shape("lm input", format!("{} text tokens exceed {}", input.text.len(), self.cfg.max_text)));
        }
        if input.video.cols() != self.cfg.d_v || input.speaker.shape() != [1, self.cfg.d_mel] {
            return Err(Error::shape("lm input", "video or speaker feature width"));
        }
        let spk = self.speaker.forward_mean(g, &input.speaker);
        let spk_row = self.spk_proj.forward(g, spk);
        let text_rows = if input.text.is_empty() {
            None
        } else {
            let idx = Self::check_ids(&input.text, self.cfg.text_vocab)?;
            let table = g.param(self.text_emb);
            Some(g.gather(table, &idx))
        };
        let e_a = self.stream_rows(g, input.audio.as_deref(), Stream::Audio, t)?;
        let e_s = self.stream_rows(g, input.speech.as_deref(), Stream::Speech, t)?;
        let video = g.input(&input.video);
        let fused = self.aligner.align(g, e_a, e_s, video)?;
        let (seq, layout) = self.build_sequence(g, spk_row, text_rows, fused);
        let hidden = self.forward_hidden(g, seq)?;
        Ok((self.dual_heads(g, hidden, &layout), layout))
    }

    /// Sum of the enabled heads' cross-entropies against the input streams
    /// (PAD targets ignored). Returns the loss and each enabled head's CE.
    pub fn teacher_forced_loss<S: Real>(
        &self,
        g: &mut Graph<'_, S>,
        input: &LmInput,
        heads: HeadMask,
    ) -> Result<(Var, Option<f64>, Option<f64>)> {
        let (logits, _) = self.forward(g, input)?;
        let mut total: Option<Var> = None;
        let mut parts = [None, None];
        for (i, (on, ids, var, task)) in [
            (heads.audio, input.audio.as_deref(), logits.audio, "audio head"),
            (heads.speech, input.speech.as_deref(), logits.speech, "speech head"),
        ]
        .into_iter()
        .enumerate()
        {
            if !on {
                continue;
            }
            let ids = ids.ok_or_else(|| Error::MissingField { field: if i == 0 { "audio_ids" } else { "speech_ids" }, task: task.into() })?;
            let (ce, _) = cross_entropy(g, var, ids, self.cfg.pad_id)?;
            parts[i] = Some(g.scalar(ce).as_f64());
            total = Some(match total {
                Some(t) => g.add(t, ce),
                None => ce,
            });
        }
        let total = match total {
            Some(t) => t,
            None => g.constant(Tensor::zeros([1])),
        };
        Ok((total, parts[0], parts[1]))
    }
}
