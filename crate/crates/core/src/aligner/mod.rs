//! Four-block cross-modal aligner: audio and speech attend causally to
//! each other and non-causally to the video, and each stream keeps a
//! residual path.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::nn::Linear;
use crate::numerics::{masked_attention, AttentionMask, Graph, ParamId, ParamStore, Real, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignerConfig {
    pub d: usize,
    pub d_v: usize,
    /// Longest sequence the positional tables cover.
    pub max_t: usize,
    /// Init std of each block's output projection; zero gives an exact
    /// residual identity at init.
    pub out_std: f64,
}

/// Single-head cross attention with its own projections. Learned absolute
/// positions are added to the query and key inputs (not the values).
#[derive(Debug, Clone)]
pub struct CrossBlock {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub pos_q: ParamId,
    pub pos_k: ParamId,
    pub causal: bool,
}

impl CrossBlock {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &AlignerConfig, causal: bool, rng: &mut impl Rng) -> Self {
        let d = cfg.d;
        Self {
            wq: Linear::init(store, &format!("{name}.q"), d, d, false, rng),
            wk: Linear::init(store, &format!("{name}.k"), d, d, false, rng),
            wv: Linear::init(store, &format!("{name}.v"), d, d, false, rng),
            wo: Linear::new(store, &format!("{name}.o"), d, d, true, cfg.out_std, rng),
            pos_q: store.add_normal(format!("{name}.pos_q"), &[cfg.max_t, d], 0.5, rng),
            pos_k: store.add_normal(format!("{name}.pos_k"), &[cfg.max_t, d], 0.5, rng),
            causal,
        }
    }

    /// Attention output (no residual). `k_positions` gives the positional
    /// row attached to each key/value row.
    pub fn attend<S: Real>(&self, g: &mut Graph<'_, S>, query: Var, kv: Var, k_positions: &[usize]) -> Result<Var> {
        let (tq, tk) = (g.rows(query), g.rows(kv));
        if k_positions.len() != tk {
            return Err(Error::shape("cross attention", format!("{} key positions for {tk} keys", k_positions.len())));
        }
        let max_t = g.store().get(self.pos_q).rows();
        if tq > max_t || k_positions.iter().any(|&p| p >= max_t) {
            return Err(Error::shape("cross attention", format!("sequence longer than positional table ({max_t})")));
        }
        let pq_table = g.param(self.pos_q);
        let pq = g.slice_rows(pq_table, 0, tq);
        let pk_table = g.param(self.pos_k);
        let pk = g.gather(pk_table, k_positions);
        let qi = g.add(query, pq);
        let ki = g.add(kv, pk);
        let q = self.wq.forward(g, qi);
        let k = self.wk.forward(g, ki);
        let v = self.wv.forward(g, kv);
        let mask = if self.causal { AttentionMask::causal(tq, tk) } else { AttentionMask::non_causal(tq, tk) };
        let a = masked_attention(g, q, k, v, &mask)?;
        Ok(self.wo.forward(g, a))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FusedStreams {
    pub h_a: Var,
    pub h_s: Var,
}

#[derive(Debug, Clone)]
pub struct Aligner {
    pub video_proj: Linear,
    pub audio_from_speech: CrossBlock,
    pub speech_from_audio: CrossBlock,
    pub audio_from_video: CrossBlock,
    pub speech_from_video: CrossBlock,
}

fn same_len(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("sequence lengths {a} and {b} differ")));
    }
    Ok(())
}

impl Aligner {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &AlignerConfig, rng: &mut impl Rng) -> Self {
        Self {
            video_proj: Linear::init(store, &format!("{name}.video"), cfg.d_v, cfg.d, true, rng),
            audio_from_speech: CrossBlock::new(store, &format!("{name}.a_s"), cfg, true, rng),
            speech_from_audio: CrossBlock::new(store, &format!("{name}.s_a"), cfg, true, rng),
            audio_from_video: CrossBlock::new(store, &format!("{name}.a_v"), cfg, false, rng),
            speech_from_video: CrossBlock::new(store, &format!("{name}.s_v"), cfg, false, rng),
        }
    }

    /// `query_stream[t]` sees `kv_stream[0..=t]`.
    pub fn causal_cross<S: Real>(&self, g: &mut Graph<'_, S>, block: &CrossBlock, query: Var, kv: Var) -> Result<Var> {
        same_len("causal_cross", g.rows(query), g.rows(kv))?;
        let pos: Vec<usize> = (0..g.rows(kv)).collect();
        block.attend(g, query, kv, &pos)
    }

    /// Every stream position sees every (projected) video position.
    pub fn noncausal_cross<S: Real>(&self, g: &mut Graph<'_, S>, block: &CrossBlock, stream: Var, video: Var) -> Result<Var> {
        same_len("noncausal_cross", g.rows(stream), g.rows(video))?;
        let pos: Vec<usize> = (0..g.rows(video)).collect();
        block.attend(g, stream, video, &pos)
    }

    /// `H_a = E_a + cross(E_a←E_s) + cross(E_a←V)`, symmetrically for `H_s`.
    /// `video` holds raw `[T, d_v]` features.
    pub fn align<S: Real>(&self, g: &mut Graph<'_, S>, e_a: Var, e_s: Var, video: Var) -> Result<FusedStreams> {
        same_len("align", g.rows(e_a), g.rows(e_s))?;
        same_len("align", g.rows(e_a), g.rows(video))?;
        let v = self.video_proj.forward(g, video);
        let a_s = self.causal_cross(g, &self.audio_from_speech, e_a, e_s)?;
        let a_v = self.noncausal_cross(g, &self.audio_from_video, e_a, v)?;
        let s_a = self.causal_cross(g, &self.speech_from_audio, e_s, e_a)?;
        let s_v = self.noncausal_cross(g, &self.speech_from_video, e_s, v)?;
        let h_a = g.add(e_a, a_s);
        let h_a = g.add(h_a, a_v);
        let h_s = g.add(e_s, s_a);
        let h_s = g.add(h_s, s_v);
        Ok(FusedStreams { h_a, h_s })
    }
}
