//! Small layer library shared by the language model, the contrastive
//! encoder and the velocity network.

use rand::Rng;

use crate::error::Result;
use crate::numerics::{masked_attention, AttentionMask, Graph, ParamId, ParamStore, Real, Var};

pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore<f32>,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        std: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.add_normal(format!("{name}.w"), &[d_in, d_out], std, rng);
        let b = bias.then(|| store.add_const(format!("{name}.b"), &[d_out], 0.0));
        Self { w, b, d_in, d_out }
    }

    /// Default init: N(0, 1/d_in).
    pub fn init(
        store: &mut ParamStore<f32>,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        Self::new(store, name, d_in, d_out, bias, (1.0 / d_in as f64).sqrt(), rng)
    }

    pub fn forward<S: Real>(&self, g: &mut Graph<'_, S>, x: Var) -> Var {
        let w = g.param(self.w);
        let y = g.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RmsNorm {
    pub gamma: ParamId,
}

impl RmsNorm {
    pub fn new(store: &mut ParamStore<f32>, name: &str, d: usize) -> Self {
        Self { gamma: store.add_const(format!("{name}.gamma"), &[d], 1.0) }
    }

    pub fn forward<S: Real>(&self, g: &mut Graph<'_, S>, x: Var) -> Var {
        let gamma = g.param(self.gamma);
        g.rms_norm(x, gamma, NORM_EPS)
    }
}

/// Multi-head attention where queries and keys/values may come from
/// different sequences.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub n_heads: usize,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore<f32>,
        name: &str,
        d: usize,
        n_heads: usize,
        out_std: f64,
        rng: &mut impl Rng,
    ) -> Self {
        assert_eq!(d % n_heads, 0, "model dim must divide into heads");
        Self {
            wq: Linear::init(store, &format!("{name}.q"), d, d, false, rng),
            wk: Linear::init(store, &format!("{name}.k"), d, d, false, rng),
            wv: Linear::init(store, &format!("{name}.v"), d, d, false, rng),
            wo: Linear::new(store, &format!("{name}.o"), d, d, true, out_std, rng),
            n_heads,
        }
    }

    /// `q_in` feeds the query projection, `k_in` the key projection and
    /// `v_in` the value projection.
    pub fn forward<S: Real>(
        &self,
        g: &mut Graph<'_, S>,
        q_in: Var,
        k_in: Var,
        v_in: Var,
        mask: &AttentionMask,
    ) -> Result<Var> {
        let q = self.wq.forward(g, q_in);
        let k = self.wk.forward(g, k_in);
        let v = self.wv.forward(g, v_in);
        let d = g.cols(q);
        let dh = d / self.n_heads;
        let heads = if self.n_heads == 1 {
            masked_attention(g, q, k, v, mask)?
        } else {
            let mut outs = Vec::with_capacity(self.n_heads);
            for h in 0..self.n_heads {
                let qh = g.slice_cols(q, h * dh, dh);
                let kh = g.slice_cols(k, h * dh, dh);
                let vh = g.slice_cols(v, h * dh, dh);
                outs.push(masked_attention(g, qh, kh, vh, mask)?);
            }
            g.concat_cols(&outs)
        };
        Ok(self.wo.forward(g, heads))
    }
}

/// Pre-norm transformer block: `x + attn(norm(x))`, then `x + ffn(norm(x))`.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub norm1: RmsNorm,
    pub attn: MultiHeadAttention,
    pub norm2: RmsNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

impl TransformerBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore<f32>,
        name: &str,
        d: usize,
        n_heads: usize,
        d_ff: usize,
        out_std: f64,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            norm1: RmsNorm::new(store, &format!("{name}.norm1"), d),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), d, n_heads, out_std, rng),
            norm2: RmsNorm::new(store, &format!("{name}.norm2"), d),
            ff1: Linear::init(store, &format!("{name}.ff1"), d, d_ff, true, rng),
            ff2: Linear::new(store, &format!("{name}.ff2"), d_ff, d, true, out_std, rng),
        }
    }

    pub fn forward<S: Real>(&self, g: &mut Graph<'_, S>, x: Var, mask: &AttentionMask) -> Result<Var> {
        let h = self.norm1.forward(g, x);
        let a = self.attn.forward(g, h, h, h, mask)?;
        let x = g.add(x, a);
        let h = self.norm2.forward(g, x);
        let h = self.ff1.forward(g, h);
        let h = g.gelu(h);
        let h = self.ff2.forward(g, h);
        Ok(g.add(x, h))
    }
}
