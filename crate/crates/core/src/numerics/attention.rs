use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::{Graph, Real, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    Causal,
    NonCausal,
    Custom,
}

/// Boolean visibility matrix `[queries × keys]`; `true` means the key is visible.
#[derive(Debug, Clone)]
pub struct AttentionMask {
    kind: MaskKind,
    queries: usize,
    keys: usize,
    allowed: Arc<[bool]>,
}

impl AttentionMask {
    /// Query `i` sees keys `j <= i`.
    pub fn causal(queries: usize, keys: usize) -> Self {
        let allowed = (0..queries * keys).map(|x| x % keys <= x / keys).collect();
        Self { kind: MaskKind::Causal, queries, keys, allowed }
    }

    pub fn non_causal(queries: usize, keys: usize) -> Self {
        Self { kind: MaskKind::NonCausal, queries, keys, allowed: vec![true; queries * keys].into() }
    }

    /// Arbitrary mask; every query row needs at least one visible key.
    pub fn custom(queries: usize, keys: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != queries * keys {
            return Err(Error::shape(
                "attention_mask",
                format!("{} entries for a {queries}x{keys} mask", allowed.len()),
            ));
        }
        let mask = Self { kind: MaskKind::Custom, queries, keys, allowed: allowed.into() };
        mask.check_rows()?;
        Ok(mask)
    }

    /// Every query sees the first `valid` keys only (key padding).
    pub fn key_padding(queries: usize, keys: usize, valid: usize) -> Result<Self> {
        Self::custom(queries, keys, (0..queries * keys).map(|x| x % keys < valid).collect())
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.queries, self.keys)
    }

    pub fn allowed(&self, q: usize, k: usize) -> bool {
        self.allowed[q * self.keys + k]
    }

    pub(crate) fn shared(&self) -> Arc<[bool]> {
        Arc::clone(&self.allowed)
    }

    fn check_rows(&self) -> Result<()> {
        for row in 0..self.queries {
            if !(0..self.keys).any(|k| self.allowed(row, k)) {
                return Err(Error::DegenerateMask { row });
            }
        }
        Ok(())
    }
}

/// `softmax(QKᵀ/√d, masked) · V` for `Q: [T_q, d]`, `K, V: [T_k, d]`.
pub fn masked_attention<S: Real>(
    g: &mut Graph<'_, S>,
    q: Var,
    k: Var,
    v: Var,
    mask: &AttentionMask,
) -> Result<Var> {
    let (tq, d) = (g.rows(q), g.cols(q));
    let (tk, dk) = (g.rows(k), g.cols(k));
    let (tv, dv) = (g.rows(v), g.cols(v));
    if g.shape(q).len() != 2 || g.shape(k).len() != 2 || g.shape(v).len() != 2 {
        return Err(Error::shape("masked_attention", "Q, K and V must be matrices"));
    }
    if dk != d || dv != d {
        return Err(Error::shape("masked_attention", format!("feature dims Q={d} K={dk} V={dv}")));
    }
    if tv != tk {
        return Err(Error::shape("masked_attention", format!("K has {tk} rows, V has {tv}")));
    }
    if mask.dims() != (tq, tk) {
        return Err(Error::shape(
            "masked_attention",
            format!("mask is {:?}, scores are {tq}x{tk}", mask.dims()),
        ));
    }
    mask.check_rows()?;

    let scores = g.matmul_bt(q, k);
    let scaled = g.scale(scores, S::lit(1.0 / (d as f64).sqrt()));
    let mask_arg = (mask.kind != MaskKind::NonCausal).then(|| mask.shared());
    let weights = g.softmax_rows(scaled, mask_arg);
    Ok(g.matmul(weights, v))
}

/// Attention weights only; used by tests and diagnostics.
pub fn attention_weights<S: Real>(
    g: &mut Graph<'_, S>,
    q: Var,
    k: Var,
    mask: &AttentionMask,
) -> Result<Var> {
    let d = g.cols(q);
    if g.cols(k) != d || mask.dims() != (g.rows(q), g.rows(k)) {
        return Err(Error::shape("attention_weights", "dimension mismatch"));
    }
    mask.check_rows()?;
    let scores = g.matmul_bt(q, k);
    let scaled = g.scale(scores, S::lit(1.0 / (d as f64).sqrt()));
    let mask_arg = (mask.kind != MaskKind::NonCausal).then(|| mask.shared());
    Ok(g.softmax_rows(scaled, mask_arg))
}
