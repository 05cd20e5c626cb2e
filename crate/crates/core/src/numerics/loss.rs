use crate::error::{Error, Result};
use crate::numerics::{Graph, Real, Var};

/// Token-level cross-entropy averaged over positions whose target is not
/// `ignore_id`. Returns the loss node and the number of contributing positions;
/// the loss is exactly zero when nothing contributes.
pub fn cross_entropy<S: Real>(
    g: &mut Graph<'_, S>,
    logits: Var,
    targets: &[u32],
    ignore_id: u32,
) -> Result<(Var, usize)> {
    let (rows, vocab) = (g.rows(logits), g.cols(logits));
    if targets.len() != rows {
        return Err(Error::shape(
            "cross_entropy",
            format!("{} targets for {rows} logit rows", targets.len()),
        ));
    }
    let mut resolved = Vec::with_capacity(rows);
    for &t in targets {
        if t == ignore_id {
            resolved.push(None);
        } else if (t as usize) < vocab {
            resolved.push(Some(t as usize));
        } else {
            return Err(Error::TokenOutOfRange { id: t, vocab });
        }
    }
    Ok(g.cross_entropy_raw(logits, resolved))
}
