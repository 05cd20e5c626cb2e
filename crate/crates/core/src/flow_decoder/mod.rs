//! Token-to-waveform decoding: a frame-wise toy VAE defines the latent
//! space, and a flow-matching network transports interpolated token
//! embeddings to VAE latents along straight paths.

mod net;
mod vae;
pub mod wav;

pub use net::{flow_train, recovery_error, time_embedding, FlowConfig, FlowLog, FlowNet};
pub use vae::{frame_wave, vae_train, ToyVae, VaeConfig, VaeLog, MIN_VAE_WAVES};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Real, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct LatentSeq {
    /// `[L_lat, d_lat]`
    pub z: Tensor,
    pub rate_hz: f64,
}

/// `(1−t)·z0 + t·z1`.
pub fn interpolate(z0: &Tensor, z1: &Tensor, t: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("interpolation time {t} outside [0, 1]")));
    }
    if z0.shape() != z1.shape() {
        return Err(Error::shape("interpolate", format!("{:?} vs {:?}", z0.shape(), z1.shape())));
    }
    let (a, b) = ((1.0 - t) as f32, t as f32);
    Tensor::new(z0.shape().to_vec(), z0.data().iter().zip(z1.data()).map(|(x, y)| a * x + b * y).collect())
}

/// Mean over the batch of `‖v(z_t, t) − (z1 − z0)‖²` (squared Frobenius
/// norm), with `z_t` on the straight path. `v` maps `(z_t, t)` to a
/// velocity of the same shape.
pub fn fm_loss<S: Real, F>(g: &mut Graph<'_, S>, mut v: F, batch: &[(Var, Var)], ts: &[f64]) -> Result<Var>
where
    F: FnMut(&mut Graph<'_, S>, Var, f64) -> Result<Var>,
{
    if batch.is_empty() || batch.len() != ts.len() {
        return Err(Error::InvalidArgument(format!("{} pairs but {} times", batch.len(), ts.len())));
    }
    let mut total: Option<Var> = None;
    for (&(z0, z1), &t) in batch.iter().zip(ts) {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidArgument(format!("flow time {t} outside [0, 1]")));
        }
        if g.shape(z0) != g.shape(z1) {
            return Err(Error::shape("fm_loss", "z0 and z1 differ in shape"));
        }
        let a = g.scale(z0, S::lit(1.0 - t));
        let b = g.scale(z1, S::lit(t));
        let zt = g.add(a, b);
        let target = g.sub(z1, z0);
        let pred = v(g, zt, t)?;
        if g.shape(pred) != g.shape(target) {
            return Err(Error::shape("fm_loss", "velocity shape differs from latent shape"));
        }
        let d = g.sub(pred, target);
        let sq = g.mul(d, d);
        let s = g.sum(sq);
        total = Some(match total {
            Some(acc) => g.add(acc, s),
            None => s,
        });
    }
    Ok(g.scale(total.unwrap(), S::lit(1.0 / batch.len() as f64)))
}

/// Explicit Euler from `t = 0` to `t = 1`: `z ← z + v(z, k/n)/n`.
pub fn integrate<F>(mut v: F, z0: &Tensor, n_steps: usize) -> Result<Tensor>
where
    F: FnMut(&Tensor, f64) -> Result<Tensor>,
{
    if n_steps == 0 {
        return Err(Error::InvalidArgument("Euler integration needs at least one step".into()));
    }
    let h = 1.0 / n_steps as f64;
    let mut z = z0.clone();
    for k in 0..n_steps {
        let vel = v(&z, k as f64 * h)?;
        if vel.shape() != z.shape() {
            return Err(Error::shape("integrate", "velocity shape differs from state shape"));
        }
        for (x, dv) in z.data_mut().iter_mut().zip(vel.data()) {
            *x += (h * *dv as f64) as f32;
        }
        if !z.is_finite() {
            return Err(Error::NonFinite(format!("Euler state at step {k}")));
        }
    }
    Ok(z)
}

/// Runs the frozen VAE decoder on recovered latents.
pub fn decode_waveform(z: &LatentSeq, vae: &ToyVae) -> Result<Vec<f32>> {
    vae.decode(z)
}
