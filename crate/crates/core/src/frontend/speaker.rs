//! Reference-speech conditioning: a random crop of mel frames, averaged over
//! time and linearly projected.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::nn::Linear;
use crate::numerics::{Graph, ParamStore, Real, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbedding {
    pub vector: Vec<f32>,
}

impl SpeakerEmbedding {
    pub fn zero(d: usize) -> Self {
        Self { vector: vec![0.0; d] }
    }

    pub fn is_zero(&self) -> bool {
        self.vector.iter().all(|&x| x == 0.0)
    }

    pub fn cosine(&self, other: &Self) -> f64 {
        let dot: f64 = self.vector.iter().zip(&other.vector).map(|(&a, &b)| a as f64 * b as f64).sum();
        let na: f64 = self.vector.iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = other.vector.iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt();
        dot / (na * nb).max(1e-12)
    }
}

/// Contiguous crop of `crop_len` frames starting uniformly at random; the
/// full sequence when it is not longer than `crop_len`.
pub fn crop_frames(mel: &Tensor, crop_len: usize, rng: &mut impl Rng) -> Tensor {
    let n = mel.rows();
    if n <= crop_len {
        return mel.clone();
    }
    let start = rng.random_range(0..=n - crop_len);
    let c = mel.cols();
    Tensor::new([crop_len, c], mel.data()[start * c..(start + crop_len) * c].to_vec()).unwrap()
}

/// Per-dimension mean over frames, as a `[1, d_mel]` tensor.
pub fn mean_frames(mel: &Tensor) -> Result<Tensor> {
    let (f, c) = (mel.rows(), mel.cols());
    if f == 0 {
        return Err(Error::Empty("speaker reference frames"));
    }
    let mut acc = vec![0.0f64; c];
    for i in 0..f {
        for (a, &x) in acc.iter_mut().zip(mel.row(i)) {
            *a += x as f64;
        }
    }
    Ok(Tensor::from_fn([1, c], |j| (acc[j] / f as f64) as f32))
}

#[derive(Debug, Clone)]
pub struct SpeakerEncoder {
    pub proj: Linear,
}

impl SpeakerEncoder {
    /// Bias-free so that a silent reference maps to the zero vector.
    pub fn new(store: &mut ParamStore, name: &str, d_mel: usize, d_spk: usize, rng: &mut impl Rng) -> Self {
        Self { proj: Linear::init(store, name, d_mel, d_spk, false, rng) }
    }

    pub fn forward_mean<S: Real>(&self, g: &mut Graph<'_, S>, mean: &Tensor) -> Var {
        let m = g.input(mean);
        self.proj.forward(g, m)
    }

    pub fn forward<S: Real>(&self, g: &mut Graph<'_, S>, mel: &Tensor) -> Result<Var> {
        let mean = mean_frames(mel)?;
        Ok(self.forward_mean(g, &mean))
    }

    pub fn embed(&self, store: &ParamStore, mel: &Tensor) -> Result<SpeakerEmbedding> {
        let mut g = Graph::new(store);
        let v = self.forward(&mut g, mel)?;
        Ok(SpeakerEmbedding { vector: g.value(v).to_vec() })
    }
}
