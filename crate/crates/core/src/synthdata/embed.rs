//! Fixed stand-in feature extractors for the distribution metrics and the
//! contrastive audio/speech model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::signal::frame_spectra;
use super::world::{D_MEL, SAMPLES_PER_TOKEN};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedderRole {
    PannsLike,
    VggishLike,
    ClassifierLike,
}

pub const CASP_FRAME: usize = 256;
pub const CASP_BINS: usize = 128;
pub const CLASSIFIER_CLASSES: usize = 8;

fn projection(seed: u64, rows: usize, cols: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0f32, (1.0 / rows as f32).sqrt()).unwrap();
    (0..rows * cols).map(|_| n.sample(&mut rng)).collect()
}

fn mean_std_of_projection(spec: &Tensor, proj: &[f32], out_dim: usize, log: bool) -> Vec<f64> {
    let (f, c) = (spec.rows(), spec.cols());
    let mut rows = Vec::with_capacity(f);
    for i in 0..f {
        let x = spec.row(i);
        let v: Vec<f64> = (0..out_dim)
            .map(|o| {
                (0..c)
                    .map(|k| {
                        let xv = if log { (1e-4 + x[k] as f64).ln() } else { x[k] as f64 };
                        xv * proj[k * out_dim + o] as f64
                    })
                    .sum()
            })
            .collect();
        rows.push(v);
    }
    let mut out = vec![0.0; 2 * out_dim];
    for o in 0..out_dim {
        let mean = rows.iter().map(|r| r[o]).sum::<f64>() / f as f64;
        let var = rows.iter().map(|r| (r[o] - mean).powi(2)).sum::<f64>() / f as f64;
        out[o] = mean;
        out[out_dim + o] = var.sqrt();
    }
    out
}

/// Embedding vectors for the two embedding roles, a class posterior for
/// the classifier role.
pub fn standin_embed(wave: &[f32], role: EmbedderRole) -> Result<Vec<f64>> {
    if wave.len() < CASP_FRAME {
        return Err(Error::Empty("stand-in embedder input shorter than one analysis frame"));
    }
    Ok(match role {
        EmbedderRole::PannsLike => {
            let spec = frame_spectra(wave, SAMPLES_PER_TOKEN, 1, D_MEL, false);
            mean_std_of_projection(&spec, &projection(101, D_MEL, 8), 8, true)
        }
        EmbedderRole::VggishLike => {
            let spec = frame_spectra(wave, CASP_FRAME, 0, CASP_BINS, true);
            mean_std_of_projection(&spec, &projection(202, CASP_BINS, 6), 6, true)
        }
        EmbedderRole::ClassifierLike => {
            let spec = frame_spectra(wave, SAMPLES_PER_TOKEN, 1, D_MEL, false);
            let per = D_MEL / CLASSIFIER_CLASSES;
            let mut energy = vec![0.0f64; CLASSIFIER_CLASSES];
            for i in 0..spec.rows() {
                for (k, &m) in spec.row(i).iter().enumerate() {
                    energy[k / per] += (m as f64).powi(2);
                }
            }
            let total: f64 = energy.iter().sum::<f64>() + 1e-12;
            let logits: Vec<f64> = energy.iter().map(|e| 8.0 * e / total).collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / z).collect()
        }
    })
}

/// Log-magnitude spectra of 256-sample Hann frames (10 frames per second).
pub fn casp_features(wave: &[f32]) -> Tensor {
    let mut spec = frame_spectra(wave, CASP_FRAME, 0, CASP_BINS, true);
    for x in spec.data_mut() {
        *x = (1e-4 + *x).ln();
    }
    spec
}
