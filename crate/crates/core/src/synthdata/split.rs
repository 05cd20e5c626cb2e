use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scene::{random_spec, SceneSpec};
use super::world::{N_SPEAKERS, N_TRAIN_SPEAKERS};

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<SceneSpec>,
    pub eval: Vec<SceneSpec>,
}

/// Train scenes use speakers `0..12`, eval scenes `12..16`; every scene has
/// its own seed.
pub fn gen_split(n_train: usize, n_eval: usize, seed: u64, duration_s: f64) -> Split {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used = HashSet::new();
    let mut fresh = || loop {
        let s: u64 = rng.random();
        if used.insert(s) {
            return s;
        }
    };
    let n_eval_speakers = N_SPEAKERS - N_TRAIN_SPEAKERS;
    let train = (0..n_train)
        .map(|i| random_spec(fresh(), (i % N_TRAIN_SPEAKERS) as u32, duration_s))
        .collect();
    let eval = (0..n_eval)
        .map(|i| random_spec(fresh(), (N_TRAIN_SPEAKERS + i % n_eval_speakers) as u32, duration_s))
        .collect();
    Split { train, eval }
}
