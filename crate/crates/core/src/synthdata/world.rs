//! Fixed constants and shared random patterns of the synthetic world.

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const SAMPLE_RATE: usize = 2560;
pub const TOKEN_RATE: usize = 40;
pub const SAMPLES_PER_TOKEN: usize = SAMPLE_RATE / TOKEN_RATE;
pub const VIDEO_FPS: usize = 120;
pub const VIDEO_STRIDE: usize = VIDEO_FPS / TOKEN_RATE;
pub const D_V: usize = 64;
pub const D_MEL: usize = 32;
pub const N_CLASSES: usize = 8;
pub const N_SPEAKERS: usize = 16;
pub const N_AMBIENCE: usize = 6;
pub const N_TRAIN_SPEAKERS: usize = 12;
/// Reference utterances are longer than the 3 s speaker crop.
pub const REFERENCE_SECONDS: f64 = 4.0;
pub const SPEAKER_CROP_SECONDS: f64 = 3.0;

pub const CODEC_VOCAB: usize = 256;
pub const PAD: u32 = 0;
pub const AUDIO_EOS: u32 = 254;
pub const SPEECH_EOS: u32 = 255;
pub const MOTIF_LEN: usize = 4;
pub const MOTIF_AMPS: [f32; MOTIF_LEN] = [0.8, 0.5, 0.35, 0.25];
pub const BACKGROUND_AMP: f32 = 0.1;
pub const SPEECH_AMP: f32 = 0.5;
pub const TIMBRE_AMP: f32 = 0.08;
/// Frames of silence before the first character.
pub const SPEECH_LEAD_IN: usize = 2;
pub const FRAMES_PER_CHAR: usize = 2;
/// Minimum gap between event onsets, in token frames.
pub const MIN_EVENT_GAP: usize = 5;

pub const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz ";
const SIL_INDEX: u32 = ALPHABET.len() as u32;
const REGISTER_SPAN: u32 = SIL_INDEX + 1;
pub const N_REGISTERS: u32 = 4;

pub const WORDS: &[&str] = &[
    "go", "run", "stop", "look", "wait", "come", "help", "yes", "no", "here", "now", "home", "fire", "door", "rain",
    "wind", "bird", "dog", "cat", "car", "boat", "ship", "sea", "sky",
];

pub fn background_token(ambience: usize, t: usize) -> u32 {
    (8 + 4 * ambience + t % 4) as u32
}

pub fn motif_token(class: usize, k: usize) -> u32 {
    (32 + 4 * class + k) as u32
}

pub fn register(speaker: u32) -> u32 {
    speaker % N_REGISTERS
}

pub fn timbre(speaker: u32) -> u32 {
    speaker / N_REGISTERS
}

pub fn char_token(speaker: u32, c: u8) -> Option<u32> {
    let idx = ALPHABET.iter().position(|&a| a == c)? as u32;
    Some(128 + REGISTER_SPAN * register(speaker) + idx)
}

pub fn sil_token(speaker: u32) -> u32 {
    128 + REGISTER_SPAN * register(speaker) + SIL_INDEX
}

/// Frequency bin (multiple of 40 Hz) of a token's tone.
pub fn tone_bin(id: u32) -> usize {
    1 + (id % 31) as usize
}

/// Amplitude of a token's tone; zero for silent tokens.
pub fn tone_amp(id: u32) -> f32 {
    match id {
        8..=31 => BACKGROUND_AMP,
        32..=63 => MOTIF_AMPS[((id - 32) % 4) as usize],
        128..=239 if (id - 128) % REGISTER_SPAN != SIL_INDEX => SPEECH_AMP,
        _ => 0.0,
    }
}

pub fn is_speech_voiced(id: u32) -> bool {
    (128..240).contains(&id) && (id - 128) % REGISTER_SPAN != SIL_INDEX
}

pub struct Patterns {
    pub ambience: Vec<Vec<f32>>,
    pub class: Vec<Vec<f32>>,
}

const WORLD_SEED: u64 = 0x5eed_d0b;

pub fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(WORLD_SEED);
        let amb = Normal::new(0.0f32, 0.5).unwrap();
        let cls = Normal::new(0.0f32, 1.0).unwrap();
        Patterns {
            ambience: (0..N_AMBIENCE).map(|_| (0..D_V).map(|_| amb.sample(&mut rng)).collect()).collect(),
            class: (0..N_CLASSES).map(|_| (0..D_V).map(|_| cls.sample(&mut rng)).collect()).collect(),
        }
    })
}
