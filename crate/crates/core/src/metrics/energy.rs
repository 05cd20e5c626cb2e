use crate::error::{Error, Result};

pub const ENERGY_FLOOR: f64 = 1e-12;
pub const DEFAULT_THRESHOLD_DB: f64 = -40.0;

/// `10·log10(mean(w²) + 1e-12)`, in dB relative to full scale.
pub fn energy_db(wave: &[f32]) -> Result<f64> {
    if wave.is_empty() {
        return Err(Error::Empty("waveform"));
    }
    let ms = wave.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>() / wave.len() as f64;
    Ok(10.0 * (ms + ENERGY_FLOOR).log10())
}

/// A pair is kept unless one track is strictly below the threshold.
pub fn keep_energies(audio_db: f64, speech_db: f64, threshold_db: f64) -> bool {
    !(audio_db < threshold_db || speech_db < threshold_db)
}

pub fn filter_pair(audio: &[f32], speech: &[f32], threshold_db: f64) -> Result<bool> {
    Ok(keep_energies(energy_db(audio)?, energy_db(speech)?, threshold_db))
}
