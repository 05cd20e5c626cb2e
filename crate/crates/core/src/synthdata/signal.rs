//! Waveform rendering and spectral helpers.

use std::f32::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::world::{tone_amp, tone_bin, timbre, SAMPLES_PER_TOKEN, SAMPLE_RATE, TIMBRE_AMP};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoomTone {
    /// Frequency is `20 + 40·slot` Hz, between token bins.
    pub slot: usize,
    pub amp: f32,
}

fn add_tone(out: &mut [f32], freq_hz: f32, amp: f32, offset: usize) {
    let w = 2.0 * PI * freq_hz / SAMPLE_RATE as f32;
    for (n, o) in out.iter_mut().enumerate() {
        *o += amp * (w * (offset + n) as f32).sin();
    }
}

/// One frame per token; the tone phase restarts at every frame, which is
/// seamless because every token bin completes whole cycles per frame.
/// `speaker` adds the timbre partials used by speech.
pub fn render(tokens: &[u32], speaker: Option<u32>, room: &[RoomTone]) -> Vec<f32> {
    let mut wave = vec![0.0f32; tokens.len() * SAMPLES_PER_TOKEN];
    for (t, &id) in tokens.iter().enumerate() {
        let amp = tone_amp(id);
        if amp == 0.0 {
            continue;
        }
        let frame = &mut wave[t * SAMPLES_PER_TOKEN..(t + 1) * SAMPLES_PER_TOKEN];
        let bin = tone_bin(id);
        add_tone(frame, 40.0 * bin as f32, amp, 0);
        if let Some(spk) = speaker {
            let tb = timbre(spk);
            if tb & 1 == 1 {
                add_tone(frame, 40.0 * (bin + 1) as f32, TIMBRE_AMP, 0);
            }
            if tb & 2 == 2 && bin > 1 {
                add_tone(frame, 40.0 * (bin - 1) as f32, TIMBRE_AMP, 0);
            }
        }
    }
    for r in room {
        add_tone(&mut wave, 20.0 + 40.0 * r.slot as f32, r.amp, 0);
    }
    wave
}

/// Magnitude spectra of consecutive non-overlapping frames, keeping bins
/// `first_bin .. first_bin + n_bins`, optionally Hann-windowed, scaled by
/// `2 / frame_len`.
pub fn frame_spectra(wave: &[f32], frame_len: usize, first_bin: usize, n_bins: usize, hann: bool) -> Tensor {
    let n_frames = wave.len() / frame_len;
    let fft = FftPlanner::<f32>::new().plan_fft_forward(frame_len);
    let window: Vec<f32> = (0..frame_len)
        .map(|n| if hann { 0.5 - 0.5 * (2.0 * PI * n as f32 / frame_len as f32).cos() } else { 1.0 })
        .collect();
    let mut out = Vec::with_capacity(n_frames * n_bins);
    let mut buf = vec![Complex::new(0.0f32, 0.0); frame_len];
    for f in 0..n_frames {
        for (n, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(wave[f * frame_len + n] * window[n], 0.0);
        }
        fft.process(&mut buf);
        let scale = 2.0 / frame_len as f32;
        out.extend((first_bin..first_bin + n_bins).map(|k| buf[k].norm() * scale));
    }
    Tensor::new([n_frames, n_bins], out).unwrap()
}

/// Per-token-frame RMS.
pub fn rms_envelope(wave: &[f32]) -> Vec<f32> {
    wave.chunks(SAMPLES_PER_TOKEN)
        .map(|c| (c.iter().map(|x| x * x).sum::<f32>() / c.len() as f32).sqrt())
        .collect()
}

/// `‖x[f] − x[f−1]‖`, with 0 at the first frame.
pub fn difference_envelope(frames: &Tensor) -> Vec<f32> {
    (0..frames.rows())
        .map(|f| {
            if f == 0 {
                0.0
            } else {
                frames.row(f).iter().zip(frames.row(f - 1)).map(|(a, b)| (a - b).powi(2)).sum::<f32>().sqrt()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::world::{background_token, D_MEL};

    #[test]
    fn token_tone_lands_on_its_bin() {
        let id = background_token(2, 1);
        let wave = render(&[id], None, &[]);
        let spec = frame_spectra(&wave, SAMPLES_PER_TOKEN, 1, D_MEL, false);
        let peak = (0..D_MEL).max_by(|&a, &b| spec.row(0)[a].total_cmp(&spec.row(0)[b])).unwrap();
        assert_eq!(peak + 1, tone_bin(id));
        assert!((spec.row(0)[peak] - tone_amp(id)).abs() < 1e-4);
    }

    #[test]
    fn silent_tokens_render_silence() {
        assert!(render(&[0, 254, 255], None, &[]).iter().all(|&x| x == 0.0));
    }
}
