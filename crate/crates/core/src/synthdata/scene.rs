use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::signal::{frame_spectra, render, RoomTone};
use super::world::*;
use crate::error::{Error, Result};
use crate::frontend::{DualTokenStreams, VideoFeatureSeq};
use crate::numerics::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub onset_s: f64,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub duration_s: f64,
    pub events: Vec<Event>,
    pub speaker: u32,
    pub transcript: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalSample {
    pub spec: SceneSpec,
    /// Raw frames at [`VIDEO_FPS`].
    pub video: VideoFeatureSeq,
    /// Mel-like magnitude frames of a separate reference utterance by the
    /// same speaker, one per token frame.
    pub ref_mel: Tensor,
    pub tokens: DualTokenStreams,
    pub audio_wave: Vec<f32>,
    pub speech_wave: Vec<f32>,
    pub ambience: usize,
    pub room: Vec<RoomTone>,
}

impl MultimodalSample {
    pub fn text(&self) -> &str {
        &self.spec.transcript
    }

    pub fn speaker(&self) -> u32 {
        self.spec.speaker
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn onset_frames(&self) -> Vec<usize> {
        self.spec.events.iter().map(|e| onset_frame(e.onset_s)).collect()
    }
}

pub fn frames_for(duration_s: f64) -> usize {
    (duration_s * TOKEN_RATE as f64).round() as usize
}

fn onset_frame(onset_s: f64) -> usize {
    (onset_s * TOKEN_RATE as f64).round() as usize
}

/// Longest transcript whose speech track (lead-in, characters, EOS) fits.
pub fn max_transcript_len(t: usize) -> usize {
    t.saturating_sub(SPEECH_LEAD_IN + 1) / FRAMES_PER_CHAR
}

pub fn speech_tokens(transcript: &str, speaker: u32, t: usize) -> Result<Vec<u32>> {
    let mut out = vec![sil_token(speaker); SPEECH_LEAD_IN];
    for c in transcript.bytes() {
        let id = char_token(speaker, c)
            .ok_or_else(|| Error::InvalidArgument(format!("character {:?} outside the synthetic alphabet", c as char)))?;
        out.extend(std::iter::repeat_n(id, FRAMES_PER_CHAR));
    }
    out.push(SPEECH_EOS);
    if out.len() > t {
        return Err(Error::InvalidArgument(format!(
            "transcript of {} characters does not fit in {t} frames",
            transcript.len()
        )));
    }
    out.resize(t, PAD);
    Ok(out)
}

fn validate(spec: &SceneSpec) -> Result<usize> {
    if !(spec.duration_s > 0.0 && spec.duration_s.is_finite()) {
        return Err(Error::InvalidArgument(format!("duration {} s", spec.duration_s)));
    }
    let t = frames_for(spec.duration_s);
    if t < MOTIF_LEN {
        return Err(Error::InvalidArgument(format!("duration {} s is too short", spec.duration_s)));
    }
    if spec.events.is_empty() {
        return Err(Error::InvalidArgument("scene needs at least one event".into()));
    }
    for e in &spec.events {
        if !(0.0..spec.duration_s).contains(&e.onset_s) || onset_frame(e.onset_s) >= t {
            return Err(Error::InvalidArgument(format!("onset {} s outside [0, {})", e.onset_s, spec.duration_s)));
        }
        if e.class >= N_CLASSES {
            return Err(Error::InvalidArgument(format!("event class {} >= {N_CLASSES}", e.class)));
        }
    }
    if spec.transcript.is_empty() {
        return Err(Error::InvalidArgument("empty transcript".into()));
    }
    if spec.speaker as usize >= N_SPEAKERS {
        return Err(Error::InvalidArgument(format!("speaker {} >= {N_SPEAKERS}", spec.speaker)));
    }
    Ok(t)
}

fn reference_tokens(speaker: u32, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let n = frames_for(REFERENCE_SECONDS);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w = WORDS[rng.random_range(0..WORDS.len())];
        for c in w.bytes().chain(std::iter::once(b' ')) {
            let id = char_token(speaker, c).unwrap();
            out.extend(std::iter::repeat_n(id, FRAMES_PER_CHAR));
        }
    }
    out.truncate(n);
    out
}

/// Renders a reference utterance for `speaker` as mel-like frames.
pub fn reference_mel(speaker: u32, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let toks = reference_tokens(speaker, &mut rng);
    let wave = render(&toks, Some(speaker), &[]);
    frame_spectra(&wave, SAMPLES_PER_TOKEN, 1, D_MEL, false)
}

pub fn gen_scene(spec: &SceneSpec) -> Result<MultimodalSample> {
    let t = validate(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let ambience = rng.random_range(0..N_AMBIENCE);
    let mut slots: Vec<usize> = Vec::new();
    while slots.len() < 3 {
        let s = rng.random_range(0..32);
        if !slots.contains(&s) {
            slots.push(s);
        }
    }
    let room: Vec<RoomTone> = slots.into_iter().map(|slot| RoomTone { slot, amp: rng.random_range(0.01..0.03) }).collect();

    let mut audio: Vec<u32> = (0..t).map(|i| background_token(ambience, i)).collect();
    let mut events: Vec<(usize, usize)> = spec.events.iter().map(|e| (onset_frame(e.onset_s), e.class)).collect();
    events.sort_unstable();
    for &(o, c) in &events {
        for k in 0..MOTIF_LEN {
            if o + k < t {
                audio[o + k] = motif_token(c, k);
            }
        }
    }
    let speech = speech_tokens(&spec.transcript, spec.speaker, t)?;

    let pats = patterns();
    let n_video = t * VIDEO_STRIDE;
    let noise = Normal::new(0.0f32, 0.03).unwrap();
    let mut state = vec![0.0f32; D_V];
    let mut frames = Vec::with_capacity(n_video * D_V);
    for f in 0..n_video {
        for s in state.iter_mut() {
            *s = 0.9 * *s + noise.sample(&mut rng);
        }
        for d in 0..D_V {
            let mut x = pats.ambience[ambience][d] + state[d];
            for &(o, c) in &events {
                let start = o * VIDEO_STRIDE;
                if f >= start {
                    x += (-((f - start) as f32) / 2.0).exp() * pats.class[c][d];
                }
            }
            frames.push(x);
        }
    }
    let video = VideoFeatureSeq { frames: Tensor::new([n_video, D_V], frames)?, fps: VIDEO_FPS as f64 };

    let ref_mel = reference_mel(spec.speaker, rng.random());
    let audio_wave = render(&audio, None, &room);
    let speech_wave = render(&speech, Some(spec.speaker), &room);
    Ok(MultimodalSample {
        spec: spec.clone(),
        video,
        ref_mel,
        tokens: DualTokenStreams { audio_ids: audio, speech_ids: speech, rate_hz: TOKEN_RATE as f64 },
        audio_wave,
        speech_wave,
        ambience,
        room,
    })
}

/// Draws a valid scene: one to three events at least [`MIN_EVENT_GAP`]
/// frames apart, and a transcript of two or three words.
pub fn random_spec(seed: u64, speaker: u32, duration_s: f64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let t = frames_for(duration_s);
    let n_events = rng.random_range(1..=3usize);
    let lo = 2;
    let hi = t.saturating_sub(MOTIF_LEN + 1).max(lo + 1);
    let mut onsets: Vec<usize> = Vec::new();
    let mut tries = 0;
    while onsets.len() < n_events && tries < 1000 {
        tries += 1;
        let o = rng.random_range(lo..hi);
        if onsets.iter().all(|&p| p.abs_diff(o) >= MIN_EVENT_GAP) {
            onsets.push(o);
        }
    }
    onsets.sort_unstable();
    let events = onsets
        .into_iter()
        .map(|o| Event { onset_s: o as f64 / TOKEN_RATE as f64, class: rng.random_range(0..N_CLASSES) })
        .collect();
    let max_len = max_transcript_len(t).min(14);
    let transcript = loop {
        let n_words = rng.random_range(2..=3usize);
        let words: Vec<&str> = (0..n_words).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
        let s = words.join(" ");
        if s.len() <= max_len {
            break s;
        }
        if max_len < 5 {
            break WORDS[rng.random_range(0..WORDS.len())][..1].to_string();
        }
    };
    SceneSpec { seed, duration_s, events, speaker, transcript }
}
