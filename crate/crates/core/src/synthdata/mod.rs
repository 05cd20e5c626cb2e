//! Deterministic synthetic paired data: video features with event bumps,
//! background audio with event motifs, per-character speech, rendered
//! waveforms, reference speech and stand-in feature extractors.

mod embed;
mod scene;
mod signal;
mod split;
pub mod world;

pub use embed::{casp_features, standin_embed, EmbedderRole, CASP_BINS, CASP_FRAME, CLASSIFIER_CLASSES};
pub use scene::{
    frames_for, gen_scene, max_transcript_len, random_spec, reference_mel, speech_tokens, Event, MultimodalSample,
    SceneSpec,
};
pub use signal::{difference_envelope, frame_spectra, render, rms_envelope, RoomTone};
pub use split::{gen_split, Split};

use crate::frontend::{subsample_frames, VideoFeatureSeq};

/// Video at the token rate.
pub fn token_rate_video(video: &VideoFeatureSeq) -> VideoFeatureSeq {
    subsample_frames(video, world::VIDEO_STRIDE)
}

/// All training transcripts plus the fixed prompt, for fitting the text
/// tokenizer.
pub fn text_corpus(specs: &[SceneSpec], extra: &[&str]) -> Vec<String> {
    specs.iter().map(|s| s.transcript.clone()).chain(extra.iter().map(|s| s.to_string())).collect()
}
