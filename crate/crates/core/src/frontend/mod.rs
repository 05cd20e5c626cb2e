//! Modality frontends: text BPE, speaker pooling, dual codec token lookup
//! and video frame rate matching.

mod bpe;
mod speaker;
mod tokens;
mod video;

pub use bpe::{Bpe, TextTokenSeq};
pub use speaker::{crop_frames, mean_frames, SpeakerEmbedding, SpeakerEncoder};
pub use tokens::{DualTokenEmbedding, DualTokenStreams, Stream};
pub use video::{nearest_indices, resample_video, subsample_frames, take_rows, VideoFeatureSeq};
