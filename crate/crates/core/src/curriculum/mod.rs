//! Three-stage curriculum: V2A, then V2A+TTS, then V2A+TTS+V2ST, with
//! task-specific input masking and per-head loss masking.

mod trainer;

pub use trainer::{forgetting_probe, run_stage, StageData, StageLog, StageOutcome, StepLog, TaskSampler};

use std::collections::BTreeMap;
use std::fmt;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dual_lm::{HeadMask, LmInput, LmModel};
use crate::error::{Error, Result};
use crate::frontend::{crop_frames, mean_frames, resample_video, Bpe};
use crate::numerics::{Graph, Real, Tensor, Var};
use crate::synthdata::world::{SPEAKER_CROP_SECONDS, TOKEN_RATE, WORDS};
use crate::synthdata::{token_rate_video, MultimodalSample};

pub const V2A_PROMPT: &str = "Generate audio for the video.";
pub const TEXT_VOCAB: usize = 320;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    V2A,
    TTS,
    V2ST,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::V2A => "V2A",
            TaskKind::TTS => "TTS",
            TaskKind::V2ST => "V2ST",
        })
    }
}

impl TaskKind {
    pub fn allowed_in(stage: u8) -> &'static [TaskKind] {
        match stage {
            1 => &[TaskKind::V2A],
            2 => &[TaskKind::V2A, TaskKind::TTS],
            _ => &[TaskKind::V2A, TaskKind::TTS, TaskKind::V2ST],
        }
    }

    pub fn heads(self) -> HeadMask {
        match self {
            TaskKind::V2A => HeadMask { audio: true, speech: false },
            TaskKind::TTS => HeadMask { audio: false, speech: true },
            TaskKind::V2ST => HeadMask { audio: true, speech: true },
        }
    }
}

/// Text tokenizer fitted on every two-word phrase of the synthetic
/// vocabulary plus the V2A prompt. Independent of any seed.
pub fn standard_tokenizer() -> Bpe {
    let mut corpus: Vec<String> = Vec::new();
    for a in WORDS {
        for b in WORDS {
            corpus.push(format!("{a} {b}"));
        }
    }
    corpus.push(V2A_PROMPT.to_string());
    Bpe::train(&corpus, TEXT_VOCAB).expect("non-empty corpus")
}

/// A training example; any field may be absent for single-task corpora.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub id: String,
    /// `[T, d_v]` at the token rate.
    pub video: Option<Tensor>,
    pub transcript: Option<String>,
    pub ref_mel: Option<Tensor>,
    pub audio_ids: Option<Vec<u32>>,
    pub speech_ids: Option<Vec<u32>>,
}

impl TrainItem {
    pub fn from_sample(id: impl Into<String>, s: &MultimodalSample) -> Self {
        let video = resample_video(&token_rate_video(&s.video), s.len());
        Self {
            id: id.into(),
            video: Some(video),
            transcript: Some(s.spec.transcript.clone()),
            ref_mel: Some(s.ref_mel.clone()),
            audio_ids: Some(s.tokens.audio_ids.clone()),
            speech_ids: Some(s.tokens.speech_ids.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedModelInput {
    pub task: TaskKind,
    pub input: LmInput,
    pub heads: HeadMask,
}

fn need<'a, T>(v: &'a Option<T>, field: &'static str, task: TaskKind) -> Result<&'a T> {
    v.as_ref().ok_or(Error::MissingField { field, task: task.to_string() })
}

/// Speaker crop length in reference frames.
pub fn speaker_crop_frames() -> usize {
    (SPEAKER_CROP_SECONDS * TOKEN_RATE as f64).round() as usize
}

/// Applies the task's conditioning rules. With `crop_rng` the speaker crop
/// starts at a random frame; otherwise at frame 0.
pub fn mask_for_task(
    item: &TrainItem,
    task: TaskKind,
    tok: &Bpe,
    d_v: usize,
    d_mel: usize,
    crop_rng: Option<&mut ChaCha8Rng>,
) -> Result<MaskedModelInput> {
    let zero_spk = Tensor::zeros([1, d_mel]);
    let spk_mean = |rng: Option<&mut ChaCha8Rng>| -> Result<Tensor> {
        let mel = need(&item.ref_mel, "ref_mel", task)?;
        let crop = match rng {
            Some(rng) => crop_frames(mel, speaker_crop_frames(), rng),
            None => first_crop(mel),
        };
        mean_frames(&crop)
    };
    let input = match task {
        TaskKind::V2A => LmInput {
            video: need(&item.video, "video", task)?.clone(),
            text: tok.encode(V2A_PROMPT.as_bytes()).ids,
            speaker: zero_spk,
            audio: Some(need(&item.audio_ids, "audio_ids", task)?.clone()),
            speech: None,
        },
        TaskKind::TTS => {
            let speech = need(&item.speech_ids, "speech_ids", task)?.clone();
            LmInput {
                video: Tensor::zeros([speech.len(), d_v]),
                text: tok.encode(need(&item.transcript, "transcript", task)?.as_bytes()).ids,
                speaker: spk_mean(crop_rng)?,
                audio: None,
                speech: Some(speech),
            }
        }
        TaskKind::V2ST => LmInput {
            video: need(&item.video, "video", task)?.clone(),
            text: tok.encode(need(&item.transcript, "transcript", task)?.as_bytes()).ids,
            speaker: spk_mean(crop_rng)?,
            audio: Some(need(&item.audio_ids, "audio_ids", task)?.clone()),
            speech: Some(need(&item.speech_ids, "speech_ids", task)?.clone()),
        },
    };
    Ok(MaskedModelInput { task, input, heads: task.heads() })
}

fn first_crop(mel: &Tensor) -> Tensor {
    let n = speaker_crop_frames().min(mel.rows());
    Tensor::new([n, mel.cols()], mel.data()[..n * mel.cols()].to_vec()).unwrap()
}

/// Per-head mean CE over a batch, `None` for disabled heads.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct HeadLosses {
    pub audio: Option<f64>,
    pub speech: Option<f64>,
}

/// Mean over items of the summed enabled-head CE.
pub fn stage_loss<S: Real>(
    model: &LmModel,
    g: &mut Graph<'_, S>,
    batch: &[MaskedModelInput],
) -> Result<(Var, HeadLosses)> {
    let first = batch.first().ok_or(Error::Empty("training batch"))?;
    if batch.iter().any(|m| m.task != first.task) {
        return Err(Error::InvalidArgument("stage_loss batch mixes tasks".into()));
    }
    let mut total: Option<Var> = None;
    let (mut la, mut ls) = (0.0, 0.0);
    for m in batch {
        let (l, a, s) = model.arch.teacher_forced_loss(g, &m.input, m.heads)?;
        la += a.unwrap_or(0.0);
        ls += s.unwrap_or(0.0);
        total = Some(match total {
            Some(t) => g.add(t, l),
            None => l,
        });
    }
    let n = batch.len() as f64;
    let loss = g.scale(total.unwrap(), S::lit(1.0 / n));
    let heads = first.heads;
    Ok((loss, HeadLosses { audio: heads.audio.then_some(la / n), speech: heads.speech.then_some(ls / n) }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub stage: u8,
    pub lr_min: f64,
    pub lr_max: f64,
    pub steps: usize,
    pub warmup: usize,
    pub batch: usize,
    /// Recorded for the paper profile; desk runs count optimizer steps.
    #[serde(default)]
    pub epochs: Option<usize>,
    pub weights: BTreeMap<TaskKind, f64>,
}

/// Per-stage learning-rate ranges before desk scaling.
pub fn base_lr_range(stage: u8) -> (f64, f64) {
    match stage {
        1 => (2e-6, 2e-4),
        2 => (2e-7, 2e-4),
        _ => (2e-7, 2e-5),
    }
}

impl StageConfig {
    /// Mixing 1 (stage 1), 1:1 (stage 2), 1:1:2 favouring V2ST (stage 3).
    pub fn desk(stage: u8, lr_factor: f64, steps: usize, batch: usize) -> Self {
        let (lo, hi) = base_lr_range(stage);
        let weights = match stage {
            1 => BTreeMap::from([(TaskKind::V2A, 1.0)]),
            2 => BTreeMap::from([(TaskKind::V2A, 0.5), (TaskKind::TTS, 0.5)]),
            _ => BTreeMap::from([(TaskKind::V2A, 0.25), (TaskKind::TTS, 0.25), (TaskKind::V2ST, 0.5)]),
        };
        Self { stage, lr_min: lo * lr_factor, lr_max: hi * lr_factor, steps, warmup: (steps / 10).max(1), batch, epochs: None, weights }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.stage) {
            return Err(Error::InvalidArgument(format!("stage must be 1, 2 or 3, got {}", self.stage)));
        }
        if !(self.lr_min <= self.lr_max && self.lr_min >= 0.0 && self.lr_max > 0.0) {
            return Err(Error::InvalidArgument(format!("bad lr range {}..{}", self.lr_min, self.lr_max)));
        }
        let allowed = TaskKind::allowed_in(self.stage);
        for (t, w) in &self.weights {
            if !allowed.contains(t) {
                return Err(Error::InvalidArgument(format!("task {t} not allowed in stage {}", self.stage)));
            }
            if *w < 0.0 {
                return Err(Error::InvalidArgument(format!("negative weight for {t}")));
            }
        }
        let sum: f64 = self.weights.values().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("mixing weights sum to {sum}, not 1")));
        }
        if self.batch == 0 || self.steps == 0 {
            return Err(Error::InvalidArgument("batch and steps must be positive".into()));
        }
        Ok(())
    }
}
