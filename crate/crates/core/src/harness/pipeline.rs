//! End-to-end runs over an output directory: synthesis, curriculum stages,
//! VAE/flow/contrastive training, generation and evaluation.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointHeader};
use super::config::PipelineConfig;
use super::manifest::{ids_to_tensor, wave_to_tensor, Manifest, ManifestEntry};
use super::tensorfile;
use crate::curriculum::{forgetting_probe, mask_for_task, run_stage, standard_tokenizer, StageData, StageLog, TaskKind, TrainItem};
use crate::dual_lm::{generate, token_recall, GenerateRequest, HeadMask, LmModel};
use crate::error::{Error, Result};
use crate::flow_decoder::wav::write_wav;
use crate::flow_decoder::{decode_waveform, flow_train, recovery_error, vae_train, FlowLog, FlowNet, ToyVae, VaeLog};
use crate::frontend::resample_video;
use crate::metrics::{
    av_align, casp_train, dual_score, energy_db, envelope_peaks, filter_pair, frechet, inception_score, kl_metric,
    score_matrix, topk_from_scores, CaspModel, EvalReport, GaussianStats, PeakList, DEFAULT_THRESHOLD_DB,
    DEFAULT_WINDOW_S,
};
use crate::numerics::Tensor;
use crate::synthdata::world::{SAMPLE_RATE, TOKEN_RATE};
use crate::synthdata::{
    casp_features, difference_envelope, gen_scene, gen_split, rms_envelope, standin_embed, token_rate_video,
    EmbedderRole, SceneSpec,
};

pub const TRAIN: &str = "train";
pub const HELDOUT: &str = "heldout";
pub const CASP_TRAIN: &str = "casp_train";
pub const CASP_EVAL: &str = "casp_eval";
pub const GENERATED: &str = "generated";

const ALL_TASKS: [TaskKind; 3] = [TaskKind::V2A, TaskKind::TTS, TaskKind::V2ST];

/// Peaks of the per-frame RMS envelope of a waveform.
pub fn audio_peaks(wave: &[f32]) -> PeakList {
    envelope_peaks(&rms_envelope(wave), TOKEN_RATE as f64)
}

/// Peaks of the frame-difference envelope of token-rate video features.
pub fn video_peaks(video: &Tensor) -> PeakList {
    envelope_peaks(&difference_envelope(video), TOKEN_RATE as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: u8,
    pub log: StageLog,
    /// CE on the held-out set right after loading the prior checkpoint.
    pub handoff_probe: BTreeMap<TaskKind, f64>,
    pub heldout_probe: BTreeMap<TaskKind, f64>,
    pub train_probe: BTreeMap<TaskKind, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowReport {
    pub log: FlowLog,
    pub recovery_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub counts: BTreeMap<String, usize>,
}

/// One output directory plus the config every step runs under.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
    pub cfg: PipelineConfig,
    /// Accept checkpoints written under a different config.
    pub force: bool,
    /// Also write generated waveforms as WAV files.
    pub wav: bool,
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(v)?)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::DanglingPath(path.to_path_buf()));
    }
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>, cfg: PipelineConfig) -> Self {
        Self { root: root.into(), cfg, force: false, wav: false }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn manifest_path(&self, split: &str) -> PathBuf {
        self.data_dir().join(format!("{split}.jsonl"))
    }

    pub fn ckpt_path(&self, name: &str) -> PathBuf {
        self.root.join("ckpt").join(format!("{name}.ddck"))
    }

    pub fn log_path(&self, name: &str) -> PathBuf {
        self.root.join("logs").join(format!("{name}.json"))
    }

    pub fn report_path(&self) -> PathBuf {
        self.root.join("report.json")
    }

    fn header(&self, stage: &str, step: usize, seed: u64) -> CheckpointHeader {
        CheckpointHeader { stage: stage.into(), config_hash: self.cfg.hash(), step: step as u64, seed }
    }

    fn load_ckpt(&self, name: &str) -> Result<Checkpoint> {
        let path = self.ckpt_path(name);
        if !path.exists() {
            return Err(Error::NotLoaded(format!("no {name} checkpoint at {}", path.display())));
        }
        let ck = Checkpoint::load(&path)?;
        ck.check_config(&self.cfg.hash(), self.force)?;
        Ok(ck)
    }

    fn manifest(&self, split: &str) -> Result<Manifest> {
        let path = self.manifest_path(split);
        if !path.exists() {
            return Err(Error::InvalidArgument(format!("no {split} manifest at {}; run `synth` first", path.display())));
        }
        Manifest::load(path)
    }

    fn write_split(&self, name: &str, specs: &[SceneSpec], tasks: &[TaskKind], full: bool) -> Result<usize> {
        let dir = self.data_dir();
        let tdir = dir.join("tensors");
        fs::create_dir_all(&tdir)?;
        let mut m = Manifest::new(&dir);
        for (i, spec) in specs.iter().enumerate() {
            let s = gen_scene(spec)?;
            let id = format!("{name}-{i:05}");
            let put = |field: &str, t: &Tensor| -> Result<Option<String>> {
                let rel = format!("tensors/{id}.{field}.ddtf");
                tensorfile::save(dir.join(&rel), t)?;
                Ok(Some(rel))
            };
            let mut e = ManifestEntry {
                id: id.clone(),
                tasks: tasks.to_vec(),
                duration_s: spec.duration_s,
                transcript: Some(spec.transcript.clone()),
                speaker: Some(spec.speaker),
                video: None,
                ref_mel: None,
                audio_ids: None,
                speech_ids: None,
                audio_wave: put("audio_wave", &wave_to_tensor(&s.audio_wave))?,
                speech_wave: put("speech_wave", &wave_to_tensor(&s.speech_wave))?,
            };
            if full {
                e.video = put("video", &resample_video(&token_rate_video(&s.video), s.len()))?;
                e.ref_mel = put("ref_mel", &s.ref_mel)?;
                e.audio_ids = put("audio_ids", &ids_to_tensor(&s.tokens.audio_ids))?;
                e.speech_ids = put("speech_ids", &ids_to_tensor(&s.tokens.speech_ids))?;
            }
            m.entries.push(e);
        }
        m.save(self.manifest_path(name))?;
        Ok(m.entries.len())
    }

    /// Writes the four dataset splits and the resolved config.
    pub fn synth(&self) -> Result<SynthSummary> {
        self.cfg.validate()?;
        let d = &self.cfg.data;
        let lm = gen_split(d.n_train, d.n_heldout, self.cfg.seed, d.duration_s);
        let casp = gen_split(d.n_casp_train, d.n_casp_eval, self.cfg.seed ^ 0xca5b_0000, d.duration_s);
        let mut counts = BTreeMap::new();
        counts.insert(TRAIN.to_string(), self.write_split(TRAIN, &lm.train, &ALL_TASKS, true)?);
        counts.insert(HELDOUT.to_string(), self.write_split(HELDOUT, &lm.eval, &ALL_TASKS, true)?);
        counts.insert(CASP_TRAIN.to_string(), self.write_split(CASP_TRAIN, &casp.train, &[], false)?);
        counts.insert(CASP_EVAL.to_string(), self.write_split(CASP_EVAL, &casp.eval, &[], false)?);
        write_json(&self.root.join("config.json"), &self.cfg)?;
        Ok(SynthSummary { counts })
    }

    fn probe_sets(items: &[TrainItem], stage: u8) -> BTreeMap<TaskKind, Vec<TrainItem>> {
        TaskKind::allowed_in(stage).iter().map(|&t| (t, items.to_vec())).collect()
    }

    /// Loads the LM from a stage checkpoint.
    pub fn load_lm(&self, stage: u8) -> Result<LmModel> {
        let ck = self.load_ckpt(&format!("stage{stage}"))?;
        let mut model = LmModel::new(&self.cfg.lm, self.cfg.seed);
        ck.apply_to(&mut model.store)?;
        model.stage = Some(ck.header.stage.clone());
        Ok(model)
    }

    pub fn train_stage(&self, stage: u8) -> Result<StageReport> {
        let scfg = self
            .cfg
            .stages
            .get(stage.wrapping_sub(1) as usize)
            .ok_or_else(|| Error::InvalidArgument(format!("stage must be 1, 2 or 3, got {stage}")))?;
        let prior = if stage > 1 {
            let path = self.ckpt_path(&format!("stage{}", stage - 1));
            if !path.exists() {
                return Err(Error::MissingCheckpoint { stage });
            }
            let ck = Checkpoint::load(&path)?;
            ck.check_config(&self.cfg.hash(), self.force)?;
            Some(ck)
        } else {
            None
        };
        let train = self.manifest(TRAIN)?;
        let held = self.manifest(HELDOUT)?.train_items()?;
        let tok = standard_tokenizer();
        let mut model = LmModel::new(&self.cfg.lm, self.cfg.seed);
        let mut handoff_probe = BTreeMap::new();
        if let Some(ck) = &prior {
            ck.apply_to(&mut model.store)?;
            handoff_probe = forgetting_probe(&model, &Self::probe_sets(&held, stage - 1), &tok)?;
        }
        let data = StageData { pools: ALL_TASKS.iter().map(|&t| Ok((t, train.items_for(t)?))).collect::<Result<_>>()? };
        fs::create_dir_all(self.root.join("ckpt"))?;
        let out = match run_stage(&mut model, scfg, prior.as_ref(), &data, &tok, &self.cfg.hash(), self.cfg.seed + stage as u64) {
            Ok(o) => o,
            Err(Error::Divergence { step, last_good }) => {
                // keep the last finite state for inspection
                last_good.save(self.ckpt_path(&format!("stage{stage}.diverged")))?;
                return Err(Error::Divergence { step, last_good });
            }
            Err(e) => return Err(e),
        };
        out.checkpoint.save(self.ckpt_path(&format!("stage{stage}")))?;
        let train_items = train.train_items()?;
        let report = StageReport {
            stage,
            log: out.log,
            handoff_probe,
            heldout_probe: forgetting_probe(&model, &Self::probe_sets(&held, stage), &tok)?,
            train_probe: forgetting_probe(&model, &Self::probe_sets(&train_items, stage), &tok)?,
        };
        write_json(&self.log_path(&format!("stage{stage}")), &report)?;
        Ok(report)
    }

    fn train_waves(&self) -> Result<Vec<(Vec<u32>, Vec<f32>)>> {
        let m = self.manifest(TRAIN)?;
        let mut out = Vec::new();
        for e in &m.entries {
            let item = m.train_item(e)?;
            let (a, s) = m.waves(e)?;
            let missing = |f| Error::MissingField { field: f, task: "flow decoder".into() };
            out.push((item.audio_ids.ok_or(missing("audio_ids"))?, a.ok_or(missing("audio_wave"))?));
            out.push((item.speech_ids.ok_or(missing("speech_ids"))?, s.ok_or(missing("speech_wave"))?));
        }
        Ok(out)
    }

    pub fn train_vae(&self) -> Result<VaeLog> {
        let waves: Vec<Vec<f32>> = self.train_waves()?.into_iter().map(|(_, w)| w).collect();
        let seed = self.cfg.seed + 11;
        let (vae, log) = vae_train(&waves, &self.cfg.vae, seed)?;
        fs::create_dir_all(self.root.join("ckpt"))?;
        Checkpoint::from_store(self.header("vae", self.cfg.vae.steps, seed), &vae.store).save(self.ckpt_path("vae"))?;
        write_json(&self.log_path("vae"), &log)?;
        Ok(log)
    }

    pub fn load_vae(&self) -> Result<ToyVae> {
        let ck = self.load_ckpt("vae")?;
        let mut vae = ToyVae::new(&self.cfg.vae, 0);
        ck.apply_to(&mut vae.store)?;
        Ok(vae)
    }

    pub fn train_flow(&self) -> Result<FlowReport> {
        let vae = self.load_vae()?;
        let data = self.train_waves()?;
        let seed = self.cfg.seed + 12;
        let (net, log) = flow_train(&vae, &data, &self.cfg.flow, seed)?;
        let mut err = 0.0;
        for (tokens, wave) in &data {
            err += recovery_error(&net, tokens, &vae.encode_mean(wave).z, self.cfg.generate.euler_steps)?;
        }
        Checkpoint::from_store(self.header("flow", self.cfg.flow.steps, seed), &net.store).save(self.ckpt_path("flow"))?;
        let report = FlowReport { log, recovery_error: err / data.len() as f64 };
        write_json(&self.log_path("flow"), &report)?;
        Ok(report)
    }

    pub fn load_flow(&self) -> Result<FlowNet> {
        let ck = self.load_ckpt("flow")?;
        let mut net = FlowNet::new(&self.cfg.flow, 0);
        ck.apply_to(&mut net.store)?;
        Ok(net)
    }

    fn casp_pairs(&self, split: &str) -> Result<Vec<(Tensor, Tensor)>> {
        let m = self.manifest(split)?;
        m.entries
            .iter()
            .map(|e| {
                let (a, s) = m.waves(e)?;
                let missing = |f| Error::MissingField { field: f, task: "contrastive pretraining".into() };
                Ok((casp_features(&a.ok_or(missing("audio_wave"))?), casp_features(&s.ok_or(missing("speech_wave"))?)))
            })
            .collect()
    }

    pub fn train_casp(&self) -> Result<Vec<f64>> {
        let pairs = self.casp_pairs(CASP_TRAIN)?;
        let seed = self.cfg.seed + 13;
        let (model, log) = casp_train(&pairs, &self.cfg.casp, seed)?;
        fs::create_dir_all(self.root.join("ckpt"))?;
        Checkpoint::from_store(self.header("casp", self.cfg.casp.steps, seed), &model.store).save(self.ckpt_path("casp"))?;
        write_json(&self.log_path("casp"), &log)?;
        Ok(log.losses)
    }

    pub fn load_casp(&self) -> Result<CaspModel> {
        let ck = self.load_ckpt("casp")?;
        let mut model = CaspModel::new(&self.cfg.casp, 0);
        ck.apply_to(&mut model.store)?;
        Ok(model)
    }

    /// Greedy V2ST generation for every item, returning recall per stream.
    fn generate_items(&self, model: &LmModel, items: &[TrainItem]) -> Result<(Vec<(Vec<u32>, Vec<u32>)>, f64, f64)> {
        let tok = standard_tokenizer();
        let cfg = model.cfg();
        let (mut ra, mut rs) = (0.0, 0.0);
        let mut out = Vec::with_capacity(items.len());
        for (i, it) in items.iter().enumerate() {
            let m = mask_for_task(it, TaskKind::V2ST, &tok, cfg.d_v, cfg.d_mel, None)?;
            let req = GenerateRequest::from_input(&m.input, HeadMask { audio: true, speech: true }, self.cfg.generate.sampling, self.cfg.seed + i as u64);
            let g = generate(model, &req)?;
            let t = req.max_t;
            let pad = |mut v: Vec<u32>| {
                v.resize(t, cfg.pad_id);
                v
            };
            let (a, s) = (pad(g.audio_ids), pad(g.speech_ids));
            ra += token_recall(&a, m.input.audio.as_deref().unwrap_or(&[]), cfg.pad_id);
            rs += token_recall(&s, m.input.speech.as_deref().unwrap_or(&[]), cfg.pad_id);
            out.push((a, s));
        }
        let n = items.len().max(1) as f64;
        Ok((out, ra / n, rs / n))
    }

    /// Tokens from the stage-3 model, waveforms from flow + VAE, for the
    /// held-out split.
    pub fn generate(&self) -> Result<BTreeMap<String, f64>> {
        let model = self.load_lm(3)?;
        let vae = self.load_vae()?;
        let flow = self.load_flow()?;
        let held = self.manifest(HELDOUT)?;
        let items = held.train_items()?;
        let (streams, ra, rs) = self.generate_items(&model, &items)?;
        let dir = self.root.join(GENERATED);
        fs::create_dir_all(dir.join("tensors"))?;
        let mut m = Manifest::new(&dir);
        let rate = SAMPLE_RATE as f64 / self.cfg.vae.frame as f64;
        for (e, (a, s)) in held.entries.iter().zip(&streams) {
            let mut files = BTreeMap::new();
            for (name, ids) in [("audio", a), ("speech", s)] {
                let z = flow.sample(ids, ids.len(), rate, self.cfg.generate.euler_steps)?;
                let wave = decode_waveform(&z, &vae)?;
                let ids_rel = format!("tensors/{}.{name}_ids.ddtf", e.id);
                let wave_rel = format!("tensors/{}.{name}_wave.ddtf", e.id);
                tensorfile::save(dir.join(&ids_rel), &ids_to_tensor(ids))?;
                tensorfile::save(dir.join(&wave_rel), &wave_to_tensor(&wave))?;
                if self.cfg.generate.write_wav || self.wav {
                    write_wav(dir.join(format!("{}.{name}.wav", e.id)), &wave, SAMPLE_RATE as u32)?;
                }
                files.insert(name, (ids_rel, wave_rel));
            }
            m.entries.push(ManifestEntry {
                id: e.id.clone(),
                tasks: vec![TaskKind::V2ST],
                duration_s: e.duration_s,
                transcript: e.transcript.clone(),
                speaker: e.speaker,
                video: None,
                ref_mel: None,
                audio_ids: Some(files["audio"].0.clone()),
                speech_ids: Some(files["speech"].0.clone()),
                audio_wave: Some(files["audio"].1.clone()),
                speech_wave: Some(files["speech"].1.clone()),
            });
        }
        m.save(dir.join(format!("{GENERATED}.jsonl")))?;
        let summary = BTreeMap::from([("token_recall_audio".to_string(), ra), ("token_recall_speech".to_string(), rs)]);
        write_json(&self.log_path(GENERATED), &summary)?;
        Ok(summary)
    }

    /// Every metric over the current artifacts.
    pub fn eval(&self) -> Result<EvalReport> {
        let th = self.cfg.thresholds.clone();
        let mut r = EvalReport::default();

        // contrastive retrieval on held-out pairs
        let casp = self.load_casp()?;
        let pairs = self.casp_pairs(CASP_EVAL)?;
        let scores = score_matrix(&casp, &pairs)?;
        let acc = topk_from_scores(&scores, &[1, 3, 5]);
        let n = scores.len();
        let diag = (0..n).map(|i| scores[i][i]).sum::<f64>() / n as f64;
        let off = if n > 1 {
            (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| scores[i][j]).sum::<f64>()
                / (n * (n - 1)) as f64
        } else {
            0.0
        };
        r.set("casp_top1", acc[0]);
        r.set("casp_top3", acc[1]);
        r.set("casp_top5", acc[2]);
        r.set("casp_diag_minus_offdiag", diag - off);
        r.counts.insert("casp_eval_pairs".into(), n);
        r.check("casp_top1", acc[0] >= th.top1_min);
        r.check("casp_top3", acc[1] >= th.top3_min);
        r.check("casp_diagonal_gap", diag - off > th.dual_gap_min);

        // generated soundtracks against references
        let held = self.manifest(HELDOUT)?;
        let gen = Manifest::load(self.root.join(GENERATED).join(format!("{GENERATED}.jsonl")))?;
        let (mut ref_a, mut ref_s, mut gen_a, mut gen_s, mut videos) = (vec![], vec![], vec![], vec![], vec![]);
        for (he, ge) in held.entries.iter().zip(&gen.entries) {
            let (a, s) = held.waves(he)?;
            let (ga, gs) = gen.waves(ge)?;
            let missing = || Error::MissingField { field: "audio_wave", task: "evaluation".into() };
            ref_a.push(a.ok_or_else(missing)?);
            ref_s.push(s.ok_or_else(missing)?);
            gen_a.push(ga.ok_or_else(missing)?);
            gen_s.push(gs.ok_or_else(missing)?);
            videos.push(held.load_tensor(&he.video)?.ok_or(Error::MissingField { field: "video", task: "evaluation".into() })?);
        }
        let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len().max(1) as f64;
        let dual = |a: &[Vec<f32>], s: &[Vec<f32>]| -> Result<f64> {
            Ok(mean(a.iter().zip(s).map(|(a, s)| dual_score(&casp, &casp_features(a), &casp_features(s))).collect::<Result<_>>()?))
        };
        r.set("dualscore_generated", dual(&gen_a, &gen_s)?);
        r.set("dualscore_reference", dual(&ref_a, &ref_s)?);
        let align = |a: &[Vec<f32>]| mean(a.iter().zip(&videos).map(|(w, v)| av_align(&audio_peaks(w), &video_peaks(v), DEFAULT_WINDOW_S)).collect());
        let av_gen = align(&gen_a);
        r.set("av_align_generated", av_gen);
        r.set("av_align_reference", align(&ref_a));
        r.check("av_align_generated", av_gen >= th.av_align_min);

        let embed = |w: &[Vec<f32>], role| w.iter().map(|x| standin_embed(x, role)).collect::<Result<Vec<_>>>();
        let fd = frechet(
            &GaussianStats::from_samples(&embed(&gen_a, EmbedderRole::PannsLike)?)?,
            &GaussianStats::from_samples(&embed(&ref_a, EmbedderRole::PannsLike)?)?,
        )?;
        let fad = frechet(
            &GaussianStats::from_samples(&embed(&gen_a, EmbedderRole::VggishLike)?)?,
            &GaussianStats::from_samples(&embed(&ref_a, EmbedderRole::VggishLike)?)?,
        )?;
        let pg = embed(&gen_a, EmbedderRole::ClassifierLike)?;
        let pr = embed(&ref_a, EmbedderRole::ClassifierLike)?;
        r.set("fd_panns_like", fd);
        r.set("fad_vggish_like", fad);
        r.set("kl_classifier_like", kl_metric(&pg, &pr)?);
        r.set("is_generated", inception_score(&pg)?);
        r.set("is_reference", inception_score(&pr)?);

        let mut kept = 0;
        let mut gen_kept = 0;
        for i in 0..ref_a.len() {
            kept += usize::from(filter_pair(&ref_a[i], &ref_s[i], DEFAULT_THRESHOLD_DB)?);
            gen_kept += usize::from(filter_pair(&gen_a[i], &gen_s[i], DEFAULT_THRESHOLD_DB)?);
        }
        r.counts.insert("heldout_pairs".into(), ref_a.len());
        r.counts.insert("energy_kept_reference".into(), kept);
        r.counts.insert("energy_kept_generated".into(), gen_kept);
        r.set("energy_db_generated_audio", mean(gen_a.iter().map(|w| energy_db(w)).collect::<Result<_>>()?));

        let g: BTreeMap<String, f64> = read_json(&self.log_path(GENERATED))?;
        for (k, v) in g {
            r.set(&k, v);
        }

        // curriculum outcomes
        let ln_v = (self.cfg.lm.codec_vocab as f64).ln();
        let st: Vec<StageReport> = (1..=3).map(|s| read_json(&self.log_path(&format!("stage{s}")))).collect::<Result<_>>()?;
        let v2a1 = st[0].train_probe[&TaskKind::V2A];
        let tts2 = st[1].train_probe[&TaskKind::TTS];
        r.set("stage1_v2a_train_ce", v2a1);
        r.set("stage2_tts_train_ce", tts2);
        r.check("stage1_v2a_ce_halved", v2a1 <= 0.5 * ln_v);
        r.check("stage2_tts_ce_halved", tts2 <= 0.5 * ln_v);
        let ret_v2a = st[2].heldout_probe[&TaskKind::V2A] / st[0].heldout_probe[&TaskKind::V2A];
        let ret_tts = st[2].heldout_probe[&TaskKind::TTS] / st[1].heldout_probe[&TaskKind::TTS];
        r.set("retention_ratio_v2a", ret_v2a);
        r.set("retention_ratio_tts", ret_tts);
        r.check("retention_v2a", ret_v2a <= 1.25);
        r.check("retention_tts", ret_tts <= 1.25);
        let handoff = st[2].handoff_probe[&TaskKind::V2A] / st[1].heldout_probe[&TaskKind::V2A];
        r.set("stage3_handoff_ratio_v2a", handoff);
        r.check("stage3_handoff", (handoff - 1.0).abs() <= 0.10);

        let model = self.load_lm(3)?;
        let train_items = self.manifest(TRAIN)?.train_items()?;
        let (_, oa, os) = self.generate_items(&model, &train_items)?;
        r.set("overfit_recall_audio", oa);
        r.set("overfit_recall_speech", os);
        r.check("overfit_recall", oa >= 0.9 && os >= 0.9);

        let flow: FlowReport = read_json(&self.log_path("flow"))?;
        r.set("flow_recovery_error", flow.recovery_error);
        r.check("flow_recovery", flow.recovery_error < 0.15);

        fs::write(self.report_path(), r.to_json())?;
        Ok(r)
    }

    /// synth → stages 1–3 → VAE → flow → contrastive → generate → eval.
    pub fn run_all(&self) -> Result<EvalReport> {
        self.synth()?;
        for s in 1..=3 {
            let rep = self.train_stage(s)?;
            log::info!("stage {s} held-out CE {:?}", rep.heldout_probe);
        }
        self.train_vae()?;
        let f = self.train_flow()?;
        log::info!("flow recovery error {:.4}", f.recovery_error);
        self.train_casp()?;
        self.generate()?;
        self.eval()
    }
}
