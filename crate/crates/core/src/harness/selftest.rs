//! Invariant suite behind `dualdub selftest`. Every check builds its own
//! small model from a fixed seed, so the suite needs no artifacts.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aligner::{Aligner, AlignerConfig};
use crate::curriculum::{mask_for_task, stage_loss, standard_tokenizer, TaskKind, TrainItem};
use crate::dual_lm::{LmConfig, LmInput, LmModel};
use crate::flow_decoder::{flow_train, vae_train, FlowConfig, VaeConfig};
use crate::numerics::{Graph, ParamStore, Tensor};
use crate::synthdata::world::WORDS;
use crate::synthdata::{gen_scene, gen_split};

type Check = std::result::Result<String, String>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub ok: bool,
    pub detail: String,
    pub millis: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftestReport {
    pub checks: Vec<CheckResult>,
}

impl SelftestReport {
    pub fn all_ok(&self) -> bool {
        self.checks.iter().all(|c| c.ok)
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rand_t(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::from_fn([r, c], |_| rng.random_range(-1.0f32..1.0))
}

fn softmax_rows_sum_to_one() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let store = ParamStore::new();
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let x = Tensor::from_fn([6, 9], |_| rng.random_range(-30.0f32..30.0));
        let mut g = Graph::new(&store);
        let v = g.input(&x);
        let s = g.softmax_rows(v, None);
        for row in g.value(s).chunks(9) {
            ensure(row.iter().all(|&p| (0.0..=1.0).contains(&p)), || "probability outside [0, 1]".into())?;
            worst = worst.max((row.iter().map(|&p| p as f64).sum::<f64>() - 1.0).abs());
        }
    }
    ensure(worst < 1e-5, || format!("row sum off by {worst:.2e}"))?;
    Ok(format!("max |sum - 1| = {worst:.1e}"))
}

fn aligner_setup(out_std: f64, seed: u64) -> (ParamStore, Aligner, AlignerConfig) {
    let cfg = AlignerConfig { d: 8, d_v: 5, max_t: 8, out_std };
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let al = Aligner::new(&mut store, "al", &cfg, &mut rng);
    (store, al, cfg)
}

fn aligner_causal_isolation() -> Check {
    let (store, al, cfg) = aligner_setup(0.5, 2);
    let t = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (ea, es, v) = (rand_t(&mut rng, t, cfg.d), rand_t(&mut rng, t, cfg.d), rand_t(&mut rng, t, cfg.d_v));
    let run = |ea: &Tensor, es: &Tensor| -> std::result::Result<(Vec<f32>, Vec<f32>), String> {
        let mut g = Graph::new(&store);
        let (a, s, vv) = (g.input(ea), g.input(es), g.input(&v));
        let h = al.align(&mut g, a, s, vv).map_err(|e| e.to_string())?;
        Ok((g.value(h.h_a).to_vec(), g.value(h.h_s).to_vec()))
    };
    let (a0, s0) = run(&ea, &es)?;
    for at in 0..t {
        let mut es2 = es.clone();
        es2.row_mut(at).iter_mut().for_each(|x| *x += 1.0);
        let mut ea2 = ea.clone();
        ea2.row_mut(at).iter_mut().for_each(|x| *x -= 1.0);
        let (a1, _) = run(&ea, &es2)?;
        let (_, s1) = run(&ea2, &es)?;
        let d = cfg.d;
        ensure(a0[..at * d] == a1[..at * d], || format!("audio rows before {at} saw a speech change"))?;
        ensure(s0[..at * d] == s1[..at * d], || format!("speech rows before {at} saw an audio change"))?;
        ensure(a0[at * d..] != a1[at * d..], || format!("speech change at {at} had no effect"))?;
    }
    Ok(format!("{t} perturbation positions"))
}

fn tiny_lm() -> LmConfig {
    LmConfig {
        d: 8,
        layers: 1,
        heads: 2,
        d_ff: 16,
        codec_vocab: 16,
        text_vocab: 20,
        max_text: 4,
        max_t: 6,
        d_spk: 4,
        d_mel: 4,
        d_v: 6,
        embed_std: 0.5,
        head_std: 0.5,
        aligner_out_std: 0.5,
        pad_id: 0,
        audio_eos: 14,
        speech_eos: 15,
    }
}

fn lm_causal_isolation() -> Check {
    let cfg = tiny_lm();
    let model = LmModel::new(&cfg, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t = cfg.max_t;
    let v = cfg.codec_vocab;
    let input = LmInput {
        video: rand_t(&mut rng, t, cfg.d_v),
        text: vec![3, 7, 1],
        speaker: Tensor::from_fn([1, cfg.d_mel], |_| rng.random_range(0.0f32..1.0)),
        audio: Some((0..t).map(|_| rng.random_range(1..v as u32)).collect()),
        speech: Some((0..t).map(|_| rng.random_range(1..v as u32)).collect()),
    };
    let logits = |inp: &LmInput| -> std::result::Result<(Vec<f32>, Vec<f32>), String> {
        let mut g = Graph::new(&model.store);
        let (l, _) = model.arch.forward(&mut g, inp).map_err(|e| e.to_string())?;
        Ok((g.value(l.audio).to_vec(), g.value(l.speech).to_vec()))
    };
    let (a0, s0) = logits(&input)?;
    for at in 0..t {
        let mut changed = input.clone();
        for ids in [changed.audio.as_mut(), changed.speech.as_mut()].into_iter().flatten() {
            ids[at] = 1 + ids[at] % (v as u32 - 1);
        }
        let (a1, s1) = logits(&changed)?;
        let keep = (at + 1) * v;
        ensure(a0[..keep] == a1[..keep] && s0[..keep] == s1[..keep], || {
            format!("logits up to step {at} moved when step {at} tokens changed")
        })?;
        if at + 1 < t {
            ensure(a0[keep..] != a1[keep..], || format!("token change at {at} never reached later steps"))?;
        }
    }
    Ok(format!("{t} perturbation positions"))
}

fn zero_init_residual_identity() -> Check {
    let (store, al, cfg) = aligner_setup(0.0, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (ea, es, v) = (rand_t(&mut rng, 5, cfg.d), rand_t(&mut rng, 5, cfg.d), rand_t(&mut rng, 5, cfg.d_v));
    let mut g = Graph::new(&store);
    let (a, s, vv) = (g.input(&ea), g.input(&es), g.input(&v));
    let h = al.align(&mut g, a, s, vv).map_err(|e| e.to_string())?;
    ensure(g.value(h.h_a) == ea.data() && g.value(h.h_s) == es.data(), || "fused streams differ from inputs".into())?;
    Ok("H_a = E_a and H_s = E_s bitwise".into())
}

fn scene_items(n: usize, seed: u64) -> std::result::Result<Vec<TrainItem>, String> {
    gen_split(n, 0, seed, 1.0)
        .train
        .iter()
        .enumerate()
        .map(|(i, s)| Ok(TrainItem::from_sample(format!("s{i}"), &gen_scene(s).map_err(|e| e.to_string())?)))
        .collect()
}

fn head_mask_zero_gradient() -> Check {
    let tok = standard_tokenizer();
    let cfg = LmConfig { d: 16, layers: 1, heads: 2, d_ff: 32, ..LmConfig::default() };
    let model = LmModel::new(&cfg, 8);
    let items = scene_items(2, 9)?;
    let mut out = Vec::new();
    for (task, silent) in [(TaskKind::V2A, &model.arch.head_speech), (TaskKind::TTS, &model.arch.head_audio)] {
        let batch = items
            .iter()
            .map(|it| mask_for_task(it, task, &tok, cfg.d_v, cfg.d_mel, None))
            .collect::<crate::error::Result<Vec<_>>>()
            .map_err(|e| e.to_string())?;
        let mut g = Graph::new(&model.store);
        let (loss, _) = stage_loss(&model, &mut g, &batch).map_err(|e| e.to_string())?;
        let grads = g.backward(loss);
        for id in [Some(silent.w), silent.b].into_iter().flatten() {
            let nonzero = grads.param(id).map_or(0, |gr| gr.iter().filter(|x| x.to_bits() != 0).count());
            ensure(nonzero == 0, || format!("{task}: disabled head has {nonzero} nonzero gradient entries"))?;
        }
        out.push(task.to_string());
    }
    Ok(format!("exact zeros for {}", out.join(", ")))
}

fn bpe_round_trips() -> Check {
    let tok = standard_tokenizer();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut texts: Vec<String> = (0..200)
        .map(|_| (0..rng.random_range(1..5)).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" "))
        .collect();
    texts.push(String::new());
    texts.push("zq xj!? 123".into());
    for t in &texts {
        let ids = tok.encode(t.as_bytes()).ids;
        let back = tok.decode(&ids).map_err(|e| e.to_string())?;
        ensure(back == t.as_bytes(), || format!("{t:?} did not round trip"))?;
    }
    Ok(format!("{} strings", texts.len()))
}

fn frozen_vae_bitwise() -> Check {
    let scenes = gen_split(32, 0, 11, 1.0)
        .train
        .iter()
        .map(gen_scene)
        .collect::<crate::error::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let waves: Vec<Vec<f32>> = scenes.iter().flat_map(|s| [s.audio_wave.clone(), s.speech_wave.clone()]).collect();
    let (vae, _) = vae_train(&waves, &VaeConfig { steps: 20, batch: 64, ..VaeConfig::default() }, 12).map_err(|e| e.to_string())?;
    let before = vae.store.clone();
    let data: Vec<_> = scenes.iter().take(8).map(|s| (s.tokens.audio_ids.clone(), s.audio_wave.clone())).collect();
    let (_, log) = flow_train(&vae, &data, &FlowConfig { steps: 5, batch: 4, ..FlowConfig::default() }, 13)
        .map_err(|e| e.to_string())?;
    ensure(log.losses.iter().all(|l| l.is_finite()), || "flow loss not finite".into())?;
    ensure(vae.store.bitwise_eq(&before), || "VAE parameters changed during flow training".into())?;
    Ok(format!("{} flow steps, VAE untouched", log.losses.len()))
}

/// Named checks in run order.
pub const CHECKS: [(&str, fn() -> Check); 7] = [
    ("softmax_normalization", softmax_rows_sum_to_one),
    ("aligner_causal_isolation", aligner_causal_isolation),
    ("lm_causal_isolation", lm_causal_isolation),
    ("zero_init_residual_identity", zero_init_residual_identity),
    ("head_mask_zero_gradient", head_mask_zero_gradient),
    ("bpe_round_trip", bpe_round_trips),
    ("frozen_vae_bitwise", frozen_vae_bitwise),
];

pub fn run_selftest() -> SelftestReport {
    let checks = CHECKS
        .iter()
        .map(|(name, f)| {
            let t0 = Instant::now();
            let r = f();
            let millis = t0.elapsed().as_millis();
            let (ok, detail) = match r {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            CheckResult { name: name.to_string(), ok, detail, millis }
        })
        .collect();
    SelftestReport { checks }
}
