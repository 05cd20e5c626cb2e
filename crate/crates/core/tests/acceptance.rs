//! Desk-scale acceptance run. Each test prints a single PASS/FAIL line for
//! its criterion; the trained pipeline is shared through a `OnceLock`.

use std::io::Write;
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use dualdub::dual_lm::{HeadMask, LmConfig, LmInput, LmModel};
use dualdub::flow_decoder::{fm_loss, integrate, FlowConfig, FlowNet};
use dualdub::harness::config::PipelineConfig;
use dualdub::harness::pipeline::Workspace;
use dualdub::harness::selftest::run_selftest;
use dualdub::metrics::*;
use dualdub::numerics::{grad_check, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Desk {
    report: EvalReport,
    stage_time: Duration,
}

fn scratch_dir(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| {
        let ws = Workspace::new(scratch_dir("acceptance-desk"), PipelineConfig::profile("desk").unwrap());
        ws.synth().unwrap();
        let t0 = Instant::now();
        for s in 1..=3 {
            ws.train_stage(s).unwrap();
        }
        let stage_time = t0.elapsed();
        ws.train_vae().unwrap();
        ws.train_flow().unwrap();
        ws.train_casp().unwrap();
        ws.generate().unwrap();
        Desk { report: ws.eval().unwrap(), stage_time }
    })
}

/// Writes straight to the stderr handle so the line shows without
/// `--nocapture`.
fn verdict(n: u8, name: &str, ok: bool, detail: String) {
    let line = format!("criterion {n} {:<24} {}  {detail}\n", name, if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(ok, "criterion {n} ({name}) failed: {detail}");
}

fn metric(r: &EvalReport, key: &str) -> f64 {
    r.get(key).unwrap_or(f64::NAN)
}

#[test]
fn criterion_1_selftest() {
    let t0 = Instant::now();
    let rep = run_selftest();
    let took = t0.elapsed();
    let failed: Vec<_> = rep.checks.iter().filter(|c| !c.ok).map(|c| format!("{}: {}", c.name, c.detail)).collect();
    verdict(
        1,
        "invariant suite",
        failed.is_empty() && took < Duration::from_secs(120),
        format!("{} checks in {:.1?}; failures {failed:?}", rep.checks.len(), took),
    );
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

#[test]
fn criterion_2_gradient_checks() {
    let cfg = tiny_lm();
    let mut worst_lm = 0.0f64;
    for inst in 0..5u64 {
        let model = LmModel::new(&cfg, 300 + inst);
        let store = model.store.cast::<f64>();
        let mut rng = ChaCha8Rng::seed_from_u64(400 + inst);
        let input = LmInput {
            video: Tensor::from_fn([4, cfg.d_v], |_| rng.random_range(-1.0f32..1.0)),
            text: (0..3).map(|_| rng.random_range(0..cfg.text_vocab as u32)).collect(),
            speaker: Tensor::from_fn([1, cfg.d_mel], |_| rng.random_range(0.0f32..1.0)),
            audio: Some((0..4).map(|_| rng.random_range(1..16)).collect()),
            speech: Some((0..4).map(|_| rng.random_range(1..16)).collect()),
        };
        let both = HeadMask { audio: true, speech: true };
        let r = grad_check(|g| model.arch.teacher_forced_loss(g, &input, both).map(|(l, _, _)| l), &store, 1e-5, inst).unwrap();
        worst_lm = worst_lm.max(r.max_rel_err);
    }
    let fcfg = FlowConfig { vocab: 12, d_lat: 3, d: 8, layers: 1, heads: 2, d_ff: 16, t_dim: 4, ..FlowConfig::default() };
    let mut worst_fm = 0.0f64;
    for inst in 0..5u64 {
        let net = FlowNet::new(&fcfg, 500 + inst);
        let store = net.store.cast::<f64>();
        let mut rng = ChaCha8Rng::seed_from_u64(600 + inst);
        let toks: Vec<Vec<u32>> = (0..2).map(|_| (0..3).map(|_| rng.random_range(0..12)).collect()).collect();
        let z1s: Vec<Tensor<f64>> = (0..2).map(|_| Tensor::from_fn([4, 3], |_| rng.random_range(-1.0..1.0))).collect();
        let ts = [rng.random::<f64>(), rng.random::<f64>()];
        let r = grad_check(
            |g| {
                let mut pairs = Vec::new();
                for (tk, z1) in toks.iter().zip(&z1s) {
                    let z0 = net.z0_var(g, tk, 4)?;
                    pairs.push((z0, g.constant(z1.clone())));
                }
                fm_loss(g, |g, z, t| net.velocity(g, z, t), &pairs, &ts)
            },
            &store,
            1e-5,
            inst,
        )
        .unwrap();
        worst_fm = worst_fm.max(r.max_rel_err);
    }
    verdict(
        2,
        "gradient checks",
        worst_lm < 1e-3 && worst_fm < 1e-3,
        format!("max rel err aligner+LM {worst_lm:.2e}, flow matching {worst_fm:.2e} (5 instances each)"),
    );
}

#[test]
fn criterion_3_curriculum() {
    let d = desk();
    let r = &d.report;
    let half = 0.5 * (256f64).ln();
    let (v2a, tts) = (metric(r, "stage1_v2a_train_ce"), metric(r, "stage2_tts_train_ce"));
    let (ra, rt) = (metric(r, "retention_ratio_v2a"), metric(r, "retention_ratio_tts"));
    verdict(
        3,
        "curriculum outcome",
        v2a <= half && tts <= half && ra <= 1.25 && rt <= 1.25 && d.stage_time < Duration::from_secs(15 * 60),
        format!(
            "stage-1 V2A CE {v2a:.3}, stage-2 TTS CE {tts:.3} (limit {half:.3}); retention V2A {ra:.3}, TTS {rt:.3}; stages took {:.0?}",
            d.stage_time
        ),
    );
}

#[test]
fn criterion_4_overfit_recall() {
    let r = &desk().report;
    let (a, s) = (metric(r, "overfit_recall_audio"), metric(r, "overfit_recall_speech"));
    verdict(4, "overfit recall", a >= 0.9 && s >= 0.9, format!("audio {a:.3}, speech {s:.3}"));
}

#[test]
fn criterion_5_flow_decoder() {
    let err = metric(&desk().report, "flow_recovery_error");
    let one = Tensor::from_fn([1], |_| 1.0f32);
    let e1024 = integrate(|z, _| Ok(z.clone()), &one, 1024).unwrap().data()[0] as f64;
    let rel = (e1024 - std::f64::consts::E).abs() / std::f64::consts::E;
    verdict(5, "flow decoder", err < 0.15 && rel < 0.002, format!("recovery error {err:.4} at 32 steps; Euler(1024) vs e rel {rel:.2e}"));
}

#[test]
fn criterion_6_metric_oracles() {
    let g1 = |mu: f64, var: f64| GaussianStats::new(vec![mu], vec![var]).unwrap();
    let f1 = frechet(&g1(0.0, 1.0), &g1(1.0, 1.0)).unwrap();
    let f2 = frechet(&g1(0.0, 1.0), &g1(0.0, 4.0)).unwrap();
    let c = 10;
    let uniform = vec![vec![1.0 / c as f64; c]; c];
    let onehot: Vec<Vec<f64>> = (0..c).map(|j| (0..c).map(|k| f64::from(j == k)).collect()).collect();
    let is_u = inception_score(&uniform).unwrap();
    let is_c = inception_score(&onehot).unwrap();
    let kl0 = kl_metric(&onehot, &onehot).unwrap();
    let kl_c = kl_metric(&uniform, &onehot).unwrap();
    let p = |t: &[f64]| PeakList { times: t.to_vec() };
    let a1 = av_align(&p(&[0.5, 1.5]), &p(&[0.5, 1.5]), 0.1);
    let a0 = av_align(&p(&[0.5, 1.5]), &p(&[3.0, 4.0]), 0.1);
    let a3 = av_align(&p(&[1.0, 2.0]), &p(&[1.0, 3.0]), 0.1);
    let ok = (f1 - 1.0).abs() < 1e-6
        && (f2 - 1.0).abs() < 1e-6
        && (is_u - 1.0).abs() < 1e-9
        && (is_c - c as f64).abs() < 1e-9
        && kl0.abs() < 1e-12
        && (kl_c - (c as f64).ln()).abs() < 1e-9
        && a1 == 1.0
        && a0 == 0.0
        && a3 == 1.0 / 3.0;
    verdict(
        6,
        "metric oracles",
        ok,
        format!("frechet {f1:.6}/{f2:.6}; IS {is_u:.6}/{is_c:.6}; KL {kl0:.1e}/{kl_c:.6}; AV-Align {a1}/{a0}/{a3:.6}"),
    );
}

#[test]
fn criterion_7_casp_retrieval() {
    let r = &desk().report;
    let (t1, t3) = (metric(r, "casp_top1"), metric(r, "casp_top3"));
    let n = r.counts.get("casp_eval_pairs").copied().unwrap_or(0);
    verdict(
        7,
        "contrastive retrieval",
        n == 100 && t1 >= 0.90 && t3 >= 0.97,
        format!(
            "top-1 {t1:.2}, top-3 {t3:.2} on {n} pairs (chance 0.01/0.03); real-data reference {}/{}/{} on {} pairs",
            r.reference.top1, r.reference.top3, r.reference.top5, r.reference.pairs
        ),
    );
}

#[test]
fn criterion_8_energy_filter() {
    let level = |db: f64| vec![10f64.powf(db / 20.0) as f32; 2560];
    let e40 = energy_db(&level(-40.0)).unwrap();
    let keep_boundary = keep_energies(-40.0, -20.0, DEFAULT_THRESHOLD_DB) && keep_energies(-20.0, -40.0, DEFAULT_THRESHOLD_DB);
    let drop_quiet_speech = !filter_pair(&level(-20.0), &level(-50.0), DEFAULT_THRESHOLD_DB).unwrap();
    verdict(
        8,
        "energy filter",
        keep_boundary && drop_quiet_speech && (e40 + 40.0).abs() < 1e-4,
        format!("exactly -40 dB kept: {keep_boundary}; -50 dB speech discarded: {drop_quiet_speech}; measured {e40:.5} dB"),
    );
}

#[test]
fn criterion_9_determinism() {
    let run = |name: &str| {
        let ws = Workspace::new(scratch_dir(name), PipelineConfig::profile("smoke").unwrap());
        ws.run_all().unwrap();
        std::fs::read(ws.report_path()).unwrap()
    };
    let (a, b) = (run("acceptance-det-a"), run("acceptance-det-b"));
    verdict(9, "determinism", a == b, format!("two end-to-end runs, {} report bytes each, identical: {}", a.len(), a == b));
}
