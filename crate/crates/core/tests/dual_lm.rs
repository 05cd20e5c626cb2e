use dualdub::curriculum::{mask_for_task, standard_tokenizer, stage_loss, TaskKind, TrainItem};
use dualdub::dual_lm::{
    generate, teacher_forced_argmax, GenerateRequest, HeadMask, LmConfig, LmInput, LmModel, Sampling, SequenceLayout,
};
use dualdub::numerics::{cosine_lr, grad_check, Adam, AdamConfig, Graph, Tensor};
use dualdub::synthdata::{gen_scene, gen_split};
use dualdub::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> LmConfig {
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

fn tiny_input(cfg: &LmConfig, t: usize, seed: u64) -> LmInput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = cfg.codec_vocab as u32;
    LmInput {
        video: Tensor::from_fn([t, cfg.d_v], |_| rng.random_range(-1.0f32..1.0)),
        text: (0..3).map(|_| rng.random_range(0..cfg.text_vocab as u32)).collect(),
        speaker: Tensor::from_fn([1, cfg.d_mel], |_| rng.random_range(0.0f32..1.0)),
        audio: Some((0..t).map(|_| rng.random_range(1..v)).collect()),
        speech: Some((0..t).map(|_| rng.random_range(1..v)).collect()),
    }
}

fn logits(model: &LmModel, input: &LmInput) -> (Vec<f32>, Vec<f32>) {
    let mut g = Graph::new(&model.store);
    let (l, _) = model.arch.forward(&mut g, input).unwrap();
    (g.value(l.audio).to_vec(), g.value(l.speech).to_vec())
}

const BOTH: HeadMask = HeadMask { audio: true, speech: true };

#[test]
fn layout_spans() {
    let l = SequenceLayout { l_text: 0, t: 5 };
    assert_eq!((l.spk_span(), l.text_span(), l.mm_span()), (0..1, 1..1, 1..7));
    let l = SequenceLayout { l_text: 3, t: 4 };
    assert_eq!(l.total(), 1 + 3 + 1 + 4);
    assert_eq!(l.logit_rows(), 4..8);
}

#[test]
fn logits_have_one_row_per_step() {
    let cfg = tiny();
    let model = LmModel::new(&cfg, 0);
    let (a, s) = logits(&model, &tiny_input(&cfg, 5, 1));
    assert_eq!((a.len(), s.len()), (5 * 16, 5 * 16));
    assert!(a.iter().chain(&s).all(|x| x.is_finite()));
}

#[test]
fn heads_do_not_share_parameters() {
    let cfg = tiny();
    let mut model = LmModel::new(&cfg, 2);
    let input = tiny_input(&cfg, 5, 3);
    let (a0, s0) = logits(&model, &input);
    let w = model.arch.head_speech.w;
    model.store.get_mut(w).data_mut().fill(0.0);
    let (a1, s1) = logits(&model, &input);
    assert_eq!(a0, a1);
    assert_ne!(s0, s1);
}

#[test]
fn zero_heads_give_uniform_cross_entropy() {
    let cfg = tiny();
    let mut model = LmModel::new(&cfg, 4);
    for lin in [model.arch.head_audio.clone(), model.arch.head_speech.clone()] {
        model.store.get_mut(lin.w).data_mut().fill(0.0);
        model.store.get_mut(lin.b.unwrap()).data_mut().fill(0.0);
    }
    let input = tiny_input(&cfg, 6, 5);
    let mut g = Graph::new(&model.store);
    let (loss, a, s) = model.arch.teacher_forced_loss(&mut g, &input, BOTH).unwrap();
    let ln_v = (cfg.codec_vocab as f64).ln();
    assert!((a.unwrap() - ln_v).abs() < 1e-5);
    assert!((s.unwrap() - ln_v).abs() < 1e-5);
    assert!((g.scalar(loss) as f64 - 2.0 * ln_v).abs() < 1e-5);
}

#[test]
fn out_of_range_tokens_are_rejected() {
    let cfg = tiny();
    let model = LmModel::new(&cfg, 0);
    let mut input = tiny_input(&cfg, 3, 0);
    input.audio.as_mut().unwrap()[1] = 16;
    let mut g = Graph::new(&model.store);
    assert!(matches!(model.arch.forward(&mut g, &input), Err(Error::TokenOutOfRange { id: 16, vocab: 16 })));
}

#[test]
fn single_row_stack_is_finite() {
    let cfg = tiny();
    let model = LmModel::new(&cfg, 0);
    let mut g = Graph::new(&model.store);
    let x = g.input(&Tensor::from_fn([1, cfg.d], |i| i as f32 * 0.1));
    let h = model.arch.forward_hidden(&mut g, x).unwrap();
    assert!(g.value(h).iter().all(|v| v.is_finite()));
}

#[test]
fn stack_rows_ignore_later_rows() {
    let cfg = tiny();
    let model = LmModel::new(&cfg, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = Tensor::from_fn([6, cfg.d], |_| rng.random_range(-1.0f32..1.0));
    let mut x2 = x.clone();
    x2.row_mut(3)[2] += 1.0;
    let run = |x: &Tensor| {
        let mut g = Graph::new(&model.store);
        let xi = g.input(x);
        let h = model.arch.forward_hidden(&mut g, xi).unwrap();
        g.value(h).to_vec()
    };
    let (h0, h1) = (run(&x), run(&x2));
    assert_eq!(&h0[..3 * cfg.d], &h1[..3 * cfg.d]);
    assert_ne!(&h0[3 * cfg.d..4 * cfg.d], &h1[3 * cfg.d..4 * cfg.d]);
}

#[test]
fn aligner_and_lm_gradients_match_finite_differences() {
    let cfg = tiny();
    for inst in 0..5u64 {
        let model = LmModel::new(&cfg, 100 + inst);
        let store = model.store.cast::<f64>();
        let input = tiny_input(&cfg, 4, 200 + inst);
        let report = grad_check(
            |g| model.arch.teacher_forced_loss(g, &input, BOTH).map(|(l, _, _)| l),
            &store,
            1e-5,
            inst,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-3, "instance {inst}: {report:?}");
    }
}

#[test]
fn stack_gradients_match_finite_differences() {
    let cfg = tiny();
    let model = LmModel::new(&cfg, 9);
    let store = model.store.cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = Tensor::from_fn([6, cfg.d], |_| rng.random_range(-1.0f64..1.0));
    let w = Tensor::from_fn([6, cfg.d], |_| rng.random_range(-1.0f64..1.0));
    let report = grad_check(
        |g| {
            let xi = g.constant(x.clone());
            let h = model.arch.forward_hidden(g, xi)?;
            let wv = g.constant(w.clone());
            let p = g.mul(h, wv);
            Ok(g.sum(p))
        },
        &store,
        1e-5,
        0,
    )
    .unwrap();
    assert!(report.max_rel_err < 1e-3, "{report:?}");
}

#[test]
fn generation_needs_loaded_weights_and_positive_length() {
    let cfg = tiny();
    let mut model = LmModel::new(&cfg, 0);
    let input = tiny_input(&cfg, 4, 0);
    let req = GenerateRequest::from_input(&input, BOTH, Sampling::Greedy, 0);
    assert!(matches!(generate(&model, &req), Err(Error::NotLoaded(_))));
    model.stage = Some("test".into());
    let bad = GenerateRequest { max_t: 0, video: Tensor::zeros([0, cfg.d_v]), ..req.clone() };
    assert!(generate(&model, &bad).is_err());
    let a = generate(&model, &req).unwrap();
    assert_eq!(a, generate(&model, &req).unwrap());
    let k1 = GenerateRequest { sampling: Sampling::TopK { k: 1, temperature: 0.7 }, seed: 9, ..req };
    assert_eq!(a, generate(&model, &k1).unwrap());
}

/// Trains the default-size model on one fixed V2ST batch, then checks the
/// loss drop, prefix consistency and determinism of greedy decoding.
#[test]
fn fixed_batch_training_and_greedy_decoding() {
    let split = gen_split(8, 0, 21, 1.0);
    let tok = standard_tokenizer();
    let cfg = LmConfig::default();
    let items: Vec<TrainItem> =
        split.train.iter().enumerate().map(|(i, s)| TrainItem::from_sample(i.to_string(), &gen_scene(s).unwrap())).collect();
    let batch: Vec<_> =
        items.iter().map(|it| mask_for_task(it, TaskKind::V2ST, &tok, cfg.d_v, cfg.d_mel, None).unwrap()).collect();
    let mut model = LmModel::new(&cfg, 1);
    let mut adam = Adam::new(AdamConfig::default());
    let ln_v = (cfg.codec_vocab as f64).ln();
    let mut last = f64::INFINITY;
    for step in 0..200 {
        let grads = {
            let mut g = Graph::new(&model.store);
            let (loss, _) = stage_loss(&model, &mut g, &batch).unwrap();
            last = g.scalar(loss) as f64;
            g.backward(loss)
        };
        model.store.zero_grad();
        grads.accumulate_into(&mut model.store);
        adam.step(&mut model.store, cosine_lr(step + 1, 20, 2e-5, 2e-3, 200) as f32).unwrap();
    }
    // Total CE sums the two heads, so the uniform baseline is 2 ln V.
    assert!(last <= 0.5 * 2.0 * ln_v, "final total CE {last}");
    model.stage = Some("fixed-batch".into());

    for m in &batch {
        let req = GenerateRequest::from_input(&m.input, BOTH, Sampling::Greedy, 0);
        let out = generate(&model, &req).unwrap();
        assert_eq!(out, generate(&model, &req).unwrap());
        let rescored = LmInput {
            audio: Some(pad_to(&out.audio_ids, req.max_t)),
            speech: Some(pad_to(&out.speech_ids, req.max_t)),
            ..m.input.clone()
        };
        let (a, s) = teacher_forced_argmax(&model, &rescored).unwrap();
        assert_eq!(&a[..through_eos(&out.audio_ids, cfg.audio_eos)], &out.audio_ids[..through_eos(&out.audio_ids, cfg.audio_eos)]);
        assert_eq!(
            &s[..through_eos(&out.speech_ids, cfg.speech_eos)],
            &out.speech_ids[..through_eos(&out.speech_ids, cfg.speech_eos)]
        );
    }
}

fn pad_to(ids: &[u32], t: usize) -> Vec<u32> {
    let mut v = ids.to_vec();
    v.resize(t, 0);
    v
}

/// Length of the emitted prefix up to and including EOS; later positions
/// are forced PAD rather than sampled.
fn through_eos(ids: &[u32], eos: u32) -> usize {
    ids.iter().position(|&x| x == eos).map_or(ids.len(), |p| p + 1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn logits_ignore_future_tokens(t in 2usize..7, at in 0usize..7, seed in any::<u64>()) {
        let at = at % t;
        let cfg = tiny();
        let model = LmModel::new(&cfg, seed);
        let input = tiny_input(&cfg, t, seed ^ 3);
        let (a0, s0) = logits(&model, &input);
        let mut changed = input.clone();
        let bump = |x: &mut u32| *x = 1 + (*x % 15);
        bump(&mut changed.audio.as_mut().unwrap()[at]);
        bump(&mut changed.speech.as_mut().unwrap()[at]);
        let (a1, s1) = logits(&model, &changed);
        let v = cfg.codec_vocab;
        prop_assert_eq!(&a0[..(at + 1) * v], &a1[..(at + 1) * v]);
        prop_assert_eq!(&s0[..(at + 1) * v], &s1[..(at + 1) * v]);
    }
}
