use dualdub::aligner::{Aligner, AlignerConfig, CrossBlock};
use dualdub::numerics::{Graph, ParamStore, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const D: usize = 8;
const DV: usize = 6;

fn cfg(out_std: f64) -> AlignerConfig {
    AlignerConfig { d: D, d_v: DV, max_t: 8, out_std }
}

fn aligner(seed: u64, out_std: f64) -> (ParamStore, Aligner) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let a = Aligner::new(&mut store, "al", &cfg(out_std), &mut rng);
    (store, a)
}

fn rand_t(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::from_fn([r, c], |_| rng.random_range(-1.0f32..1.0))
}

fn mat(store: &ParamStore, id: dualdub::numerics::ParamId) -> Vec<Vec<f64>> {
    let t = store.get(id);
    (0..t.rows()).map(|i| t.row(i).iter().map(|&x| x as f64).collect()).collect()
}

fn vecmat(x: &[f64], w: &[Vec<f64>]) -> Vec<f64> {
    (0..w[0].len()).map(|j| x.iter().zip(w).map(|(a, row)| a * row[j]).sum()).collect()
}

/// Row-by-row scalar reference for one cross block.
fn naive_block(store: &ParamStore, b: &CrossBlock, query: &Tensor, kv: &Tensor, causal: bool) -> Vec<Vec<f64>> {
    let (wq, wk, wv, wo) = (mat(store, b.wq.w), mat(store, b.wk.w), mat(store, b.wv.w), mat(store, b.wo.w));
    let bo: Vec<f64> = store.get(b.wo.b.unwrap()).data().iter().map(|&x| x as f64).collect();
    let (pq, pk) = (mat(store, b.pos_q), mat(store, b.pos_k));
    let row = |t: &Tensor, i: usize| t.row(i).iter().map(|&x| x as f64).collect::<Vec<f64>>();
    let add = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<f64>>();
    (0..query.rows())
        .map(|i| {
            let q = vecmat(&add(&row(query, i), &pq[i]), &wq);
            let keys: Vec<usize> = (0..kv.rows()).filter(|&j| !causal || j <= i).collect();
            let s: Vec<f64> = keys
                .iter()
                .map(|&j| {
                    let k = vecmat(&add(&row(kv, j), &pk[j]), &wk);
                    q.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>() / (D as f64).sqrt()
                })
                .collect();
            let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
            let z: f64 = e.iter().sum();
            let mut out = vec![0.0; D];
            for (w, &j) in e.iter().zip(&keys) {
                let v = vecmat(&row(kv, j), &wv);
                for (o, x) in out.iter_mut().zip(v) {
                    *o += w / z * x;
                }
            }
            add(&vecmat(&out, &wo), &bo)
        })
        .collect()
}

fn assert_close(got: &[f32], want: &[Vec<f64>], tol: f64) {
    let flat: Vec<f64> = want.iter().flatten().copied().collect();
    assert_eq!(got.len(), flat.len());
    for (a, b) in got.iter().zip(&flat) {
        assert!((*a as f64 - b).abs() < tol, "{a} vs {b}");
    }
}

#[test]
fn cross_blocks_match_naive_reference() {
    let (store, al) = aligner(1, 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (q, kv) = (rand_t(&mut rng, 3, D), rand_t(&mut rng, 3, D));
    let mut g = Graph::new(&store);
    let (qv, kvv) = (g.input(&q), g.input(&kv));
    let c = al.causal_cross(&mut g, &al.audio_from_speech, qv, kvv).unwrap();
    let n = al.noncausal_cross(&mut g, &al.audio_from_video, qv, kvv).unwrap();
    assert_close(g.value(c), &naive_block(&store, &al.audio_from_speech, &q, &kv, true), 1e-5);
    assert_close(g.value(n), &naive_block(&store, &al.audio_from_video, &q, &kv, false), 1e-5);
}

#[test]
fn single_step_causal_cross_is_the_value_path() {
    let (store, al) = aligner(3, 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (q, kv) = (rand_t(&mut rng, 1, D), rand_t(&mut rng, 1, D));
    let mut g = Graph::new(&store);
    let (qv, kvv) = (g.input(&q), g.input(&kv));
    let out = al.causal_cross(&mut g, &al.speech_from_audio, qv, kvv).unwrap();
    let b = &al.speech_from_audio;
    let v = b.wv.forward(&mut g, kvv);
    let want = b.wo.forward(&mut g, v);
    for (a, w) in g.value(out).iter().zip(g.value(want)) {
        assert!((a - w).abs() < 1e-6);
    }
}

#[test]
fn identical_video_rows_give_the_shared_value() {
    let (store, al) = aligner(5, 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let q = rand_t(&mut rng, 4, D);
    let r = rand_t(&mut rng, 1, D);
    let video = Tensor::from_fn([4, D], |i| r.data()[i % D]);
    let mut g = Graph::new(&store);
    let (qv, vv) = (g.input(&q), g.input(&video));
    let out = al.noncausal_cross(&mut g, &al.audio_from_video, qv, vv).unwrap();
    let b = &al.audio_from_video;
    let one = g.input(&r);
    let v = b.wv.forward(&mut g, one);
    let want = b.wo.forward(&mut g, v);
    let want = g.value(want).to_vec();
    for t in 0..4 {
        for (a, w) in g.value(out)[t * D..(t + 1) * D].iter().zip(&want) {
            assert!((a - w).abs() < 1e-5);
        }
    }
}

#[test]
fn permuting_video_with_its_key_positions_is_invisible() {
    let (store, al) = aligner(7, 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let q = rand_t(&mut rng, 5, D);
    let video = rand_t(&mut rng, 5, D);
    let perm = [3usize, 0, 4, 1, 2];
    let permuted = Tensor::from_fn([5, D], |i| video.row(perm[i / D])[i % D]);
    let mut g = Graph::new(&store);
    let qv = g.input(&q);
    let v0 = g.input(&video);
    let v1 = g.input(&permuted);
    let b = &al.audio_from_video;
    let a = b.attend(&mut g, qv, v0, &[0, 1, 2, 3, 4]).unwrap();
    let p = b.attend(&mut g, qv, v1, &perm).unwrap();
    for (x, y) in g.value(a).iter().zip(g.value(p)) {
        assert!((x - y).abs() < 1e-5);
    }
}

#[test]
fn zero_output_projections_give_exact_residual_identity() {
    let (store, al) = aligner(9, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (ea, es, v) = (rand_t(&mut rng, 5, D), rand_t(&mut rng, 5, D), rand_t(&mut rng, 5, DV));
    let mut g = Graph::new(&store);
    let (a, s, vv) = (g.input(&ea), g.input(&es), g.input(&v));
    let h = al.align(&mut g, a, s, vv).unwrap();
    assert_eq!(g.value(h.h_a), ea.data());
    assert_eq!(g.value(h.h_s), es.data());
}

#[test]
fn length_mismatch_is_rejected() {
    let (store, al) = aligner(11, 0.3);
    let mut g = Graph::new(&store);
    let a = g.input(&Tensor::zeros([3, D]));
    let b = g.input(&Tensor::zeros([4, D]));
    assert!(al.causal_cross(&mut g, &al.audio_from_speech, a, b).is_err());
    assert!(al.noncausal_cross(&mut g, &al.audio_from_video, a, b).is_err());
}

#[test]
fn video_perturbation_reaches_the_first_step() {
    let (store, al) = aligner(12, 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (ea, es, v) = (rand_t(&mut rng, 5, D), rand_t(&mut rng, 5, D), rand_t(&mut rng, 5, DV));
    let mut v2 = v.clone();
    v2.row_mut(4)[0] += 0.5;
    let run = |video: &Tensor| {
        let mut g = Graph::new(&store);
        let (a, s, vv) = (g.input(&ea), g.input(&es), g.input(video));
        let h = al.align(&mut g, a, s, vv).unwrap();
        (g.value(h.h_a)[..D].to_vec(), g.value(h.h_s)[..D].to_vec())
    };
    let (a0, s0) = run(&v);
    let (a1, s1) = run(&v2);
    assert_ne!(a0, a1);
    assert_ne!(s0, s1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn streams_only_see_each_others_past(t in 2usize..8, at in 0usize..8, seed in any::<u64>()) {
        let at = at % t;
        let (store, al) = aligner(seed, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let (ea, es, v) = (rand_t(&mut rng, t, D), rand_t(&mut rng, t, D), rand_t(&mut rng, t, DV));
        let run = |ea: &Tensor, es: &Tensor| {
            let mut g = Graph::new(&store);
            let (a, s, vv) = (g.input(ea), g.input(es), g.input(&v));
            let h = al.align(&mut g, a, s, vv).unwrap();
            (g.value(h.h_a).to_vec(), g.value(h.h_s).to_vec())
        };
        let (a0, s0) = run(&ea, &es);
        let mut es2 = es.clone();
        es2.row_mut(at).iter_mut().for_each(|x| *x += 1.0);
        let mut ea2 = ea.clone();
        ea2.row_mut(at).iter_mut().for_each(|x| *x -= 1.0);
        let (a1, _) = run(&ea, &es2);
        let (_, s1) = run(&ea2, &es);
        prop_assert_eq!(&a0[..at * D], &a1[..at * D]);
        prop_assert_eq!(&s0[..at * D], &s1[..at * D]);
    }
}
