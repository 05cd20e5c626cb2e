use std::sync::Arc;

use dualdub::numerics::nn::TransformerBlock;
use dualdub::numerics::{
    attention_weights, cross_entropy, grad_check, masked_attention, Adam, AttentionMask, Graph, ParamStore, Tensor,
    Var,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Projects a matrix output onto a fixed random direction so it can be
/// checked as a scalar loss.
fn project(g: &mut Graph<'_, f64>, out: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rand_tensor(&mut rng, g.shape(out));
    let w = g.constant(w);
    let p = g.mul(out, w);
    g.sum(p)
}

fn store_with(shapes: &[(&str, &[usize])], seed: u64) -> ParamStore<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    for (name, shape) in shapes {
        s.add(*name, rand_tensor(&mut rng, shape));
    }
    s
}

fn check(store: &ParamStore<f64>, f: impl Fn(&mut Graph<'_, f64>) -> dualdub::Result<Var>) {
    let report = grad_check(f, store, 1e-3, 11).unwrap();
    assert!(report.max_rel_err < 1e-3, "{report:?}");
}

#[test]
fn elementwise_and_matmul_ops_grad_check() {
    let store = store_with(&[("a", &[3, 4]), ("b", &[4, 5]), ("c", &[3, 5]), ("r", &[5])], 1);
    let ids: Vec<_> = store.ids().collect();
    check(&store, |g| {
        let a = g.param(ids[0]);
        let b = g.param(ids[1]);
        let c = g.param(ids[2]);
        let r = g.param(ids[3]);
        let ab = g.matmul(a, b);
        let x = g.add(ab, c);
        let x = g.add_row(x, r);
        let y = g.gelu(x);
        let z = g.tanh(c);
        let w = g.mul(y, z);
        let e = g.exp(c);
        let e = g.scale(e, 0.3);
        let w = g.sub(w, e);
        let wbt = g.matmul_bt(w, b);
        let bt = g.transpose(b);
        let wbt2 = g.matmul(w, bt);
        let both = g.add(wbt, wbt2);
        Ok(project(g, both, 2))
    });
}

#[test]
fn norm_softmax_and_reshaping_ops_grad_check() {
    let store = store_with(&[("x", &[4, 6]), ("gamma", &[6]), ("t", &[5, 6]), ("s", &[1])], 3);
    let ids: Vec<_> = store.ids().collect();
    let mask: Arc<[bool]> = (0..24).map(|i| i % 6 <= i / 6 + 1).collect::<Vec<_>>().into();
    check(&store, |g| {
        let x = g.param(ids[0]);
        let gamma = g.param(ids[1]);
        let t = g.param(ids[2]);
        let s = g.param(ids[3]);
        let n = g.rms_norm(x, gamma, 1e-5);
        let sm = g.softmax_rows(n, Some(mask.clone()));
        let sm2 = g.softmax_rows(x, None);
        let rn = g.row_normalize(x);
        let gat = g.gather(t, &[4, 0, 4, 2]);
        let cat = g.concat_cols(&[sm, rn]);
        let left = g.slice_cols(cat, 3, 6);
        let rows = g.concat_rows(&[left, gat, sm2]);
        let mid = g.slice_rows(rows, 2, 7);
        let r = g.reshape(mid, &[6, 7]);
        let r = g.mul_scalar(r, s);
        let p = project(g, r, 4);
        let m = g.mean(gat);
        Ok(g.add(p, m))
    });
}

#[test]
fn cross_entropy_grad_check() {
    let store = store_with(&[("logits", &[5, 7])], 5);
    let id = store.ids().next().unwrap();
    check(&store, |g| {
        let l = g.param(id);
        let l = g.scale(l, 3.0);
        Ok(cross_entropy(g, l, &[1, 0, 6, 9, 3], 9)?.0)
    });
}

#[test]
fn attention_and_transformer_block_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store32 = ParamStore::<f32>::new();
    let block = TransformerBlock::new(&mut store32, "blk", 8, 2, 16, 0.3, &mut rng);
    let mut store = store32.cast::<f64>();
    let x_id = store.add("x", rand_tensor(&mut rng, &[5, 8]));
    let mask = AttentionMask::causal(5, 5);
    check(&store, |g| {
        let x = g.param(x_id);
        let h = block.forward(g, x, &mask)?;
        let q = g.slice_cols(h, 0, 4);
        let k = g.slice_cols(x, 2, 4);
        let a = masked_attention(g, q, k, k, &AttentionMask::non_causal(5, 5))?;
        let p1 = project(g, h, 7);
        let p2 = project(g, a, 8);
        Ok(g.add(p1, p2))
    });
}

fn mask_strategy() -> impl Strategy<Value = (usize, usize, Vec<bool>)> {
    (1usize..6, 1usize..6).prop_flat_map(|(q, k)| {
        proptest::collection::vec(any::<bool>(), q * k).prop_map(move |mut bits| {
            for i in 0..q {
                bits[i * k + (i % k)] = true;
            }
            (q, k, bits)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one((q, k, bits) in mask_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let qm = Tensor::<f32>::from_fn([q, 4], |_| rng.random_range(-3.0..3.0));
        let km = Tensor::<f32>::from_fn([k, 4], |_| rng.random_range(-3.0..3.0));
        for mask in [
            AttentionMask::custom(q, k, bits.clone()).unwrap(),
            AttentionMask::non_causal(q, k),
            AttentionMask::causal(q, k),
        ] {
            let store = ParamStore::<f32>::new();
            let mut g = Graph::new(&store);
            let qv = g.input(&qm);
            let kv = g.input(&km);
            let w = attention_weights(&mut g, qv, kv, &mask).unwrap();
            let vals = g.value(w);
            for i in 0..q {
                let s: f64 = vals[i * k..(i + 1) * k].iter().map(|&x| x as f64).sum();
                prop_assert!((s - 1.0).abs() < 1e-6, "row {i} sums to {s}");
                for j in 0..k {
                    if !mask.allowed(i, j) {
                        prop_assert_eq!(vals[i * k + j], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn causal_attention_ignores_future_positions(t in 2usize..7, j_off in 0usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let j = 1 + j_off % (t - 1);
        let q = Tensor::<f32>::from_fn([t, 4], |_| rng.random_range(-1.0..1.0));
        let kv = Tensor::<f32>::from_fn([t, 4], |_| rng.random_range(-1.0..1.0));
        let mut kv2 = kv.clone();
        for c in 0..4 {
            kv2.row_mut(j)[c] += rng.random_range(-5.0..5.0);
        }
        let run = |kvm: &Tensor<f32>| {
            let store = ParamStore::<f32>::new();
            let mut g = Graph::new(&store);
            let qv = g.input(&q);
            let k = g.input(kvm);
            let o = masked_attention(&mut g, qv, k, k, &AttentionMask::causal(t, t)).unwrap();
            g.tensor(o)
        };
        let a = run(&kv);
        let b = run(&kv2);
        for i in 0..j {
            let ra: Vec<u32> = a.row(i).iter().map(|x| x.to_bits()).collect();
            let rb: Vec<u32> = b.row(i).iter().map(|x| x.to_bits()).collect();
            prop_assert_eq!(ra, rb);
        }
    }

    #[test]
    fn adam_is_bit_deterministic(seed in any::<u64>(), steps in 1usize..6) {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::<f32>::new();
            let id = store.add_normal("w", &[3, 3], 1.0, &mut rng);
            let mut adam = Adam::new(Default::default());
            for _ in 0..steps {
                let grads = {
                    let mut g = Graph::new(&store);
                    let w = g.param(id);
                    let s = g.mul(w, w);
                    let e = g.tanh(s);
                    let l = g.sum(e);
                    g.backward(l)
                };
                store.zero_grad();
                grads.accumulate_into(&mut store);
                adam.step(&mut store, 1e-2).unwrap();
            }
            store
        };
        prop_assert!(run().bitwise_eq(&run()));
    }
}
