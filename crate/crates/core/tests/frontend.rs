use dualdub::curriculum::{standard_tokenizer, V2A_PROMPT};
use dualdub::frontend::*;
use dualdub::numerics::{ParamStore, Tensor};
use dualdub::synthdata::reference_mel;
use dualdub::synthdata::world::{D_MEL, N_SPEAKERS};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn prompt_encoding_is_frozen() {
    let want = [71, 101, 110, 101, 114, 257, 256, 97, 117, 100, 105, 111, 32, 102, 267, 32, 116, 104, 256, 118, 105, 100, 101, 111, 46];
    assert_eq!(standard_tokenizer().encode(V2A_PROMPT.as_bytes()).ids, want);
    assert_eq!(standard_tokenizer().encode(V2A_PROMPT.as_bytes()).ids, want);
}

#[test]
fn same_speaker_crops_are_closer_than_other_speakers() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let enc = SpeakerEncoder::new(&mut store, "spk", D_MEL, 32, &mut rng);
    let crop = 120;
    let (mut same, mut cross) = (0.0, 0.0);
    let n = 100;
    for i in 0..n {
        let a = (i % N_SPEAKERS) as u32;
        let b = ((i + 1 + i % 7) % N_SPEAKERS) as u32;
        // two different utterances of speaker a, one of speaker b
        let a1 = crop_frames(&reference_mel(a, 2 * i as u64), crop, &mut rng);
        let a2 = crop_frames(&reference_mel(a, 2 * i as u64 + 1), crop, &mut rng);
        let b1 = crop_frames(&reference_mel(b, 7000 + i as u64), crop, &mut rng);
        let (ea1, ea2, eb1) = (enc.embed(&store, &a1).unwrap(), enc.embed(&store, &a2).unwrap(), enc.embed(&store, &b1).unwrap());
        same += ea1.cosine(&ea2);
        cross += ea1.cosine(&eb1);
    }
    assert!(same / n as f64 > cross / n as f64, "same {} cross {}", same / n as f64, cross / n as f64);
}

#[test]
fn video_index_examples() {
    assert_eq!(nearest_indices(2, 4), vec![0, 0, 1, 1]);
    assert_eq!(nearest_indices(1, 5), vec![0; 5]);
    let v = VideoFeatureSeq { frames: Tensor::from_fn([10, 1], |i| i as f32), fps: 120.0 };
    assert_eq!(subsample_frames(&v, 3).frames.data(), &[0.0, 3.0, 6.0, 9.0]);
    assert_eq!(subsample_frames(&v, 3).fps, 40.0);
    assert_eq!(subsample_frames(&v, 1), v);
}

proptest! {
    #[test]
    fn bpe_round_trips_any_bytes(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
        let tok = standard_tokenizer();
        prop_assert_eq!(tok.decode(&tok.encode(&bytes).ids).unwrap(), bytes);
    }

    #[test]
    fn trained_bpe_round_trips(corpus in prop::collection::vec("[a-c ]{0,12}", 1..6), text in "[a-d ]{0,20}") {
        let bpe = Bpe::train(&corpus, 270).unwrap();
        prop_assert!(bpe.vocab_size() <= 270);
        prop_assert_eq!(bpe.decode(&bpe.encode(text.as_bytes()).ids).unwrap(), text.as_bytes());
    }

    #[test]
    fn resampling_picks_monotone_source_rows(n in 1usize..40, target in 1usize..60) {
        let idx = nearest_indices(n, target);
        prop_assert_eq!(idx.len(), target);
        prop_assert!(idx.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(idx.iter().all(|&i| i < n));
        if n > 1 && target > 1 {
            prop_assert_eq!((idx[0], idx[target - 1]), (0, n - 1));
        }
        if n == target {
            prop_assert_eq!(idx, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn speaker_mean_is_order_free(perm_seed in any::<u64>(), speaker in 0u32..16) {
        use rand::seq::SliceRandom;
        let mel = reference_mel(speaker, perm_seed);
        let mut order: Vec<usize> = (0..mel.rows()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
        let shuffled = take_rows(&mel, &order);
        let (a, b) = (mean_frames(&mel).unwrap(), mean_frames(&shuffled).unwrap());
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-5);
        }
    }
}
