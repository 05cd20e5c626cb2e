use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamId, ParamStore, Real, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Audio,
    Speech,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualTokenStreams {
    pub audio_ids: Vec<u32>,
    pub speech_ids: Vec<u32>,
    pub rate_hz: f64,
}

impl DualTokenStreams {
    pub fn validate(&self, vocab: usize) -> Result<()> {
        if self.audio_ids.len() != self.speech_ids.len() {
            return Err(Error::shape(
                "token streams",
                format!("audio has {} tokens, speech has {}", self.audio_ids.len(), self.speech_ids.len()),
            ));
        }
        if self.rate_hz.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::InvalidArgument(format!("token rate must be positive, got {}", self.rate_hz)));
        }
        for &id in self.audio_ids.iter().chain(&self.speech_ids) {
            if id as usize >= vocab {
                return Err(Error::TokenOutOfRange { id, vocab });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.audio_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.audio_ids.is_empty()
    }
}

/// Two independent codec lookup tables, one per stream.
#[derive(Debug, Clone)]
pub struct DualTokenEmbedding {
    pub audio: ParamId,
    pub speech: ParamId,
    pub vocab: usize,
}

impl DualTokenEmbedding {
    pub fn new(store: &mut ParamStore, name: &str, vocab: usize, d: usize, std: f64, rng: &mut impl Rng) -> Self {
        Self {
            audio: store.add_normal(format!("{name}.audio"), &[vocab, d], std, rng),
            speech: store.add_normal(format!("{name}.speech"), &[vocab, d], std, rng),
            vocab,
        }
    }

    pub fn table(&self, stream: Stream) -> ParamId {
        match stream {
            Stream::Audio => self.audio,
            Stream::Speech => self.speech,
        }
    }

    pub fn embed<S: Real>(&self, g: &mut Graph<'_, S>, ids: &[u32], stream: Stream) -> Result<Var> {
        let idx = ids
            .iter()
            .map(|&id| if (id as usize) < self.vocab { Ok(id as usize) } else { Err(Error::TokenOutOfRange { id, vocab: self.vocab }) })
            .collect::<Result<Vec<_>>>()?;
        let table = g.param(self.table(stream));
        Ok(g.gather(table, &idx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ParamStore, DualTokenEmbedding) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let emb = DualTokenEmbedding::new(&mut store, "tok", 10, 4, 1.0, &mut rng);
        (store, emb)
    }

    #[test]
    fn tables_are_independent_and_lookup_is_deterministic() {
        let (store, emb) = setup();
        let mut g = Graph::new(&store);
        let a = emb.embed(&mut g, &[3], Stream::Audio).unwrap();
        let s = emb.embed(&mut g, &[3], Stream::Speech).unwrap();
        assert_ne!(g.value(a), g.value(s));
        let z = emb.embed(&mut g, &[0, 0], Stream::Audio).unwrap();
        let v = g.value(z);
        assert_eq!(v[..4], v[4..]);
    }

    #[test]
    fn only_looked_up_rows_get_gradient() {
        let (store, emb) = setup();
        let mut g = Graph::new(&store);
        let e = emb.embed(&mut g, &[2, 7, 2], Stream::Speech).unwrap();
        let sq = g.mul(e, e);
        let l = g.sum(sq);
        let grads = g.backward(l);
        let gs = grads.param(emb.speech).unwrap();
        for row in 0..10 {
            let nz = gs[row * 4..row * 4 + 4].iter().any(|&x| x != 0.0);
            assert_eq!(nz, row == 2 || row == 7, "row {row}");
        }
        assert!(grads.param(emb.audio).is_none());
    }

    #[test]
    fn out_of_range_id() {
        let (store, emb) = setup();
        let mut g = Graph::new(&store);
        assert!(matches!(emb.embed(&mut g, &[10], Stream::Audio), Err(Error::TokenOutOfRange { id: 10, .. })));
    }

    #[test]
    fn stream_validation() {
        let ok = DualTokenStreams { audio_ids: vec![1, 2], speech_ids: vec![3, 4], rate_hz: 40.0 };
        assert!(ok.validate(8).is_ok());
        assert!(ok.validate(4).is_err());
        let bad = DualTokenStreams { audio_ids: vec![1], ..ok.clone() };
        assert!(bad.validate(8).is_err());
    }
}
