//! Byte-level BPE. Ids 0..256 are raw bytes; id `256 + r` is merge rank `r`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bpe {
    merges: Vec<(u32, u32)>,
    #[serde(skip)]
    ranks: HashMap<(u32, u32), u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextTokenSeq {
    pub ids: Vec<u32>,
    pub vocab_size: usize,
}

fn count_pairs(seqs: &[Vec<u32>]) -> HashMap<(u32, u32), usize> {
    let mut counts = HashMap::new();
    for s in seqs {
        for w in s.windows(2) {
            *counts.entry((w[0], w[1])).or_insert(0) += 1;
        }
    }
    counts
}

fn merge_pair(seq: &[u32], pair: (u32, u32), new_id: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(seq.len());
    let mut i = 0;
    while i < seq.len() {
        if i + 1 < seq.len() && (seq[i], seq[i + 1]) == pair {
            out.push(new_id);
            i += 2;
        } else {
            out.push(seq[i]);
            i += 1;
        }
    }
    out
}

impl Bpe {
    /// Greedy training. Each round merges the most frequent adjacent pair,
    /// with ties going to the smallest `(left, right)` id pair. Stops at
    /// `vocab_size` or when no pair occurs more than once.
    pub fn train<B: AsRef<[u8]>>(corpus: &[B], vocab_size: usize) -> Result<Self> {
        if vocab_size <= 256 {
            return Err(Error::InvalidArgument(format!("BPE vocab size must exceed 256, got {vocab_size}")));
        }
        if corpus.is_empty() {
            return Err(Error::Empty("BPE training corpus"));
        }
        let mut seqs: Vec<Vec<u32>> =
            corpus.iter().map(|s| s.as_ref().iter().map(|&b| b as u32).collect()).collect();
        let mut merges = Vec::new();
        while 256 + merges.len() < vocab_size {
            let counts = count_pairs(&seqs);
            let best = counts
                .into_iter()
                .filter(|&(_, c)| c >= 2)
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)));
            let Some((pair, _)) = best else { break };
            let new_id = 256 + merges.len() as u32;
            for s in &mut seqs {
                *s = merge_pair(s, pair, new_id);
            }
            merges.push(pair);
        }
        Ok(Self::from_merges(merges))
    }

    pub fn from_merges(merges: Vec<(u32, u32)>) -> Self {
        let ranks = merges.iter().enumerate().map(|(r, &p)| (p, r as u32)).collect();
        Self { merges, ranks }
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn vocab_size(&self) -> usize {
        256 + self.merges.len()
    }

    pub fn encode(&self, text: &[u8]) -> TextTokenSeq {
        let mut ids: Vec<u32> = text.iter().map(|&b| b as u32).collect();
        loop {
            let best = ids
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&r| (r, (w[0], w[1]))))
                .min();
            let Some((rank, pair)) = best else { break };
            ids = merge_pair(&ids, pair, 256 + rank);
        }
        TextTokenSeq { ids, vocab_size: self.vocab_size() }
    }

    pub fn decode(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            self.expand(id, &mut out)?;
        }
        Ok(out)
    }

    fn expand(&self, id: u32, out: &mut Vec<u8>) -> Result<()> {
        if id < 256 {
            out.push(id as u8);
            return Ok(());
        }
        let (a, b) = *self
            .merges
            .get((id - 256) as usize)
            .ok_or(Error::TokenOutOfRange { id, vocab: self.vocab_size() })?;
        self.expand(a, out)?;
        self.expand(b, out)
    }

    /// Rebuilds the rank lookup after deserialization.
    pub fn reindex(&mut self) {
        *self = Self::from_merges(std::mem::take(&mut self.merges));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn only_candidate_pair_is_merged_first() {
        let bpe = Bpe::train(&["aaaa"], 258).unwrap();
        assert_eq!(bpe.merges()[0], (b'a' as u32, b'a' as u32));
    }

    #[test]
    fn no_repeated_pair_means_no_merges() {
        let bpe = Bpe::train(&["abcdef", "ghij"], 300).unwrap();
        assert!(bpe.merges().is_empty());
    }

    #[test]
    fn abab_matches_hand_simulation() {
        // Round 1: ab x4, ba x2 -> ab=256. Round 2: (256,256) x2 -> 257.
        // Round 3: every string is the single token 257, nothing left.
        let bpe = Bpe::train(&["abab", "abab"], 260).unwrap();
        assert_eq!(bpe.merges(), &[(97, 98), (256, 256)]);
        assert_eq!(bpe.encode(b"abab").ids, vec![257]);
    }

    #[test]
    fn ties_go_to_smallest_pair() {
        // "ab" and "cd" both occur twice.
        let bpe = Bpe::train(&["ab", "ab", "cd", "cd"], 257).unwrap();
        assert_eq!(bpe.merges(), &[(97, 98)]);
    }

    #[test]
    fn empty_round_trip_and_errors() {
        let bpe = Bpe::train(&["hello hello"], 270).unwrap();
        assert!(bpe.encode(b"").ids.is_empty());
        assert!(bpe.decode(&[]).unwrap().is_empty());
        assert!(matches!(bpe.decode(&[5000]), Err(Error::TokenOutOfRange { .. })));
        assert!(Bpe::train::<&str>(&[], 300).is_err());
        assert!(Bpe::train(&["x"], 256).is_err());
    }
}
