//! Toy parallel corpora from a one-to-one dictionary, with known gold links.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{GoldAlignment, ParallelText};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DictionarySpec {
    pub vocab: usize,
    pub pairs: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for DictionarySpec {
    fn default() -> Self {
        DictionarySpec {
            vocab: 100,
            pairs: 2000,
            min_len: 5,
            max_len: 15,
            seed: 7,
        }
    }
}

pub struct DictionaryCorpus {
    pub text: ParallelText,
    /// Sure links equal possible links.
    pub gold: Vec<GoldAlignment>,
}

pub fn source_word(i: usize) -> String {
    format!("s{i}")
}

pub fn target_word(i: usize) -> String {
    format!("t{i}")
}

/// Source word `s<i>` always translates to `t<i>`. Each sentence draws
/// distinct words uniformly, and its target side is the translation in an
/// independently shuffled order.
pub fn dictionary_corpus(spec: &DictionarySpec) -> DictionaryCorpus {
    assert!(spec.min_len >= 1 && spec.min_len <= spec.max_len && spec.max_len <= spec.vocab);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let all: Vec<usize> = (0..spec.vocab).collect();
    let mut pairs = Vec::with_capacity(spec.pairs);
    let mut gold = Vec::with_capacity(spec.pairs);
    for idx in 0..spec.pairs {
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let words: Vec<usize> = all.choose_multiple(&mut rng, len).copied().collect();
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        // target position j carries the translation of source position order[j]
        let src = words.iter().map(|&w| source_word(w)).collect();
        let tgt = order.iter().map(|&i| target_word(words[i])).collect();
        let mut g = GoldAlignment::new(idx);
        for (j, &i) in order.iter().enumerate() {
            g.add_sure((i, j));
        }
        pairs.push((src, tgt));
        gold.push(g);
    }
    DictionaryCorpus {
        text: ParallelText { pairs, dropped: Vec::new() },
        gold,
    }
}
