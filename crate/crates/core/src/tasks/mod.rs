//! Synthetic data: a toy language for masked-LM/next-sentence pretraining
//! and an associative-recall classification task.

mod corpus;
mod mlm;
mod recall;
mod stream;
mod vocab;

pub use corpus::{generate_corpus, read_corpus, write_corpus, Document, Grammar, Sentence};
pub use mlm::{make_mlm_nsp, MaskConfig, MlmExample};
pub use recall::{make_associative_recall, solve_recall, RecallAlphabet, RecallExample};
pub use stream::{read_examples, write_examples, Examples, STREAM_MAGIC, STREAM_VERSION};
pub use vocab::{ToyVocab, CLS, MASK, NUM_RESERVED, PAD, SEP};

use crate::error::Result;
use crate::numerics::{child_rng, derive_seed};

/// The `index`-th pretraining example of a stream seeded by `seed`. Every
/// example draws from its own derived stream, so any partition of indices
/// over workers gives the same examples.
pub fn mlm_example_at(
    docs: &[Document],
    vocab: &ToyVocab,
    n: usize,
    cfg: &MaskConfig,
    seed: u64,
    index: u64,
) -> Result<MlmExample> {
    use rand::Rng as _;
    let mut rng = child_rng(seed, index);
    let doc = rng.gen_range(0..docs.len());
    let max_sentence = docs[doc].sentences.len().saturating_sub(1).max(1);
    let sentence = rng.gen_range(0..max_sentence);
    make_mlm_nsp(docs, doc, sentence, vocab, n, cfg, &mut rng)
}

/// The `index`-th recall example of a stream seeded by `seed`.
pub fn recall_example_at(
    seed: u64,
    index: u64,
    n: usize,
    num_kv_pairs: usize,
    alphabet: &RecallAlphabet,
) -> Result<RecallExample> {
    make_associative_recall(derive_seed(seed, index), n, num_kv_pairs, alphabet)
}
