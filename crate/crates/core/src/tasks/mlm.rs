use rand::Rng as _;

use crate::error::{Error, Result};
use crate::numerics::Rng;

use super::corpus::{Document, Sentence};
use super::vocab::{ToyVocab, CLS, MASK, PAD, SEP};

/// Masking constants, BERT defaults.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskConfig {
    /// Fraction of content tokens selected for prediction.
    pub mask_rate: f64,
    /// Of the selected tokens: share replaced by `[MASK]`.
    pub mask_token_prob: f64,
    /// Of the selected tokens: share replaced by a random content token.
    pub random_token_prob: f64,
    /// Probability that segment B is the true next sentence.
    pub next_sentence_prob: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            mask_rate: 0.15,
            mask_token_prob: 0.8,
            random_token_prob: 0.1,
            next_sentence_prob: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlmExample {
    pub input_ids: Vec<usize>,
    pub type_ids: Vec<usize>,
    /// Strictly increasing positions of tokens to predict.
    pub mask_positions: Vec<usize>,
    /// Original ids at `mask_positions`.
    pub mask_labels: Vec<usize>,
    /// 1 when segment B follows segment A in the same document.
    pub nsp_label: usize,
    /// Content tokens dropped to fit the length.
    pub truncated: usize,
}

/// Trims the longer segment from the end until both fit in `budget` tokens.
fn truncate_pair(a: &mut Sentence, b: &mut Sentence, budget: usize) -> usize {
    let mut dropped = 0;
    while a.len() + b.len() > budget {
        if a.len() >= b.len() {
            a.pop();
        } else {
            b.pop();
        }
        dropped += 1;
    }
    dropped
}

/// `[CLS] A [SEP] B [SEP]` padded to `n`, with BERT-style masking.
///
/// Segment A is sentence `sentence` of `docs[doc]`. Segment B is the next
/// sentence with probability `next_sentence_prob`, otherwise a random
/// sentence from a different document.
pub fn make_mlm_nsp(
    docs: &[Document],
    doc: usize,
    sentence: usize,
    vocab: &ToyVocab,
    n: usize,
    cfg: &MaskConfig,
    rng: &mut Rng,
) -> Result<MlmExample> {
    if docs.len() < 2 {
        return Err(Error::InvalidArgument(
            "next-sentence pairs need at least two documents".into(),
        ));
    }
    let src = docs.get(doc).ok_or(Error::IdOutOfRange {
        table: "documents",
        id: doc,
        size: docs.len(),
    })?;
    if sentence + 1 >= src.sentences.len() {
        return Err(Error::InvalidArgument(format!(
            "sentence {sentence} has no successor in a {}-sentence document",
            src.sentences.len()
        )));
    }
    if n < 5 {
        return Err(Error::InvalidArgument(format!("length {n} cannot hold two segments")));
    }
    for p in [
        cfg.mask_rate,
        cfg.mask_token_prob,
        cfg.random_token_prob,
        cfg.next_sentence_prob,
    ] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("probability {p} outside [0, 1]")));
        }
    }
    let mut a = src.sentences[sentence].clone();
    let (mut b, nsp_label) = if rng.gen_bool(cfg.next_sentence_prob) {
        (src.sentences[sentence + 1].clone(), 1)
    } else {
        let mut other = rng.gen_range(0..docs.len() - 1);
        if other >= doc {
            other += 1;
        }
        let d = &docs[other];
        (d.sentences[rng.gen_range(0..d.sentences.len())].clone(), 0)
    };
    let truncated = truncate_pair(&mut a, &mut b, n - 3);

    let mut input_ids = Vec::with_capacity(n);
    let mut type_ids = Vec::with_capacity(n);
    input_ids.push(CLS);
    input_ids.extend(&a);
    input_ids.push(SEP);
    type_ids.resize(input_ids.len(), 0);
    input_ids.extend(&b);
    input_ids.push(SEP);
    type_ids.resize(input_ids.len(), 1);
    input_ids.resize(n, PAD);
    type_ids.resize(n, 0);

    let mut mask_positions = Vec::new();
    let mut mask_labels = Vec::new();
    for (pos, slot) in input_ids.iter_mut().enumerate() {
        let id = *slot;
        if !vocab.is_content(id) || !rng.gen_bool(cfg.mask_rate) {
            continue;
        }
        mask_positions.push(pos);
        mask_labels.push(id);
        let u: f64 = rng.gen();
        if u < cfg.mask_token_prob {
            *slot = MASK;
        } else if u < cfg.mask_token_prob + cfg.random_token_prob {
            *slot = vocab.content_id(rng.gen_range(0..vocab.num_content()));
        }
    }
    Ok(MlmExample {
        input_ids,
        type_ids,
        mask_positions,
        mask_labels,
        nsp_label,
        truncated,
    })
}
