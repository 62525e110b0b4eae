use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::numerics::{child_rng, rng_from_seed};

use super::vocab::ToyVocab;

/// A sentence is a list of content token ids.
pub type Sentence = Vec<usize>;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Document {
    pub sentences: Vec<Sentence>,
}

/// Topic-conditioned first-order Markov language over the vocabulary's
/// content symbols. The tables are a function of `seed` alone, so corpora
/// drawn with different corpus seeds share one language.
#[derive(Clone, Debug, PartialEq)]
pub struct Grammar {
    pub seed: u64,
    pub num_topics: usize,
    /// Content symbols preferred by each topic.
    pub words_per_topic: usize,
    /// Probability that the next token follows the current one's successor table.
    pub follow_prob: f64,
    /// Successor candidates per symbol.
    pub successors: usize,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for Grammar {
    fn default() -> Self {
        Grammar {
            seed: 0,
            num_topics: 8,
            words_per_topic: 48,
            follow_prob: 0.6,
            successors: 3,
            min_len: 5,
            max_len: 14,
        }
    }
}

struct Tables {
    topics: Vec<Vec<usize>>,
    next: Vec<Vec<usize>>,
}

impl Grammar {
    fn validate(&self, vocab: &ToyVocab) -> Result<()> {
        let k = vocab.num_content();
        if self.num_topics == 0
            || self.words_per_topic == 0
            || self.words_per_topic > k
            || self.successors == 0
            || self.min_len == 0
            || self.min_len > self.max_len
            || !(0.0..=1.0).contains(&self.follow_prob)
        {
            return Err(Error::InvalidArgument(format!("bad grammar {self:?} for {k} symbols")));
        }
        Ok(())
    }

    fn tables(&self, vocab: &ToyVocab) -> Tables {
        let mut rng = rng_from_seed(self.seed);
        let all: Vec<usize> = (0..vocab.num_content()).map(|i| vocab.content_id(i)).collect();
        let topics = (0..self.num_topics)
            .map(|_| all.choose_multiple(&mut rng, self.words_per_topic).copied().collect())
            .collect();
        let next = (0..vocab.size())
            .map(|_| all.choose_multiple(&mut rng, self.successors).copied().collect())
            .collect();
        Tables { topics, next }
    }
}

/// Draws `num_docs` documents of `sentences_per_doc` sentences each.
/// Document `i` uses the stream `child_rng(seed, i)`.
pub fn generate_corpus(
    seed: u64,
    num_docs: usize,
    sentences_per_doc: usize,
    grammar: &Grammar,
    vocab: &ToyVocab,
) -> Result<Vec<Document>> {
    if num_docs == 0 || sentences_per_doc == 0 {
        return Err(Error::InvalidArgument("corpus sizes must be positive".into()));
    }
    grammar.validate(vocab)?;
    let tables = grammar.tables(vocab);
    Ok((0..num_docs)
        .map(|d| {
            let mut rng = child_rng(seed, d as u64);
            let topic = &tables.topics[rng.gen_range(0..tables.topics.len())];
            let sentences = (0..sentences_per_doc)
                .map(|_| {
                    let len = rng.gen_range(grammar.min_len..=grammar.max_len);
                    let mut s = Vec::with_capacity(len);
                    let mut cur = topic[rng.gen_range(0..topic.len())];
                    s.push(cur);
                    while s.len() < len {
                        cur = if rng.gen_bool(grammar.follow_prob) {
                            let succ = &tables.next[cur];
                            succ[rng.gen_range(0..succ.len())]
                        } else {
                            topic[rng.gen_range(0..topic.len())]
                        };
                        s.push(cur);
                    }
                    s
                })
                .collect();
            Document { sentences }
        })
        .collect())
}

/// One sentence per line, a blank line after each document.
pub fn write_corpus(docs: &[Document], vocab: &ToyVocab, w: &mut impl Write) -> Result<()> {
    let io = |e| Error::io("<corpus>", e);
    for doc in docs {
        for s in &doc.sentences {
            writeln!(w, "{}", vocab.detokenize(s)?).map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    Ok(())
}

pub fn read_corpus(r: impl BufRead, vocab: &ToyVocab) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    let mut cur = Document::default();
    for line in r.lines() {
        let line = line.map_err(|e| Error::io("<corpus>", e))?;
        if line.trim().is_empty() {
            if !cur.sentences.is_empty() {
                docs.push(std::mem::take(&mut cur));
            }
            continue;
        }
        cur.sentences.push(vocab.tokenize(&line)?);
    }
    if !cur.sentences.is_empty() {
        docs.push(cur);
    }
    Ok(docs)
}
