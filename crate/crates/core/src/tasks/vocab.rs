use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const CLS: usize = 1;
pub const SEP: usize = 2;
pub const MASK: usize = 3;
pub const NUM_RESERVED: usize = 4;

const RESERVED: [&str; NUM_RESERVED] = ["[PAD]", "[CLS]", "[SEP]", "[MASK]"];

/// Whitespace-separated toy symbols. Ids `0..4` are reserved; content
/// symbols are `w0, w1, ...` with ids from 4 up.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ToyVocab {
    symbols: Vec<String>,
    ids: HashMap<String, usize>,
}

impl ToyVocab {
    /// `size` counts the reserved ids too.
    pub fn new(size: usize) -> Result<Self> {
        if size <= NUM_RESERVED {
            return Err(Error::InvalidArgument(format!(
                "vocabulary of {size} leaves no content symbols"
            )));
        }
        let symbols: Vec<String> = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain((0..size - NUM_RESERVED).map(|i| format!("w{i}")))
            .collect();
        let ids = symbols.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Ok(ToyVocab { symbols, ids })
    }

    pub fn size(&self) -> usize {
        self.symbols.len()
    }

    pub fn num_content(&self) -> usize {
        self.symbols.len() - NUM_RESERVED
    }

    /// Id of the `i`-th content symbol.
    pub fn content_id(&self, i: usize) -> usize {
        NUM_RESERVED + i
    }

    pub fn is_content(&self, id: usize) -> bool {
        (NUM_RESERVED..self.size()).contains(&id)
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.ids.get(symbol).copied()
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>> {
        text.split_whitespace()
            .map(|s| {
                self.id(s).ok_or_else(|| Error::Unknown {
                    what: "symbol",
                    name: s.to_string(),
                })
            })
            .collect()
    }

    pub fn detokenize(&self, ids: &[usize]) -> Result<String> {
        let words = ids
            .iter()
            .map(|&id| {
                self.symbol(id).ok_or(Error::IdOutOfRange {
                    table: "vocab",
                    id,
                    size: self.size(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(words.join(" "))
    }
}
