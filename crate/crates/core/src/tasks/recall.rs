use rand::seq::index::sample;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::numerics::rng_from_seed;

use super::vocab::{CLS, NUM_RESERVED, PAD};

/// Disjoint key and value symbol ranges placed after the reserved ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RecallAlphabet {
    pub num_keys: usize,
    pub num_values: usize,
}

impl Default for RecallAlphabet {
    fn default() -> Self {
        RecallAlphabet {
            num_keys: 16,
            num_values: 16,
        }
    }
}

impl RecallAlphabet {
    pub fn key_id(&self, k: usize) -> usize {
        NUM_RESERVED + k
    }

    pub fn value_id(&self, v: usize) -> usize {
        NUM_RESERVED + self.num_keys + v
    }

    /// Class index of a value token, if it is one.
    pub fn value_class(&self, id: usize) -> Option<usize> {
        let base = NUM_RESERVED + self.num_keys;
        (base..base + self.num_values).contains(&id).then(|| id - base)
    }

    /// Smallest vocabulary holding every symbol.
    pub fn vocab_size(&self) -> usize {
        NUM_RESERVED + self.num_keys + self.num_values
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecallExample {
    /// `CLS k1 v1 ... km vm q`, padded with PAD to `n`.
    pub input_ids: Vec<usize>,
    /// Token id of the value paired with the query key.
    pub target_id: usize,
    /// `target_id` as a class in `0..num_values`.
    pub target_class: usize,
}

/// One associative-recall example. Keys within an example are distinct and
/// values are drawn with replacement; the query is one of the keys.
pub fn make_associative_recall(
    seed: u64,
    n: usize,
    num_kv_pairs: usize,
    alphabet: &RecallAlphabet,
) -> Result<RecallExample> {
    let m = num_kv_pairs;
    if m == 0 || 2 * m + 2 > n || m > alphabet.num_keys || alphabet.num_values == 0 {
        return Err(Error::InvalidArgument(format!(
            "{m} pairs do not fit length {n} with {} keys and {} values",
            alphabet.num_keys, alphabet.num_values
        )));
    }
    let mut rng = rng_from_seed(seed);
    let keys = sample(&mut rng, alphabet.num_keys, m).into_vec();
    let values: Vec<usize> = (0..m).map(|_| rng.gen_range(0..alphabet.num_values)).collect();
    let q = rng.gen_range(0..m);
    let mut input_ids = Vec::with_capacity(n);
    input_ids.push(CLS);
    for (&k, &v) in keys.iter().zip(&values) {
        input_ids.push(alphabet.key_id(k));
        input_ids.push(alphabet.value_id(v));
    }
    input_ids.push(alphabet.key_id(keys[q]));
    input_ids.resize(n, PAD);
    Ok(RecallExample {
        input_ids,
        target_id: alphabet.value_id(values[q]),
        target_class: values[q],
    })
}

/// Recovers the answer by reading the sequence, as any correct model must.
pub fn solve_recall(ids: &[usize], num_kv_pairs: usize) -> Option<usize> {
    let query = *ids.get(2 * num_kv_pairs + 1)?;
    let hits: Vec<usize> = (0..num_kv_pairs).filter(|&i| ids[1 + 2 * i] == query).collect();
    match hits.as_slice() {
        [i] => Some(ids[2 + 2 * i]),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pair() {
        let a = RecallAlphabet::default();
        let ex = make_associative_recall(3, 4, 1, &a).unwrap();
        let (k, v) = (ex.input_ids[1], ex.input_ids[2]);
        assert_eq!(ex.input_ids, vec![CLS, k, v, k]);
        assert_eq!(ex.target_id, v);
        assert_eq!(a.value_class(v), Some(ex.target_class));
    }

    #[test]
    fn deterministic_and_recoverable() {
        let a = RecallAlphabet::default();
        assert_eq!(
            make_associative_recall(9, 64, 4, &a).unwrap(),
            make_associative_recall(9, 64, 4, &a).unwrap()
        );
        for seed in 0..2000 {
            let ex = make_associative_recall(seed, 64, 8, &a).unwrap();
            assert_eq!(solve_recall(&ex.input_ids, 8), Some(ex.target_id));
            assert!(ex.input_ids[18..].iter().all(|&t| t == PAD));
        }
    }

    #[test]
    fn capacity() {
        let a = RecallAlphabet::default();
        assert!(make_associative_recall(0, 9, 4, &a).is_err());
        make_associative_recall(0, 10, 4, &a).unwrap();
        assert!(make_associative_recall(0, 64, 17, &a).is_err());
        assert!(make_associative_recall(0, 64, 0, &a).is_err());
    }
}
