use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Id every empty (or all-punctuation) text maps to.
pub const EMPTY_TOKEN_ID: u32 = 0;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Sparse bag-of-tokens: sorted unique ids with their multiplicities.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenFeatures {
    indices: Vec<u32>,
    counts: Vec<u32>,
    total: u32,
}

impl TokenFeatures {
    /// Builds features from raw ids (any order, repeats allowed).
    /// An empty id list yields the reserved empty token.
    pub fn from_ids<I: IntoIterator<Item = u32>>(ids: I) -> Self {
        let mut bag: BTreeMap<u32, u32> = BTreeMap::new();
        for id in ids {
            *bag.entry(id).or_default() += 1;
        }
        if bag.is_empty() {
            bag.insert(EMPTY_TOKEN_ID, 1);
        }
        let total = bag.values().sum();
        let (indices, counts) = bag.into_iter().unzip();
        Self {
            indices,
            counts,
            total,
        }
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    /// `(id, count / total)` pairs: the mean-pooling weights.
    pub fn weights(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        let total = f64::from(self.total);
        self.indices
            .iter()
            .zip(&self.counts)
            .map(move |(&i, &c)| (i, f64::from(c) / total))
    }
}

/// Lowercased alphanumeric runs of `text`.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

/// Hashes each lowercased alphanumeric run of `text` into `[0, vocab)`.
pub fn tokenize(text: &str, vocab: usize) -> TokenFeatures {
    let vocab = vocab as u64;
    TokenFeatures::from_ids(words(text).map(|w| (fnv1a64(w.as_bytes()) % vocab) as u32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::hash::Hasher;

    const V: usize = 32768;

    fn reference_id(word: &str) -> u32 {
        let mut h = fnv::FnvHasher::default();
        h.write(word.as_bytes());
        (h.finish() % V as u64) as u32
    }

    #[test]
    fn empty_text_is_reserved_token() {
        let f = tokenize("", V);
        assert_eq!(f.indices(), &[0]);
        assert_eq!(f.counts(), &[1]);
        assert_eq!(f.total(), 1);
        assert_eq!(tokenize(" ,;! ", V), f);
    }

    #[test]
    fn repeated_token_counts() {
        let f = tokenize("hello hello", V);
        assert_eq!(f.indices().len(), 1);
        assert_ne!(f.indices()[0], 0);
        assert_eq!(f.counts(), &[2]);
        assert_eq!(f.total(), 2);
    }

    #[test]
    fn matches_reference_fnv() {
        let f = tokenize("Magnesium, beans!", V);
        let mut expected = vec![reference_id("magnesium"), reference_id("beans")];
        expected.sort_unstable();
        assert_eq!(f.indices(), expected.as_slice());
        assert_eq!(f.counts(), &[1, 1]);
        // published FNV-1a 64 test vector
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn indices_sorted_and_total_consistent() {
        let f = tokenize("b a c a b a zeta Zeta", 97);
        assert!(f.indices().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(f.total(), f.counts().iter().sum::<u32>());
        assert_eq!(f.total(), 8);
    }
}
