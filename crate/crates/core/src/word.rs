use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Finite word over the alphabet `{0, .., n-1}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Word(pub Vec<usize>);

impl Word {
    pub fn new(symbols: Vec<usize>) -> Self {
        Word(symbols)
    }

    /// `symbol` repeated `n` times.
    pub fn repeat(symbol: usize, n: usize) -> Self {
        Word(vec![symbol; n])
    }

    /// The word `pattern` concatenated with itself until it has length `n`.
    pub fn periodic(pattern: &[usize], n: usize) -> Self {
        Word(pattern.iter().copied().cycle().take(n).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn symbols(&self) -> &[usize] {
        &self.0
    }

    pub fn concat(&self, other: &Word) -> Word {
        let mut s = self.0.clone();
        s.extend_from_slice(&other.0);
        Word(s)
    }

    /// Fails on empty words or symbols outside an alphabet of size `alphabet`.
    pub fn validate(&self, alphabet: usize) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::EmptyWord);
        }
        check_symbols(&self.0, alphabet)
    }
}

pub(crate) fn check_symbols(symbols: &[usize], alphabet: usize) -> Result<()> {
    match symbols.iter().position(|&s| s >= alphabet) {
        Some(position) => Err(Error::InvalidWord {
            symbol: symbols[position],
            position,
            alphabet,
        }),
        None => Ok(()),
    }
}

impl From<Vec<usize>> for Word {
    fn from(v: Vec<usize>) -> Self {
        Word(v)
    }
}

/// All words of length `n` over an alphabet of size `k`, in lexicographic order.
pub fn all_words(k: usize, n: usize) -> impl Iterator<Item = Word> {
    let total = k.pow(n as u32);
    (0..total).map(move |mut idx| {
        let mut s = vec![0; n];
        for slot in s.iter_mut().rev() {
            *slot = idx % k;
            idx /= k;
        }
        Word(s)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert_eq!(Word::new(vec![]).validate(2), Err(Error::EmptyWord));
        assert!(matches!(
            Word::new(vec![0, 2]).validate(2),
            Err(Error::InvalidWord {
                symbol: 2,
                position: 1,
                ..
            })
        ));
        assert!(Word::new(vec![1, 0]).validate(2).is_ok());
    }

    #[test]
    fn enumeration_is_lexicographic() {
        let w: Vec<Word> = all_words(2, 2).collect();
        assert_eq!(
            w,
            vec![
                Word(vec![0, 0]),
                Word(vec![0, 1]),
                Word(vec![1, 0]),
                Word(vec![1, 1])
            ]
        );
        assert_eq!(all_words(3, 4).count(), 81);
    }
}
