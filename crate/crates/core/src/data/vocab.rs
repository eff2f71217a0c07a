use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
/// First prefix id; prefix `i` is `PREFIX_BASE + i`.
pub const PREFIX_BASE: usize = 4;

/// Splits text into lowercase word tokens; each punctuation character is its
/// own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            word.extend(c.to_lowercase());
        } else {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            if !c.is_whitespace() && !c.is_control() {
                out.push(c.to_string());
            }
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Token/id mapping with reserved special and prefix ids at the bottom.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    prefix_len: usize,
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    fn reserved(prefix_len: usize) -> Vec<String> {
        let mut r: Vec<String> = ["<pad>", "<s>", "</s>", "<unk>"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        r.extend((0..prefix_len).map(|i| format!("<prefix_{i}>")));
        r
    }

    /// Frequency-ordered vocabulary (ties lexicographic) truncated to
    /// `max_size` entries including the reserved ones.
    pub fn build<S: AsRef<str>>(corpus: &[S], max_size: usize, prefix_len: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::input("cannot build a vocabulary from an empty corpus"));
        }
        if prefix_len == 0 {
            return Err(Error::input("prefix length must be at least 1"));
        }
        let reserved = Self::reserved(prefix_len);
        if max_size < reserved.len() {
            return Err(Error::input(format!(
                "max_size {max_size} smaller than the {} reserved ids",
                reserved.len()
            )));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for line in corpus {
            for tok in tokenize(line.as_ref()) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens = reserved;
        let room = max_size - tokens.len();
        tokens.extend(ranked.into_iter().take(room).map(|(t, _)| t));
        Self::from_tokens(prefix_len, tokens)
    }

    /// Rebuilds a vocabulary from its full id-ordered token list.
    pub fn from_tokens(prefix_len: usize, tokens: Vec<String>) -> Result<Self> {
        let reserved = Self::reserved(prefix_len);
        if tokens.len() < reserved.len() || tokens[..reserved.len()] != reserved[..] {
            return Err(Error::format("token list does not start with the reserved ids"));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::format(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocab {
            prefix_len,
            tokens,
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn prefix_len(&self) -> usize {
        self.prefix_len
    }

    pub fn prefix_ids(&self) -> Vec<usize> {
        (0..self.prefix_len).map(|i| PREFIX_BASE + i).collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    fn first_regular(&self) -> usize {
        PREFIX_BASE + self.prefix_len
    }

    pub fn is_reserved(&self, id: usize) -> bool {
        id < self.first_regular()
    }

    /// Token ids for `text`; unknown tokens map to UNK. No EOS is appended.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text)
            .iter()
            .map(|t| match self.ids.get(t) {
                Some(&id) if id >= self.first_regular() => id,
                _ => UNK,
            })
            .collect()
    }

    /// As [`encode`](Self::encode) with a trailing EOS.
    pub fn encode_with_eos(&self, text: &str) -> Vec<usize> {
        let mut ids = self.encode(text);
        ids.push(EOS);
        ids
    }

    /// Space-joined tokens up to the first EOS, skipping other reserved ids.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .take_while(|&&id| id != EOS)
            .filter(|&&id| !self.is_reserved(id))
            .filter_map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn frequency_order_and_reserved_slots() {
        let v = Vocab::build(&["a b a"], 100, 2).unwrap();
        assert_eq!(v.token(0), Some("<pad>"));
        assert_eq!(v.token(PREFIX_BASE + 1), Some("<prefix_1>"));
        assert!(v.id("a").unwrap() < v.id("b").unwrap());
    }

    #[test]
    fn ties_break_lexicographically() {
        let v = Vocab::build(&["zeta alpha"], 100, 2).unwrap();
        assert!(v.id("alpha").unwrap() < v.id("zeta").unwrap());
    }

    #[test]
    fn truncates_to_max_size() {
        let line: Vec<String> = (0..100).map(|i| format!("w{i}")).collect();
        let v = Vocab::build(&[line.join(" ")], 10, 2).unwrap();
        assert_eq!(v.len(), 10);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let empty: [&str; 0] = [];
        assert!(matches!(Vocab::build(&empty, 10, 2), Err(Error::Input(_))));
    }

    #[test]
    fn reserved_strings_are_not_produced_by_tokenization() {
        let v = Vocab::build(&["<prefix_0> </s> <unk> hello"], 100, 2).unwrap();
        let ids = v.encode("<prefix_0> </s> <s> hello");
        assert!(ids.iter().all(|&id| !v.is_reserved(id) || id == UNK));
        assert!(!ids.contains(&PREFIX_BASE));
        assert!(!ids.contains(&EOS));
    }

    #[test]
    fn punctuation_splits() {
        assert_eq!(
            tokenize("Who plays, the Judge?"),
            vec!["who", "plays", ",", "the", "judge", "?"]
        );
    }

    #[test]
    fn from_tokens_round_trip() {
        let v = Vocab::build(&["x y z y"], 50, 3).unwrap();
        let again = Vocab::from_tokens(3, v.tokens().to_vec()).unwrap();
        assert_eq!(v, again);
        assert!(Vocab::from_tokens(4, v.tokens().to_vec()).is_err());
    }

    proptest! {
        #[test]
        fn encode_decode_round_trips_modulo_case(
            words in proptest::collection::vec("[A-Za-z]{1,6}", 1..12),
            pick in proptest::collection::vec(0usize..64, 1..8),
        ) {
            let corpus = vec![words.join(" ")];
            let v = Vocab::build(&corpus, 1000, 2).unwrap();
            let sentence: Vec<&str> = pick.iter().map(|&i| words[i % words.len()].as_str()).collect();
            let sentence = sentence.join(" ");
            let ids = v.encode(&sentence);
            prop_assert!(ids.iter().all(|&id| !v.is_reserved(id)));
            prop_assert_eq!(v.decode(&ids), sentence.to_lowercase());
        }
    }
}
