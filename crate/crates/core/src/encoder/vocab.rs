use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::tokenize::pre_tokenize;

/// Rank-ordered token list. Index `len()` is reserved for unknown tokens.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        Self::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Builds a vocabulary from tokens in rank order; later duplicates are
    /// dropped.
    pub fn from_tokens<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Self {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in tokens {
            let t = t.into();
            if !v.index.contains_key(&t) {
                v.index.insert(t.clone(), v.tokens.len());
                v.tokens.push(t);
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id used for tokens outside the vocabulary.
    pub fn unk_id(&self) -> usize {
        self.tokens.len()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(self.unk_id())
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line, rank order.
    pub fn to_lines(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_lines(src: &str) -> Self {
        Self::from_tokens(src.lines().filter(|l| !l.is_empty()))
    }
}

/// Frequency-ranked vocabulary: whole words first (ties broken
/// lexicographically), then single characters fill any remaining room so that
/// out-of-vocabulary words still decompose into known pieces.
pub fn build_vocab<'a>(texts: impl IntoIterator<Item = &'a str>, max_size: usize) -> Vocab {
    let mut words: BTreeMap<String, usize> = BTreeMap::new();
    for text in texts {
        for tok in pre_tokenize(text).tokens {
            *words.entry(tok.text).or_default() += 1;
        }
    }
    let mut chars: BTreeMap<String, usize> = BTreeMap::new();
    for (w, n) in &words {
        for c in w.chars() {
            *chars.entry(c.to_string()).or_default() += n;
        }
    }
    let ranked = |m: BTreeMap<String, usize>| {
        let mut v: Vec<(String, usize)> = m.into_iter().collect();
        // BTreeMap order is lexicographic; a stable sort keeps it for ties.
        v.sort_by_key(|e| std::cmp::Reverse(e.1));
        v.into_iter().map(|(t, _)| t)
    };
    let mut vocab = Vocab::from_tokens(ranked(words).take(max_size));
    for c in ranked(chars) {
        if vocab.len() >= max_size {
            break;
        }
        if !vocab.contains(&c) {
            vocab.index.insert(c.clone(), vocab.tokens.len());
            vocab.tokens.push(c);
        }
    }
    vocab
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Tokenizer;

    #[test]
    fn ranks_by_frequency_then_lexicographically() {
        let v = build_vocab(["a b", "a"], 10);
        assert_eq!(v.id("a"), Some(0));
        assert_eq!(v.id("b"), Some(1));
        let v = build_vocab(["zeta alpha", "mid"], 3);
        assert_eq!(v.tokens(), ["alpha", "mid", "zeta"]);
    }

    #[test]
    fn size_one_keeps_the_top_word() {
        let v = build_vocab(["the cat", "the dog"], 1);
        assert_eq!(v.tokens(), ["the"]);
        let tok = Tokenizer::new(v);
        assert_eq!(tok.tokenize("the cat").texts(), ["the", "c", "a", "t"]);
    }

    #[test]
    fn characters_fill_remaining_room() {
        let v = build_vocab(["ab ab b"], 4);
        assert_eq!(v.tokens(), ["ab", "b", "a"]);
    }

    #[test]
    fn line_format_round_trips() {
        let v = build_vocab(["one two two three three three"], 10);
        assert_eq!(Vocab::from_lines(&v.to_lines()), v);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocab>(&json).unwrap(), v);
        assert_eq!(v.unk_id(), v.len());
    }
}
