use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::vocab::Vocab;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    /// Byte range of the token in the original input.
    pub span: Range<usize>,
    /// True when the token is a piece of an out-of-vocabulary word.
    pub piece: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq {
    pub tokens: Vec<Token>,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.text.as_str()).collect()
    }

    /// Keeps the last `max` tokens. Dialog contexts are cut from the front so
    /// the most recent turns survive.
    pub fn truncate_front(&mut self, max: usize) {
        if self.tokens.len() > max {
            self.tokens.drain(..self.tokens.len() - max);
        }
    }
}

fn is_group_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '-'
}

/// Length in bytes of a `[TAG]` or `{slot}` group starting at `rest`, if any.
fn group_len(rest: &str) -> Option<usize> {
    let close = match rest.chars().next()? {
        '[' => ']',
        '{' => '}',
        _ => return None,
    };
    for (i, c) in rest.char_indices().skip(1) {
        if c == close {
            return (i > 1).then_some(i + c.len_utf8());
        }
        if !is_group_char(c) {
            return None;
        }
    }
    None
}

/// Splits on whitespace and punctuation without consulting a vocabulary.
/// Punctuation marks become their own tokens; bracketed tags stay whole.
pub fn pre_tokenize(text: &str) -> TokenSeq {
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < text.len() {
        let rest = &text[i..];
        let c = rest.chars().next().expect("in bounds");
        let len = if c.is_whitespace() {
            i += c.len_utf8();
            continue;
        } else if let Some(n) = group_len(rest) {
            n
        } else if c.is_alphanumeric() {
            rest.char_indices()
                .find(|(_, c)| !c.is_alphanumeric())
                .map_or(rest.len(), |(j, _)| j)
        } else {
            c.len_utf8()
        };
        tokens.push(Token {
            text: rest[..len].to_lowercase(),
            span: i..i + len,
            piece: false,
        });
        i += len;
    }
    TokenSeq { tokens }
}

#[derive(Clone, Debug)]
pub struct Tokenizer {
    vocab: Vocab,
}

impl Tokenizer {
    pub fn new(vocab: Vocab) -> Self {
        Self { vocab }
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn tokenize(&self, text: &str) -> TokenSeq {
        tokenize_with(&self.vocab, text)
    }
}

/// Vocabulary words pass through; anything else is split by greedy longest
/// match against the vocabulary, one character at a time when nothing
/// matches.
pub fn tokenize_with(vocab: &Vocab, text: &str) -> TokenSeq {
    let mut out = Vec::new();
    for word in pre_tokenize(text).tokens {
        if vocab.contains(&word.text) {
            out.push(word);
        } else {
            decompose(vocab, text, word.span, &mut out);
        }
    }
    TokenSeq { tokens: out }
}

fn decompose(vocab: &Vocab, text: &str, span: Range<usize>, out: &mut Vec<Token>) {
    let src = &text[span.clone()];
    // Byte offset and lowercase form of every source character.
    let chars: Vec<(usize, String)> = src
        .char_indices()
        .map(|(o, c)| (o, c.to_lowercase().collect()))
        .collect();
    let end_of = |k: usize| {
        if k < chars.len() {
            chars[k].0
        } else {
            src.len()
        }
    };
    let mut i = 0;
    while i < chars.len() {
        let mut best = i + 1;
        let mut piece = String::new();
        for (j, (_, ch)) in chars.iter().enumerate().skip(i) {
            piece.push_str(ch);
            if vocab.contains(&piece) {
                best = j + 1;
            }
        }
        let lower: String = chars[i..best].iter().map(|(_, s)| s.as_str()).collect();
        out.push(Token {
            text: lower,
            span: span.start + chars[i].0..span.start + end_of(best),
            piece: true,
        });
        i = best;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn words_and_punctuation() {
        assert_eq!(
            pre_tokenize("What is your name?").texts(),
            ["what", "is", "your", "name", "?"]
        );
        assert!(pre_tokenize("").is_empty());
        assert!(pre_tokenize("  \t\n").is_empty());
    }

    #[test]
    fn tags_and_slots_stay_whole() {
        let seq = pre_tokenize("[SYSTEM] Your balance is {balance}. [USER] [NUMBER]");
        assert_eq!(
            seq.texts(),
            [
                "[system]",
                "your",
                "balance",
                "is",
                "{balance}",
                ".",
                "[user]",
                "[number]"
            ]
        );
        assert_eq!(pre_tokenize("a [b c]").texts(), ["a", "[", "b", "c", "]"]);
        assert_eq!(pre_tokenize("I don't").texts(), ["i", "don", "'", "t"]);
    }

    #[test]
    fn greedy_longest_match() {
        let vocab = Vocab::from_tokens(["93", "15", "8", "3", "1"]);
        let tok = Tokenizer::new(vocab);
        let seq = tok.tokenize("9315831");
        assert_eq!(seq.texts(), ["93", "15", "8", "3", "1"]);
        assert!(seq.tokens.iter().all(|t| t.piece));
        let spans: Vec<_> = seq.tokens.iter().map(|t| t.span.clone()).collect();
        assert_eq!(spans, [0..2, 2..4, 4..5, 5..6, 6..7]);
    }

    #[test]
    fn fallback_to_characters() {
        let tok = Tokenizer::new(Vocab::from_tokens(["name", "na"]));
        assert_eq!(tok.tokenize("Name names").texts(), ["name", "name", "s"]);
        assert_eq!(tok.tokenize("xyz").texts(), ["x", "y", "z"]);
        assert_eq!(tok.tokenize("NAme").tokens[0].span, 0..4);
    }

    #[test]
    fn spans_reconstruct_non_whitespace() {
        let text = "Hi,  I'm [NAME]\tfrom Zürich {city}!";
        let tok = Tokenizer::new(Vocab::from_tokens(["hi", "from"]));
        let joined: String = tok
            .tokenize(text)
            .tokens
            .iter()
            .map(|t| &text[t.span.clone()])
            .collect();
        let expected: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        assert_eq!(joined, expected);
    }

    #[test]
    fn truncation_keeps_the_tail() {
        let mut seq = pre_tokenize("a b c d");
        seq.truncate_front(2);
        assert_eq!(seq.texts(), ["c", "d"]);
    }
}
