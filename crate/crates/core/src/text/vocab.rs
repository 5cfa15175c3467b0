use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
/// Slot the dialogue layer fills with a function result.
pub const FN_SLOT: usize = 4;

const SPECIALS: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<unk>", "<fn>"];

/// Marker for characters that continue the previous token without a space.
pub const CONTINUATION: &str = "##";

/// Minimum corpus frequency for a whole word to get its own token.
pub const MIN_WORD_FREQ: usize = 2;

/// Token table: reserved tokens first, then digits, then everything else in
/// lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

pub(crate) fn has_digit(s: &str) -> bool {
    s.chars().any(|c| c.is_ascii_digit())
}

fn reserved_tokens() -> Vec<String> {
    let mut out: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    for d in '0'..='9' {
        out.push(d.to_string());
    }
    for d in '0'..='9' {
        out.push(format!("{CONTINUATION}{d}"));
    }
    out
}

impl Vocabulary {
    /// Builds a vocabulary from a text corpus.
    ///
    /// Whole words seen at least [`MIN_WORD_FREQ`] times become tokens, except
    /// words containing digits, which always split into single characters.
    /// Every character seen gets a word-initial and a continuation token.
    pub fn build<S: AsRef<str>>(corpus: &[S]) -> Result<Self> {
        let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
        let mut chars: BTreeSet<char> = BTreeSet::new();
        for line in corpus {
            for word in line.as_ref().split_whitespace() {
                *freq.entry(word).or_default() += 1;
                chars.extend(word.chars());
            }
        }
        if freq.is_empty() {
            return Err(Error::Empty("vocabulary corpus"));
        }
        let reserved = reserved_tokens();
        let reserved_set: BTreeSet<String> = reserved.iter().cloned().collect();
        let mut rest: BTreeSet<String> = BTreeSet::new();
        for (word, count) in &freq {
            if *count >= MIN_WORD_FREQ && !has_digit(word) && !word.starts_with(CONTINUATION) {
                rest.insert((*word).to_string());
            }
        }
        for c in chars {
            if c.is_ascii_digit() {
                continue;
            }
            rest.insert(c.to_string());
            rest.insert(format!("{CONTINUATION}{c}"));
        }
        let mut tokens = reserved;
        tokens.extend(rest.into_iter().filter(|t| !reserved_set.contains(t)));
        Ok(Self::from_tokens(tokens))
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line; line number is the id.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        let reserved = reserved_tokens();
        if tokens.len() < reserved.len() || tokens[..reserved.len()] != reserved[..] {
            return Err(Error::Schema("vocabulary file does not start with reserved tokens".into()));
        }
        let vocab = Self::from_tokens(tokens);
        if vocab.index.len() != vocab.tokens.len() {
            return Err(Error::Schema("duplicate token in vocabulary file".into()));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_rule() {
        let v = Vocabulary::build(&["a b", "a c"]).unwrap();
        assert!(v.id("a").is_some());
        // b and c only exist as character fallbacks
        assert!(v.id("b").is_some() && v.id("##b").is_some());
        assert!(v.id("c").is_some() && v.id("##c").is_some());

        let v = Vocabulary::build(&["power plant", "power grid"]).unwrap();
        assert!(v.id("power").is_some());
        assert!(v.id("plant").is_none());
        assert!(v.id("grid").is_none());
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let empty: [&str; 0] = [];
        assert!(Vocabulary::build(&empty).is_err());
        assert!(Vocabulary::build(&["   "]).is_err());
    }

    #[test]
    fn deterministic_file_bytes() {
        let corpus = ["the pv plant 798 kW", "the load is high", "pv output"];
        let a = Vocabulary::build(&corpus).unwrap().to_file_string();
        let b = Vocabulary::build(&corpus).unwrap().to_file_string();
        assert_eq!(a.as_bytes(), b.as_bytes());
        assert!(a.starts_with("<pad>\n<bos>\n<eos>\n<unk>\n<fn>\n0\n"));
    }

    #[test]
    fn numeric_words_never_become_tokens() {
        let v = Vocabulary::build(&["798 798 798"]).unwrap();
        assert!(v.id("798").is_none());
    }

    #[test]
    fn file_roundtrip() {
        let v = Vocabulary::build(&["a b a"]).unwrap();
        let back = Vocabulary::parse(&v.to_file_string()).unwrap();
        assert_eq!(v, back);
        assert!(Vocabulary::parse("x\ny\n").is_err());
    }
}
