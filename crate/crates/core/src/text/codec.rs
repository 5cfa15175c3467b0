use super::vocab::{has_digit, Vocabulary, BOS, CONTINUATION, EOS, PAD, UNK};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Token ids plus the text they came from, when known.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub text: Option<String>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Greedy word-level match with character fallback.
///
/// Words containing a digit are always spelled out character by character;
/// characters after the first use the continuation form so that spacing can be
/// restored exactly.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> TokenSequence {
    let mut ids = Vec::new();
    for word in text.split_whitespace() {
        if !has_digit(word) {
            if let Some(id) = vocab.id(word) {
                ids.push(id);
                continue;
            }
        }
        for (i, c) in word.chars().enumerate() {
            let piece = if i == 0 {
                c.to_string()
            } else {
                format!("{CONTINUATION}{c}")
            };
            ids.push(vocab.id(&piece).unwrap_or(UNK));
        }
    }
    TokenSequence {
        ids,
        text: Some(text.to_string()),
    }
}

/// Inverse of [`tokenize`]: single spaces between words, none inside
/// continuation runs, truncated at the first end-of-sequence token.
pub fn detokenize(ids: &[usize], vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for &id in ids {
        if id == EOS {
            break;
        }
        if id == PAD || id == BOS {
            continue;
        }
        let tok = vocab.token(id).unwrap_or("<unk>");
        match tok.strip_prefix(CONTINUATION) {
            Some(rest) if !rest.is_empty() => out.push_str(rest),
            _ => {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(tok);
            }
        }
    }
    out
}

/// The `V × d` token embedding matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: Tensor,
}

impl EmbeddingTable {
    pub fn new(matrix: Tensor) -> Result<Self> {
        if matrix.rank() != 2 {
            return Err(Error::dim("embedding table", "must be a matrix"));
        }
        Ok(EmbeddingTable { matrix })
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.rows()
    }

    pub fn width(&self) -> usize {
        self.matrix.cols()
    }

    /// `h^T`: row k is the embedding of `ids[k]`.
    pub fn embed(&self, ids: &[usize]) -> Result<Tensor> {
        let (v, d) = (self.vocab_size(), self.width());
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Index {
                    index: id,
                    limit: v,
                    context: "embed",
                });
            }
            data.extend_from_slice(self.matrix.row(id));
        }
        Tensor::new(vec![ids.len(), d], data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::build(&[
            "power 798 kW class",
            "power class interval: 42 ; value: 335.16 kW",
        ])
        .unwrap()
    }

    #[test]
    fn empty_text() {
        assert!(tokenize("", &vocab()).ids.is_empty());
        assert_eq!(detokenize(&[], &vocab()), "");
    }

    #[test]
    fn digits_split_into_characters() {
        let v = vocab();
        let seq = tokenize("power 798", &v);
        let toks: Vec<&str> = seq.ids.iter().map(|&i| v.token(i).unwrap()).collect();
        assert_eq!(toks, ["power", "7", "##9", "##8"]);
    }

    #[test]
    fn eos_truncates() {
        let v = vocab();
        let mut ids = tokenize("class 42", &v).ids;
        ids.push(EOS);
        ids.extend(tokenize("power", &v).ids);
        assert_eq!(detokenize(&ids, &v), "class 42");
    }

    #[test]
    fn roundtrip_on_corpus() {
        let v = vocab();
        for s in ["power 798 kW class", "power class interval: 42 ; value: 335.16 kW"] {
            assert_eq!(detokenize(&tokenize(s, &v).ids, &v), s);
        }
    }

    #[test]
    fn unknown_characters_become_unk() {
        let v = vocab();
        let seq = tokenize("Ω", &v);
        assert_eq!(seq.ids, vec![UNK]);
    }

    #[test]
    fn embed_gathers_rows() {
        let table = EmbeddingTable::new(Tensor::identity(3)).unwrap();
        assert_eq!(table.embed(&[2]).unwrap().data(), &[0., 0., 1.]);
        let rep = table.embed(&[1, 1]).unwrap();
        assert_eq!(rep.row(0), rep.row(1));
        assert!(table.embed(&[3]).is_err());
    }
}
