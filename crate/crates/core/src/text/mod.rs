//! Word-level tokenizer with character fallback, embedding lookup and
//! detokenization.

mod codec;
mod vocab;

pub use codec::{detokenize, tokenize, EmbeddingTable, TokenSequence};
pub use vocab::{Vocabulary, BOS, CONTINUATION, EOS, FN_SLOT, MIN_WORD_FREQ, PAD, UNK};
