use crate::error::{Error, Result};
use crate::forecast::split_tasks;
use crate::text::{tokenize, EmbeddingTable, Vocabulary};

pub const DEFAULT_THRESHOLD: f64 = 0.8;

/// Mean-pooled token embedding of a text.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceEmbedding {
    pub vector: Vec<f64>,
    /// The text produced no tokens; `vector` is zero.
    pub empty: bool,
}

pub fn sentence_embed(text: &str, table: &EmbeddingTable, vocab: &Vocabulary) -> Result<SentenceEmbedding> {
    let ids = tokenize(text, vocab).ids;
    let d = table.width();
    let mut vector = vec![0.0f64; d];
    if ids.is_empty() {
        return Ok(SentenceEmbedding { vector, empty: true });
    }
    let rows = table.embed(&ids)?;
    for i in 0..ids.len() {
        for (acc, &x) in vector.iter_mut().zip(rows.row(i)) {
            *acc += x as f64;
        }
    }
    let n = ids.len() as f64;
    vector.iter_mut().for_each(|v| *v /= n);
    Ok(SentenceEmbedding { vector, empty: false })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityReport {
    /// Cosine similarity in `[-1, 1]`.
    pub score: f64,
    pub threshold: f64,
    pub is_hallucination: bool,
    /// The output embedding had zero norm; `score` was set to 0.
    pub degenerate: bool,
}

pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>();
    let nb = b.iter().map(|x| x * x).sum::<f64>();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    // sqrt(na * nb) keeps cos(x, x) exactly 1.
    Some((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

pub fn classify(score: f64, threshold: f64) -> bool {
    score < threshold
}

pub fn similarity(
    expected: &str,
    output: &str,
    table: &EmbeddingTable,
    vocab: &Vocabulary,
    threshold: f64,
) -> Result<SimilarityReport> {
    let e = sentence_embed(expected, table, vocab)?;
    if e.empty {
        return Err(Error::Empty("expected text"));
    }
    let o = sentence_embed(output, table, vocab)?;
    if e.vector.iter().all(|&x| x == 0.0) {
        return Err(Error::Contract("expected text has a zero embedding".into()));
    }
    let (score, degenerate) = match cosine(&e.vector, &o.vector) {
        Some(s) => (s, false),
        None => (0.0, true),
    };
    Ok(SimilarityReport {
        score,
        threshold,
        is_hallucination: classify(score, threshold),
        degenerate,
    })
}

/// Per-task hallucination verdicts `(task 1, task 2)` of `output` against the
/// expected answer, each span compared on its own.
pub fn span_hallucinations(
    expected: &str,
    output: &str,
    table: &EmbeddingTable,
    vocab: &Vocabulary,
    threshold: f64,
) -> Result<(SimilarityReport, SimilarityReport)> {
    let (e1, e2) = split_tasks(expected);
    let (o1, o2) = split_tasks(output);
    Ok((
        similarity(&e1, &o1, table, vocab, threshold)?,
        similarity(&e2, &o2, table, vocab, threshold)?,
    ))
}
