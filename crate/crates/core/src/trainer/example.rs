use std::ops::Range;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::text::{tokenize, Vocabulary, BOS, EOS};

/// Separates the task-1 and task-2 parts of an answer.
pub const TASK_DELIMITER: &str = ";";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Text-only question/answer pair.
    Text,
    /// Time-series window plus text prompt.
    Multimodal,
}

/// Target positions (indices into the text ids) of the two answer tasks and
/// the weight `ϖ` of task 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpan {
    pub m1: Range<usize>,
    pub m2: Range<usize>,
    pub weight: f32,
}

impl TaskSpan {
    pub fn new(m1: Range<usize>, m2: Range<usize>, weight: f32) -> Result<Self> {
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::Range {
                value: weight as f64,
                lo: 0.0,
                hi: 1.0,
            });
        }
        if m1.start < m1.end && m2.start < m2.end && m1.start < m2.end && m2.start < m1.end {
            return Err(Error::Contract("task spans overlap".into()));
        }
        Ok(TaskSpan { m1, m2, weight })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub mode: Mode,
    /// Normalized `T × C` window, multimodal examples only.
    pub window: Option<Tensor>,
    pub prompt: String,
    pub answer: String,
    pub weight: f32,
}

impl TrainingExample {
    pub fn text(prompt: impl Into<String>, answer: impl Into<String>) -> Self {
        TrainingExample {
            mode: Mode::Text,
            window: None,
            prompt: prompt.into(),
            answer: answer.into(),
            weight: 1.0,
        }
    }

    pub fn multimodal(window: Tensor, prompt: impl Into<String>, answer: impl Into<String>, weight: f32) -> Self {
        TrainingExample {
            mode: Mode::Multimodal,
            window: Some(window),
            prompt: prompt.into(),
            answer: answer.into(),
            weight,
        }
    }

    /// Tokenizes into `[BOS] prompt answer [EOS]` and locates the task spans.
    ///
    /// Task 1 runs through the first delimiter token, task 2 covers the rest of
    /// the answer and the closing EOS. Without a delimiter everything is task 1.
    pub fn encode(&self, vocab: &Vocabulary) -> Result<EncodedExample> {
        match (self.mode, &self.window) {
            (Mode::Text, Some(_)) => return Err(Error::Contract("text-only example carries a window".into())),
            (Mode::Multimodal, None) => return Err(Error::Contract("multimodal example without a window".into())),
            _ => {}
        }
        let prompt = tokenize(&self.prompt, vocab).ids;
        let answer = tokenize(&self.answer, vocab).ids;
        if answer.is_empty() {
            return Err(Error::Empty("answer"));
        }
        let mut ids = Vec::with_capacity(prompt.len() + answer.len() + 2);
        ids.push(BOS);
        ids.extend(&prompt);
        let start = ids.len();
        ids.extend(&answer);
        ids.push(EOS);
        let end = ids.len();
        let delim = vocab.id(TASK_DELIMITER);
        let span = match answer.iter().position(|&t| Some(t) == delim) {
            Some(k) => TaskSpan::new(start..start + k + 1, start + k + 1..end, self.weight)?,
            None => TaskSpan::new(start..end, end..end, self.weight)?,
        };
        Ok(EncodedExample {
            mode: self.mode,
            numeric: self.window.clone(),
            ids,
            answer_start: start,
            span,
        })
    }
}

/// A tokenized example ready for the trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedExample {
    pub mode: Mode,
    pub numeric: Option<Tensor>,
    pub ids: Vec<usize>,
    pub answer_start: usize,
    pub span: TaskSpan,
}

impl EncodedExample {
    /// Prompt ids including the leading BOS.
    pub fn prompt_ids(&self) -> &[usize] {
        &self.ids[..self.answer_start]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spans_split_at_delimiter() {
        let vocab = Vocabulary::build(&["hour 7 ; interval: 3 ; value: 1.00 kW", "hour ; interval: value: kW"]).unwrap();
        let ex = TrainingExample::multimodal(Tensor::zeros(&[2, 1]), "hour 7", "interval: 3 ; value: 1.00 kW", 0.4);
        let enc = ex.encode(&vocab).unwrap();
        assert_eq!(enc.ids[0], BOS);
        assert_eq!(*enc.ids.last().unwrap(), EOS);
        // prompt: hour 7 ; answer: interval: 3 ;
        assert_eq!(enc.answer_start, 3);
        assert_eq!(enc.span.m1, 3..6);
        assert_eq!(enc.span.m2.start, 6);
        assert_eq!(enc.span.m2.end, enc.ids.len());
        assert_eq!(enc.span.weight, 0.4);
    }

    #[test]
    fn text_mode_has_single_span() {
        let vocab = Vocabulary::build(&["a b", "a b"]).unwrap();
        let enc = TrainingExample::text("a", "b").encode(&vocab).unwrap();
        assert_eq!(enc.span.m1, 2..4);
        assert!(enc.span.m2.is_empty());
        assert!(enc.numeric.is_none());
    }

    #[test]
    fn invalid_spans() {
        assert!(TaskSpan::new(0..3, 2..4, 0.5).is_err());
        assert!(TaskSpan::new(0..2, 2..4, 1.5).is_err());
        assert!(TaskSpan::new(0..2, 2..4, 0.0).is_ok());
    }
}
