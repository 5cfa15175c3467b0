use std::ops::Range;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Row ranges of the three segments of a fused sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Spans {
    pub numeric: Range<usize>,
    pub placeholder: Range<usize>,
    pub text: Range<usize>,
}

impl Spans {
    pub fn new(numeric: usize, placeholder: usize, text: usize) -> Self {
        Spans {
            numeric: 0..numeric,
            placeholder: numeric..numeric + placeholder,
            text: numeric + placeholder..numeric + placeholder + text,
        }
    }

    pub fn len(&self) -> usize {
        self.text.end
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `[h^N : h^P : h^T]` with its segment boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedSequence {
    pub rows: Tensor,
    pub spans: Spans,
}

/// Concatenates the numeric rows, `placeholder_len` constant rows and the
/// text rows.
pub fn fuse(numeric: &Tensor, text: &Tensor, placeholder_len: usize, placeholder_value: f32) -> Result<FusedSequence> {
    let d = text.cols();
    if numeric.rank() != 2 || text.rank() != 2 {
        return Err(Error::dim("fuse", "segments must be matrices"));
    }
    if numeric.cols() != d {
        return Err(Error::dim(
            "fuse",
            format!("numeric width {} vs text width {d}", numeric.cols()),
        ));
    }
    let mut data = Vec::with_capacity((numeric.rows() + placeholder_len + text.rows()) * d);
    data.extend_from_slice(numeric.data());
    data.extend(std::iter::repeat_n(placeholder_value, placeholder_len * d));
    data.extend_from_slice(text.data());
    let spans = Spans::new(numeric.rows(), placeholder_len, text.rows());
    Ok(FusedSequence {
        rows: Tensor::new(vec![spans.len(), d], data)?,
        spans,
    })
}

/// Graph-recording variant of [`fuse`]; `numeric` is `None` for text-only input.
pub fn fuse_on_graph(
    g: &mut Graph,
    numeric: Option<Var>,
    text: Var,
    placeholder_len: usize,
    placeholder_value: f32,
) -> Result<(Var, Spans)> {
    let d = g.value(text).cols();
    let mut parts = Vec::with_capacity(3);
    let mut numeric_rows = 0;
    if let Some(n) = numeric {
        if g.value(n).cols() != d {
            return Err(Error::dim(
                "fuse",
                format!("numeric width {} vs text width {d}", g.value(n).cols()),
            ));
        }
        numeric_rows = g.value(n).rows();
        if numeric_rows > 0 {
            parts.push(n);
        }
    }
    if placeholder_len > 0 {
        parts.push(g.constant(Tensor::full(&[placeholder_len, d], placeholder_value))?);
    }
    let text_rows = g.value(text).rows();
    if text_rows > 0 {
        parts.push(text);
    }
    let fused = g.concat_rows(&parts)?;
    Ok((fused, Spans::new(numeric_rows, placeholder_len, text_rows)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_placeholder_is_plain_concat() {
        let a = Tensor::full(&[2, 3], 1.0);
        let b = Tensor::full(&[1, 3], 2.0);
        let f = fuse(&a, &b, 0, -1.0).unwrap();
        assert_eq!(f.rows.data(), &[1., 1., 1., 1., 1., 1., 2., 2., 2.]);
        assert_eq!(f.spans.placeholder, 2..2);
    }

    #[test]
    fn placeholder_rows_are_constant() {
        let a = Tensor::full(&[3, 2], 0.5);
        let b = Tensor::full(&[4, 2], 0.25);
        let f = fuse(&a, &b, 2, -1.0).unwrap();
        assert_eq!(f.rows.rows(), 3 + 2 + 4);
        for r in f.spans.placeholder.clone() {
            assert_eq!(f.rows.row(r), &[-1.0, -1.0]);
        }
        assert_eq!(f.spans.text, 5..9);
    }

    #[test]
    fn width_mismatch() {
        assert!(fuse(&Tensor::zeros(&[1, 2]), &Tensor::zeros(&[1, 3]), 1, -1.0).is_err());
    }
}
