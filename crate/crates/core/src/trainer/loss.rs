use super::example::TaskSpan;
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Handles to the pieces of the multi-task objective.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub task1: Var,
    pub task2: Var,
    pub frob: Var,
}

/// Token-summed NLL of `ids[range]`, each predicted from the logit row just
/// before it. Text token `j` sits at fused row `text_offset + j`.
fn span_nll(g: &mut Graph, logits: Var, text_offset: usize, ids: &[usize], range: &std::ops::Range<usize>) -> Result<Var> {
    if range.is_empty() {
        return g.constant(Tensor::scalar(0.0));
    }
    if range.start == 0 || range.end > ids.len() {
        return Err(Error::Contract(format!(
            "span {range:?} outside predictable positions 1..{}",
            ids.len()
        )));
    }
    let rows = g.slice_rows(logits, text_offset + range.start - 1, range.len())?;
    g.cross_entropy(rows, &ids[range.clone()])
}

/// `‖A Bᵀ‖²_F` as `Σ (AᵀA) ⊙ (BᵀB)`, the trace identity for symmetric factors.
pub fn frobenius_sq(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let at = g.transpose(a)?;
    let ata = g.matmul(at, a)?;
    let bt = g.transpose(b)?;
    let btb = g.matmul(bt, b)?;
    let prod = g.mul(ata, btb)?;
    g.sum(prod)
}

/// `ϖ·L₁ + (1−ϖ)·L₂ + λ·Σ ‖A Bᵀ‖²_F` over the given trainable factor pairs.
pub fn multitask_loss(
    g: &mut Graph,
    logits: Var,
    text_offset: usize,
    ids: &[usize],
    span: &TaskSpan,
    lambda: f32,
    factors: &[(Var, Var)],
) -> Result<LossTerms> {
    if span.m1.is_empty() && span.m2.is_empty() {
        return Err(Error::Contract("both task spans are empty".into()));
    }
    if lambda < 0.0 {
        return Err(Error::Contract("lambda must be non-negative".into()));
    }
    let task1 = span_nll(g, logits, text_offset, ids, &span.m1)?;
    let task2 = span_nll(g, logits, text_offset, ids, &span.m2)?;
    let mut frob = g.constant(Tensor::scalar(0.0))?;
    for &(a, b) in factors {
        let f = frobenius_sq(g, a, b)?;
        frob = g.add(frob, f)?;
    }
    let w1 = g.scale(task1, span.weight)?;
    let w2 = g.scale(task2, 1.0 - span.weight)?;
    let tasks = g.add(w1, w2)?;
    let reg = g.scale(frob, lambda)?;
    let total = g.add(tasks, reg)?;
    Ok(LossTerms {
        total,
        task1,
        task2,
        frob,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_closed_form() {
        let mut g = Graph::new();
        // ids: 0 1 2 3 4, m1 = 1..4 (3 tokens), m2 = 4..5 (1 token)
        let logits = g.constant(Tensor::zeros(&[5, 8])).unwrap();
        let span = TaskSpan::new(1..4, 4..5, 0.5).unwrap();
        let t = multitask_loss(&mut g, logits, 0, &[0, 1, 2, 3, 4], &span, 0.0, &[]).unwrap();
        let expect = 2.0 * 8f64.ln();
        assert!((g.value(t.total).item() as f64 - expect).abs() < 1e-6);
    }

    #[test]
    fn empty_spans_rejected() {
        let mut g = Graph::new();
        let logits = g.constant(Tensor::zeros(&[3, 4])).unwrap();
        let span = TaskSpan::new(1..1, 2..2, 0.5).unwrap();
        assert!(multitask_loss(&mut g, logits, 0, &[0, 1, 2], &span, 0.0, &[]).is_err());
    }

    #[test]
    fn frobenius_matches_materialized_delta() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let a = Tensor::randn(&[5, 3], 1.0, &mut rng);
        let b = Tensor::randn(&[4, 3], 1.0, &mut rng);
        let delta = a.matmul(&b.transpose()).unwrap();
        let direct: f64 = delta.data().iter().map(|x| (*x as f64).powi(2)).sum();
        let mut g = Graph::new();
        let va = g.constant(a).unwrap();
        let vb = g.constant(b).unwrap();
        let f = frobenius_sq(&mut g, va, vb).unwrap();
        assert!((g.value(f).item() as f64 - direct).abs() < 1e-4 * direct.max(1.0));
    }
}
