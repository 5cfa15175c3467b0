use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub mae: f64,
    pub rmse: f64,
    pub count: usize,
}

pub fn metrics(pred: &[f64], truth: &[f64]) -> Result<MetricsReport> {
    if pred.len() != truth.len() {
        return Err(Error::dim("metrics", format!("{} predictions, {} targets", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::Empty("metrics input"));
    }
    let n = pred.len() as f64;
    let (abs, sq) = pred.iter().zip(truth).fold((0.0, 0.0), |(a, s), (p, t)| {
        let e = p - t;
        (a + e.abs(), s + e * e)
    });
    Ok(MetricsReport {
        mae: abs / n,
        rmse: (sq / n).sqrt(),
        count: pred.len(),
    })
}
