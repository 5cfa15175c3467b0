use super::dataset::{round4, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitPolicy {
    /// First `train_fraction` of rows for training, the rest for testing.
    Chronological { train_fraction: f64 },
    /// First half to second half.
    Transfer,
    /// Halves as in `Transfer`, with the second half rescaled to a plant of
    /// `factor × E_r`.
    CapacityTransfer { factor: f64 },
}

pub fn split(ds: &Dataset, policy: SplitPolicy) -> Result<(Dataset, Dataset)> {
    if ds.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let cut = match policy {
        SplitPolicy::Chronological { train_fraction } => {
            if !(0.0..=1.0).contains(&train_fraction) {
                return Err(Error::Range {
                    value: train_fraction,
                    lo: 0.0,
                    hi: 1.0,
                });
            }
            (ds.len() as f64 * train_fraction).round() as usize
        }
        SplitPolicy::Transfer | SplitPolicy::CapacityTransfer { .. } => ds.len() / 2,
    };
    if cut == 0 || cut == ds.len() {
        return Err(Error::Contract(format!("split of {} rows at {cut} leaves a side empty", ds.len())));
    }
    let part = |rows: &[super::dataset::Row]| Dataset {
        meta: ds.meta.clone(),
        features: ds.features.clone(),
        rows: rows.to_vec(),
    };
    let train = part(&ds.rows[..cut]);
    let mut test = part(&ds.rows[cut..]);
    if let SplitPolicy::CapacityTransfer { factor } = policy {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::Config(format!("capacity factor must be positive, got {factor}")));
        }
        let capacity = round4(ds.meta.capacity * factor);
        test.meta.capacity = capacity;
        for r in &mut test.rows {
            r.target = round4(r.target * factor).min(capacity);
        }
    }
    Ok((train, test))
}
