use crate::error::{Error, Result};

/// Rated capacity `E_r` split into `N` equal intervals plus a zero class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinningScheme {
    e_r: f64,
    n: usize,
}

impl BinningScheme {
    pub fn new(e_r: f64, n: usize) -> Result<Self> {
        if !(e_r > 0.0 && e_r.is_finite()) {
            return Err(Error::Config(format!("rated capacity must be positive, got {e_r}")));
        }
        if n == 0 {
            return Err(Error::Config("interval count must be at least 1".into()));
        }
        Ok(BinningScheme { e_r, n })
    }

    pub fn rated(&self) -> f64 {
        self.e_r
    }

    pub fn intervals(&self) -> usize {
        self.n
    }

    pub fn classes(&self) -> usize {
        self.n + 1
    }

    /// Upper edge of interval `i`, `(i/N)·E_r`.
    pub fn edge(&self, i: usize) -> f64 {
        i as f64 / self.n as f64 * self.e_r
    }

    pub fn half_width(&self) -> f64 {
        self.e_r / (2.0 * self.n as f64)
    }

    /// 0 for zero output, else the `i` with `edge(i-1) < p ≤ edge(i)`.
    pub fn bin_power(&self, p: f64) -> Result<usize> {
        if !(0.0..=self.e_r).contains(&p) {
            return Err(Error::Range {
                value: p,
                lo: 0.0,
                hi: self.e_r,
            });
        }
        if p == 0.0 {
            return Ok(0);
        }
        let mut i = ((p / self.e_r * self.n as f64).ceil() as usize).clamp(1, self.n);
        while i > 1 && p <= self.edge(i - 1) {
            i -= 1;
        }
        while i < self.n && p > self.edge(i) {
            i += 1;
        }
        Ok(i)
    }

    /// Class 0 decodes to 0, class `i` to its interval midpoint.
    pub fn decode_class(&self, class: usize) -> Result<f64> {
        if class > self.n {
            return Err(Error::Range {
                value: class as f64,
                lo: 0.0,
                hi: self.n as f64,
            });
        }
        if class == 0 {
            return Ok(0.0);
        }
        Ok((2 * class - 1) as f64 / (2 * self.n) as f64 * self.e_r)
    }
}
