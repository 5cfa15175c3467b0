use std::io::Write;

use crate::error::{Error, Result};

/// Metrics of one trained model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellResult {
    pub mae_c: f64,
    pub mae_r: f64,
    /// Percentages in `[0, 100]`.
    pub hp_c: f64,
    pub hp_r: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub w: f64,
    pub mae_c: f64,
    pub mae_r: f64,
    pub hp_c_pct: f64,
    pub hp_r_pct: f64,
    /// Seeds whose cell failed; their results are left out of the means.
    pub failed: Vec<u64>,
}

impl SweepRow {
    pub fn flagged(&self) -> bool {
        !self.failed.is_empty()
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Runs `cell` for every `(w, seed)` and averages over seeds, keeping the
/// order of `ws`. Failed cells flag their row instead of aborting.
pub fn sweep<F>(ws: &[f64], seeds: &[u64], cell: F) -> Result<Vec<SweepRow>>
where
    F: Fn(f64, u64) -> Result<CellResult>,
{
    if let Some(w) = ws.iter().find(|w| !(**w > 0.0 && **w < 1.0)) {
        return Err(Error::Config(format!("task weight {w} outside (0, 1)")));
    }
    if seeds.is_empty() {
        return Err(Error::Empty("sweep seeds"));
    }
    let mut rows = Vec::with_capacity(ws.len());
    for &w in ws {
        let mut ok = Vec::new();
        let mut failed = Vec::new();
        for &s in seeds {
            match cell(w, s) {
                Ok(c) => ok.push(c),
                Err(_) => failed.push(s),
            }
        }
        rows.push(SweepRow {
            w,
            mae_c: mean(ok.iter().map(|c| c.mae_c)),
            mae_r: mean(ok.iter().map(|c| c.mae_r)),
            hp_c_pct: mean(ok.iter().map(|c| c.hp_c)),
            hp_r_pct: mean(ok.iter().map(|c| c.hp_r)),
            failed,
        });
    }
    Ok(rows)
}

/// `w,mae_c,mae_r,hp_c_pct,hp_r_pct` rows.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["w", "mae_c", "mae_r", "hp_c_pct", "hp_r_pct"])?;
    for r in rows {
        w.write_record([
            format!("{}", r.w),
            format!("{:.4}", r.mae_c),
            format!("{:.4}", r.mae_r),
            format!("{:.2}", r.hp_c_pct),
            format!("{:.2}", r.hp_r_pct),
        ])?;
    }
    w.flush().map_err(|e| Error::io("sweep csv", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_kept_and_failures_flagged() {
        let rows = sweep(&[0.8, 0.2, 0.5], &[1, 2], |w, s| {
            if w == 0.5 && s == 2 {
                return Err(Error::Empty("x"));
            }
            Ok(CellResult {
                mae_c: w,
                mae_r: s as f64,
                hp_c: 10.0,
                hp_r: 0.0,
            })
        })
        .unwrap();
        assert_eq!(rows.iter().map(|r| r.w).collect::<Vec<_>>(), [0.8, 0.2, 0.5]);
        assert_eq!(rows[0].mae_r, 1.5);
        assert!(rows[2].flagged());
        assert_eq!(rows[2].mae_r, 1.0);
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("w,mae_c,mae_r,hp_c_pct,hp_r_pct\n0.8,"));
    }

    #[test]
    fn weights_must_be_open_unit() {
        let cell = |_: f64, _: u64| -> Result<CellResult> { unreachable!() };
        assert!(sweep(&[1.0], &[0], cell).is_err());
        assert!(sweep(&[0.5], &[], cell).is_err());
    }
}
