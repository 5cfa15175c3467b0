use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{NaiveDateTime, Timelike};

use super::scenario::Scenario;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";
pub const DATA_FILE: &str = "dataset.csv";
pub const META_FILE: &str = "metadata.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub timestamp: NaiveDateTime,
    pub target: f64,
    pub features: Vec<f64>,
    pub weather: String,
}

impl Row {
    pub fn hour(&self) -> u32 {
        self.timestamp.hour()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub scenario: Scenario,
    pub capacity: f64,
    pub bins: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub features: Vec<String>,
    pub rows: Vec<Row>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn channel_names(&self) -> Vec<String> {
        std::iter::once("target".to_string()).chain(self.features.iter().cloned()).collect()
    }

    /// `rows × (1 + features)` matrix of target then features.
    pub fn matrix(&self, range: std::ops::Range<usize>) -> Result<Tensor> {
        let c = 1 + self.features.len();
        let mut data = Vec::with_capacity(range.len() * c);
        for r in &self.rows[range.clone()] {
            data.push(r.target as f32);
            data.extend(r.features.iter().map(|&x| x as f32));
        }
        Tensor::new(vec![range.len(), c], data)
    }

    pub fn targets(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.target).collect()
    }

    /// Hourly cadence, target bounds and column counts.
    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.rows.iter().enumerate() {
            if r.features.len() != self.features.len() {
                return Err(Error::Schema(format!("row {i}: {} feature values", r.features.len())));
            }
            if !(0.0..=self.meta.capacity).contains(&r.target) {
                return Err(Error::Schema(format!("row {i}: target {} outside [0, E_r]", r.target)));
            }
            if r.features.iter().any(|x| !x.is_finite()) {
                return Err(Error::Schema(format!("row {i}: missing feature value")));
            }
        }
        for (i, w) in self.rows.windows(2).enumerate() {
            if w[1].timestamp - w[0].timestamp != chrono::Duration::hours(1) {
                return Err(Error::Schema(format!("row {}: cadence is not hourly", i + 1)));
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["timestamp".to_string(), "target".to_string()];
        header.extend(self.features.iter().cloned());
        header.push("weather_text".into());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.timestamp.format(TIMESTAMP_FORMAT).to_string(), fmt_num(r.target)];
            rec.extend(r.features.iter().map(|&x| fmt_num(x)));
            rec.push(r.weather.clone());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("dataset csv", e))
    }

    pub fn read_csv<R: Read>(input: R, meta: DatasetMeta) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header.len() < 3
            || header[0] != "timestamp"
            || header[1] != "target"
            || header.last().map(String::as_str) != Some("weather_text")
        {
            return Err(Error::Schema(
                "header must be timestamp,target,<features...>,weather_text".into(),
            ));
        }
        let features: Vec<String> = header[2..header.len() - 1].to_vec();
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let num = |j: usize| -> Result<f64> {
                rec[j]
                    .trim()
                    .parse()
                    .map_err(|_| Error::Schema(format!("row {i}: bad number `{}` in {}", &rec[j], header[j])))
            };
            let timestamp = NaiveDateTime::parse_from_str(rec[0].trim(), TIMESTAMP_FORMAT)
                .map_err(|_| Error::Schema(format!("row {i}: bad timestamp `{}`", &rec[0])))?;
            let target = num(1)?;
            let feats = (2..header.len() - 1).map(num).collect::<Result<Vec<_>>>()?;
            rows.push(Row {
                timestamp,
                target,
                features: feats,
                weather: rec[header.len() - 1].to_string(),
            });
        }
        let ds = Dataset { meta, features, rows };
        ds.validate()?;
        Ok(ds)
    }

    /// Writes `dataset.csv` and `metadata.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(DATA_FILE);
        let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        self.write_csv(std::io::BufWriter::new(f))?;
        let path = dir.join(META_FILE);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["scenario", "e_r", "n_bins"])?;
        w.write_record([
            self.meta.scenario.name().to_string(),
            fmt_num(self.meta.capacity),
            self.meta.bins.to_string(),
        ])?;
        w.flush().map_err(|e| Error::io(&path, e))
    }

    /// Reads a dataset directory written by [`Dataset::save`], or a CSV file
    /// with `metadata.csv` next to it.
    pub fn load(path: &Path) -> Result<Self> {
        let (data, meta) = if path.is_dir() {
            (path.join(DATA_FILE), path.join(META_FILE))
        } else {
            let dir = path.parent().unwrap_or(Path::new("."));
            (path.to_path_buf(), dir.join(META_FILE))
        };
        let meta = read_meta(&meta)?;
        let f = fs::File::open(&data).map_err(|e| Error::io(&data, e))?;
        Self::read_csv(std::io::BufReader::new(f), meta)
    }
}

pub fn read_meta(path: &Path) -> Result<DatasetMeta> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(f);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != ["scenario", "e_r", "n_bins"] {
        return Err(Error::Schema("metadata header must be scenario,e_r,n_bins".into()));
    }
    let rec = rdr
        .records()
        .next()
        .ok_or_else(|| Error::Schema("metadata has no row".into()))??;
    Ok(DatasetMeta {
        scenario: rec[0].parse()?,
        capacity: rec[1]
            .trim()
            .parse()
            .map_err(|_| Error::Schema(format!("bad e_r `{}`", &rec[1])))?,
        bins: rec[2]
            .trim()
            .parse()
            .map_err(|_| Error::Schema(format!("bad n_bins `{}`", &rec[2])))?,
    })
}

/// Fixed four-decimal rendering used in every dataset file.
pub fn fmt_num(x: f64) -> String {
    let s = format!("{x:.4}");
    if s == "-0.0000" {
        "0.0000".into()
    } else {
        s
    }
}

/// Rounds to the CSV precision so in-memory and on-disk datasets agree.
pub fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}
