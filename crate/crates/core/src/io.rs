//! Flat CSV formats for datasets, streams, weights and traces.
//!
//! | file         | header                                  |
//! |--------------|-----------------------------------------|
//! | source.csv   | `f0,..,f{d-1},u`                        |
//! | target.csv   | `f0,..,f{d-1}`                          |
//! | stream.csv   | `f0,..,f{d-1},u,m,won`                  |
//! | weights.csv  | `row,weight`                            |
//! | trace.csv    | `step,objective,loss,normalizer`        |
//! | hist.csv     | `bin_left,bin_right,count`              |
//!
//! Reals are written in scientific notation with 17 significant digits, so
//! reading a file back reproduces the written values exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::evaluation::HistogramBin;
use crate::fit::StepRecord;
use crate::rtb::AuctionStream;
use crate::tilt::{LabeledDataset, UnlabeledDataset};

/// Formats a real with 17 significant digits.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn feature_header(d: usize) -> String {
    (0..d).map(|k| format!("f{k}")).collect::<Vec<_>>().join(",")
}

fn push_row(out: &mut String, fields: impl IntoIterator<Item = String>) {
    let mut first = true;
    for f in fields {
        if !first {
            out.push(',');
        }
        out.push_str(&f);
        first = false;
    }
    out.push('\n');
}

pub fn source_csv_string(data: &LabeledDataset) -> String {
    let mut out = format!("{},u\n", feature_header(data.dim()));
    for (x, u) in data.rows() {
        push_row(&mut out, x.iter().map(|v| fmt_real(*v)).chain([u.to_string()]));
    }
    out
}

pub fn target_csv_string(data: &UnlabeledDataset) -> String {
    let mut out = format!("{}\n", feature_header(data.dim()));
    for x in data.rows() {
        push_row(&mut out, x.iter().map(|v| fmt_real(*v)));
    }
    out
}

pub fn stream_csv_string(stream: &AuctionStream) -> String {
    let mut out = format!("{},u,m,won\n", feature_header(stream.dim));
    for r in &stream.records {
        push_row(
            &mut out,
            r.features.iter().map(|v| fmt_real(*v)).chain([
                r.utility.to_string(),
                fmt_real(r.market_price),
                u8::from(r.won).to_string(),
            ]),
        );
    }
    out
}

pub fn weights_csv_string(weights: &[f64]) -> String {
    let mut out = String::from("row,weight\n");
    for (i, w) in weights.iter().enumerate() {
        let _ = writeln!(out, "{i},{}", fmt_real(*w));
    }
    out
}

pub fn trace_csv_string(records: &[StepRecord]) -> String {
    let mut out = String::from("step,objective,loss,normalizer\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.step,
            fmt_real(r.objective),
            fmt_real(r.loss),
            fmt_real(r.normalizer)
        );
    }
    out
}

pub fn histogram_csv_string(bins: &[HistogramBin]) -> String {
    let mut out = String::from("bin_left,bin_right,count\n");
    for b in bins {
        let _ = writeln!(out, "{},{},{}", fmt_real(b.bin_left), fmt_real(b.bin_right), b.count);
    }
    out
}

pub fn write_source_csv(path: &Path, data: &LabeledDataset) -> Result<()> {
    Ok(fs::write(path, source_csv_string(data))?)
}

pub fn write_target_csv(path: &Path, data: &UnlabeledDataset) -> Result<()> {
    Ok(fs::write(path, target_csv_string(data))?)
}

pub fn write_stream_csv(path: &Path, stream: &AuctionStream) -> Result<()> {
    Ok(fs::write(path, stream_csv_string(stream))?)
}

pub fn write_weights_csv(path: &Path, weights: &[f64]) -> Result<()> {
    Ok(fs::write(path, weights_csv_string(weights))?)
}

pub fn write_trace_csv(path: &Path, records: &[StepRecord]) -> Result<()> {
    Ok(fs::write(path, trace_csv_string(records))?)
}

pub fn write_histogram_csv(path: &Path, bins: &[HistogramBin]) -> Result<()> {
    Ok(fs::write(path, histogram_csv_string(bins))?)
}

/// A parsed CSV: header names and the records with their line numbers.
struct Table {
    file: String,
    header: Vec<String>,
    rows: Vec<(u64, csv::StringRecord)>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&path.display().to_string(), &text)
    }

    fn parse(file: &str, text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = reader
            .headers()
            .map_err(|e| Error::Parse {
                file: file.to_string(),
                line: 1,
                message: e.to_string(),
            })?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::Parse {
                file: file.to_string(),
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            rows.push((line, rec));
        }
        Ok(Self {
            file: file.to_string(),
            header,
            rows,
        })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema {
                file: self.file.clone(),
                message: format!("missing column \"{name}\""),
            })
    }

    /// Indices of `f0, f1, ..`; at least `f0` must exist.
    fn feature_columns(&self) -> Result<Vec<usize>> {
        let mut cols = Vec::new();
        while let Some(i) = self.header.iter().position(|h| *h == format!("f{}", cols.len())) {
            cols.push(i);
        }
        if cols.is_empty() {
            return Err(Error::Schema {
                file: self.file.clone(),
                message: "missing column \"f0\"".into(),
            });
        }
        let stray = self
            .header
            .iter()
            .find(|h| h.starts_with('f') && h[1..].parse::<usize>().is_ok_and(|k| k >= cols.len()));
        if let Some(h) = stray {
            return Err(Error::Schema {
                file: self.file.clone(),
                message: format!("feature column \"{h}\" without its predecessors"),
            });
        }
        Ok(cols)
    }

    fn real(&self, line: u64, rec: &csv::StringRecord, col: usize) -> Result<f64> {
        let raw = rec.get(col).unwrap_or("");
        raw.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::Parse {
                file: self.file.clone(),
                line,
                message: format!("column \"{}\": \"{raw}\" is not a finite real", self.header[col]),
            })
    }

    fn flag(&self, line: u64, rec: &csv::StringRecord, col: usize) -> Result<u8> {
        match rec.get(col).unwrap_or("") {
            "0" => Ok(0),
            "1" => Ok(1),
            raw => Err(Error::Parse {
                file: self.file.clone(),
                line,
                message: format!("column \"{}\": \"{raw}\" is not 0 or 1", self.header[col]),
            }),
        }
    }

    fn features(&self, cols: &[usize]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.rows.len() * cols.len());
        for (line, rec) in &self.rows {
            for &c in cols {
                out.push(self.real(*line, rec, c)?);
            }
        }
        Ok(out)
    }

    fn nonempty(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::Schema {
                file: self.file.clone(),
                message: "no data rows".into(),
            });
        }
        Ok(())
    }
}

pub fn parse_source_csv(file: &str, text: &str) -> Result<LabeledDataset> {
    labeled_from_table(Table::parse(file, text)?)
}

pub fn read_source_csv(path: &Path) -> Result<LabeledDataset> {
    labeled_from_table(Table::read(path)?)
}

fn labeled_from_table(t: Table) -> Result<LabeledDataset> {
    let cols = t.feature_columns()?;
    let u = t.column("u")?;
    t.nonempty()?;
    let features = t.features(&cols)?;
    let labels = t
        .rows
        .iter()
        .map(|(line, rec)| t.flag(*line, rec, u))
        .collect::<Result<Vec<_>>>()?;
    LabeledDataset::new(cols.len(), features, labels)
}

pub fn read_target_csv(path: &Path) -> Result<UnlabeledDataset> {
    let t = Table::read(path)?;
    let cols = t.feature_columns()?;
    t.nonempty()?;
    UnlabeledDataset::new(cols.len(), t.features(&cols)?)
}

/// Reads `row,weight`; rows must be numbered `0..n` in order.
pub fn read_weights_csv(path: &Path) -> Result<Vec<f64>> {
    let t = Table::read(path)?;
    let row = t.column("row")?;
    let weight = t.column("weight")?;
    t.rows
        .iter()
        .enumerate()
        .map(|(i, (line, rec))| {
            if rec.get(row) != Some(i.to_string().as_str()) {
                return Err(Error::Parse {
                    file: t.file.clone(),
                    line: *line,
                    message: format!("expected row index {i}"),
                });
            }
            t.real(*line, rec, weight)
        })
        .collect()
}
