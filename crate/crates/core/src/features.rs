//! Numeric containers and their on-disk formats.
//!
//! Feature matrices are stored as `S3FV` files: the four magic bytes
//! `S3FV`, then little-endian `u32` version (1), `u32` rows, `u32` cols and
//! `rows * cols` IEEE-754 binary32 values in row-major order. Values are held
//! as `f32` in memory as well, so a load/save cycle is bit-exact.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: [u8; 4] = *b"S3FV";
pub const FEATURE_VERSION: u32 = 1;
const FEATURE_HEADER_LEN: usize = 16;

/// A `rows x cols` matrix of finite features, one frame per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!(
                "feature matrix must be at least 1x1, got {rows}x{cols}"
            )));
        }
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / cols,
                col: pos % cols,
            });
        }
        Ok(Self { rows, cols, values })
    }

    /// Builds a matrix from wide values, rounding each to `f32`.
    pub fn from_f64(rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        Self::new(rows, cols, values.iter().map(|&v| v as f32).collect())
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::RaggedRow {
                    row: i,
                    expected: cols,
                    found: r.len(),
                });
            }
            values.extend(r.iter().map(|&v| v as f32));
        }
        Self::new(rows.len(), cols, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.values.chunks_exact(self.cols)
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.cols + col]
    }

    /// Copies the contiguous column block `start..start + width`.
    pub fn column_block(&self, start: usize, width: usize) -> Result<Self> {
        if width == 0 || start + width > self.cols {
            return Err(Error::Shape(format!(
                "column block {start}..{} outside 0..{}",
                start + width,
                self.cols
            )));
        }
        let values = self
            .iter_rows()
            .flat_map(|r| r[start..start + width].iter().copied())
            .collect();
        Ok(Self {
            rows: self.rows,
            cols: width,
            values,
        })
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn hconcat(parts: &[&FeatureMatrix]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or(Error::Empty("hconcat of no matrices"))?;
        let rows = first.rows;
        for p in parts {
            if p.rows != rows {
                return Err(Error::LengthMismatch {
                    left: rows,
                    right: p.rows,
                });
            }
        }
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut values = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for p in parts {
                values.extend_from_slice(p.row(i));
            }
        }
        Ok(Self { rows, cols, values })
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn vstack(parts: &[&FeatureMatrix]) -> Result<Self> {
        let first = parts.first().ok_or(Error::Empty("vstack of no matrices"))?;
        let cols = first.cols;
        let mut values = Vec::new();
        for p in parts {
            if p.cols != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    found: p.cols,
                });
            }
            values.extend_from_slice(&p.values);
        }
        Ok(Self {
            rows: values.len() / cols,
            cols,
            values,
        })
    }

    /// Per-column mean over all frames.
    pub fn mean_row(&self) -> Vec<f64> {
        let mut acc = vec![0.0f64; self.cols];
        for r in self.iter_rows() {
            for (a, &v) in acc.iter_mut().zip(r) {
                *a += v as f64;
            }
        }
        let n = self.rows as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    /// Serializes to the `S3FV` byte layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FEATURE_HEADER_LEN + 4 * self.values.len());
        out.extend_from_slice(&FEATURE_MAGIC);
        // Writes into a Vec cannot fail.
        out.write_u32::<LittleEndian>(FEATURE_VERSION).unwrap();
        out.write_u32::<LittleEndian>(self.rows as u32).unwrap();
        out.write_u32::<LittleEndian>(self.cols as u32).unwrap();
        for &v in &self.values {
            out.write_f32::<LittleEndian>(v).unwrap();
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        check_magic(bytes, FEATURE_MAGIC)?;
        if bytes.len() < FEATURE_HEADER_LEN {
            return Err(Error::Truncated {
                expected: FEATURE_HEADER_LEN,
                found: bytes.len(),
            });
        }
        let version = LittleEndian::read_u32(&bytes[4..8]);
        if version != FEATURE_VERSION {
            return Err(Error::VersionMismatch {
                expected: FEATURE_VERSION,
                found: version,
            });
        }
        let rows = LittleEndian::read_u32(&bytes[8..12]) as usize;
        let cols = LittleEndian::read_u32(&bytes[12..16]) as usize;
        let expected = FEATURE_HEADER_LEN + 4 * rows * cols;
        if bytes.len() < expected {
            return Err(Error::Truncated {
                expected,
                found: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(Error::Shape(format!(
                "{} trailing bytes after {rows}x{cols} payload",
                bytes.len() - expected
            )));
        }
        let mut values = vec![0.0f32; rows * cols];
        LittleEndian::read_f32_into(&bytes[FEATURE_HEADER_LEN..], &mut values);
        Self::new(rows, cols, values)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&self.to_bytes())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::io("<reader>", e))?;
        Self::from_bytes(&bytes)
    }
}

pub(crate) fn check_magic(bytes: &[u8], expected: [u8; 4]) -> Result<()> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            expected: 4,
            found: bytes.len(),
        });
    }
    let found = [bytes[0], bytes[1], bytes[2], bytes[3]];
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

pub fn load_feature_matrix(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureMatrix::from_bytes(&bytes)
}

pub fn save_feature_matrix(matrix: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, matrix.to_bytes()).map_err(|e| Error::io(path, e))
}

/// A fixed-dimension utterance- or speaker-level embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("embedding"));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: 0, col: pos });
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Element-wise mean of equally sized embeddings.
    pub fn mean(embeddings: &[EmbeddingVector]) -> Result<Self> {
        let first = embeddings.first().ok_or(Error::Empty("embedding list"))?;
        let mut acc = vec![0.0; first.dim()];
        for e in embeddings {
            if e.dim() != first.dim() {
                return Err(Error::DimensionMismatch {
                    expected: first.dim(),
                    found: e.dim(),
                });
            }
            for (a, v) in acc.iter_mut().zip(&e.0) {
                *a += v;
            }
        }
        let n = embeddings.len() as f64;
        Ok(Self(acc.into_iter().map(|a| a / n).collect()))
    }

    /// Treats each row of `matrix` as one embedding.
    pub fn rows_of(matrix: &FeatureMatrix) -> Vec<EmbeddingVector> {
        matrix
            .iter_rows()
            .map(|r| Self(r.iter().map(|&v| v as f64).collect()))
            .collect()
    }
}

/// Named numeric columns, one row per evaluated system.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTable {
    system_names: Vec<String>,
    columns: Vec<(String, Vec<f64>)>,
}

impl MetricTable {
    pub fn new(system_names: Vec<String>, columns: Vec<(String, Vec<f64>)>) -> Result<Self> {
        for (i, (name, values)) in columns.iter().enumerate() {
            if columns[..i].iter().any(|(n, _)| n == name) {
                return Err(Error::DuplicateColumn(name.clone()));
            }
            if values.len() != system_names.len() {
                return Err(Error::LengthMismatch {
                    left: system_names.len(),
                    right: values.len(),
                });
            }
        }
        Ok(Self {
            system_names,
            columns,
        })
    }

    pub fn len(&self) -> usize {
        self.system_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.system_names.is_empty()
    }

    pub fn system_names(&self) -> &[String] {
        &self.system_names
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|(n, _)| n.as_str())
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    /// Parses a CSV whose first column is `system` and whose remaining
    /// columns are all numeric. Row numbers in errors are 1-based data rows.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(reader);
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| csv_error(0, e))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        match headers.first().map(String::as_str) {
            Some("system") => {}
            other => {
                return Err(Error::Parse {
                    row: 0,
                    column: other.unwrap_or("").to_string(),
                    message: "first column must be named \"system\"".into(),
                })
            }
        }
        for (i, h) in headers.iter().enumerate() {
            if headers[..i].contains(h) {
                return Err(Error::DuplicateColumn(h.clone()));
            }
        }

        let mut names = Vec::new();
        let mut columns: Vec<(String, Vec<f64>)> = headers[1..]
            .iter()
            .map(|h| (h.clone(), Vec::new()))
            .collect();
        for (i, record) in rdr.records().enumerate() {
            let row = i + 1;
            let record = record.map_err(|e| csv_error(row, e))?;
            if record.len() != headers.len() {
                return Err(Error::RaggedRow {
                    row,
                    expected: headers.len(),
                    found: record.len(),
                });
            }
            names.push(record[0].trim().to_string());
            for (cell, (name, values)) in record.iter().skip(1).zip(columns.iter_mut()) {
                values.push(parse_number(cell).map_err(|message| Error::Parse {
                    row,
                    column: name.clone(),
                    message,
                })?);
            }
        }
        Self::new(names, columns)
    }
}

fn csv_error(row: usize, e: csv::Error) -> Error {
    Error::Parse {
        row,
        column: String::new(),
        message: e.to_string(),
    }
}

/// Locale-independent decimal parse: `.` separator, no grouping, finite only.
pub(crate) fn parse_number(cell: &str) -> std::result::Result<f64, String> {
    let s = cell.trim();
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if !v.is_finite() {
        return Err(format!("{s:?} is not finite"));
    }
    Ok(v)
}

pub fn load_metric_table(path: impl AsRef<Path>) -> Result<MetricTable> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    MetricTable::from_csv_reader(std::io::BufReader::new(file))
}
