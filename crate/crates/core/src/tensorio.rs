//! Tensor sets and the `.tns1` binary format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "TNS1"
//! 4       4     version (u32) = 1
//! 8       1     dtype (u8) = 0, float32
//! 9       1     rank (u8) = 2
//! 10      8     dims[0] = rows (u64)
//! 18      8     dims[1] = cols (u64)
//! 26      4·N·D payload, row-major float32
//! ...     8     id count (u64), 0 or N
//! ...           per id: byte length (u64) then UTF-8 bytes
//! ```
//!
//! A CSV reader is provided as a fallback ingestion path.

use std::borrow::Cow;
use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TNS1";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;
pub const RANK: u8 = 2;
pub const HEADER_LEN: usize = 26;

/// An `N × D` matrix of finite `f32` values with optional unique row ids.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSet {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
    ids: Option<Vec<String>>,
}

impl TensorSet {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "tensor must be at least 1x1, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch { expected: rows * cols, got: data.len() });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: pos / cols, col: pos % cols });
        }
        Ok(Self { rows, cols, data, ids: None })
    }

    /// Build from `f64` values, rounding each to the nearest `f32`.
    pub fn from_f64(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        Self::new(rows, cols, data.iter().map(|&v| v as f32).collect())
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::InvalidArgument(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend(r.iter().map(|&v| v as f32));
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn with_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.rows {
            return Err(Error::DimensionMismatch { expected: self.rows, got: ids.len() });
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate id {id:?}")));
            }
        }
        self.ids = Some(ids);
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| f64::from(v)).collect()
    }

    /// Whole matrix widened to `f64`, row-major.
    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }

    /// Explicit ids, if any were attached.
    pub fn ids(&self) -> Option<&[String]> {
        self.ids.as_deref()
    }

    /// Id of row `i`; the row number when no ids are attached.
    pub fn id(&self, i: usize) -> Cow<'_, str> {
        match &self.ids {
            Some(ids) => Cow::Borrowed(ids[i].as_str()),
            None => Cow::Owned(i.to_string()),
        }
    }

    /// All row ids, materializing the default numbering when needed.
    pub fn resolved_ids(&self) -> Vec<String> {
        (0..self.rows).map(|i| self.id(i).into_owned()).collect()
    }

    /// Replace the payload, keeping ids. Used by row-wise transforms.
    pub fn with_data(&self, cols: usize, data: Vec<f32>) -> Result<Self> {
        let out = Self::new(self.rows, cols, data)?;
        Ok(Self { ids: self.ids.clone(), ..out })
    }

    /// Rows selected by index, ids carried along.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::InvalidArgument(format!("row index {i} out of range")));
            }
            data.extend_from_slice(self.row(i));
        }
        let out = Self::new(indices.len(), self.cols, data)?;
        match &self.ids {
            Some(ids) => out.with_ids(indices.iter().map(|&i| ids[i].clone()).collect()),
            None => Ok(out),
        }
    }

    /// Bit-level equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self.ids == other.ids
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len() + 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(DTYPE_F32);
        out.push(RANK);
        out.extend_from_slice(&(self.rows as u64).to_le_bytes());
        out.extend_from_slice(&(self.cols as u64).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        match &self.ids {
            None => out.extend_from_slice(&0u64.to_le_bytes()),
            Some(ids) => {
                out.extend_from_slice(&(ids.len() as u64).to_le_bytes());
                for id in ids {
                    out.extend_from_slice(&(id.len() as u64).to_le_bytes());
                    out.extend_from_slice(id.as_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[0..4] != MAGIC {
            return Err(Error::Format("not a TNS1 file".into()));
        }
        if bytes.len() < HEADER_LEN {
            return Err(truncated(HEADER_LEN, bytes.len()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!("unsupported TNS1 version {version}")));
        }
        if bytes[8] != DTYPE_F32 {
            return Err(Error::Format(format!("unsupported dtype code {}", bytes[8])));
        }
        if bytes[9] != RANK {
            return Err(Error::Format(format!("unsupported rank {}", bytes[9])));
        }
        let rows = u64::from_le_bytes(bytes[10..18].try_into().unwrap());
        let cols = u64::from_le_bytes(bytes[18..26].try_into().unwrap());
        let count = rows
            .checked_mul(cols)
            .filter(|&c| c > 0)
            .ok_or_else(|| Error::Format(format!("invalid dims {rows}x{cols}")))?;
        let payload = count
            .checked_mul(4)
            .and_then(|p| usize::try_from(p).ok())
            .ok_or_else(|| Error::Format(format!("invalid dims {rows}x{cols}")))?;
        let (rows, cols) = (rows as usize, cols as usize);

        let mut cursor = Cursor { bytes, pos: HEADER_LEN };
        let raw = cursor.take(payload)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let tensor = Self::new(rows, cols, data)?;

        let id_count = cursor.u64()?;
        let tensor = if id_count == 0 {
            tensor
        } else if id_count == rows as u64 {
            let mut ids = Vec::with_capacity(rows);
            for _ in 0..rows {
                let len = cursor.u64()?;
                let len = usize::try_from(len)
                    .map_err(|_| Error::Format(format!("id length {len} too large")))?;
                let raw = cursor.take(len)?;
                let id = std::str::from_utf8(raw)
                    .map_err(|_| Error::Format("id is not valid UTF-8".into()))?;
                ids.push(id.to_owned());
            }
            tensor.with_ids(ids)?
        } else {
            return Err(Error::Format(format!(
                "id count {id_count} does not match row count {rows}"
            )));
        };
        if cursor.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after id block",
                bytes.len() - cursor.pos
            )));
        }
        Ok(tensor)
    }
}

fn truncated(expected: usize, got: usize) -> Error {
    Error::Format(format!("expected {expected} bytes, got {got}"))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(truncated(self.pos.saturating_add(n), self.bytes.len())),
        }
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Write `contents` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_tensor(path: impl AsRef<Path>, t: &TensorSet) -> Result<()> {
    // a TensorSet can only be constructed finite, so there is nothing left to
    // reject here
    write_atomic(path.as_ref(), &t.to_bytes())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<TensorSet> {
    TensorSet::from_bytes(&std::fs::read(path)?)
}

/// Read a numeric CSV matrix. A first row containing non-numeric cells is a
/// header; if its first cell is `id`, the first column holds row ids.
pub fn read_csv_matrix(path: impl AsRef<Path>) -> Result<TensorSet> {
    parse_csv_matrix(&std::fs::read_to_string(path)?)
}

pub fn parse_csv_matrix(text: &str) -> Result<TensorSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Csv {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        records.push((line, rec));
    }
    let Some((_, first)) = records.first() else {
        return Err(Error::Csv { line: 1, message: "empty CSV".into() });
    };

    let has_header = first.iter().any(|c| c.parse::<f32>().is_err());
    let has_ids = has_header && first.get(0) == Some("id");
    let width = first.len();
    let body = if has_header { &records[1..] } else { &records[..] };
    if body.is_empty() {
        return Err(Error::Csv { line: 2, message: "no data rows".into() });
    }

    let cols = if has_ids { width - 1 } else { width };
    let mut data = Vec::with_capacity(body.len() * cols);
    let mut ids = Vec::new();
    for (line, rec) in body {
        if rec.len() != width {
            return Err(Error::Csv {
                line: *line,
                message: format!("ragged row: expected {width} fields, got {}", rec.len()),
            });
        }
        let mut cells = rec.iter();
        if has_ids {
            ids.push(cells.next().unwrap().to_owned());
        }
        for (j, cell) in cells.enumerate() {
            let v: f32 = cell.parse().map_err(|_| Error::Csv {
                line: *line,
                message: format!("unparsable numeric cell {cell:?} in column {j}"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row: data.len() / cols.max(1), col: j });
            }
            data.push(v);
        }
    }
    let t = TensorSet::new(body.len(), cols, data)?;
    if has_ids {
        t.with_ids(ids)
    } else {
        Ok(t)
    }
}
