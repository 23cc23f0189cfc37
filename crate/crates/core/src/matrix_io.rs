//! Dense matrix files shared by embeddings and similarity matrices.
//!
//! Two encodings:
//!
//! * TSV: one line per row, `row_index<TAB>v1<TAB>…<TAB>vd`. Values use the
//!   shortest representation that parses back to the same `f64`.
//! * binary: the magic `KGAM`, a format version byte (1), then the row
//!   and column counts as little-endian `u64`, then the values row-major as
//!   little-endian `f64`.

use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{read_file, write_file};

const MAGIC: &[u8; 4] = b"KGAM";
const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixFormat {
    Tsv,
    #[default]
    Bin,
}

impl MatrixFormat {
    pub fn extension(self) -> &'static str {
        match self {
            MatrixFormat::Tsv => "tsv",
            MatrixFormat::Bin => "bin",
        }
    }

    /// Guesses the format from a file extension, defaulting to binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") | Some("txt") => MatrixFormat::Tsv,
            _ => MatrixFormat::Bin,
        }
    }
}

impl FromStr for MatrixFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(MatrixFormat::Tsv),
            "bin" => Ok(MatrixFormat::Bin),
            other => Err(Error::Argument(format!("unknown matrix format `{other}`"))),
        }
    }
}

pub fn encode_tsv(m: &Array2<f64>) -> String {
    let mut out = String::with_capacity(m.len() * 20);
    for (i, row) in m.rows().into_iter().enumerate() {
        out.push_str(&i.to_string());
        for v in row {
            out.push('\t');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

pub fn decode_tsv(text: &str, path: &Path) -> Result<Array2<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let mut fields = line.split('\t');
        let index: usize = fields
            .next()
            .unwrap_or_default()
            .trim()
            .parse()
            .map_err(|e| Error::parse(path, line_no, format!("bad row index: {e}")))?;
        if index != rows.len() {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected row {}, found {index}", rows.len()),
            ));
        }
        let values = fields
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(path, line_no, format!("bad value: {e}")))?;
        if let Some(first) = rows.first() {
            if first.len() != values.len() {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("expected {} values, found {}", first.len(), values.len()),
                ));
            }
        }
        rows.push(values);
    }
    let cols = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), cols), flat).map_err(|e| Error::parse(path, 0, e.to_string()))
}

pub fn encode_bin(m: &Array2<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(21 + 8 * m.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for v in m.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_bin(bytes: &[u8], path: &Path) -> Result<Array2<f64>> {
    let bad = |msg: &str| Error::parse(path, 0, msg.to_owned());
    if bytes.len() < 21 || &bytes[..4] != MAGIC {
        return Err(bad("not a matrix file (missing KGAM header)"));
    }
    if bytes[4] != VERSION {
        return Err(bad(&format!("unsupported matrix format version {}", bytes[4])));
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
    let (rows, cols) = (word(5) as usize, word(13) as usize);
    let body = &bytes[21..];
    if body.len() != rows * cols * 8 {
        return Err(bad(&format!(
            "expected {} bytes of data for {rows}x{cols}, found {}",
            rows * cols * 8,
            body.len()
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Array2::from_shape_vec((rows, cols), values).map_err(|e| bad(&e.to_string()))
}

pub fn write_matrix(path: &Path, m: &Array2<f64>, format: MatrixFormat) -> Result<()> {
    match format {
        MatrixFormat::Tsv => write_file(path, encode_tsv(m).as_bytes()),
        MatrixFormat::Bin => write_file(path, &encode_bin(m)),
    }
}

/// Reads a matrix, choosing the decoder from the file header.
pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(MAGIC) {
        decode_bin(&bytes, path)
    } else {
        decode_tsv(&read_file(path)?, path)
    }
}
