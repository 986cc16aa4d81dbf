//! ITMX binary matrices and small CSV matrices.
//!
//! ITMX layout: magic `ITMX`, `u32` LE rows, `u32` LE cols, `u8` dtype
//! (0 = f64, 1 = f32), then the row-major payload in little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Matrix;
use crate::error::{Error, Result};

pub const ITMX_MAGIC: [u8; 4] = [0x49, 0x54, 0x4D, 0x58];

/// Largest matrix dimension accepted through CSV.
const CSV_MAX_DIM: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F64 = 0,
    F32 = 1,
}

impl Dtype {
    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Dtype::F64),
            1 => Ok(Dtype::F32),
            other => Err(itmx_err(format!("unknown dtype code {other}"))),
        }
    }
}

fn itmx_err(reason: impl Into<String>) -> Error {
    Error::Format {
        format: "ITMX",
        reason: reason.into(),
    }
}

pub fn write_itmx<W: Write>(m: &Matrix, dtype: Dtype, mut w: W) -> Result<()> {
    let rows = u32::try_from(m.rows()).map_err(|_| itmx_err("rows exceed u32"))?;
    let cols = u32::try_from(m.cols()).map_err(|_| itmx_err("cols exceed u32"))?;
    w.write_all(&ITMX_MAGIC)?;
    w.write_all(&rows.to_le_bytes())?;
    w.write_all(&cols.to_le_bytes())?;
    w.write_all(&[dtype as u8])?;
    match dtype {
        Dtype::F64 => {
            for v in m.as_slice() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Dtype::F32 => {
            for v in m.as_slice() {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_itmx<R: Read>(mut r: R) -> Result<Matrix> {
    let mut header = [0u8; 13];
    r.read_exact(&mut header).map_err(|_| itmx_err("truncated header"))?;
    if header[..4] != ITMX_MAGIC {
        return Err(itmx_err("bad magic"));
    }
    let rows = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let dtype = Dtype::from_code(header[12])?;
    let width = match dtype {
        Dtype::F64 => 8,
        Dtype::F32 => 4,
    };
    let count = rows.checked_mul(cols).ok_or_else(|| itmx_err("dimensions overflow"))?;
    let mut payload = vec![0u8; count * width];
    r.read_exact(&mut payload)
        .map_err(|_| itmx_err(format!("payload shorter than {rows}x{cols}")))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(itmx_err("trailing bytes after payload"));
    }
    let data = match dtype {
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
    };
    Matrix::new(rows, cols, data)
}

/// Comma-separated rows, no header. Limited to 64x64.
pub fn read_csv<R: Read>(r: R) -> Result<Matrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = record
            .iter()
            .map(|field| {
                field.parse::<f64>().map_err(|e| Error::Format {
                    format: "CSV",
                    reason: format!("{field:?}: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let m = Matrix::from_row_vecs(&rows)?;
    check_csv_size(&m)?;
    Ok(m)
}

pub fn write_csv<W: Write>(m: &Matrix, w: W) -> Result<()> {
    check_csv_size(m)?;
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for r in 0..m.rows() {
        writer.write_record(m.row(r).iter().map(|v| v.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

fn check_csv_size(m: &Matrix) -> Result<()> {
    if m.rows() > CSV_MAX_DIM || m.cols() > CSV_MAX_DIM {
        return Err(Error::Format {
            format: "CSV",
            reason: format!(
                "{}x{} exceeds the {CSV_MAX_DIM}x{CSV_MAX_DIM} CSV limit; use ITMX",
                m.rows(),
                m.cols()
            ),
        });
    }
    Ok(())
}

/// Reads ITMX or CSV, chosen by extension (`.csv` means CSV).
pub fn read_matrix_file(path: &Path) -> Result<Matrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        read_csv(reader)
    } else {
        read_itmx(reader)
    }
}

impl Matrix {
    pub fn save_itmx(&self, path: &Path, dtype: Dtype) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        write_itmx(self, dtype, BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Matrix> {
        read_matrix_file(path)
    }
}
