//! Sequence files.
//!
//! CSV: one frame per row, comma separated, either 64 expression columns or
//! 261 full-parameter columns. A first row whose first cell is not a number
//! is treated as a header and skipped.
//!
//! DSEQ: `"DSEQ"`, u32 version, u32 frame count, u32 dim, then row-major
//! little-endian f64 values.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{unpack_parameters, ExpressionSequence, ParameterVector, EXPR_DIM, PARAM_DIM};
use crate::error::{Error, Result};

pub const DSEQ_MAGIC: &[u8; 4] = b"DSEQ";
pub const DSEQ_VERSION: u32 = 1;

fn parse_rows<R: BufRead>(reader: R) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    let mut width = None;
    let mut first = true;
    for (line_no, line) in reader.lines().enumerate() {
        let row = line_no + 1;
        let line = line.map_err(|e| Error::Parse {
            row,
            column: 0,
            message: e.to_string(),
        })?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if first && cells[0].trim().parse::<f64>().is_err() {
            // header
            first = false;
            continue;
        }
        first = false;
        let values = cells
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                cell.trim().parse::<f64>().map_err(|_| Error::Parse {
                    row,
                    column: c + 1,
                    message: format!("`{}` is not a number", cell.trim()),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        match width {
            Some(w) if w != values.len() => {
                return Err(Error::Parse {
                    row,
                    column: values.len(),
                    message: format!("expected {w} columns, found {}", values.len()),
                })
            }
            _ => width = Some(values.len()),
        }
        rows.push(values);
    }
    Ok(rows)
}

/// Reads either a 64-column expression file or a 261-column parameter file;
/// for the latter only the expression block is kept.
pub fn parse_sequence_csv<R: Read>(reader: R) -> Result<ExpressionSequence> {
    let rows = parse_rows(BufReader::new(reader))?;
    match rows.first().map(Vec::len) {
        None | Some(EXPR_DIM) => ExpressionSequence::from_rows(&rows),
        Some(PARAM_DIM) => {
            let frames = rows
                .iter()
                .map(|r| unpack_parameters(r)?.expression())
                .collect::<Result<Vec<_>>>()?;
            Ok(ExpressionSequence::new(frames))
        }
        Some(n) => Err(Error::Parse {
            row: 1,
            column: n,
            message: format!("expected {EXPR_DIM} or {PARAM_DIM} columns, found {n}"),
        }),
    }
}

pub fn parse_parameter_csv<R: Read>(reader: R) -> Result<Vec<ParameterVector>> {
    parse_rows(BufReader::new(reader))?
        .iter()
        .map(|r| unpack_parameters(r))
        .collect()
}

pub fn write_sequence_csv<W: Write>(seq: &ExpressionSequence, mut w: W) -> std::io::Result<()> {
    let header: Vec<String> = (0..EXPR_DIM).map(|k| format!("delta_{k}")).collect();
    writeln!(w, "{}", header.join(","))?;
    for frame in &seq.frames {
        let cells: Vec<String> = frame.iter().map(|x| x.to_string()).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

pub fn encode_dseq(seq: &ExpressionSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + seq.len() * EXPR_DIM * 8);
    out.extend_from_slice(DSEQ_MAGIC);
    out.extend_from_slice(&DSEQ_VERSION.to_le_bytes());
    out.extend_from_slice(&(seq.len() as u32).to_le_bytes());
    out.extend_from_slice(&(EXPR_DIM as u32).to_le_bytes());
    for x in seq.frames.iter().flatten() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_dseq(bytes: &[u8]) -> Result<ExpressionSequence> {
    let word = |i: usize| -> Result<u32> {
        bytes
            .get(i..i + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| Error::Truncated("DSEQ header".into()))
    };
    if bytes.len() < 4 || &bytes[..4] != DSEQ_MAGIC {
        return Err(Error::Format("missing DSEQ magic".into()));
    }
    let version = word(4)?;
    if version != DSEQ_VERSION {
        return Err(Error::Version {
            found: version,
            expected: DSEQ_VERSION,
        });
    }
    let frames = word(8)? as usize;
    let dim = word(12)? as usize;
    if dim != EXPR_DIM {
        return Err(Error::Format(format!("DSEQ dim {dim}, expected {EXPR_DIM}")));
    }
    let body = &bytes[16..];
    let need = frames * dim * 8;
    if body.len() < need {
        return Err(Error::Truncated("DSEQ body".into()));
    }
    if body.len() > need {
        return Err(Error::Format("trailing bytes after DSEQ body".into()));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let rows: Vec<Vec<f64>> = values.chunks_exact(dim).map(<[f64]>::to_vec).collect();
    ExpressionSequence::from_rows(&rows)
}

fn is_dseq(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("dseq"))
}

/// Reads a sequence, choosing the format from the file extension.
pub fn read_sequence(path: impl AsRef<Path>) -> Result<ExpressionSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if is_dseq(path) {
        decode_dseq(&bytes)
    } else {
        parse_sequence_csv(bytes.as_slice())
    }
}

pub fn write_sequence(seq: &ExpressionSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = if is_dseq(path) {
        encode_dseq(seq)
    } else {
        let mut buf = Vec::new();
        write_sequence_csv(seq, &mut buf).map_err(|e| Error::io(path, e))?;
        buf
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
