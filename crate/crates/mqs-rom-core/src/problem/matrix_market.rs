//! Matrix Market coordinate-format reader and writer.
//!
//! Supports `matrix coordinate real` with `general` or `symmetric` symmetry.
//! Indices are 1-based in the file. The writer emits `general` with 17
//! significant digits so values round-trip bit-exactly through the parser.

use std::io::{BufRead, Write};
use std::path::Path;

use super::ProblemError;
use crate::matcore::SparseMatrix;

fn io_err(path: &Path, e: std::io::Error) -> ProblemError {
    ProblemError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    }
}

fn fmt_err(path: &Path, line: usize, detail: impl Into<String>) -> ProblemError {
    ProblemError::Format {
        path: path.display().to_string(),
        line,
        detail: detail.into(),
    }
}

pub fn write_matrix_market(path: &Path, m: &SparseMatrix) -> Result<(), ProblemError> {
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let res: std::io::Result<()> = (|| {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", m.nrows(), m.ncols(), m.nnz())?;
        for (i, j, v) in m.triplet_iter() {
            writeln!(w, "{} {} {:.16e}", i + 1, j + 1, v)?;
        }
        w.flush()
    })();
    res.map_err(|e| io_err(path, e))
}

pub fn read_matrix_market(path: &Path) -> Result<SparseMatrix, ProblemError> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let (lineno, header) = match lines.next() {
        Some((i, l)) => (i + 1, l.map_err(|e| io_err(path, e))?),
        None => return Err(fmt_err(path, 1, "empty file")),
    };
    let lower = header.to_ascii_lowercase();
    let fields: Vec<&str> = lower.split_whitespace().collect();
    if fields.len() != 5 || fields[0] != "%%matrixmarket" {
        return Err(fmt_err(path, lineno, "expected %%MatrixMarket header"));
    }
    if fields[1] != "matrix" || fields[2] != "coordinate" || fields[3] != "real" {
        return Err(fmt_err(
            path,
            lineno,
            format!("unsupported type '{} {} {}'", fields[1], fields[2], fields[3]),
        ));
    }
    let symmetric = match fields[4] {
        "general" => false,
        "symmetric" => true,
        other => return Err(fmt_err(path, lineno, format!("unsupported symmetry '{}'", other))),
    };

    let mut size: Option<(usize, usize, usize)> = None;
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.map_err(|e| io_err(path, e))?;
        let body = line.trim();
        if body.is_empty() || body.starts_with('%') {
            continue;
        }
        let toks: Vec<&str> = body.split_whitespace().collect();
        match size {
            None => {
                if toks.len() != 3 {
                    return Err(fmt_err(path, lineno, "size line must be 'rows cols nnz'"));
                }
                let nr: usize = toks[0]
                    .parse()
                    .map_err(|_| fmt_err(path, lineno, "bad row count"))?;
                let nc: usize = toks[1]
                    .parse()
                    .map_err(|_| fmt_err(path, lineno, "bad column count"))?;
                let nnz: usize = toks[2]
                    .parse()
                    .map_err(|_| fmt_err(path, lineno, "bad entry count"))?;
                size = Some((nr, nc, nnz));
                triplets.reserve(nnz);
            }
            Some((nr, nc, _)) => {
                if toks.len() != 3 {
                    return Err(fmt_err(path, lineno, "entry line must be 'i j value'"));
                }
                let r: usize = toks[0]
                    .parse()
                    .map_err(|_| fmt_err(path, lineno, "bad row index"))?;
                let c: usize = toks[1]
                    .parse()
                    .map_err(|_| fmt_err(path, lineno, "bad column index"))?;
                let v: f64 = toks[2]
                    .parse()
                    .map_err(|_| fmt_err(path, lineno, "bad value"))?;
                if r == 0 || c == 0 || r > nr || c > nc {
                    return Err(fmt_err(
                        path,
                        lineno,
                        format!("index ({}, {}) outside 1..{} x 1..{}", r, c, nr, nc),
                    ));
                }
                if symmetric && c > r {
                    return Err(fmt_err(path, lineno, "symmetric entry above the diagonal"));
                }
                triplets.push((r - 1, c - 1, v));
                if symmetric && r != c {
                    triplets.push((c - 1, r - 1, v));
                }
            }
        }
    }
    let (nr, nc, nnz) = size.ok_or_else(|| fmt_err(path, 2, "missing size line"))?;
    let stored = if symmetric {
        triplets.iter().filter(|(r, c, _)| r >= c).count()
    } else {
        triplets.len()
    };
    if stored != nnz {
        return Err(fmt_err(
            path,
            0,
            format!("entry count {} does not match declared nnz {}", stored, nnz),
        ));
    }
    SparseMatrix::from_triplets(nr, nc, &triplets).map_err(ProblemError::from)
}
