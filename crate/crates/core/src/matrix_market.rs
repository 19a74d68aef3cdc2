//! Matrix Market reader/writer for dense real matrices.
//!
//! Supports the `coordinate` and `array` layouts with `real` or `integer`
//! fields and `general` or `symmetric` symmetry. Everything is densified on
//! read. Values are written with the shortest round-trip representation, so
//! export followed by import reproduces the matrix bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numerics::SymMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layout {
    Coordinate,
    Array,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Symmetry {
    General,
    Symmetric,
}

fn parse_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();

    let header = lines
        .next()
        .ok_or_else(|| parse_err(path, "empty file"))??;
    let tokens: Vec<String> = header
        .split_whitespace()
        .map(str::to_ascii_lowercase)
        .collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(parse_err(path, format!("bad banner `{header}`")));
    }
    let layout = match tokens[2].as_str() {
        "coordinate" => Layout::Coordinate,
        "array" => Layout::Array,
        other => return Err(parse_err(path, format!("unsupported layout `{other}`"))),
    };
    if tokens[3] != "real" && tokens[3] != "integer" && tokens[3] != "double" {
        return Err(parse_err(
            path,
            format!("unsupported field `{}`", tokens[3]),
        ));
    }
    let symmetry = match tokens[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        other => return Err(parse_err(path, format!("unsupported symmetry `{other}`"))),
    };

    let mut data = lines.filter_map(|l| match l {
        Ok(s) => {
            let t = s.trim().to_string();
            if t.is_empty() || t.starts_with('%') {
                None
            } else {
                Some(Ok(t))
            }
        }
        Err(e) => Some(Err(e)),
    });

    let size_line = data
        .next()
        .ok_or_else(|| parse_err(path, "missing size line"))??;
    let sizes: Vec<usize> = size_line
        .split_whitespace()
        .map(|s| s.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| parse_err(path, format!("bad size line `{size_line}`: {e}")))?;

    let parse_f = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|e| parse_err(path, format!("bad value `{s}`: {e}")))
    };

    match layout {
        Layout::Coordinate => {
            if sizes.len() != 3 {
                return Err(parse_err(path, "coordinate size line needs rows cols nnz"));
            }
            let (nr, nc, nnz) = (sizes[0], sizes[1], sizes[2]);
            if symmetry == Symmetry::Symmetric && nr != nc {
                return Err(parse_err(path, "symmetric matrix must be square"));
            }
            let mut m = DMatrix::zeros(nr, nc);
            let mut seen = 0;
            for line in data.by_ref() {
                let line = line?;
                let f: Vec<&str> = line.split_whitespace().collect();
                if f.len() != 3 {
                    return Err(parse_err(path, format!("bad entry `{line}`")));
                }
                let i: usize = f[0]
                    .parse()
                    .map_err(|_| parse_err(path, format!("bad row index in `{line}`")))?;
                let j: usize = f[1]
                    .parse()
                    .map_err(|_| parse_err(path, format!("bad column index in `{line}`")))?;
                if i == 0 || j == 0 || i > nr || j > nc {
                    return Err(parse_err(path, format!("index out of range in `{line}`")));
                }
                let v = parse_f(f[2])?;
                m[(i - 1, j - 1)] += v;
                if symmetry == Symmetry::Symmetric && i != j {
                    m[(j - 1, i - 1)] += v;
                }
                seen += 1;
            }
            if seen != nnz {
                return Err(parse_err(
                    path,
                    format!("expected {nnz} entries, found {seen}"),
                ));
            }
            Ok(m)
        }
        Layout::Array => {
            if sizes.len() != 2 {
                return Err(parse_err(path, "array size line needs rows cols"));
            }
            let (nr, nc) = (sizes[0], sizes[1]);
            let mut values = Vec::new();
            for line in data {
                for tok in line?.split_whitespace() {
                    values.push(parse_f(tok)?);
                }
            }
            match symmetry {
                Symmetry::General => {
                    if values.len() != nr * nc {
                        return Err(parse_err(
                            path,
                            format!("expected {} values, found {}", nr * nc, values.len()),
                        ));
                    }
                    Ok(DMatrix::from_vec(nr, nc, values))
                }
                Symmetry::Symmetric => {
                    if nr != nc {
                        return Err(parse_err(path, "symmetric matrix must be square"));
                    }
                    if values.len() != nr * (nr + 1) / 2 {
                        return Err(parse_err(path, "wrong number of packed values"));
                    }
                    let mut m = DMatrix::zeros(nr, nr);
                    let mut it = values.into_iter();
                    for j in 0..nr {
                        for i in j..nr {
                            let v = it.next().expect("counted above");
                            m[(i, j)] = v;
                            m[(j, i)] = v;
                        }
                    }
                    Ok(m)
                }
            }
        }
    }
}

/// Reads a square matrix and checks symmetry.
pub fn read_symmetric(path: &Path) -> Result<SymMatrix> {
    let m = read_matrix(path)?;
    if m.nrows() != m.ncols() {
        return Err(parse_err(
            path,
            format!("matrix is {}x{}, expected square", m.nrows(), m.ncols()),
        ));
    }
    SymMatrix::new(m)
}

/// Writes the lower triangle in `coordinate real symmetric` layout.
pub fn write_symmetric(path: &Path, a: &SymMatrix) -> Result<()> {
    let n = a.dim();
    let mut entries = Vec::new();
    for j in 0..n {
        for i in j..n {
            let v = a[(i, j)];
            if v != 0.0 {
                entries.push((i + 1, j + 1, v));
            }
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "%%MatrixMarket matrix coordinate real symmetric")?;
    writeln!(w, "{n} {n} {}", entries.len())?;
    for (i, j, v) in entries {
        writeln!(w, "{i} {j} {v:e}")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a dense matrix in `array real general` layout (column-major).
pub fn write_general(path: &Path, a: &DMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "%%MatrixMarket matrix array real general")?;
    writeln!(w, "{} {}", a.nrows(), a.ncols())?;
    for v in a.iter() {
        writeln!(w, "{v:e}")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use proptest::prelude::*;
    use std::fs;

    #[test]
    fn reads_symmetric_coordinate() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.mtx");
        fs::write(
            &p,
            "%%MatrixMarket matrix coordinate real symmetric\n% comment\n2 2 3\n1 1 4\n2 1 1\n2 2 2\n",
        )
        .unwrap();
        let a = read_symmetric(&p).unwrap();
        assert_eq!(a.as_matrix(), &dmatrix![4.0, 1.0; 1.0, 2.0]);
    }

    #[test]
    fn non_square_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.mtx");
        fs::write(
            &p,
            "%%MatrixMarket matrix coordinate real general\n2 3 1\n1 1 1.0\n",
        )
        .unwrap();
        assert!(matches!(read_symmetric(&p), Err(Error::Parse { .. })));
        fs::write(
            &p,
            "%%MatrixMarket matrix coordinate real symmetric\n2 3 1\n1 1 1.0\n",
        )
        .unwrap();
        assert!(matches!(read_matrix(&p), Err(Error::Parse { .. })));
    }

    #[test]
    fn malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.mtx");
        for body in [
            "",
            "%%MatrixMarket matrix coordinate complex general\n1 1 1\n1 1 1 0\n",
            "%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.0\n",
            "%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1.0\n",
            "%%MatrixMarket matrix coordinate real general\n2 2 1\n1 1 abc\n",
            "not a banner\n",
        ] {
            fs::write(&p, body).unwrap();
            assert!(
                matches!(read_matrix(&p), Err(Error::Parse { .. })),
                "accepted {body:?}"
            );
        }
    }

    #[test]
    fn array_layout_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.mtx");
        let a = dmatrix![1.0, -2.5, 3.25; 0.1, 1e-300, -7.0];
        write_general(&p, &a).unwrap();
        assert_eq!(read_matrix(&p).unwrap(), a);
    }

    proptest! {
        #[test]
        fn symmetric_write_read_is_bit_exact(vals in prop::collection::vec(-1e6..1e6f64, 1..40)) {
            let n = ((vals.len() as f64).sqrt().floor() as usize).max(1);
            let b = DMatrix::from_fn(n, n, |i, j| vals[(i * n + j) % vals.len()] / 3.0);
            let a = SymMatrix::symmetrized(&b + b.transpose());
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("a.mtx");
            write_symmetric(&p, &a).unwrap();
            let back = read_symmetric(&p).unwrap();
            prop_assert_eq!(back, a);
        }
    }
}
