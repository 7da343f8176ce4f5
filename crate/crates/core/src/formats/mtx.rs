use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{CsrMatrix, FormatError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Real,
    Integer,
    Pattern,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Symmetry {
    General,
    Symmetric,
}

fn err(line: usize, message: impl Into<String>) -> FormatError {
    FormatError::MatrixMarket { line, message: message.into() }
}

pub fn load_matrix_market(path: impl AsRef<Path>) -> Result<CsrMatrix, FormatError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| FormatError::Io { path: path.display().to_string(), message: e.to_string() })?;
    read_matrix_market(file)
}

/// Parse a coordinate-format Matrix Market stream into CSR. Symmetric
/// inputs are expanded, duplicates summed, pattern entries valued 1.0.
pub fn read_matrix_market(reader: impl Read) -> Result<CsrMatrix, FormatError> {
    let mut lines = BufReader::new(reader).lines().enumerate();
    let io = |line: usize, e: std::io::Error| err(line, e.to_string());

    let (_, header) = lines.next().ok_or_else(|| err(1, "empty file"))?;
    let header = header.map_err(|e| io(1, e))?;
    let toks: Vec<String> = header.split_whitespace().map(|t| t.to_ascii_lowercase()).collect();
    if toks.len() != 5 || toks[0] != "%%matrixmarket" || toks[1] != "matrix" {
        return Err(err(1, format!("bad header `{header}`")));
    }
    if toks[2] != "coordinate" {
        return Err(err(1, format!("unsupported format `{}`", toks[2])));
    }
    let field = match toks[3].as_str() {
        "real" | "double" => Field::Real,
        "integer" => Field::Integer,
        "pattern" => Field::Pattern,
        other => return Err(err(1, format!("unsupported field `{other}`"))),
    };
    let symmetry = match toks[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        other => return Err(err(1, format!("unsupported symmetry `{other}`"))),
    };

    let mut size: Option<(usize, usize, usize)> = None;
    let mut entries: Vec<(u32, u32, f64)> = Vec::new();
    let mut seen = 0usize;
    for (no, line) in lines {
        let line_no = no + 1;
        let line = line.map_err(|e| io(line_no, e))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let parts: Vec<&str> = t.split_whitespace().collect();
        let Some((rows, cols, nnz)) = size else {
            if parts.len() != 3 {
                return Err(err(line_no, "size line needs rows, columns and entry count"));
            }
            let p = |s: &str| s.parse::<usize>().map_err(|_| err(line_no, format!("bad size `{s}`")));
            size = Some((p(parts[0])?, p(parts[1])?, p(parts[2])?));
            entries.reserve(size.map_or(0, |s| s.2));
            continue;
        };
        let want = if field == Field::Pattern { 2 } else { 3 };
        if parts.len() != want {
            return Err(err(line_no, format!("expected {want} fields, found {}", parts.len())));
        }
        let coord = |s: &str, bound: usize| -> Result<u32, FormatError> {
            let v: usize = s.parse().map_err(|_| err(line_no, format!("bad index `{s}`")))?;
            if v == 0 || v > bound {
                return Err(err(line_no, format!("index {v} outside 1..={bound}")));
            }
            Ok((v - 1) as u32)
        };
        let r = coord(parts[0], rows)?;
        let c = coord(parts[1], cols)?;
        let v = match field {
            Field::Pattern => 1.0,
            _ => parts[2].parse::<f64>().map_err(|_| err(line_no, format!("bad value `{}`", parts[2])))?,
        };
        seen += 1;
        if seen > nnz {
            return Err(err(line_no, format!("more than the declared {nnz} entries")));
        }
        entries.push((r, c, v));
        if symmetry == Symmetry::Symmetric && r != c {
            entries.push((c, r, v));
        }
    }
    let (rows, cols, nnz) = size.ok_or_else(|| err(1, "missing size line"))?;
    if seen != nnz {
        return Err(err(0, format!("declared {nnz} entries, found {seen}")));
    }
    Ok(coo_to_csr(rows, cols, entries))
}

fn coo_to_csr(rows: usize, cols: usize, mut entries: Vec<(u32, u32, f64)>) -> CsrMatrix {
    entries.sort_by_key(|&(r, c, _)| (r, c));
    let mut m = CsrMatrix { rows, cols, ptr: vec![0; rows + 1], idx: Vec::new(), vals: Vec::new() };
    let mut last: Option<(u32, u32)> = None;
    for (r, c, v) in entries {
        if last == Some((r, c)) {
            *m.vals.last_mut().expect("duplicate follows an entry") += v;
            continue;
        }
        last = Some((r, c));
        m.idx.push(c);
        m.vals.push(v);
        m.ptr[r as usize + 1] += 1;
    }
    for r in 0..rows {
        m.ptr[r + 1] += m.ptr[r];
    }
    m
}

/// Write `m` as a general real coordinate file with round-trip exact values.
pub fn write_matrix_market(m: &CsrMatrix, mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{} {} {}", m.rows, m.cols, m.nnz())?;
    for r in 0..m.rows {
        for k in m.row_range(r) {
            writeln!(w, "{} {} {:?}", r + 1, m.idx[k] + 1, m.vals[k])?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_general_file() {
        let m = read_matrix_market(
            "%%MatrixMarket matrix coordinate real general\n% comment\n2 2 2\n1 1 3.0\n2 2 4.0\n".as_bytes(),
        )
        .unwrap();
        assert_eq!(m.ptr, vec![0, 1, 2]);
        assert_eq!(m.idx, vec![0, 1]);
        assert_eq!(m.vals, vec![3.0, 4.0]);
    }

    #[test]
    fn symmetric_expansion() {
        let m =
            read_matrix_market("%%MatrixMarket matrix coordinate real symmetric\n2 2 1\n2 1 5.0\n".as_bytes()).unwrap();
        assert_eq!(m.ptr, vec![0, 1, 2]);
        assert_eq!(m.idx, vec![1, 0]);
        assert_eq!(m.vals, vec![5.0, 5.0]);
    }

    #[test]
    fn duplicates_summed_and_pattern_valued_one() {
        let m =
            read_matrix_market("%%MatrixMarket matrix coordinate pattern general\n1 3 3\n1 3\n1 1\n1 3\n".as_bytes())
                .unwrap();
        assert_eq!(m.idx, vec![0, 2]);
        assert_eq!(m.vals, vec![1.0, 2.0]);
    }

    #[test]
    fn malformed_inputs_report_lines() {
        let bad_idx = read_matrix_market("%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1.0\n".as_bytes());
        assert_eq!(bad_idx.unwrap_err(), err(3, "index 3 outside 1..=2"));
        assert!(read_matrix_market("%%MatrixMarket matrix array real general\n".as_bytes()).is_err());
        assert!(read_matrix_market("hello\n".as_bytes()).is_err());
        assert!(read_matrix_market("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1\n".as_bytes()).is_err());
    }

    #[test]
    fn write_then_read_is_identity() {
        let m = super::super::gen_banded_csr(20, 30, 4, crate::stream::IndexWidth::W16, 9).unwrap();
        let mut buf = Vec::new();
        write_matrix_market(&m, &mut buf).unwrap();
        assert_eq!(read_matrix_market(buf.as_slice()).unwrap(), m);
    }
}
