//! CSV datasets: one record per line, comma separated, `#` lines ignored.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use csv::{ReaderBuilder, Trim};
use ppme_core::SampleSet;

use crate::error::{CliError, CliResult};

pub fn ingest_csv(path: &Path) -> CliResult<SampleSet> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    read_csv(file)
}

pub fn read_csv<R: Read>(input: R) -> CliResult<SampleSet> {
    let mut reader = ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(Trim::All)
        .flexible(true)
        .from_reader(input);
    let mut dim = None;
    let mut data = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let width = *dim.get_or_insert(record.len());
        if record.len() != width {
            return Err(CliError::Parse {
                line,
                message: format!("expected {width} columns, found {}", record.len()),
            });
        }
        for cell in record.iter() {
            let v: f64 = cell.parse().map_err(|_| CliError::Parse {
                line,
                message: format!("'{cell}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(CliError::Parse {
                    line,
                    message: format!("'{cell}' is not finite"),
                });
            }
            data.push(v);
        }
    }
    let dim = dim.ok_or(CliError::Parse {
        line: 0,
        message: "no records".into(),
    })?;
    Ok(SampleSet::from_flat(dim, data)?)
}

/// Writes records with the shortest representation that parses back to the
/// same `f64`.
pub fn write_csv<W: Write>(samples: &SampleSet, out: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in samples.rows() {
        w.write_record(row.iter().map(|v| format!("{v:?}")))
            .map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

pub fn emit_csv(samples: &SampleSet, path: &Path) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    write_csv(samples, file)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_rows() {
        let s = read_csv("1,2\n3,4".as_bytes()).unwrap();
        assert_eq!((s.len(), s.dim()), (2, 2));
        assert_eq!(s.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn skips_header() {
        let s = read_csv("# x,y\n1,2".as_bytes()).unwrap();
        assert_eq!((s.len(), s.dim()), (1, 2));
    }

    #[test]
    fn ragged_row_reports_line() {
        match read_csv("1,2\n3".as_bytes()) {
            Err(CliError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_numeric_cell() {
        match read_csv("# h\n1,2\n3,x\n".as_bytes()) {
            Err(CliError::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("'x'"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(read_csv("# only\n".as_bytes()), Err(CliError::Parse { .. })));
    }

    #[test]
    fn round_trip_is_exact() {
        let rows = vec![vec![0.1, -1e-300, 123456789.123456789], vec![1.0 / 3.0, 2.5e17, -0.0]];
        let s = SampleSet::new(3, &rows).unwrap();
        let mut buf = Vec::new();
        write_csv(&s, &mut buf).unwrap();
        let back = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.as_flat(), s.as_flat());
    }
}
