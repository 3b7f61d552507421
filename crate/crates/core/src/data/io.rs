//! Record and vocabulary file I/O.
//!
//! Records are UTF-8 JSON, one object per line. Vocabulary files are
//! token<TAB>index lines sorted by index. Writers go through a temp file
//! and rename, so a failed write leaves no partial output.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{DataError, PatientHistory, Vocab};

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes content to `path` atomically (temp file in the same directory,
/// then rename).
pub(crate) fn atomic_write(path: &Path, write: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), DataError> {
    let tmp = path.with_extension("tmp");
    {
        let file = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
        let mut buf = BufWriter::new(file);
        write(&mut buf).map_err(|e| io_err(&tmp, e))?;
        buf.flush().map_err(|e| io_err(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

/// Writes one JSON object per line. The binary label is derived, never stored.
pub fn write_records(path: impl AsRef<Path>, records: &[PatientHistory]) -> Result<(), DataError> {
    let path = path.as_ref();
    atomic_write(path, |w| {
        for r in records {
            serde_json::to_writer(&mut *w, r)?;
            writeln!(w)?;
        }
        Ok(())
    })
}

/// Reads and validates line-delimited records; errors carry 1-based line
/// numbers.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<PatientHistory>, DataError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PatientHistory =
            serde_json::from_str(&line).map_err(|e| DataError::Parse {
                line: lineno + 1,
                message: e.to_string(),
            })?;
        record.validate().map_err(|e| DataError::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

impl Vocab {
    /// token<TAB>index lines sorted by index, padding and unknown included.
    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let path = path.as_ref();
        atomic_write(path, |w| {
            for idx in 0..self.size() {
                writeln!(w, "{}\t{}", self.decode(idx as u32).unwrap(), idx)?;
            }
            Ok(())
        })
    }

    pub fn read_tsv(path: impl AsRef<Path>) -> Result<Vocab, DataError> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
        let reader = BufReader::new(file);
        let mut tokens = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| io_err(path, e))?;
            if line.is_empty() {
                continue;
            }
            let (token, index) = line.split_once('\t').ok_or_else(|| DataError::Parse {
                line: lineno + 1,
                message: "expected token<TAB>index".into(),
            })?;
            let index: usize = index.parse().map_err(|_| DataError::Parse {
                line: lineno + 1,
                message: format!("bad index {:?}", index),
            })?;
            if index != tokens.len() {
                return Err(DataError::Parse {
                    line: lineno + 1,
                    message: format!("index {} out of order, expected {}", index, tokens.len()),
                });
            }
            tokens.push(token.to_string());
        }
        if tokens.len() < 2 || tokens[0] != "<pad>" || tokens[1] != "<unk>" {
            return Err(DataError::Parse {
                line: 1,
                message: "vocabulary must start with <pad> and <unk>".into(),
            });
        }
        Ok(Vocab::from_tokens(tokens[2..].iter().map(|s| s.as_str())))
    }
}
