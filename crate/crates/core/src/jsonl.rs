//! One JSON value per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn write<T: Serialize, W: Write>(mut out: W, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_file<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    write(BufWriter::new(File::create(path)?), items)
}

/// Reads every non-blank line; a malformed line is a parse error carrying
/// its line number.
pub fn read<T: DeserializeOwned, R: BufRead>(input: R) -> Result<Vec<T>> {
    let mut items = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        items.push(item);
    }
    Ok(items)
}

pub fn read_file<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    read(BufReader::new(File::open(path)?))
}
