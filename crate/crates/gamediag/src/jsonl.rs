//! JSON Lines: one self-contained document per line, so any prefix of a log
//! that ends on a newline is itself a valid log.

use std::io::{self, BufRead, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Serializes `item` as one line, newline included.
pub fn to_line<T: Serialize>(item: &T) -> String {
    let mut line = serde_json::to_string(item).expect("log documents serialize");
    line.push('\n');
    line
}

pub fn write_all<T: Serialize>(mut w: impl Write, items: &[T]) -> io::Result<()> {
    for item in items {
        w.write_all(to_line(item).as_bytes())?;
    }
    w.flush()
}

/// Parses every line of `r`. Blank lines are skipped; anything else that
/// fails to parse, including a final line cut short by a crash, is reported
/// with its 1-based line number.
pub fn read_all<T: DeserializeOwned>(mut r: impl BufRead) -> Result<Vec<T>, ReplayError> {
    let mut out = Vec::new();
    let mut buf = Vec::new();
    let mut line = 0;
    loop {
        buf.clear();
        if r.read_until(b'\n', &mut buf)? == 0 {
            return Ok(out);
        }
        line += 1;
        let text = std::str::from_utf8(&buf)
            .map_err(|e| ReplayError::Corrupt { line, message: e.to_string() })?
            .trim();
        if text.is_empty() {
            continue;
        }
        let item = serde_json::from_str(text).map_err(|e| ReplayError::Corrupt { line, message: e.to_string() })?;
        out.push(item);
    }
}
