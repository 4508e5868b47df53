//! Line-delimited artifact files with a provenance header.
//!
//! The first line of every artifact written by this crate is
//! `{"_meta": {"kind": ..., "config_hash": ...}}`; readers accept files
//! with or without it.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub kind: String,
    pub config_hash: String,
}

impl Header {
    pub fn new(kind: &str, config_hash: &str) -> Self {
        Header {
            kind: kind.to_string(),
            config_hash: config_hash.to_string(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    #[serde(rename = "_meta")]
    meta: Header,
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    }
    let f = File::create(path).map_err(|e| Error::file(path, e))?;
    Ok(BufWriter::new(f))
}

pub fn write_header(w: &mut impl Write, header: &Header) -> Result<()> {
    serde_json::to_writer(
        &mut *w,
        &HeaderLine {
            meta: header.clone(),
        },
    )?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn parse_header(line: &str) -> Option<Header> {
    serde_json::from_str::<HeaderLine>(line).ok().map(|h| h.meta)
}

pub fn write_ndjson<T: Serialize>(path: &Path, header: &Header, records: &[T]) -> Result<()> {
    let mut w = create(path)?;
    write_header(&mut w, header)?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ndjson<T: DeserializeOwned>(path: &Path) -> Result<(Option<Header>, Vec<T>)> {
    let f = File::open(path).map_err(|e| Error::file(path, e))?;
    let mut header = None;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 {
            if let Some(h) = parse_header(&line) {
                header = Some(h);
                continue;
            }
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, e.to_string()))?);
    }
    Ok((header, out))
}
