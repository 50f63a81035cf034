//! Key-value reports (TOML) and comma-separated tables.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

pub fn to_toml<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    toml::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))
}

pub fn write_toml<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    std::fs::write(path, to_toml(value)?)?;
    Ok(())
}

/// One header line, then one record per row.
pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}
