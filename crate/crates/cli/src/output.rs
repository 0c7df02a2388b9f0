//! Artifact writing: CSV, JSON, SVG, and the run manifest.
//!
//! Every file is accumulated through [`OutputWriter`] so the manifest
//! can record a SHA-256 digest per artifact. Nothing here depends on
//! time, environment, or worker count; identical runs produce identical
//! bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliResult;

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        write!(out, "{b:02x}").expect("writing to a string");
    }
    out
}

#[derive(Debug, Serialize)]
struct FileRecord {
    name: String,
    bytes: u64,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config_sha256: String,
    files: &'a [FileRecord],
}

pub struct OutputWriter {
    dir: PathBuf,
    files: Vec<FileRecord>,
}

impl OutputWriter {
    pub fn new(dir: &Path) -> Self {
        OutputWriter {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    pub fn write(&mut self, name: &str, contents: &str) -> CliResult<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, contents)?;
        self.files.push(FileRecord {
            name: name.to_string(),
            bytes: contents.len() as u64,
            sha256: hex_digest(contents.as_bytes()),
        });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, &text)
    }

    /// Writes `manifest.json` last so it can describe every artifact.
    pub fn finish(self, command: &str, seed: u64, config_text: &str) -> CliResult<()> {
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed,
            config_sha256: hex_digest(config_text.as_bytes()),
            files: &self.files,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.dir.join("manifest.json"), text)?;
        Ok(())
    }
}

/// Incremental CSV builder with RFC-4180 quoting.
pub struct Csv {
    text: String,
    columns: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut csv = Csv {
            text: String::new(),
            columns: header.len(),
        };
        csv.row(header.iter().map(|s| s.to_string()));
        csv
    }

    pub fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) {
        let mut n = 0;
        for (i, field) in fields.into_iter().enumerate() {
            if i > 0 {
                self.text.push(',');
            }
            if field.contains([',', '"', '\n']) {
                self.text.push('"');
                self.text.push_str(&field.replace('"', "\"\""));
                self.text.push('"');
            } else {
                self.text.push_str(&field);
            }
            n += 1;
        }
        assert_eq!(n, self.columns, "csv row width mismatch");
        self.text.push('\n');
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

/// Shortest-round-trip float formatting; deterministic and lossless.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_quotes_awkward_fields() {
        let mut csv = Csv::new(&["a", "b"]);
        csv.row(["plain".into(), "x, \"y\"".into()]);
        assert_eq!(csv.into_string(), "a,b\nplain,\"x, \"\"y\"\"\"\n");
    }

    #[test]
    fn digests_are_hex() {
        let d = hex_digest(b"abc");
        assert_eq!(d.len(), 64);
        assert_eq!(
            d,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
