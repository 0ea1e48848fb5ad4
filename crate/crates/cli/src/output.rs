//! Records, tables and the run manifest.

use std::fmt::Display;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Ordered `key=value` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Record {
    entries: Vec<(String, String)>,
}

impl Record {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert or replace `key`.
    pub fn set(&mut self, key: &str, value: impl Display) {
        let value = value.to_string().replace('\n', " ");
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn parse(text: &str) -> Self {
        let entries = text
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Self { entries }
    }
}

/// Run provenance: tool version, command options, model hash and arguments.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    record: Record,
}

impl Manifest {
    pub fn new(args: &[String]) -> Self {
        let mut record = Record::new();
        record.set("tool", "qrenv");
        record.set("version", env!("CARGO_PKG_VERSION"));
        record.set("args", args.join(" "));
        Self { record }
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.record.set(key, value);
    }

    pub fn record(&self) -> &Record {
        &self.record
    }
}

/// Human summary plus named files.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub status: i32,
    pub summary: String,
    pub files: Vec<(String, Vec<u8>)>,
}

impl RunOutput {
    pub fn new(status: i32) -> Self {
        Self {
            status,
            summary: String::new(),
            files: Vec::new(),
        }
    }

    pub fn line(&mut self, text: String) {
        self.summary.push_str(&text);
        self.summary.push('\n');
    }

    pub fn table(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    pub fn record(&mut self, name: &str, record: Record) {
        self.files
            .push((name.to_string(), record.render().into_bytes()));
    }

    /// Write every file plus `manifest.txt` with their digests.
    pub fn write_to(&self, dir: &Path, mut manifest: Manifest) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        manifest.set("exit_status", self.status);
        let names: Vec<&str> = self.files.iter().map(|(n, _)| n.as_str()).collect();
        manifest.set("files", names.join(";"));
        for (name, bytes) in &self.files {
            fs::write(dir.join(name), bytes)?;
            manifest.set(&format!("sha256.{name}"), sha256_hex(bytes));
        }
        fs::write(dir.join("manifest.txt"), manifest.record().render())
    }
}

pub fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::Writer::from_writer(Vec::new())
}

pub fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>, csv::Error> {
    w.into_inner().map_err(|e| e.into_error().into())
}
