//! Report files. Floats are written in their shortest round-trip form and
//! no file carries timestamps, so identical runs give identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::CliError;

/// Output directory that records every file it writes.
pub struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    status: &'a str,
    failed_stage: Option<&'a str>,
    error: Option<String>,
    files: &'a [String],
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        fs::write(&path, contents).map_err(|e| io_err(&path, e))?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &Value) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("JSON values serialize");
        text.push('\n');
        self.write(name, &text)
    }

    /// Writes `MANIFEST.json`; a failure names the stage it happened in.
    pub fn finish(&mut self, command: &str, failure: Option<(&str, &CliError)>) -> Result<(), CliError> {
        let manifest = Manifest {
            command,
            status: if failure.is_some() { "failed" } else { "ok" },
            failed_stage: failure.map(|f| f.0),
            error: failure.map(|f| f.1.to_string()),
            files: &self.files,
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        let path = self.dir.join("MANIFEST.json");
        fs::write(&path, text).map_err(|e| io_err(&path, e))
    }
}

/// In-memory CSV table.
pub struct Csv {
    text: String,
    columns: usize,
}

impl Csv {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let cols: Vec<&str> = header.iter().map(|s| s.as_ref()).collect();
        Self {
            text: format!("{}\n", cols.join(",")),
            columns: cols.len(),
        }
    }

    pub fn row(&mut self, values: &[f64]) {
        debug_assert_eq!(values.len(), self.columns);
        let mut first = true;
        for v in values {
            if !first {
                self.text.push(',');
            }
            first = false;
            let _ = write!(self.text, "{}", v);
        }
        self.text.push('\n');
    }

    pub fn into_string(self) -> String {
        self.text
    }
}
