use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::spec::{ExperimentSpec, CSV_SPEC_PREFIX, VERSION_KEY};
use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format `{other}`, expected csv or json")),
        }
    }
}

/// Writes result files into one directory, each stamped with the tool
/// version and the resolved spec.
pub struct Writer {
    dir: PathBuf,
    format: Format,
    command: &'static str,
    spec_json: serde_json::Value,
    spec_line: String,
    written: Vec<PathBuf>,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    #[serde(rename = "qamsched_version")]
    version: &'a str,
    command: &'a str,
    spec: &'a serde_json::Value,
    result: &'a T,
}

impl Writer {
    pub fn new(dir: &Path, format: Format, command: &'static str, spec: &ExperimentSpec) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        debug_assert_eq!(VERSION_KEY, "qamsched_version");
        Ok(Self {
            dir: dir.to_path_buf(),
            format,
            command,
            spec_json: serde_json::to_value(spec).expect("spec serializes"),
            spec_line: spec.to_json(),
            written: Vec::new(),
        })
    }

    pub fn format(&self) -> Format {
        self.format
    }

    fn put(&mut self, name: &str, contents: String) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    /// `body` must start with its column header line.
    pub fn csv(&mut self, stem: &str, body: &str) -> Result<(), CliError> {
        let text = format!(
            "# qamsched {VERSION} {}\n{CSV_SPEC_PREFIX}{}\n{body}",
            self.command, self.spec_line
        );
        self.put(&format!("{stem}.csv"), text)
    }

    pub fn json<T: Serialize>(&mut self, stem: &str, result: &T) -> Result<(), CliError> {
        let doc = Envelope {
            version: VERSION,
            command: self.command,
            spec: &self.spec_json,
            result,
        };
        let mut text = serde_json::to_string_pretty(&doc).expect("results serialize");
        text.push('\n');
        self.put(&format!("{stem}.json"), text)
    }

    /// Tabular output in the selected format.
    pub fn table<T: Serialize>(&mut self, stem: &str, csv_body: &str, json: &T) -> Result<(), CliError> {
        match self.format {
            Format::Csv => self.csv(stem, csv_body),
            Format::Json => self.json(stem, json),
        }
    }

    pub fn finish(self) -> Vec<PathBuf> {
        self.written
    }
}
