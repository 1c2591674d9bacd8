use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Rows of named columns, rendered as CSV or as a JSON array of objects.
#[derive(Debug, Default)]
pub struct Table {
    columns: Vec<String>,
    rows: Vec<Map<String, Value>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    /// Columns are taken from the first row.
    pub fn from_serialized<T: Serialize>(items: &[T]) -> Result<Self, CliError> {
        let mut table = Table::default();
        for item in items {
            let Value::Object(row) = serde_json::to_value(item)? else {
                return Err(CliError::Usage("rows must serialize to objects".into()));
            };
            if table.columns.is_empty() {
                table.columns = row.keys().cloned().collect();
            }
            table.rows.push(row);
        }
        Ok(table)
    }

    pub fn push(&mut self, values: Vec<Value>) {
        debug_assert_eq!(values.len(), self.columns.len());
        self.rows.push(self.columns.iter().cloned().zip(values).collect());
    }

    fn cell(value: &Value) -> String {
        match value {
            Value::Null => String::new(),
            Value::String(s) => s.clone(),
            Value::Bool(b) => u8::from(*b).to_string(),
            other => other.to_string(),
        }
    }

    pub fn render(&self, format: Format) -> Result<Vec<u8>, CliError> {
        match format {
            Format::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(&self.columns)?;
                for row in &self.rows {
                    w.write_record(self.columns.iter().map(|c| Self::cell(&row[c])))?;
                }
                w.into_inner().map_err(|e| CliError::Io(e.into_error()))
            }
            Format::Json => {
                let mut out = serde_json::to_vec_pretty(&self.rows)?;
                out.push(b'\n');
                Ok(out)
            }
        }
    }
}

/// Everything needed to rerun a command: its name, the full parameter set,
/// the seed and the crate version. Thread counts are left out because they
/// never change results.
#[derive(Debug, Serialize)]
pub struct Metadata {
    pub command: String,
    pub version: &'static str,
    pub seed: u64,
    pub format: Format,
    pub config: Value,
    pub results: Value,
}

impl Metadata {
    pub fn new(command: &str, seed: u64, format: Format, config: impl Serialize) -> Result<Self, CliError> {
        Ok(Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            seed,
            format,
            config: serde_json::to_value(config)?,
            results: json!({}),
        })
    }

    pub fn result(&mut self, key: &str, value: impl Serialize) -> Result<(), CliError> {
        self.results
            .as_object_mut()
            .expect("results is an object")
            .insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }
}

pub fn sidecar_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// Writes the table to `output` with a `.meta.json` sidecar, or to stdout
/// with the metadata as one JSON line on stderr.
pub fn emit(table: &Table, meta: &Metadata, output: Option<&Path>, format: Format) -> Result<(), CliError> {
    let body = table.render(format)?;
    match output {
        Some(path) => {
            fs::write(path, body)?;
            let mut m = serde_json::to_vec_pretty(meta)?;
            m.push(b'\n');
            fs::write(sidecar_path(path), m)?;
        }
        None => {
            io::stdout().write_all(&body)?;
            eprintln!("{}", serde_json::to_string(meta)?);
        }
    }
    Ok(())
}
