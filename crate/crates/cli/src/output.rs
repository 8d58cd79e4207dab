//! CSV and JSON artifacts.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::Failure;

/// Where artifacts go and whether JSON carries a timestamp.
pub struct Sink {
    pub dir: PathBuf,
    pub timestamp: bool,
    pub written: Vec<PathBuf>,
}

#[derive(Serialize)]
struct Envelope<'a, S: Serialize, R: Serialize> {
    command: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    generated_unix: Option<u64>,
    settings: &'a S,
    result: &'a R,
}

impl Sink {
    pub fn new(dir: &Path, timestamp: bool) -> Result<Self, Failure> {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_owned(), timestamp, written: Vec::new() })
    }

    pub fn json<S: Serialize, R: Serialize>(&mut self, name: &str, command: &str, settings: &S, result: &R) -> Result<(), Failure> {
        let generated_unix = self.timestamp.then(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0));
        let env = Envelope { command, generated_unix, settings, result };
        let mut text = serde_json::to_string_pretty(&env).map_err(|e| Failure::Io(e.to_string()))?;
        text.push('\n');
        let path = self.dir.join(name);
        std::fs::write(&path, text).map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))?;
        self.written.push(path);
        Ok(())
    }

    /// Writes a header and rows of numbers.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<(), Failure> {
        let path = self.dir.join(name);
        let io = |e: csv::Error| Failure::Io(format!("cannot write {}: {e}", path.display()));
        let mut w = csv::Writer::from_path(&path).map_err(io)?;
        w.write_record(header).map_err(io)?;
        for row in rows {
            w.write_record(row.iter().map(|v| v.to_string())).map_err(io)?;
        }
        w.flush().map_err(|e| Failure::Io(e.to_string()))?;
        self.written.push(path);
        Ok(())
    }

    /// Writes serializable rows with their field names as the header.
    pub fn csv_records<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<(), Failure> {
        let path = self.dir.join(name);
        let io = |e: csv::Error| Failure::Io(format!("cannot write {}: {e}", path.display()));
        let mut w = csv::Writer::from_path(&path).map_err(io)?;
        for r in rows {
            w.serialize(r).map_err(io)?;
        }
        w.flush().map_err(|e| Failure::Io(e.to_string()))?;
        self.written.push(path);
        Ok(())
    }
}
