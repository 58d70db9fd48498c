use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{CliError, CliResult};

pub const TOOL: &str = concat!("agentgen ", env!("CARGO_PKG_VERSION"));

/// What produced an output file. Embedded in every file written.
#[derive(Debug, Clone)]
pub struct Provenance {
    pub command: &'static str,
    pub seed: u64,
    pub config: Value,
}

impl Provenance {
    pub fn new(command: &'static str, seed: u64, config: &impl Serialize) -> CliResult<Self> {
        let config = serde_json::to_value(config).map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(Self { command, seed, config })
    }

    pub fn to_json(&self) -> Value {
        json!({
            "tool": TOOL,
            "command": self.command,
            "seed": self.seed,
            "config": self.config,
        })
    }

    /// `#`-prefixed lines placed above a CSV header.
    pub fn csv_header(&self) -> String {
        format!(
            "# tool: {TOOL}\n# command: {}\n# seed: {}\n# config: {}\n",
            self.command, self.seed, self.config
        )
    }
}

pub fn write_csv(path: &Path, prov: &Provenance, body: &str) -> CliResult<()> {
    let mut text = prov.csv_header();
    text.push_str(body);
    write_file(path, text.as_bytes())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    }
    agentgen::zoo::write_atomic(path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_lines_are_comments() {
        let p = Provenance::new("eval", 3, &json!({"episodes": 100})).unwrap();
        let h = p.csv_header();
        assert_eq!(h.lines().count(), 4);
        assert!(h.lines().all(|l| l.starts_with("# ")));
        assert!(h.contains("# seed: 3"));
        assert!(h.contains(r#"{"episodes":100}"#));
    }
}
