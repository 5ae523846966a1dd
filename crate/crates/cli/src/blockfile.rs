//! Plain-text vectors exchanged between the CLI subcommands.
//!
//! ```text
//! # block 7
//! 0.25
//! -1.5
//! ```
//!
//! One value per line, written with round-trip precision. The header is
//! optional on input.

use std::path::Path;

use crate::error::{file_err, CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BlockFile {
    pub index: Option<u64>,
    pub values: Vec<f64>,
}

impl BlockFile {
    pub fn render(&self) -> String {
        let mut s = String::new();
        if let Some(i) = self.index {
            s += &format!("# block {i}\n");
        }
        for v in &self.values {
            s += &format!("{v:?}\n");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut index = None;
        let mut values = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(n) = rest.trim().strip_prefix("block") {
                    index = Some(n.trim().parse().map_err(|_| bad(i, line))?);
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            values.push(line.parse().map_err(|_| bad(i, line))?);
        }
        Ok(Self { index, values })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(file_err(path))?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(file_err(path))
    }
}

fn bad(line: usize, text: &str) -> CliError {
    CliError::Usage(format!("line {}: not a value: {text:?}", line + 1))
}
