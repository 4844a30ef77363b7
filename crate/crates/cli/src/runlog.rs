//! Plain-text run log written next to the outputs.

use std::fs;
use std::path::{Path, PathBuf};

use mfg_core::{Error, Result};

pub struct RunLog {
    path: PathBuf,
    lines: Vec<String>,
}

impl RunLog {
    pub fn new(dir: &Path, command: &str) -> Self {
        let mut log = Self {
            path: dir.join("run.log"),
            lines: Vec::new(),
        };
        log.line(format!("command: {command}"));
        log
    }

    pub fn line(&mut self, s: impl Into<String>) {
        let s = s.into();
        log::info!("{s}");
        self.lines.push(s);
    }

    /// Multi-line blocks go to the file only.
    pub fn block(&mut self, s: &str) {
        self.lines.extend(s.lines().map(str::to_string));
    }

    pub fn save(&self) -> Result<()> {
        let mut text = self.lines.join("\n");
        text.push('\n');
        fs::write(&self.path, text).map_err(|source| Error::Io {
            path: self.path.clone(),
            source,
        })
    }
}
