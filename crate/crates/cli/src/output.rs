//! Output directory bookkeeping: atomic writes, provenance lines, manifest.

use std::path::{Path, PathBuf};

use locodec::util::{fnv1a, write_atomic};
use locodec::Result;

/// Identifies the run every artifact came from.
#[derive(Debug, Clone)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    /// Comment line prepended to CSV outputs.
    pub fn csv_line(&self) -> String {
        format!("# locodec config_hash={} seed={}\n", self.config_hash, self.seed)
    }
}

/// Writes files under one directory and lists them in `manifest.json`.
pub struct OutDir {
    pub root: PathBuf,
    pub prov: Provenance,
    files: Vec<(String, u64)>,
}

impl OutDir {
    pub fn new(root: &Path, prov: Provenance) -> Self {
        Self {
            root: root.to_path_buf(),
            prov,
            files: Vec::new(),
        }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.path(rel), bytes)?;
        self.files.push((rel.to_string(), fnv1a(bytes)));
        Ok(())
    }

    /// CSV with the provenance line on top.
    pub fn write_csv(&mut self, rel: &str, body: &str) -> Result<()> {
        let text = self.prov.csv_line() + body;
        self.write(rel, text.as_bytes())
    }

    /// Records a file some other writer produced atomically.
    pub fn record(&mut self, rel: &str) -> Result<()> {
        let p = self.path(rel);
        let bytes = std::fs::read(&p).map_err(|e| locodec::Error::Io { path: p, source: e })?;
        self.files.push((rel.to_string(), fnv1a(&bytes)));
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.files.sort();
        let files: Vec<serde_json::Value> = self
            .files
            .iter()
            .map(|(f, h)| serde_json::json!({ "file": f, "fnv1a": format!("{h:016x}") }))
            .collect();
        let doc = serde_json::json!({
            "config_hash": self.prov.config_hash,
            "seed": self.prov.seed,
            "files": files,
        });
        let text = serde_json::to_string_pretty(&doc).expect("json") + "\n";
        write_atomic(&self.root.join("manifest.json"), text.as_bytes())
    }
}
