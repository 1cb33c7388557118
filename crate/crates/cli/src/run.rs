//! Output directory bookkeeping and the run manifest.
//!
//! `manifest.json` lists every file written with its SHA-256 and whether
//! its content is deterministic (independent of wall-clock time). The
//! `deterministic_hash` covers exactly those files, so re-running from
//! `effective_config.json` reproduces it.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};
use trukan_core::layers::checkpoint::sha256_hex;

use crate::CliError;

pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Serialize)]
struct FileEntry {
    name: String,
    sha256: String,
    deterministic: bool,
}

pub struct Run {
    pub dir: PathBuf,
    command: &'static str,
    seed: Option<u64>,
    files: Vec<FileEntry>,
    extra: Map<String, Value>,
}

impl Run {
    pub fn create(dir: PathBuf, command: &'static str, seed: Option<u64>) -> Result<Self, CliError> {
        std::fs::create_dir_all(&dir)
            .map_err(|e| CliError::runtime(format!("cannot create output directory {}: {e}", dir.display())))?;
        Ok(Run { dir, command, seed, files: Vec::new(), extra: Map::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8], deterministic: bool) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))?;
        self.record(name, bytes, deterministic);
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T, deterministic: bool) -> Result<PathBuf, CliError> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s.as_bytes(), deterministic)
    }

    /// Registers a file some other routine already wrote.
    pub fn adopt(&mut self, path: &Path, deterministic: bool) -> Result<(), CliError> {
        let bytes = std::fs::read(path)?;
        let name = path.strip_prefix(&self.dir).unwrap_or(path).to_string_lossy().into_owned();
        self.record(&name, &bytes, deterministic);
        Ok(())
    }

    fn record(&mut self, name: &str, bytes: &[u8], deterministic: bool) {
        self.files.retain(|f| f.name != name);
        self.files.push(FileEntry { name: name.to_string(), sha256: sha256_hex(bytes), deterministic });
    }

    pub fn set(&mut self, key: &str, value: impl Serialize) {
        self.extra.insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    pub fn deterministic_hash(&self) -> String {
        let mut det: Vec<&FileEntry> = self.files.iter().filter(|f| f.deterministic).collect();
        det.sort_by(|a, b| a.name.cmp(&b.name));
        let joined: String = det.iter().map(|f| format!("{}:{}\n", f.name, f.sha256)).collect();
        sha256_hex(joined.as_bytes())
    }

    /// Writes `manifest.json`; `error` marks a failed run.
    pub fn finish(mut self, error: Option<&CliError>) -> Result<PathBuf, CliError> {
        self.files.sort_by(|a, b| a.name.cmp(&b.name));
        let mut m = Map::new();
        m.insert("schema_version".into(), MANIFEST_SCHEMA.into());
        m.insert("command".into(), self.command.into());
        m.insert("status".into(), if error.is_some() { "failed" } else { "ok" }.into());
        if let Some(e) = error {
            m.insert("error".into(), e.msg.clone().into());
            m.insert("exit_code".into(), e.code.into());
        }
        m.insert("seed".into(), self.seed.map_or(Value::Null, Value::from));
        m.insert("tool_version".into(), env!("CARGO_PKG_VERSION").into());
        m.insert("deterministic_hash".into(), self.deterministic_hash().into());
        m.insert("files".into(), serde_json::to_value(&self.files)?);
        m.extend(std::mem::take(&mut self.extra));
        let path = self.path("manifest.json");
        let mut s = serde_json::to_string_pretty(&Value::Object(m))?;
        s.push('\n');
        std::fs::write(&path, s)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_nondeterministic_files_and_order() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = Run::create(dir.path().join("a"), "t", None).unwrap();
        a.write("x.json", b"1", true).unwrap();
        a.write("log.jsonl", b"wall 3", false).unwrap();
        a.write("y.json", b"2", true).unwrap();
        let mut b = Run::create(dir.path().join("b"), "t", None).unwrap();
        b.write("y.json", b"2", true).unwrap();
        b.write("log.jsonl", b"wall 9", false).unwrap();
        b.write("x.json", b"1", true).unwrap();
        assert_eq!(a.deterministic_hash(), b.deterministic_hash());
        b.write("x.json", b"3", true).unwrap();
        assert_ne!(a.deterministic_hash(), b.deterministic_hash());
    }

    #[test]
    fn manifest_records_failure() {
        let dir = tempfile::tempdir().unwrap();
        let r = Run::create(dir.path().to_path_buf(), "train", Some(3)).unwrap();
        let p = r.finish(Some(&CliError::runtime("diverged"))).unwrap();
        let v: Value = serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap();
        assert_eq!(v["status"], "failed");
        assert_eq!(v["exit_code"], 2);
        assert_eq!(v["seed"], 3);
    }
}
