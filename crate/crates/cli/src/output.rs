use std::io::Write;
use std::path::Path;

use anyhow::Context;
use sha2::{Digest, Sha256};

/// Hash of the config bytes followed by the model bytes.
pub fn config_hash(config: &[u8], model: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(config);
    h.update(model);
    hex::encode(h.finalize())
}

/// CSV text with a provenance comment line and a header row.
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(hash: &str, seed: u64, header: &str) -> Self {
        Self {
            text: format!("# config_sha256={hash} seed={seed}\n{header}\n"),
        }
    }

    pub fn row(&mut self, fields: &[String]) {
        self.text.push_str(&fields.join(","));
        self.text.push('\n');
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

/// Writes `contents` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &str) -> anyhow::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let name = path.file_name().context("output path has no file name")?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)
            .with_context(|| format!("cannot create {}", tmp.display()))?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path).with_context(|| format!("cannot move output to {}", path.display()))
}

pub fn num(v: f64) -> String {
    format!("{v}")
}
