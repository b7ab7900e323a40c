use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::Context;
use serde::Serialize;

pub const SCHEMA_VERSION: u32 = 1;

/// Files produced by one invocation, held in memory until the command has finished.
#[derive(Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn json<T: Serialize>(&mut self, name: String, value: &T) -> anyhow::Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.files.push((name, bytes));
        Ok(())
    }

    pub fn raw(&mut self, name: String, bytes: Vec<u8>) {
        self.files.push((name, bytes));
    }

    /// Write every file to a temporary sibling, then rename them all into place.
    pub fn commit(self, dir: &Path) -> anyhow::Result<Vec<String>> {
        fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        let pid = std::process::id();
        let mut staged = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            let tmp = dir.join(format!(".{name}.{pid}.tmp"));
            let result = fs::File::create(&tmp).and_then(|mut f| {
                f.write_all(bytes)?;
                f.sync_all()
            });
            if let Err(e) = result {
                for (t, _) in &staged {
                    let _ = fs::remove_file(t);
                }
                let _ = fs::remove_file(&tmp);
                return Err(e).with_context(|| format!("writing {}", tmp.display()));
            }
            staged.push((tmp, dir.join(name)));
        }
        let mut written = Vec::with_capacity(staged.len());
        for (tmp, dest) in staged {
            fs::rename(&tmp, &dest).with_context(|| format!("renaming {} to {}", tmp.display(), dest.display()))?;
            written.push(dest.display().to_string());
        }
        Ok(written)
    }
}

/// Metadata embedded in every output file.
#[derive(Debug, Clone, Serialize)]
pub struct Header {
    pub schema_version: u32,
    pub command: &'static str,
    pub config_sha256: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instance_sha256: Option<String>,
}

impl Header {
    pub fn comment_line(&self, schema: &str) -> String {
        let mut line = format!("# otstab {schema} v{}; config_sha256={}; seed={}", self.schema_version, self.config_sha256, self.seed);
        if let Some(h) = &self.instance_sha256 {
            line.push_str(&format!("; instance_sha256={h}"));
        }
        line.push('\n');
        line
    }
}
