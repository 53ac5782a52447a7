use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{usage, Command, Global};
use crate::Error;

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT: &str = "hdt-run-manifest";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: PathBuf,
    pub sha256: String,
}

/// Resolved configuration of one run. Contains no timestamps or output paths
/// so that replays produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub tool_version: String,
    pub global: Global,
    pub command: Command,
    /// Derived settings the command resolved (effective model and train configs, ...).
    pub resolved: serde_json::Value,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<String>,
}

pub fn sha256_file(path: &Path) -> Result<String, Error> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let k = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if k == 0 {
            break;
        }
        h.update(&buf[..k]);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

impl Manifest {
    pub fn new(global: &Global, command: &Command) -> Self {
        Self {
            format: FORMAT.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            global: global.clone(),
            command: command.clone(),
            resolved: serde_json::Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), Error> {
        let sha256 = sha256_file(path)?;
        self.inputs.push(InputRecord { path: path.to_path_buf(), sha256 });
        Ok(())
    }

    pub fn output(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    pub fn resolve(&mut self, key: &str, value: impl Serialize) {
        if !self.resolved.is_object() {
            self.resolved = serde_json::Value::Object(Default::default());
        }
        self.resolved[key] = serde_json::to_value(value).expect("config serializes");
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        write_json(&dir.join(MANIFEST_FILE), self)
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| usage(format!("{}: not a manifest: {e}", path.display())))?;
        if m.format != FORMAT {
            return Err(usage(format!("{}: unknown manifest format {:?}", path.display(), m.format)));
        }
        Ok(m)
    }

    /// Fails if any recorded input changed since the manifest was written.
    pub fn verify_inputs(&self) -> anyhow::Result<()> {
        for rec in &self.inputs {
            let now = sha256_file(&rec.path)?;
            if now != rec.sha256 {
                anyhow::bail!("{}: content changed since the manifest was written", rec.path.display());
            }
        }
        Ok(())
    }
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub(crate) fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}
