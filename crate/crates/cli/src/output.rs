//! Run-directory layout and provenance records.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use pcw_core::Result;

use crate::config::RunConfig;

pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn create(path: &Path) -> Result<Self> {
        std::fs::create_dir_all(path)?;
        Ok(RunDir {
            path: path.to_path_buf(),
        })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write_csv<F>(&self, name: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut dyn std::io::Write) -> Result<()>,
    {
        let file = std::fs::File::create(self.file(name))?;
        let mut w = std::io::BufWriter::new(file);
        f(&mut w)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| pcw_core::Error::invalid(format!("json: {e}")))?;
        std::fs::write(self.file(name), text)?;
        Ok(())
    }

    /// Write the provenance block: tool version, command, config hash and
    /// echo, seed. The timestamp lives only here; data files stay
    /// byte-identical across reruns.
    pub fn write_provenance(&self, command: &str, cfg: &RunConfig) -> Result<()> {
        let echo = toml::to_string_pretty(cfg)
            .map_err(|e| pcw_core::Error::invalid(format!("config echo: {e}")))?;
        let mut hasher = Sha256::new();
        hasher.update(echo.as_bytes());
        let hash = hasher.finalize();
        let hex: String = hash.iter().map(|b| format!("{b:02x}")).collect();
        let prov = serde_json::json!({
            "tool": "pcw",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "seed": cfg.run.seed,
            "config_sha256": hex,
            "timestamp_unix": std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        });
        self.write_json("provenance.json", &prov)?;
        std::fs::write(self.file("config_echo.toml"), echo)?;
        Ok(())
    }
}
