//! Output directories: overwrite protection, resolved config and a run
//! record whose `completed` flag stays false until the command finishes.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use crate::Common;

#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    version: &'a str,
    completed: bool,
}

pub struct OutDir {
    pub path: PathBuf,
    command: &'static str,
}

impl OutDir {
    /// Claims the output directory for `command`. Fails if any of `products`
    /// already exists there, unless `--force`.
    pub fn claim(common: &Common, command: &'static str, products: &[&str]) -> Result<Self> {
        let path = common.out.clone().unwrap_or_else(|| common.output_root.join(command));
        if !common.force {
            for p in products.iter().chain(&["config.toml", "run.toml"]) {
                if path.join(p).exists() {
                    bail!("{} already exists; refusing to overwrite without --force", path.join(p).display());
                }
            }
        }
        fs::create_dir_all(&path).with_context(|| format!("creating {}", path.display()))?;
        let out = OutDir { path, command };
        out.mark(false)?;
        Ok(out)
    }

    fn mark(&self, completed: bool) -> Result<()> {
        let rec = RunRecord { command: self.command, version: env!("CARGO_PKG_VERSION"), completed };
        self.write("run.toml", toml::to_string(&rec)?)
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.file(name);
        fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))
    }

    pub fn finish(self) -> Result<()> {
        self.mark(true)
    }
}
