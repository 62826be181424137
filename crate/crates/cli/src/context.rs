//! Shared command state: resolved configuration, declared inputs and outputs,
//! checksums, and the manifest hand-off.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context as _;

use d2t_core::config::{load_config, ToolkitConfig};
use d2t_core::corpus::{load_corpus, Corpus, Split};
use d2t_core::util::file_checksum;

use crate::manifest::RunManifest;

#[derive(Debug)]
pub enum CliError {
    /// A declared input path does not exist (exit code 2).
    MissingInput(PathBuf),
    /// Everything else (exit code 1).
    Other(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Other(e)
    }
}

pub struct Ctx {
    pub config: ToolkitConfig,
    pub threads: usize,
    seed: u64,
    out: PathBuf,
    argv: Vec<String>,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl Ctx {
    /// Resolves the global flags: loads the configuration (after checking the
    /// file exists) and applies the seed override to the model and schedule.
    pub fn new(
        config_path: Option<&Path>,
        seed: Option<u64>,
        threads: usize,
        out: Option<PathBuf>,
        argv: Vec<String>,
    ) -> Result<Ctx, CliError> {
        let mut config = match config_path {
            Some(path) => {
                if !path.exists() {
                    return Err(CliError::MissingInput(path.to_path_buf()));
                }
                load_config(path)
                    .with_context(|| format!("loading config {}", path.display()))?
            }
            None => ToolkitConfig::default(),
        };
        if let Some(seed) = seed {
            config.model.seed = seed;
            config.schedule.shuffle_seed = seed;
        }
        let seed = config.model.seed;
        let out = out.ok_or_else(|| anyhow::anyhow!("--out is required"))?;
        let mut ctx = Ctx {
            config,
            threads,
            seed,
            out,
            argv,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        };
        if let Some(path) = config_path {
            ctx.record_input(path)?;
        }
        Ok(ctx)
    }

    /// Declares `path` as an input: it must exist, and its checksum lands in
    /// the manifest.
    pub fn record_input(&mut self, path: &Path) -> Result<(), CliError> {
        if !path.exists() {
            return Err(CliError::MissingInput(path.to_path_buf()));
        }
        let digest = file_checksum(path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(CliError::Other)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    /// Loads a corpus after registering it as an input.
    pub fn load_corpus_input(&mut self, path: &Path, split: Split) -> Result<Corpus, CliError> {
        self.record_input(path)?;
        let corpus = load_corpus(path, split)
            .with_context(|| format!("loading corpus {}", path.display()))?;
        Ok(corpus)
    }

    /// Writes the primary output and records its checksum.
    pub fn write_output(&mut self, bytes: &[u8]) -> Result<(), CliError> {
        std::fs::write(&self.out, bytes)
            .with_context(|| format!("writing {}", self.out.display()))?;
        let digest =
            file_checksum(&self.out).with_context(|| format!("reading back {}", self.out.display()))?;
        self.outputs.insert(self.out.display().to_string(), digest);
        Ok(())
    }

    /// Records an output written directly by the command (e.g. a checkpoint).
    pub fn record_output(&mut self, path: &Path) -> Result<(), CliError> {
        let digest = file_checksum(path)
            .with_context(|| format!("reading back {}", path.display()))
            .map_err(CliError::Other)?;
        self.outputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn out_path(&self) -> &Path {
        &self.out
    }

    pub fn write_manifest(&self) -> Result<(), CliError> {
        let manifest = RunManifest {
            command: self.argv.clone(),
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            config: self.config.to_file_string(),
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        let mut path = self.out.as_os_str().to_owned();
        path.push(".manifest.json");
        let path = PathBuf::from(path);
        manifest.save(&path).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}
