//! Input files, layer selection and the run manifest.

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use tilelab::workload::load_workload;
use tilelab::{load_config, AccelConfig, ConvLayer, InstructionStream};

/// Bad flags or unreadable inputs; exits with code 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

pub fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

pub fn config(path: Option<&Path>) -> Result<AccelConfig> {
    match path {
        None => Ok(AccelConfig::default()),
        Some(p) => load_config(&read(p)?).map_err(|e| usage(format!("{}: {e}", p.display()))),
    }
}

pub fn stream(path: &Path) -> Result<InstructionStream> {
    InstructionStream::from_json(&read(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// A layer with the name its output files carry.
pub struct Named<T> {
    pub name: String,
    pub item: T,
}

/// Layers picked by name or index, in workload order.
pub fn layers(path: &Path, picks: &[String]) -> Result<Vec<Named<ConvLayer>>> {
    let all = load_workload(&read(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let named: Vec<Named<ConvLayer>> = all
        .into_iter()
        .enumerate()
        .map(|(i, l)| Named { name: if l.name.is_empty() { format!("L{i}") } else { file_stem(&l.name) }, item: l })
        .collect();
    if picks.is_empty() {
        return Ok(named);
    }
    for p in picks {
        if !named.iter().enumerate().any(|(i, n)| selects(p, i, n)) {
            return Err(usage(format!("no layer named or numbered {p:?} in {}", path.display())));
        }
    }
    Ok(named.into_iter().enumerate().filter(|(i, n)| picks.iter().any(|p| selects(p, *i, n))).map(|(_, n)| n).collect())
}

fn selects(pick: &str, index: usize, layer: &Named<ConvLayer>) -> bool {
    pick == layer.name || pick == layer.item.name || pick.parse::<usize>().ok() == Some(index)
}

fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect()
}

/// Everything a simulation run depends on, written next to its outputs.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<PathBuf>,
    pub workload: Option<PathBuf>,
    pub stream: Option<PathBuf>,
    pub layers: Vec<String>,
    pub out_dir: PathBuf,
    pub mode: String,
    pub seed: u64,
}

impl RunManifest {
    /// Check inputs exist and prepare the output directory.
    pub fn prepare(&self) -> Result<()> {
        for p in [&self.config, &self.workload, &self.stream].into_iter().flatten() {
            if !p.is_file() {
                return Err(usage(format!("{} does not exist", p.display())));
            }
        }
        fs::create_dir_all(&self.out_dir)
            .map_err(|e| usage(format!("cannot create {}: {e}", self.out_dir.display())))?;
        let json = serde_json::to_string_pretty(self)?;
        self.write("manifest.json", json)
    }

    pub fn write(&self, file: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let path = self.out_dir.join(file);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
    }
}
