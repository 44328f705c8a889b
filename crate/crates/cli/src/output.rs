//! Artifact files. Every output carries the same provenance block: the
//! producing command, the hash of the resolved config and the SHA-256 of
//! each input file. CSV files carry it as leading `# key: value` lines,
//! JSONL files as their first record and JSON artifacts as a field.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use robust_phase::provenance::hash_bytes;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::Config;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    /// File name -> SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
}

/// The output directory of one command invocation.
pub struct Outputs {
    pub dir: PathBuf,
    pub provenance: Provenance,
}

impl Outputs {
    /// Creates `dir` and writes the resolved config as `<command>.config.toml`.
    pub fn create(dir: &Path, command: &str, config: &Config) -> Result<Outputs> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let text = toml::to_string(config).context("serializing the resolved config")?;
        let config_hash = hash_bytes(text.as_bytes());
        write_bytes(&dir.join(format!("{command}.config.toml")), text.as_bytes())?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            provenance: Provenance {
                command: command.to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                config_hash,
                inputs: BTreeMap::new(),
            },
        })
    }

    /// Reads an upstream artifact from the output directory and records its
    /// hash. A missing file names the command that produces it.
    pub fn input(&mut self, name: &str, producer: &str) -> Result<Vec<u8>> {
        let path = self.dir.join(name);
        if !path.exists() {
            return Err(crate::MissingInput {
                path,
                producer: producer.to_string(),
            }
            .into());
        }
        let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        self.provenance
            .inputs
            .insert(name.to_string(), hash_bytes(&bytes));
        Ok(bytes)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn header(&self) -> String {
        let p = &self.provenance;
        let mut out = format!(
            "# command: {}\n# version: {}\n# config_hash: {}\n",
            p.command, p.version, p.config_hash
        );
        for (name, hash) in &p.inputs {
            out.push_str(&format!("# input {name}: {hash}\n"));
        }
        out
    }

    pub fn write_csv<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<()> {
        let mut buf = self.header().into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            for row in rows {
                w.serialize(row).with_context(|| format!("writing {name}"))?;
            }
            w.flush()?;
        }
        write_bytes(&self.path(name), &buf)
    }

    /// One JSON object per line, after a `{"provenance": ...}` line.
    pub fn write_jsonl<T: Serialize>(&self, name: &str, records: &[T]) -> Result<()> {
        let path = self.path(name);
        let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, &serde_json::json!({ "provenance": self.provenance }))?;
        w.write_all(b"\n")?;
        for r in records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush().with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    pub fn write_artifact<T: Serialize>(&self, name: &str, body: &T) -> Result<()> {
        let artifact = Artifact {
            provenance: self.provenance.clone(),
            body,
        };
        write_bytes(&self.path(name), &serde_json::to_vec(&artifact)?)
    }
}

#[derive(Serialize, Deserialize)]
pub struct Artifact<T> {
    pub provenance: Provenance,
    pub body: T,
}

pub fn parse_artifact<T: DeserializeOwned>(name: &str, bytes: &[u8]) -> Result<Artifact<T>> {
    serde_json::from_slice(bytes).with_context(|| format!("parsing {name}"))
}

/// Rows of a CSV written by [`Outputs::write_csv`].
pub fn parse_csv<T: DeserializeOwned>(name: &str, bytes: &[u8]) -> Result<Vec<T>> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(bytes)
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .with_context(|| format!("parsing {name}"))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}
