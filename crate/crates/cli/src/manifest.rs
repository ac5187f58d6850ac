use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

/// Where the configuration came from.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case", tag = "source", content = "name")]
pub enum ConfigSource {
    Path(PathBuf),
    Preset(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct ConfigRecord {
    #[serde(flatten)]
    pub source: ConfigSource,
    pub digest: String,
}

/// Provenance of one run, embedded in every artifact.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    pub config: Option<ConfigRecord>,
    pub params: Value,
    pub tolerances: Value,
    pub seed: Option<u64>,
    pub timestamp_unix: u64,
}

impl RunManifest {
    pub fn new(
        subcommand: &'static str,
        config: Option<ConfigRecord>,
        params: Value,
        tolerances: Value,
        seed: Option<u64>,
    ) -> Self {
        Self {
            tool: "cpr",
            version: env!("CARGO_PKG_VERSION"),
            subcommand,
            config,
            params,
            tolerances,
            seed,
            timestamp_unix: timestamp(),
        }
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("manifest serializes")
    }
}

/// `SOURCE_DATE_EPOCH` when set, otherwise the current time.
fn timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or_else(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        })
}

/// Output directory plus the manifest every file gets.
pub struct Artifacts<'a> {
    pub dir: &'a Path,
    pub manifest: &'a RunManifest,
}

impl Artifacts<'_> {
    fn create(&self, name: &str) -> Result<(PathBuf, BufWriter<fs::File>)> {
        fs::create_dir_all(self.dir).with_context(|| format!("creating {}", self.dir.display()))?;
        let path = self.dir.join(name);
        let file =
            fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok((path, BufWriter::new(file)))
    }

    /// Writes a CSV whose first line is `# manifest: {json}`.
    pub fn csv(
        &self,
        name: &str,
        body: impl FnOnce(&mut dyn Write) -> io::Result<()>,
    ) -> Result<PathBuf> {
        let (path, mut w) = self.create(name)?;
        writeln!(w, "# manifest: {}", serde_json::to_string(self.manifest)?)?;
        body(&mut w)?;
        w.flush()?;
        Ok(path)
    }

    /// Writes `payload` as pretty JSON with the manifest under `"manifest"`.
    pub fn json(&self, name: &str, payload: Value) -> Result<PathBuf> {
        let (path, mut w) = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, &with_manifest(self.manifest, payload))?;
        writeln!(w)?;
        w.flush()?;
        Ok(path)
    }
}

pub fn with_manifest(manifest: &RunManifest, payload: Value) -> Value {
    let mut out = serde_json::Map::new();
    out.insert("manifest".into(), manifest.to_json());
    match payload {
        Value::Object(fields) => out.extend(fields),
        other => {
            out.insert("result".into(), other);
        }
    }
    Value::Object(out)
}
