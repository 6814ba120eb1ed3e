//! Result files: CSV tables, 8×8 PGM spectrum images and the run manifest.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use freqadv_core::analysis::histogram_equalize;
use freqadv_core::dct::{DctPlan, BLOCK, NUM_FREQS};
use freqadv_core::io::write_atomic;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Builds a CSV table in memory so it can be written atomically.
pub struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header).expect("writing to memory");
        Table { writer }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).expect("writing to memory");
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.writer.into_inner().expect("flushing to memory")
    }
}

/// Formats an optional value, leaving the cell empty when absent.
pub fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Grey levels for the 64 zigzag values: linear min-max scaling, or rank
/// equalisation. A constant spectrum maps to black.
pub fn grey_levels(values: &[f64; NUM_FREQS], equalize: bool) -> [u8; NUM_FREQS] {
    let unit: Vec<f64> = if equalize {
        histogram_equalize(values).expect("64 values")
    } else {
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        values
            .iter()
            .map(|v| if range > 0.0 { (v - lo) / range } else { 0.0 })
            .collect()
    };
    let mut out = [0u8; NUM_FREQS];
    for (o, u) in out.iter_mut().zip(unit) {
        *o = (u * 255.0).round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Binary PGM of the spectrum laid out on the 8×8 block grid.
pub fn spectrum_pgm(values: &[f64; NUM_FREQS], equalize: bool) -> Vec<u8> {
    let levels = grey_levels(values, equalize);
    let zz = DctPlan::global().zigzag();
    let mut bytes = format!("P5\n{BLOCK} {BLOCK}\n255\n").into_bytes();
    for r in 0..BLOCK {
        for c in 0..BLOCK {
            bytes.push(levels[zz.index(r, c)]);
        }
    }
    bytes
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Files written by the run, relative to the output directory.
    pub files: Vec<String>,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Collects the files of one run inside its output directory.
pub struct RunOutput {
    pub dir: PathBuf,
    files: Vec<String>,
}

impl RunOutput {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        Ok(RunOutput {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        write_atomic(&path, bytes)?;
        self.files.push(name.to_string());
        Ok(path)
    }

    pub fn record(&mut self, name: &str) {
        self.files.push(name.to_string());
    }

    /// Writes `manifest.json`. Files listed by an earlier manifest in the
    /// same directory stay listed while they still exist.
    pub fn finish(mut self, command: &str, config_hash: &str, seed: u64, started_unix: u64) -> Result<(), CliError> {
        let manifest_path = self.dir.join("manifest.json");
        if let Some(prev) = std::fs::read(&manifest_path)
            .ok()
            .and_then(|b| serde_json::from_slice::<RunManifest>(&b).ok())
        {
            let mut files: Vec<String> = prev
                .files
                .into_iter()
                .filter(|f| !self.files.contains(f) && self.dir.join(f).is_file())
                .collect();
            files.append(&mut self.files);
            self.files = files;
        }
        self.files.retain(|f| f != "manifest.json");
        self.files.push("manifest.json".into());
        let manifest = RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash.to_string(),
            seed,
            started_unix,
            finished_unix: unix_now(),
            files: self.files,
        };
        let json = serde_json::to_vec_pretty(&manifest).expect("manifest is serialisable");
        write_atomic(&manifest_path, &json)?;
        Ok(())
    }
}
