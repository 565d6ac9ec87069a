//! CSV tables emitted per run.

use std::fs::{self, File, OpenOptions};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::optimizers::{Algo, Persistence, RunStatus};

pub const SUMMARY_CSV: &str = "summary.csv";
pub const UPDATES_CSV: &str = "updates.csv";
pub const PROGRESS_CSV: &str = "progress.csv";
pub const MEMORY_CSV: &str = "memory.csv";

/// One row per requested epsilon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub run_id: String,
    pub algo: Algo,
    pub m: usize,
    pub eta: f32,
    /// Empty for algorithms without a persistence bound.
    pub tp: Option<Persistence>,
    pub batch: usize,
    pub seed: u64,
    pub status: RunStatus,
    pub f0: f64,
    pub eps: f64,
    pub eps_time_ns: Option<u64>,
    pub eps_iters: Option<u64>,
    pub mean_iter_ns: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateRow {
    pub run_id: String,
    pub thread_id: u32,
    pub seq: u64,
    pub wall_ns: u64,
    pub tau_c: u64,
    pub tau_s: u64,
    pub tries: u32,
    pub abandoned: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressRow {
    pub run_id: String,
    pub wall_ns: u64,
    pub seq: u64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryRow {
    pub run_id: String,
    pub wall_ns: u64,
    pub live_payloads: usize,
    pub live_bytes: usize,
}

/// Everything a run writes to disk.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tables {
    pub summary: Vec<SummaryRow>,
    pub updates: Vec<UpdateRow>,
    pub progress: Vec<ProgressRow>,
    pub memory: Vec<MemoryRow>,
}

impl Tables {
    pub fn extend(&mut self, other: Tables) {
        self.summary.extend(other.summary);
        self.updates.extend(other.updates);
        self.progress.extend(other.progress);
        self.memory.extend(other.memory);
    }

    /// Writes the four files into `dir`, creating it if needed. With
    /// `append`, rows are added to existing files and headers are written
    /// only to new or empty ones.
    pub fn write(&self, dir: &Path, append: bool) -> Result<(), HarnessError> {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        write_rows(&dir.join(SUMMARY_CSV), &self.summary, append)?;
        write_rows(&dir.join(UPDATES_CSV), &self.updates, append)?;
        write_rows(&dir.join(PROGRESS_CSV), &self.progress, append)?;
        write_rows(&dir.join(MEMORY_CSV), &self.memory, append)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Tables, HarnessError> {
        Ok(Tables {
            summary: read_rows(&dir.join(SUMMARY_CSV))?,
            updates: read_rows(&dir.join(UPDATES_CSV))?,
            progress: read_rows(&dir.join(PROGRESS_CSV))?,
            memory: read_rows(&dir.join(MEMORY_CSV))?,
        })
    }
}

/// A CSV row type with a fixed header.
pub trait Row: Serialize + DeserializeOwned {
    const HEADER: &'static [&'static str];
}

impl Row for SummaryRow {
    const HEADER: &'static [&'static str] = &[
        "run_id",
        "algo",
        "m",
        "eta",
        "tp",
        "batch",
        "seed",
        "status",
        "f0",
        "eps",
        "eps_time_ns",
        "eps_iters",
        "mean_iter_ns",
    ];
}

impl Row for UpdateRow {
    const HEADER: &'static [&'static str] = &[
        "run_id",
        "thread_id",
        "seq",
        "wall_ns",
        "tau_c",
        "tau_s",
        "tries",
        "abandoned",
    ];
}

impl Row for ProgressRow {
    const HEADER: &'static [&'static str] = &["run_id", "wall_ns", "seq", "loss"];
}

impl Row for MemoryRow {
    const HEADER: &'static [&'static str] = &["run_id", "wall_ns", "live_payloads", "live_bytes"];
}

pub fn write_rows<T: Row>(path: &Path, rows: &[T], append: bool) -> Result<(), HarnessError> {
    let file = if append {
        OpenOptions::new().create(true).append(true).open(path)
    } else {
        File::create(path)
    }
    .map_err(|e| HarnessError::io(path, e))?;
    let fresh = file
        .metadata()
        .map_err(|e| HarnessError::io(path, e))?
        .len()
        == 0;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(file);
    if fresh {
        w.write_record(T::HEADER)
            .map_err(|e| HarnessError::csv(path, e))?;
    }
    for row in rows {
        w.serialize(row).map_err(|e| HarnessError::csv(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Reads a table, rejecting files whose header differs from the schema.
pub fn read_rows<T: Row>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::csv(path, e))?;
    let header = r.headers().map_err(|e| HarnessError::csv(path, e))?;
    if !header.iter().eq(T::HEADER.iter().copied()) {
        return Err(HarnessError::Schema {
            path: path.display().to_string(),
            expected: T::HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| HarnessError::csv(path, e))
}
