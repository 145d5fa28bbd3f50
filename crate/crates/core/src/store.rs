//! Append-only record log for the monitoring server.
//!
//! Every mutation is one JSON line. Opening a log replays it into the
//! in-memory index, so a reopened store answers queries exactly as before.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::server::{AlarmEvent, LedgerEntry, StoredReading};
use crate::time::SimTime;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("corrupt record at {path}:{line}: {source}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Record {
    Reading(StoredReading),
    /// Latest state of an alarm; later lines supersede earlier ones.
    Alarm(AlarmEvent),
    Ledger(LedgerEntry),
}

#[derive(Debug, Default)]
pub struct Store {
    readings: Vec<StoredReading>,
    alarms: Vec<AlarmEvent>,
    ledger: Vec<LedgerEntry>,
    file: Option<(PathBuf, File)>,
}

impl Store {
    /// A store that lives only in memory.
    pub fn in_memory() -> Self {
        Store::default()
    }

    /// Opens (or creates) a log file and replays it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let io_err = |source| StoreError::Io {
            path: path.clone(),
            source,
        };
        let mut store = Store::default();
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(io_err)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(io_err)?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: Record = serde_json::from_str(&line).map_err(|source| StoreError::Corrupt {
                    path: path.clone(),
                    line: i + 1,
                    source,
                })?;
                store.apply(rec);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err)?;
        store.file = Some((path, file));
        Ok(store)
    }

    pub fn path(&self) -> Option<&Path> {
        self.file.as_ref().map(|(p, _)| p.as_path())
    }

    fn apply(&mut self, rec: Record) {
        match rec {
            Record::Reading(r) => {
                let at = self.readings.partition_point(|x| x.timestamp <= r.timestamp);
                self.readings.insert(at, r);
            }
            Record::Alarm(a) => match self.alarms.iter_mut().find(|x| x.id == a.id) {
                Some(slot) => *slot = a,
                None => self.alarms.push(a),
            },
            Record::Ledger(e) => self.ledger.push(e),
        }
    }

    /// Writes the record to the log, then applies it.
    pub fn append(&mut self, rec: Record) -> Result<(), StoreError> {
        if let Some((path, file)) = &mut self.file {
            let mut line = serde_json::to_string(&rec).expect("records serialize");
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|source| StoreError::Io {
                    path: path.clone(),
                    source,
                })?;
        }
        self.apply(rec);
        Ok(())
    }

    /// All readings ordered by timestamp, ties in insertion order.
    pub fn readings(&self) -> &[StoredReading] {
        &self.readings
    }

    /// Readings with `from <= timestamp <= to`, ascending.
    pub fn query_range(&self, from: SimTime, to: SimTime) -> &[StoredReading] {
        if from > to {
            return &[];
        }
        let lo = self.readings.partition_point(|r| r.timestamp < from);
        let hi = self.readings.partition_point(|r| r.timestamp <= to);
        &self.readings[lo..hi]
    }

    pub fn alarms(&self) -> &[AlarmEvent] {
        &self.alarms
    }

    pub fn alarm(&self, id: u64) -> Option<&AlarmEvent> {
        self.alarms.iter().find(|a| a.id == id)
    }

    pub fn ledger(&self) -> &[LedgerEntry] {
        &self.ledger
    }
}
