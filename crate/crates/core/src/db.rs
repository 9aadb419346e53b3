//! Append-only program database and its run-directory persistence.
//!
//! A run directory looks like
//!
//! ```text
//! <run_dir>/config.json
//! <run_dir>/db.jsonl          one Candidate per line, insertion order
//! <run_dir>/programs/<id>.txt
//! <run_dir>/report.json
//! ```
//!
//! Program text is written before the `db.jsonl` line that references it, so a
//! crash can leave an orphan program file but never a dangling record.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{Candidate, CandidateId, Direction, RunConfig, RunReport};

#[derive(Debug, Clone, Default)]
pub struct ProgramDatabase {
    candidates: Vec<Candidate>,
}

impl ProgramDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a database by re-inserting `candidates` in order. Ids in the
    /// input must be dense and match their position.
    pub fn from_candidates(candidates: impl IntoIterator<Item = Candidate>) -> Result<Self> {
        let mut db = ProgramDatabase::new();
        for c in candidates {
            let expected = CandidateId(db.len() as u64);
            if c.id != expected {
                return Err(Error::Protocol(format!(
                    "candidate id {} found where {expected} was expected",
                    c.id
                )));
            }
            db.insert(c)?;
        }
        Ok(db)
    }

    /// Stores `candidate` and returns its assigned id.
    pub fn insert(&mut self, mut candidate: Candidate) -> Result<CandidateId> {
        if let Some(parent) = candidate.parent_id {
            if parent.index() >= self.candidates.len() {
                return Err(Error::DanglingParent { parent });
            }
        }
        if let Some(last) = self.candidates.last() {
            if candidate.iteration < last.iteration {
                return Err(Error::IterationOrder {
                    iteration: candidate.iteration,
                    last: last.iteration,
                });
            }
        }
        if let Some(result) = &candidate.result {
            result.check_invariants()?;
        }
        let id = CandidateId(self.candidates.len() as u64);
        candidate.id = id;
        self.candidates.push(candidate);
        Ok(id)
    }

    pub fn get(&self, id: CandidateId) -> Result<&Candidate> {
        self.candidates.get(id.index()).ok_or(Error::UnknownId(id))
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Candidate> {
        self.candidates.iter()
    }

    pub fn last_iteration(&self) -> Option<u64> {
        self.candidates.last().map(|c| c.iteration)
    }

    /// Valid candidate with the extremal score; earliest insertion wins ties.
    pub fn best(&self, direction: Direction) -> Result<&Candidate> {
        let mut best: Option<(&Candidate, f64)> = None;
        for c in &self.candidates {
            let Some(score) = c.usable_score() else {
                continue;
            };
            match best {
                Some((_, b)) if !direction.is_better(score, b) => {}
                _ => best = Some((c, score)),
            }
        }
        best.map(|(c, _)| c).ok_or(Error::EmptyResult)
    }

    /// Up to `k` valid candidates ordered best first, ties by insertion order.
    pub fn top_k(&self, direction: Direction, k: usize) -> Vec<&Candidate> {
        let mut valid: Vec<(&Candidate, f64)> = self
            .candidates
            .iter()
            .filter_map(|c| c.usable_score().map(|s| (c, s)))
            .collect();
        valid.sort_by(|(ca, a), (cb, b)| {
            let ord = match direction {
                Direction::Maximize => b.total_cmp(a),
                Direction::Minimize => a.total_cmp(b),
            };
            ord.then(ca.id.cmp(&cb.id))
        });
        valid.into_iter().take(k).map(|(c, _)| c).collect()
    }

    /// Root-to-`id` chain following parent links.
    pub fn lineage(&self, id: CandidateId) -> Result<Vec<&Candidate>> {
        let mut chain = vec![self.get(id)?];
        while let Some(parent) = chain.last().and_then(|c| c.parent_id) {
            chain.push(self.get(parent)?);
        }
        chain.reverse();
        Ok(chain)
    }
}

pub const CONFIG_FILE: &str = "config.json";
pub const DB_FILE: &str = "db.jsonl";
pub const PROGRAMS_DIR: &str = "programs";
pub const REPORT_FILE: &str = "report.json";

/// Writer side of a run directory.
#[derive(Debug)]
pub struct RunStore {
    dir: PathBuf,
    db_file: File,
}

/// Everything read back from a run directory.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub config: RunConfig,
    pub db: ProgramDatabase,
    pub report: Option<RunReport>,
}

impl RunStore {
    /// Creates a fresh run directory. Fails if `dir` already holds a run.
    pub fn create(dir: impl Into<PathBuf>, config: &RunConfig) -> Result<Self> {
        let dir = dir.into();
        if dir.join(DB_FILE).exists() {
            return Err(Error::CorruptRun {
                path: dir,
                message: "run directory already exists; use resume".into(),
            });
        }
        let programs = dir.join(PROGRAMS_DIR);
        fs::create_dir_all(&programs).map_err(|e| Error::io(&programs, e))?;
        write_atomic(&dir.join(CONFIG_FILE), &to_pretty_json(config)?)?;
        let db_file = open_append(&dir.join(DB_FILE))?;
        Ok(RunStore { dir, db_file })
    }

    /// Opens an existing run directory for appending.
    pub fn open(dir: impl Into<PathBuf>) -> Result<(Self, LoadedRun)> {
        let dir = dir.into();
        let loaded = load_run(&dir)?;
        let db_file = open_append(&dir.join(DB_FILE))?;
        Ok((RunStore { dir, db_file }, loaded))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Persists an already-inserted candidate.
    pub fn append(&mut self, candidate: &Candidate) -> Result<()> {
        let program_path = program_path(&self.dir, candidate.id);
        fs::write(&program_path, &candidate.program).map_err(|e| Error::io(&program_path, e))?;
        let mut line = serde_json::to_string(candidate)?;
        line.push('\n');
        let db_path = self.dir.join(DB_FILE);
        self.db_file
            .write_all(line.as_bytes())
            .and_then(|_| self.db_file.flush())
            .map_err(|e| Error::io(db_path, e))
    }

    pub fn write_report(&self, report: &RunReport) -> Result<()> {
        write_atomic(&self.dir.join(REPORT_FILE), &to_pretty_json(report)?)
    }
}

pub fn program_path(dir: &Path, id: CandidateId) -> PathBuf {
    dir.join(PROGRAMS_DIR).join(format!("{id}.txt"))
}

/// Reads `config.json`, replays `db.jsonl` and reads `report.json` if present.
pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    let corrupt = |message: String| Error::CorruptRun {
        path: dir.to_path_buf(),
        message,
    };
    let config_path = dir.join(CONFIG_FILE);
    let config_text = fs::read_to_string(&config_path).map_err(|e| Error::io(&config_path, e))?;
    let config: RunConfig = serde_json::from_str(&config_text)
        .map_err(|e| corrupt(format!("{CONFIG_FILE}: {e}")))?;

    let db_path = dir.join(DB_FILE);
    let file = File::open(&db_path).map_err(|e| Error::io(&db_path, e))?;
    let mut candidates = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&db_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut c: Candidate = serde_json::from_str(&line)
            .map_err(|e| corrupt(format!("{DB_FILE}:{}: {e}", lineno + 1)))?;
        let path = program_path(dir, c.id);
        c.program = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        candidates.push(c);
    }
    let db = ProgramDatabase::from_candidates(candidates)
        .map_err(|e| corrupt(format!("{DB_FILE}: {e}")))?;

    let report_path = dir.join(REPORT_FILE);
    let report = if report_path.exists() {
        let text = fs::read_to_string(&report_path).map_err(|e| Error::io(&report_path, e))?;
        Some(serde_json::from_str(&text).map_err(|e| corrupt(format!("{REPORT_FILE}: {e}")))?)
    } else {
        None
    };
    Ok(LoadedRun { config, db, report })
}

fn open_append(path: &Path) -> Result<File> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))
}

fn to_pretty_json<T: serde::Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
