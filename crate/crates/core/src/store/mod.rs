//! Lock-protected shared state for concurrent workers.
//!
//! Each map lives in its own JSON document and is replaced atomically
//! (write to a temporary file, then rename) while its sidecar lock is held
//! exclusively. Results go to an append-only JSON-lines log. No operation
//! holds two locks at once.

pub mod lock;

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{nonfinite, Config, EvalArgs, Fidels, IntermediateState, Objectives, TrajectoryRecord};
use lock::{acquire, LockKind};

/// Environment variable that relocates the directory holding every run.
pub const ROOT_ENV: &str = "MFSIM_ROOT";
/// Environment variable that overrides the per-run directory name.
pub const SAVE_DIR_ENV: &str = "MFSIM_SAVE_DIR_NAME";
/// Directory, under the root, that holds one subdirectory per run.
pub const INFO_DIR: &str = "mfhpo-simulator-info";

pub const WORKER_INDEX_FILE: &str = "worker_index.json";
pub const FREED_FILE: &str = "freed.json";
pub const CUMTIME_FILE: &str = "cumtime.json";
pub const STATE_CACHE_FILE: &str = "state_cache.json";
pub const RESULTS_FILE: &str = "results.jsonl";
pub const STATUS_FILE: &str = "status.json";
pub const CLOCK_FILE: &str = "clock.json";
pub const META_FILE: &str = "meta.json";

/// Seconds since the Unix epoch.
pub fn wall_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Resolves `<root>/mfhpo-simulator-info/<save_dir_name>/`, honouring the
/// environment overrides.
pub fn run_dir(root: Option<&Path>, save_dir_name: &str) -> PathBuf {
    let root = std::env::var_os(ROOT_ENV)
        .map(PathBuf::from)
        .or_else(|| root.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("."));
    let name = std::env::var(SAVE_DIR_ENV).unwrap_or_else(|_| save_dir_name.to_string());
    root.join(INFO_DIR).join(name)
}

/// What a worker is doing, as seen by its peers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Free and inside (or queued for) the optimizer. Workers that never
    /// reported are in this phase.
    Sampling,
    /// Published a cumtime and waiting for its turn to return.
    Evaluating,
    /// Told by the optimizer to wait for more results; not competing.
    Idle,
    /// Finished for good.
    Done,
}

impl Phase {
    pub fn is_active(self) -> bool {
        matches!(self, Phase::Sampling | Phase::Evaluating)
    }
}

/// Global sampling clock.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Clock {
    /// Simulated time at which the most recent sampling finished.
    pub now: f64,
    /// Simulated time up to which the optimizer side has progressed; only
    /// maintained by drivers that declare sampling overheads.
    #[serde(default)]
    pub horizon: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaunchMode {
    /// One coordinating process owns every worker.
    InProcess,
    /// Each worker process builds its own wrapper over the same directory.
    UserSide,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    /// Wall-clock seconds at which the run directory was created.
    pub start: f64,
    pub n_workers: usize,
    pub mode: LaunchMode,
}

/// One line of the result log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub cumtime: f64,
    #[serde(with = "nonfinite::map")]
    pub objectives: Objectives,
    pub worker: usize,
    pub runtime: f64,
    pub overhead: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<Config>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fidels: Option<Fidels>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl LogEntry {
    pub fn from_record(r: &TrajectoryRecord) -> Self {
        Self {
            cumtime: r.finish_cumtime,
            objectives: r.objectives.clone(),
            worker: r.worker_index,
            runtime: r.runtime,
            overhead: r.sample_overhead,
            config: r.config.clone(),
            fidels: r.args.as_ref().map(|a| a.fidels.clone()),
            seed: r.args.as_ref().and_then(|a| a.seed),
        }
    }

    pub fn into_record(self, order_index: usize) -> TrajectoryRecord {
        let args = match (&self.config, self.fidels, self.seed) {
            (None, None, None) => None,
            (_, fidels, seed) => Some(EvalArgs::new(fidels.unwrap_or_default(), seed)),
        };
        TrajectoryRecord {
            order_index,
            finish_cumtime: self.cumtime,
            objectives: self.objectives,
            worker_index: self.worker,
            runtime: self.runtime,
            sample_overhead: self.overhead,
            config: self.config,
            args,
        }
    }
}

/// Cheap summary used to detect whether anything in the store changed.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub cumtimes: Vec<f64>,
    pub phases: Vec<Phase>,
    pub clock: Clock,
    pub results_len: u64,
}

/// Handle on one run directory. Cheap to clone; holds no open files.
#[derive(Clone, Debug)]
pub struct Store {
    dir: PathBuf,
    n_workers: usize,
    start: f64,
}

impl Store {
    /// Opens or creates the run directory. A directory created in another
    /// launch mode or for another worker count is rejected.
    pub fn open(dir: impl Into<PathBuf>, n_workers: usize, mode: LaunchMode) -> Result<Self> {
        if n_workers == 0 {
            return Err(Error::Config("n_workers must be at least 1".into()));
        }
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::store(&dir, e))?;
        let mut store = Self {
            dir,
            n_workers,
            start: 0.0,
        };
        let meta = store.update(META_FILE, |meta: &mut Option<Meta>| {
            let m = meta.get_or_insert(Meta {
                start: wall_now(),
                n_workers,
                mode,
            });
            if m.mode != mode {
                return Err(Error::Config(format!(
                    "store was created in {:?} mode, cannot join in {:?} mode",
                    m.mode, mode
                )));
            }
            if m.n_workers != n_workers {
                return Err(Error::Config(format!(
                    "store was created for {} workers, not {n_workers}",
                    m.n_workers
                )));
            }
            Ok(m.clone())
        })?;
        store.start = meta.start;
        Ok(store)
    }

    /// Removes any previous run in `dir`, then opens it fresh.
    pub fn create_fresh(dir: impl Into<PathBuf>, n_workers: usize, mode: LaunchMode) -> Result<Self> {
        let dir = dir.into();
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::store(&dir, e))?;
        }
        Self::open(dir, n_workers, mode)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn n_workers(&self) -> usize {
        self.n_workers
    }

    /// Wall-clock creation time of the run.
    pub fn start(&self) -> f64 {
        self.start
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn read<T: DeserializeOwned + Default>(&self, name: &str) -> Result<T> {
        let path = self.path(name);
        let _guard = acquire(&path, LockKind::Shared)?;
        read_json(&path)
    }

    /// Read-modify-write of one document under its exclusive lock. The new
    /// content is written only when `f` succeeds.
    fn update<T, R>(&self, name: &str, f: impl FnOnce(&mut T) -> Result<R>) -> Result<R>
    where
        T: DeserializeOwned + Serialize + Default,
    {
        let path = self.path(name);
        let _guard = acquire(&path, LockKind::Exclusive)?;
        let mut value: T = read_json(&path)?;
        let out = f(&mut value)?;
        write_json(&path, &value)?;
        Ok(out)
    }

    /// Maps an execution-unit identifier to a worker index, assigning the
    /// next free index on first sight.
    pub fn register_worker(&self, unit_id: &str) -> Result<usize> {
        let n = self.n_workers;
        self.update(WORKER_INDEX_FILE, |map: &mut BTreeMap<String, usize>| {
            if let Some(&i) = map.get(unit_id) {
                return Ok(i);
            }
            if map.len() >= n {
                return Err(Error::Capacity { n_workers: n });
            }
            let i = map.len();
            map.insert(unit_id.to_string(), i);
            Ok(i)
        })
    }

    pub fn worker_index_map(&self) -> Result<BTreeMap<String, usize>> {
        self.read(WORKER_INDEX_FILE)
    }

    fn check_registered(&self, p: usize) -> Result<()> {
        if self.worker_index_map()?.values().any(|&i| i == p) {
            Ok(())
        } else {
            Err(Error::Contract(format!("worker {p} is not registered")))
        }
    }

    /// Cumulative runtimes of all workers; unreported workers read as zero.
    pub fn read_cumtimes(&self) -> Result<Vec<f64>> {
        let map: BTreeMap<usize, f64> = self.read(CUMTIME_FILE)?;
        Ok((0..self.n_workers).map(|p| map.get(&p).copied().unwrap_or(0.0)).collect())
    }

    pub fn update_cumtime(&self, p: usize, value: f64) -> Result<()> {
        self.check_index(p)?;
        if !(value >= 0.0) {
            return Err(Error::Contract(format!("cumtime must be nonnegative, got {value}")));
        }
        self.update(CUMTIME_FILE, |map: &mut BTreeMap<usize, f64>| {
            let previous = map.get(&p).copied().unwrap_or(0.0);
            if value < previous {
                return Err(Error::Monotonicity {
                    worker: p,
                    previous,
                    value,
                });
            }
            map.insert(p, value);
            Ok(())
        })
    }

    fn check_index(&self, p: usize) -> Result<()> {
        if p < self.n_workers {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "worker index {p} out of range for {} workers",
                self.n_workers
            )))
        }
    }

    pub fn record_freed(&self, p: usize, wall_time: f64) -> Result<()> {
        self.check_registered(p)?;
        self.update(FREED_FILE, |map: &mut BTreeMap<usize, f64>| {
            map.insert(p, wall_time);
            Ok(())
        })
    }

    /// Wall time at which `p` was last freed; the run start if never.
    pub fn read_freed(&self, p: usize) -> Result<f64> {
        self.check_registered(p)?;
        Ok(self.read_freed_all()?[p])
    }

    pub fn read_freed_all(&self) -> Result<Vec<f64>> {
        let map: BTreeMap<usize, f64> = self.read(FREED_FILE)?;
        Ok((0..self.n_workers)
            .map(|p| map.get(&p).copied().unwrap_or(self.start))
            .collect())
    }

    pub fn set_phase(&self, p: usize, phase: Phase) -> Result<()> {
        self.check_index(p)?;
        self.update(STATUS_FILE, |map: &mut BTreeMap<usize, Phase>| {
            map.insert(p, phase);
            Ok(())
        })
    }

    pub fn read_phases(&self) -> Result<Vec<Phase>> {
        let map: BTreeMap<usize, Phase> = self.read(STATUS_FILE)?;
        Ok((0..self.n_workers)
            .map(|p| map.get(&p).copied().unwrap_or(Phase::Sampling))
            .collect())
    }

    pub fn read_clock(&self) -> Result<Clock> {
        self.read(CLOCK_FILE)
    }

    /// Serializes one sampling on the global clock and returns the simulated
    /// time at which it ended.
    pub fn advance_clock(&self, worker_cumtime: f64, sample_overhead: f64) -> Result<f64> {
        self.update(CLOCK_FILE, |c: &mut Clock| {
            c.now = crate::sim::advance_sampling_clock(c.now, worker_cumtime, sample_overhead);
            c.horizon = c.horizon.max(c.now);
            Ok(c.now)
        })
    }

    /// Moves the optimizer-side horizon forward (never backward).
    pub fn raise_horizon(&self, value: f64) -> Result<()> {
        self.update(CLOCK_FILE, |c: &mut Clock| {
            c.horizon = c.horizon.max(value);
            Ok(())
        })
    }

    pub fn fetch_state(&self, key: &str) -> Result<Vec<IntermediateState>> {
        let mut map: BTreeMap<String, Vec<IntermediateState>> = self.read(STATE_CACHE_FILE)?;
        Ok(map.remove(key).unwrap_or_default())
    }

    pub fn put_state(&self, key: &str, state: IntermediateState) -> Result<()> {
        self.update(STATE_CACHE_FILE, |map: &mut BTreeMap<String, Vec<IntermediateState>>| {
            map.entry(key.to_string()).or_default().push(state);
            Ok(())
        })
    }

    pub fn consume_state(&self, key: &str, state: &IntermediateState) -> Result<()> {
        self.update(STATE_CACHE_FILE, |map: &mut BTreeMap<String, Vec<IntermediateState>>| {
            let list = map.get_mut(key);
            let pos = list
                .as_ref()
                .and_then(|l| l.iter().position(|s| s == state))
                .ok_or_else(|| Error::Contract(format!("no cached state {state:?} under {key:?}")))?;
            let list = list.expect("found above");
            list.remove(pos);
            if list.is_empty() {
                map.remove(key);
            }
            Ok(())
        })
    }

    /// Selects and removes one cached state in a single locked step.
    pub fn take_state(
        &self,
        key: &str,
        select: impl FnOnce(&[IntermediateState]) -> Result<Option<usize>>,
    ) -> Result<Option<IntermediateState>> {
        self.update(STATE_CACHE_FILE, |map: &mut BTreeMap<String, Vec<IntermediateState>>| {
            let Some(list) = map.get_mut(key) else {
                return Ok(None);
            };
            let Some(i) = select(list)? else {
                return Ok(None);
            };
            let taken = list.remove(i);
            if list.is_empty() {
                map.remove(key);
            }
            Ok(Some(taken))
        })
    }

    pub fn append_result(&self, entry: &LogEntry) -> Result<()> {
        self.append_inner(entry, None).map(|_| ())
    }

    /// Appends only while fewer than `limit` results exist; returns the new count.
    pub fn append_result_within(&self, entry: &LogEntry, limit: usize) -> Result<usize> {
        self.append_inner(entry, Some(limit))
    }

    fn append_inner(&self, entry: &LogEntry, limit: Option<usize>) -> Result<usize> {
        let path = self.path(RESULTS_FILE);
        let mut line = serde_json::to_string(entry).map_err(|e| Error::Schema {
            path: path.clone(),
            source: e,
        })?;
        line.push('\n');
        let _guard = acquire(&path, LockKind::Exclusive)?;
        let (count, valid_len) = scan_results(&path)?;
        if let Some(limit) = limit {
            if count >= limit {
                return Err(Error::Budget(format!("{count} results already recorded, limit {limit}")));
            }
        }
        let mut file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(false)
            .open(&path)
            .map_err(|e| Error::store(&path, e))?;
        // A crash mid-append leaves a partial last line; cut it off first.
        file.set_len(valid_len).map_err(|e| Error::store(&path, e))?;
        use std::io::Seek;
        file.seek(std::io::SeekFrom::End(0))
            .map_err(|e| Error::store(&path, e))?;
        file.write_all(line.as_bytes())
            .map_err(|e| Error::store(&path, e))?;
        Ok(count + 1)
    }

    pub fn get_n_results(&self) -> Result<usize> {
        let path = self.path(RESULTS_FILE);
        let _guard = acquire(&path, LockKind::Shared)?;
        Ok(scan_results(&path)?.0)
    }

    /// Every complete log line, in append order.
    pub fn read_results(&self) -> Result<Vec<LogEntry>> {
        let path = self.path(RESULTS_FILE);
        let _guard = acquire(&path, LockKind::Shared)?;
        let text = read_text(&path)?;
        complete_lines(&text)
            .map(|line| {
                serde_json::from_str(line).map_err(|e| Error::Schema {
                    path: path.clone(),
                    source: e,
                })
            })
            .collect()
    }

    pub fn read_trajectory(&self) -> Result<Vec<TrajectoryRecord>> {
        Ok(self
            .read_results()?
            .into_iter()
            .enumerate()
            .map(|(i, e)| e.into_record(i + 1))
            .collect())
    }

    pub fn results_len(&self) -> Result<u64> {
        let path = self.path(RESULTS_FILE);
        match fs::metadata(&path) {
            Ok(m) => Ok(m.len()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(0),
            Err(e) => Err(Error::store(&path, e)),
        }
    }

    pub fn snapshot(&self) -> Result<Snapshot> {
        Ok(Snapshot {
            cumtimes: self.read_cumtimes()?,
            phases: self.read_phases()?,
            clock: self.read_clock()?,
            results_len: self.results_len()?,
        })
    }
}

fn read_text(path: &Path) -> Result<String> {
    let mut text = String::new();
    match File::open(path) {
        Ok(mut f) => {
            f.read_to_string(&mut text).map_err(|e| Error::store(path, e))?;
            Ok(text)
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(text),
        Err(e) => Err(Error::store(path, e)),
    }
}

fn read_json<T: DeserializeOwned + Default>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    if text.trim().is_empty() {
        return Ok(T::default());
    }
    serde_json::from_str(&text).map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let mut f = File::create(&tmp).map_err(|e| Error::store(&tmp, e))?;
    f.write_all(text.as_bytes())
        .map_err(|e| Error::store(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::store(path, e))
}

/// Lines terminated by a newline; a trailing fragment is an interrupted append.
fn complete_lines(text: &str) -> impl Iterator<Item = &str> {
    let end = text.rfind('\n').map_or(0, |i| i + 1);
    text[..end].lines().filter(|l| !l.trim().is_empty())
}

/// Number of complete lines and the byte length they occupy.
fn scan_results(path: &Path) -> Result<(usize, u64)> {
    let text = read_text(path)?;
    let end = text.rfind('\n').map_or(0, |i| i + 1);
    Ok((complete_lines(&text).count(), end as u64))
}
