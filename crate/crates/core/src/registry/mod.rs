//! Per-task adapter persistence over a shared frozen base.
//!
//! A registry directory holds `manifest.tsv` and one adapter checkpoint per
//! task under `tasks/`. The manifest starts with `#`-prefixed header lines
//! (format tag, base fingerprint, base checkpoint path, architecture JSON)
//! followed by a column header and one tab-separated row per task in
//! training order:
//!
//! | column | content |
//! |---|---|
//! | `task_id` | unique id, `[A-Za-z0-9_.-]+` |
//! | `checkpoint` | path relative to the registry root |
//! | `rank` | adapter rank |
//! | `alpha_fc`, `alpha_conv` | scaling factors |
//! | `l_st` | source–target distance measured before training |
//! | `proxy_fid`, `diversity` | metrics at training time |
//! | `created_unix` | creation time, seconds |
//! | `dataset` | target dataset spec as JSON |
//!
//! Every mutation rewrites the manifest through a temp file and a rename.

pub mod checkpoint;

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::adapter::AdapterSet;
use crate::data::DatasetSpec;
use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;
use crate::networks::ArchSpec;

pub use checkpoint::{load_adapters, load_base, save_adapters, save_base, write_atomic};

pub const MANIFEST_FILE: &str = "manifest.tsv";
const LOCK_FILE: &str = ".lock";
const FORMAT_LINE: &str = "# colora-manifest v1";
pub const MANIFEST_COLUMNS: [&str; 10] = [
    "task_id",
    "checkpoint",
    "rank",
    "alpha_fc",
    "alpha_conv",
    "l_st",
    "proxy_fid",
    "diversity",
    "created_unix",
    "dataset",
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub checkpoint: PathBuf,
    pub rank: usize,
    pub alpha_fc: f64,
    pub alpha_conv: f64,
    pub l_st: f64,
    pub proxy_fid: f64,
    pub diversity: f64,
    pub created_unix: u64,
    pub dataset: DatasetSpec,
}

impl TaskRecord {
    fn to_line(&self) -> Result<String> {
        Ok([
            self.task_id.clone(),
            self.checkpoint.to_string_lossy().into_owned(),
            self.rank.to_string(),
            self.alpha_fc.to_string(),
            self.alpha_conv.to_string(),
            self.l_st.to_string(),
            self.proxy_fid.to_string(),
            self.diversity.to_string(),
            self.created_unix.to_string(),
            serde_json::to_string(&self.dataset)?,
        ]
        .join("\t"))
    }

    fn from_line(line: &str, path: &Path, lineno: usize) -> Result<Self> {
        let bad = |reason: String| Error::Manifest {
            path: path.to_path_buf(),
            line: lineno,
            reason,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != MANIFEST_COLUMNS.len() {
            return Err(bad(format!(
                "{} columns, expected {}",
                cols.len(),
                MANIFEST_COLUMNS.len()
            )));
        }
        fn num<T: std::str::FromStr>(
            s: &str,
            col: &str,
            bad: &dyn Fn(String) -> Error,
        ) -> Result<T> {
            s.parse()
                .map_err(|_| bad(format!("column {col}: cannot parse {s:?}")))
        }
        Ok(Self {
            task_id: cols[0].to_string(),
            checkpoint: PathBuf::from(cols[1]),
            rank: num(cols[2], "rank", &bad)?,
            alpha_fc: num(cols[3], "alpha_fc", &bad)?,
            alpha_conv: num(cols[4], "alpha_conv", &bad)?,
            l_st: num(cols[5], "l_st", &bad)?,
            proxy_fid: num(cols[6], "proxy_fid", &bad)?,
            diversity: num(cols[7], "diversity", &bad)?,
            created_unix: num(cols[8], "created_unix", &bad)?,
            dataset: serde_json::from_str(cols[9])
                .map_err(|e| bad(format!("column dataset: {e}")))?,
        })
    }
}

/// Measurements recorded with a new task.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskMeta {
    pub l_st: f64,
    pub proxy_fid: f64,
    pub diversity: f64,
    pub dataset: DatasetSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Registry {
    root: PathBuf,
    pub base_fingerprint: Fingerprint,
    pub base_checkpoint: PathBuf,
    pub arch: ArchSpec,
    tasks: Vec<TaskRecord>,
}

/// Exclusive writer lock; released on drop.
struct LockGuard(PathBuf);

impl LockGuard {
    fn acquire(root: &Path) -> Result<Self> {
        let p = root.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&p) {
            Ok(_) => Ok(Self(p)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::Locked(root.to_path_buf()))
            }
            Err(e) => Err(Error::io(p, e)),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn valid_task_id(id: &str) -> bool {
    !id.is_empty()
        && id != "."
        && id != ".."
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

impl Registry {
    /// Opens the registry at `root`, creating an empty one if none exists.
    /// An existing registry must have been built on the same base.
    pub fn create(
        root: &Path,
        arch: &ArchSpec,
        base_fingerprint: Fingerprint,
        base_checkpoint: &Path,
    ) -> Result<Self> {
        if root.join(MANIFEST_FILE).exists() {
            let reg = Self::open(root)?;
            if reg.base_fingerprint != base_fingerprint {
                return Err(Error::FingerprintMismatch {
                    expected: reg.base_fingerprint.to_hex(),
                    found: base_fingerprint.to_hex(),
                });
            }
            return Ok(reg);
        }
        fs::create_dir_all(root.join("tasks")).map_err(|e| Error::io(root, e))?;
        let reg = Self {
            root: root.to_path_buf(),
            base_fingerprint,
            base_checkpoint: base_checkpoint.to_path_buf(),
            arch: arch.clone(),
            tasks: Vec::new(),
        };
        let _lock = LockGuard::acquire(root)?;
        reg.write_manifest()?;
        Ok(reg)
    }

    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let bad = |line: usize, reason: &str| Error::Manifest {
            path: path.clone(),
            line,
            reason: reason.to_string(),
        };
        let lines: Vec<&str> = text.lines().collect();
        if lines.first() != Some(&FORMAT_LINE) {
            return Err(bad(1, "missing format line"));
        }
        let header = |i: usize, key: &str| -> Result<String> {
            lines
                .get(i)
                .and_then(|l| l.strip_prefix(&format!("# {key}\t")))
                .map(str::to_string)
                .ok_or_else(|| bad(i + 1, &format!("expected header {key:?}")))
        };
        let base_fingerprint = Fingerprint::from_hex(&header(1, "base_fingerprint")?)
            .ok_or_else(|| bad(2, "invalid fingerprint"))?;
        let base_checkpoint = PathBuf::from(header(2, "base_checkpoint")?);
        let arch: ArchSpec = serde_json::from_str(&header(3, "arch")?)
            .map_err(|e| bad(4, &format!("invalid arch: {e}")))?;
        if lines.get(4) != Some(&MANIFEST_COLUMNS.join("\t").as_str()) {
            return Err(bad(5, "unexpected column header"));
        }
        let mut tasks: Vec<TaskRecord> = Vec::new();
        for (i, line) in lines.iter().enumerate().skip(5) {
            let rec = TaskRecord::from_line(line, &path, i + 1)?;
            if tasks.iter().any(|t| t.task_id == rec.task_id) {
                return Err(bad(i + 1, &format!("duplicate task {:?}", rec.task_id)));
            }
            tasks.push(rec);
        }
        Ok(Self {
            root: root.to_path_buf(),
            base_fingerprint,
            base_checkpoint,
            arch,
            tasks,
        })
    }

    fn manifest_text(&self) -> Result<String> {
        let mut out = format!(
            "{FORMAT_LINE}\n# base_fingerprint\t{}\n# base_checkpoint\t{}\n# arch\t{}\n{}\n",
            self.base_fingerprint.to_hex(),
            self.base_checkpoint.to_string_lossy(),
            serde_json::to_string(&self.arch)?,
            MANIFEST_COLUMNS.join("\t")
        );
        for t in &self.tasks {
            out.push_str(&t.to_line()?);
            out.push('\n');
        }
        Ok(out)
    }

    fn write_manifest(&self) -> Result<()> {
        write_atomic(&self.manifest_path(), self.manifest_text()?.as_bytes())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn tasks(&self) -> &[TaskRecord] {
        &self.tasks
    }

    pub fn task(&self, id: &str) -> Result<&TaskRecord> {
        self.tasks
            .iter()
            .find(|t| t.task_id == id)
            .ok_or_else(|| Error::UnknownTask(id.to_string()))
    }

    pub fn checkpoint_path(&self, record: &TaskRecord) -> PathBuf {
        self.root.join(&record.checkpoint)
    }

    /// Stores `set` as task `task_id` and appends it to the manifest.
    pub fn add_task(
        &mut self,
        task_id: &str,
        set: &AdapterSet<f32>,
        meta: TaskMeta,
    ) -> Result<&TaskRecord> {
        if !valid_task_id(task_id) {
            return Err(Error::InvalidArgument(format!(
                "invalid task id {task_id:?}"
            )));
        }
        let expected = self.arch.fingerprint();
        if set.arch_fingerprint != expected {
            return Err(Error::FingerprintMismatch {
                expected: expected.to_hex(),
                found: set.arch_fingerprint.to_hex(),
            });
        }
        let _lock = LockGuard::acquire(&self.root)?;
        let on_disk = Self::open(&self.root)?;
        if on_disk
            .tasks
            .iter()
            .chain(&self.tasks)
            .any(|t| t.task_id == task_id)
        {
            return Err(Error::DuplicateTask(task_id.to_string()));
        }
        self.tasks = on_disk.tasks;
        let rel = PathBuf::from("tasks").join(format!("{task_id}.clrg"));
        let abs = self.root.join(&rel);
        fs::create_dir_all(abs.parent().expect("has parent")).map_err(|e| Error::io(&abs, e))?;
        save_adapters(set, &abs)?;
        let created_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        self.tasks.push(TaskRecord {
            task_id: task_id.to_string(),
            checkpoint: rel,
            rank: set.config.rank,
            alpha_fc: set.config.alpha_fc,
            alpha_conv: set.config.alpha_conv,
            l_st: meta.l_st,
            proxy_fid: meta.proxy_fid,
            diversity: meta.diversity,
            created_unix,
            dataset: meta.dataset,
        });
        if let Err(e) = self.write_manifest() {
            self.tasks.pop();
            return Err(e);
        }
        Ok(self.tasks.last().expect("just pushed"))
    }

    pub fn load_task(&self, task_id: &str) -> Result<AdapterSet<f32>> {
        let rec = self.task(task_id)?;
        load_adapters(&self.checkpoint_path(rec), &self.arch)
    }
}
