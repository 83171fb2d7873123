//! Train/val/test splits, class balancing by replication, dataset writing.
//!
//! Splits are stratified: every class is shuffled with its own seeded stream
//! and cut independently, so the per-class proportions hold exactly up to
//! rounding. Balancing only ever adds copies of training entries; val and
//! test are never touched.
//!
//! On disk a dataset looks like
//!
//! ```text
//! <out>/manifest.json
//! <out>/<split>/<class_name>/<event_id>.png
//! <out>/<split>/<class_name>/<event_id>_r<N>.png   (N-th replica)
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::derive_indexed;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("class {class:?} has {count} events, need at least {needed}")]
    TooFewEvents { class: String, count: usize, needed: usize },
    #[error("class {0:?} is empty and cannot be replicated")]
    EmptyClass(String),
    #[error("invalid split plan: {0}")]
    Plan(String),
    #[error("event {id:?} has class {class} but only {n_classes} classes are named")]
    UnknownClass { id: String, class: u32, n_classes: usize },
    #[error("duplicate event id {0:?}")]
    DuplicateId(String),
    #[error("event ids {0:?} and {1:?} map to the same file name")]
    PathCollision(String, String),
    #[error("balance targets list {got} classes, dataset has {expected}")]
    Targets { got: usize, expected: usize },
    #[error("rendering {path} failed: {message} ({written} of {total} images written, manifest not written)")]
    Render {
        path: String,
        message: String,
        written: usize,
        total: usize,
    },
    #[error("writing {path} failed: {source} ({written} of {total} images written, manifest not written)")]
    Write {
        path: PathBuf,
        source: io::Error,
        written: usize,
        total: usize,
    },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("bad manifest: {0}")]
    Manifest(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// How each class is cut into train/val/test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitPlan {
    /// Fractions of every class; must sum to one.
    Ratios { train: f64, val: f64, test: f64 },
    /// Fixed number of val and test events per class; the rest is train.
    Counts { val: usize, test: usize },
}

impl Default for SplitPlan {
    fn default() -> Self {
        SplitPlan::Ratios {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitPlan {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if let SplitPlan::Ratios { train, val, test } = *self {
            if [train, val, test].iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
                return Err(DatasetError::Plan("ratios must be finite and non-negative".into()));
            }
            if ((train + val + test) - 1.0).abs() > 1e-9 {
                return Err(DatasetError::Plan(format!(
                    "ratios must sum to 1, got {}",
                    train + val + test
                )));
            }
        }
        Ok(())
    }

    /// `(train, val, test)` sizes for a class of `n` events.
    fn sizes(&self, n: usize) -> (usize, usize, usize) {
        match *self {
            SplitPlan::Ratios { val, test, .. } => {
                let n_val = (val * n as f64).round() as usize;
                let n_test = ((test * n as f64).round() as usize).min(n - n_val);
                (n - n_val - n_test, n_val, n_test)
            }
            SplitPlan::Counts { val, test } => (n - val - test, val, test),
        }
    }

    fn minimum(&self) -> usize {
        match *self {
            SplitPlan::Ratios { .. } => 3,
            SplitPlan::Counts { val, test } => val + test + 1,
        }
    }
}

/// Per-class target sizes for the training split.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceTargets {
    /// Leave the training split as it is.
    None,
    /// Top every class up to the largest class.
    #[default]
    Max,
    /// One target per class, indexed by class id. Classes already at or
    /// above their target are left alone.
    Explicit(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub event_id: String,
    pub class_id: u32,
    /// Relative to the dataset root.
    pub image_path: String,
    /// 0 for the original, N for the N-th copy.
    pub replication_index: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train_before_balance: Vec<usize>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub plan: SplitPlan,
    pub seed: u64,
    pub class_names: Vec<String>,
    pub balance: BalanceTargets,
    pub train: Vec<ManifestEntry>,
    pub val: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
    pub counts: SplitCounts,
}

/// File-name-safe form of an event id.
pub fn sanitize_id(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn image_path(split: Split, class_name: &str, event_id: &str, replica: u32) -> String {
    let stem = sanitize_id(event_id);
    if replica == 0 {
        format!("{}/{}/{}.png", split.as_str(), class_name, stem)
    } else {
        format!("{}/{}/{}_r{}.png", split.as_str(), class_name, stem, replica)
    }
}

fn count_classes(entries: &[ManifestEntry], n_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; n_classes];
    for e in entries {
        counts[e.class_id as usize] += 1;
    }
    counts
}

/// Stratified, seeded split of labelled event ids.
pub fn split(
    events: &[(String, u32)],
    class_names: &[String],
    plan: &SplitPlan,
    seed: u64,
) -> Result<DatasetManifest, DatasetError> {
    plan.validate()?;
    let n_classes = class_names.len();
    let mut by_class: Vec<Vec<&str>> = vec![Vec::new(); n_classes];
    let mut seen = HashSet::new();
    let mut stems: BTreeMap<String, &str> = BTreeMap::new();
    for (id, class) in events {
        if *class as usize >= n_classes {
            return Err(DatasetError::UnknownClass {
                id: id.clone(),
                class: *class,
                n_classes,
            });
        }
        if !seen.insert(id.as_str()) {
            return Err(DatasetError::DuplicateId(id.clone()));
        }
        if let Some(other) = stems.insert(sanitize_id(id), id) {
            return Err(DatasetError::PathCollision(other.to_string(), id.clone()));
        }
        by_class[*class as usize].push(id);
    }

    let mut manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        plan: plan.clone(),
        seed,
        class_names: class_names.to_vec(),
        balance: BalanceTargets::None,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        counts: SplitCounts::default(),
    };
    for (class, ids) in by_class.iter_mut().enumerate() {
        let needed = plan.minimum();
        if ids.len() < needed {
            return Err(DatasetError::TooFewEvents {
                class: class_names[class].clone(),
                count: ids.len(),
                needed,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_indexed(seed, "split", class as u64));
        ids.shuffle(&mut rng);
        let (n_train, n_val, _) = plan.sizes(ids.len());
        for (i, id) in ids.iter().enumerate() {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            let entry = ManifestEntry {
                event_id: id.to_string(),
                class_id: class as u32,
                image_path: image_path(split, &class_names[class], id, 0),
                replication_index: 0,
            };
            manifest.entries_mut(split).push(entry);
        }
    }
    manifest.refresh_counts();
    manifest.counts.train_before_balance = manifest.counts.train.clone();
    Ok(manifest)
}

/// Tops classes up to their targets by cycling through their entries in a
/// seeded shuffled order. Classes at or above target are returned as is.
pub fn balance_by_replication(
    train: &[ManifestEntry],
    class_names: &[String],
    targets: &[usize],
    seed: u64,
) -> Result<Vec<ManifestEntry>, DatasetError> {
    let n_classes = class_names.len();
    if targets.len() != n_classes {
        return Err(DatasetError::Targets {
            got: targets.len(),
            expected: n_classes,
        });
    }
    let mut out = train.to_vec();
    for (class, &target) in targets.iter().enumerate() {
        let originals: Vec<&ManifestEntry> = train
            .iter()
            .filter(|e| e.class_id as usize == class && e.replication_index == 0)
            .collect();
        let present = train.iter().filter(|e| e.class_id as usize == class).count();
        if present >= target {
            continue;
        }
        if originals.is_empty() {
            return Err(DatasetError::EmptyClass(class_names[class].clone()));
        }
        let first_replica = train
            .iter()
            .filter(|e| e.class_id as usize == class)
            .map(|e| e.replication_index)
            .max()
            .unwrap_or(0);
        let mut order = originals;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_indexed(seed, "balance", class as u64));
        order.shuffle(&mut rng);
        let n = order.len();
        for k in 0..(target - present) {
            let src = order[k % n];
            let replica = first_replica + (k / n) as u32 + 1;
            out.push(ManifestEntry {
                event_id: src.event_id.clone(),
                class_id: src.class_id,
                image_path: image_path(Split::Train, &class_names[class], &src.event_id, replica),
                replication_index: replica,
            });
        }
    }
    Ok(out)
}

impl DatasetManifest {
    pub fn entries(&self, split: Split) -> &[ManifestEntry] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn entries_mut(&mut self, split: Split) -> &mut Vec<ManifestEntry> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }

    pub fn all_entries(&self) -> impl Iterator<Item = (Split, &ManifestEntry)> {
        Split::ALL
            .into_iter()
            .flat_map(move |s| self.entries(s).iter().map(move |e| (s, e)))
    }

    fn refresh_counts(&mut self) {
        let n = self.class_names.len();
        self.counts.train = count_classes(&self.train, n);
        self.counts.val = count_classes(&self.val, n);
        self.counts.test = count_classes(&self.test, n);
    }

    /// Replicates training entries according to `targets`.
    pub fn balance(&mut self, targets: &BalanceTargets) -> Result<(), DatasetError> {
        let resolved = match targets {
            BalanceTargets::None => {
                self.balance = BalanceTargets::None;
                return Ok(());
            }
            BalanceTargets::Max => {
                let max = self.counts.train.iter().copied().max().unwrap_or(0);
                vec![max; self.class_names.len()]
            }
            BalanceTargets::Explicit(t) => t.clone(),
        };
        self.train = balance_by_replication(&self.train, &self.class_names, &resolved, self.seed)?;
        self.balance = targets.clone();
        self.refresh_counts();
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self, DatasetError> {
        let m: DatasetManifest = serde_json::from_str(s).map_err(|e| DatasetError::Manifest(e.to_string()))?;
        if m.version != MANIFEST_VERSION {
            return Err(DatasetError::Manifest(format!("unsupported version {}", m.version)));
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let s = fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&s)
    }

    /// Class label of every original event, all splits.
    pub fn labels(&self) -> BTreeMap<&str, u32> {
        self.all_entries()
            .filter(|(_, e)| e.replication_index == 0)
            .map(|(_, e)| (e.event_id.as_str(), e.class_id))
            .collect()
    }
}

/// Produces PNG bytes for one manifest entry.
pub trait EntryRenderer: Sync {
    fn render_png(&self, entry: &ManifestEntry) -> Result<Vec<u8>, String>;
}

impl<F> EntryRenderer for F
where
    F: Fn(&ManifestEntry) -> Result<Vec<u8>, String> + Sync,
{
    fn render_png(&self, entry: &ManifestEntry) -> Result<Vec<u8>, String> {
        self(entry)
    }
}

#[derive(Clone, Debug, Default)]
pub struct WriteOptions {
    /// Write only the directory tree and the manifest.
    pub dry_run: bool,
    /// Render workers; 0 lets rayon decide.
    pub threads: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct WriteSummary {
    pub images_written: usize,
    pub counts: SplitCounts,
    pub manifest_path: PathBuf,
    #[serde(skip)]
    pub wall_time: Duration,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Renders every entry into its file, then writes the manifest. The
/// manifest only appears once every image is on disk.
pub fn write_dataset(
    manifest: &DatasetManifest,
    renderer: &dyn EntryRenderer,
    out_dir: &Path,
    options: &WriteOptions,
) -> Result<WriteSummary, DatasetError> {
    let start = Instant::now();
    for split in Split::ALL {
        for class in &manifest.class_names {
            let dir = out_dir.join(split.as_str()).join(class);
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
    }

    let entries: Vec<&ManifestEntry> = manifest.all_entries().map(|(_, e)| e).collect();
    let total = entries.len();
    let written = AtomicUsize::new(0);
    if !options.dry_run {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.threads)
            .build()
            .map_err(|e| DatasetError::Io {
                path: out_dir.to_path_buf(),
                source: io::Error::other(e),
            })?;
        pool.install(|| {
            entries.par_iter().try_for_each(|entry| {
                let bytes = renderer.render_png(entry).map_err(|message| DatasetError::Render {
                    path: entry.image_path.clone(),
                    message,
                    written: written.load(Ordering::SeqCst),
                    total,
                })?;
                let path = out_dir.join(&entry.image_path);
                fs::write(&path, bytes).map_err(|source| DatasetError::Write {
                    path,
                    source,
                    written: written.load(Ordering::SeqCst),
                    total,
                })?;
                written.fetch_add(1, Ordering::SeqCst);
                Ok(())
            })
        })?;
    }

    let manifest_path = out_dir.join(MANIFEST_FILE);
    let tmp = out_dir.join(format!("{MANIFEST_FILE}.tmp"));
    fs::write(&tmp, manifest.to_json()).map_err(io_err(&tmp))?;
    fs::rename(&tmp, &manifest_path).map_err(io_err(&manifest_path))?;
    Ok(WriteSummary {
        images_written: written.into_inner(),
        counts: manifest.counts.clone(),
        manifest_path,
        wall_time: start.elapsed(),
    })
}
