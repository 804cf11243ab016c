//! Dataset ingestion, stratified splitting, label masking, standardization.
//!
//! Input format: tab-separated text with a header row containing a `target`
//! column, optionally gzip-compressed (the PMLB distribution layout). All
//! non-target columns are parsed as reals; the target must take exactly two
//! distinct values, mapped to {0, 1} with the smaller value becoming 0.
//!
//! The test partition of a [`DatasetSplit`] sits behind an accessor that
//! counts reads, so tests can prove the search never peeks at it: fitness
//! evaluation touches only the training and validation parts, and the final
//! evaluation protocol reads the test set exactly once per repetition.

use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};
use flate2::read::GzDecoder;
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<u8>,
    pub name: String,
    /// Rows discarded during ingestion (unparseable or missing cells).
    pub dropped_rows: usize,
}

/// A labeled feature block.
pub type Subset = (Array2<f64>, Vec<u8>);

#[derive(Debug)]
pub struct DatasetSplit {
    pub train_labeled: Subset,
    /// Features whose labels were masked out; never carries labels.
    pub train_unlabeled: Array2<f64>,
    pub val: Subset,
    test_features: Array2<f64>,
    test_labels: Vec<u8>,
    pub q: f64,
    test_reads: AtomicUsize,
}

impl DatasetSplit {
    pub fn new(
        train_labeled: Subset,
        train_unlabeled: Array2<f64>,
        val: Subset,
        test: Subset,
        q: f64,
    ) -> Self {
        DatasetSplit {
            train_labeled,
            train_unlabeled,
            val,
            test_features: test.0,
            test_labels: test.1,
            q,
            test_reads: AtomicUsize::new(0),
        }
    }

    /// The held-out test partition. Every call counts as one read.
    pub fn test(&self) -> (&Array2<f64>, &[u8]) {
        self.test_reads.fetch_add(1, Ordering::Relaxed);
        (&self.test_features, &self.test_labels)
    }

    /// How many times the test partition has been read.
    pub fn test_read_count(&self) -> usize {
        self.test_reads.load(Ordering::Relaxed)
    }

    pub fn n_features(&self) -> usize {
        self.train_labeled.0.ncols()
    }

    /// Partition sizes (labeled, unlabeled, val, test) without touching the
    /// read counter.
    pub fn sizes(&self) -> (usize, usize, usize, usize) {
        (
            self.train_labeled.0.nrows(),
            self.train_unlabeled.nrows(),
            self.val.0.nrows(),
            self.test_features.nrows(),
        )
    }
}

fn open_maybe_gz(path: &Path) -> Result<Box<dyn Read>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(GzDecoder::new(file)))
    } else {
        Ok(Box::new(file))
    }
}

/// Loads a tab-separated dataset with a `target` column. Rows with
/// unparseable or missing cells are dropped and counted; the target must be
/// binary.
pub fn load_pmlb(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let reader = BufReader::new(open_maybe_gz(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{}: empty file", path.display())))?
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let columns: Vec<&str> = header.trim_end_matches(['\r', '\n']).split('\t').collect();
    let target_idx = columns
        .iter()
        .position(|&c| c == "target")
        .ok_or_else(|| Error::Data(format!("{}: no 'target' column", path.display())))?;
    let n_features = columns.len() - 1;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_targets: Vec<f64> = Vec::new();
    let mut dropped = 0usize;
    for line in lines {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != columns.len() {
            dropped += 1;
            continue;
        }
        let mut feats = Vec::with_capacity(n_features);
        let mut target = None;
        let mut ok = true;
        for (i, cell) in cells.iter().enumerate() {
            match cell.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => {
                    if i == target_idx {
                        target = Some(v);
                    } else {
                        feats.push(v);
                    }
                }
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            rows.push(feats);
            raw_targets.push(target.expect("target cell parsed"));
        } else {
            dropped += 1;
        }
    }
    if dropped > 0 {
        log::warn!("{}: dropped {dropped} malformed rows", path.display());
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no usable rows", path.display())));
    }

    let mut values: Vec<f64> = raw_targets.clone();
    values.sort_by(f64::total_cmp);
    values.dedup();
    if values.len() != 2 {
        return Err(Error::Data(format!(
            "{}: target is not binary ({} distinct values)",
            path.display(),
            values.len()
        )));
    }
    let labels: Vec<u8> = raw_targets
        .iter()
        .map(|&t| u8::from(t == values[1]))
        .collect();

    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let n_rows = flat.len() / n_features;
    let features = Array2::from_shape_vec((n_rows, n_features), flat)
        .map_err(|e| Error::Data(format!("{}: ragged rows: {e}", path.display())))?;
    let name = path
        .file_name()
        .map(|f| {
            f.to_string_lossy()
                .trim_end_matches(".gz")
                .trim_end_matches(".tsv")
                .to_string()
        })
        .unwrap_or_default();
    Ok(Dataset {
        features,
        labels,
        name,
        dropped_rows: dropped,
    })
}

/// Largest-remainder allocation of n items to the given ratios; ties go to
/// the earlier bucket.
fn quota_counts(n: usize, ratios: &[f64]) -> Vec<usize> {
    let targets: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts: Vec<usize> = targets.iter().map(|&t| t.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = targets[a] - targets[a].floor();
        let rb = targets[b] - targets[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for i in 0..n - assigned {
        counts[order[i % ratios.len()]] += 1;
    }
    counts
}

fn take_rows(features: &Array2<f64>, labels: &[u8], idx: &[usize]) -> Subset {
    (
        features.select(Axis(0), idx),
        idx.iter().map(|&i| labels[i]).collect(),
    )
}

/// Stratified three-way split. Every class is shuffled per seed and divided
/// by largest-remainder quotas, so each partition's class histogram matches
/// the full dataset within one instance per class.
pub fn split(
    dataset: &Dataset,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Subset, Subset, Subset)> {
    let r = [ratios.0, ratios.1, ratios.2];
    if r.iter().any(|&x| x <= 0.0) {
        return Err(Error::Config("split ratios must be positive".into()));
    }
    if (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config("split ratios must sum to 1".into()));
    }
    let mut parts: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..dataset.labels.len())
            .filter(|&i| dataset.labels[i] == class)
            .collect();
        if idx.len() < 3 {
            return Err(Error::Data(format!(
                "class {class} has {} instances, fewer than the 3 partitions",
                idx.len()
            )));
        }
        let mut rng = stream(derive_seed(seed, &[0x7370_6c69, u64::from(class)]));
        idx.shuffle(&mut rng);
        let counts = quota_counts(idx.len(), &r);
        let mut offset = 0;
        for (part, &count) in parts.iter_mut().zip(&counts) {
            part.extend(&idx[offset..offset + count]);
            offset += count;
        }
    }
    Ok((
        take_rows(&dataset.features, &dataset.labels, &parts[0]),
        take_rows(&dataset.features, &dataset.labels, &parts[1]),
        take_rows(&dataset.features, &dataset.labels, &parts[2]),
    ))
}

/// Removes the labels of a round(q * n) subset of the training pool,
/// stratified so the surviving labeled set keeps the pool's class balance
/// within one instance per class.
pub fn mask_labels(pool: &Subset, q: f64, seed: u64) -> Result<(Subset, Array2<f64>)> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::Config(format!("q must be in [0, 1), got {q}")));
    }
    let n = pool.1.len();
    let total_masked = (q * n as f64).round() as usize;

    let class_idx: Vec<Vec<usize>> = [0u8, 1]
        .iter()
        .map(|&c| (0..n).filter(|&i| pool.1[i] == c).collect())
        .collect();
    // Largest-remainder split of the masked total across the two classes.
    let n0 = class_idx[0].len() as f64;
    let share0 = if n == 0 { 0.0 } else { total_masked as f64 * n0 / n as f64 };
    let mut masked_per_class = [share0.floor() as usize, 0];
    masked_per_class[1] = total_masked - masked_per_class[0];
    // Round class 0 up when its remainder dominates, respecting bounds.
    if share0 - share0.floor() > 0.5 && masked_per_class[1] > 0 {
        masked_per_class[0] += 1;
        masked_per_class[1] -= 1;
    }
    for c in 0..2 {
        if masked_per_class[c] > class_idx[c].len() {
            let overflow = masked_per_class[c] - class_idx[c].len();
            masked_per_class[c] = class_idx[c].len();
            masked_per_class[1 - c] += overflow;
        }
    }

    let mut masked = Vec::with_capacity(total_masked);
    let mut kept = Vec::with_capacity(n - total_masked);
    for (c, idx) in class_idx.iter().enumerate() {
        let mut idx = idx.clone();
        let mut rng = stream(derive_seed(seed, &[0x6d61_736b, c as u64]));
        idx.shuffle(&mut rng);
        masked.extend(&idx[..masked_per_class[c]]);
        kept.extend(&idx[masked_per_class[c]..]);
    }
    kept.sort_unstable();
    masked.sort_unstable();
    let labeled = take_rows(&pool.0, &pool.1, &kept);
    let unlabeled = pool.0.select(Axis(0), &masked);
    Ok((labeled, unlabeled))
}

/// Shifts and scales every feature column to zero mean and unit variance,
/// with statistics fit on the labeled and unlabeled training features only
/// (no labels are consumed, so the unlabeled rows are fair game). Columns
/// with zero variance are shifted only. The q value and partition labels
/// pass through unchanged.
pub fn standardize(split: DatasetSplit) -> DatasetSplit {
    let n_cols = split.train_labeled.0.ncols();
    let n_lab = split.train_labeled.0.nrows();
    let n_unlab = split.train_unlabeled.nrows();
    let n = (n_lab + n_unlab) as f64;
    let mut mean = vec![0.0; n_cols];
    let mut var = vec![0.0; n_cols];
    for c in 0..n_cols {
        let sum: f64 =
            split.train_labeled.0.column(c).sum() + split.train_unlabeled.column(c).sum();
        mean[c] = sum / n;
        let sq: f64 = split
            .train_labeled
            .0
            .column(c)
            .iter()
            .chain(split.train_unlabeled.column(c).iter())
            .map(|&v| (v - mean[c]) * (v - mean[c]))
            .sum();
        var[c] = sq / n;
    }
    let scale: Vec<f64> = var
        .iter()
        .map(|&v| if v > 0.0 { v.sqrt() } else { 1.0 })
        .collect();
    let transform = |mut m: Array2<f64>| {
        for c in 0..n_cols {
            let (mu, s) = (mean[c], scale[c]);
            m.column_mut(c).mapv_inplace(|v| (v - mu) / s);
        }
        m
    };
    DatasetSplit::new(
        (transform(split.train_labeled.0), split.train_labeled.1),
        transform(split.train_unlabeled),
        (transform(split.val.0), split.val.1),
        (transform(split.test_features), split.test_labels),
        split.q,
    )
}

/// Default public base URL of the dataset repository's raw-file scheme.
pub const DEFAULT_BASE_URL: &str = "https://github.com/EpistasisLab/pmlb/raw/master/datasets";

/// Env var overriding the download base URL (mirrors, offline stores).
pub const BASE_URL_ENV: &str = "COVEVO_BASE_URL";

/// Env var overriding the cache directory.
pub const CACHE_ENV: &str = "COVEVO_CACHE";

/// Resolves the cache directory: explicit argument, else `COVEVO_CACHE`,
/// else `./pmlb_cache`.
pub fn cache_dir(explicit: Option<&Path>) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(CACHE_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("pmlb_cache")),
    }
}

/// Downloads `<name>.tsv.gz` into the cache unless already present, and
/// returns its path. Tries `<base>/<name>/<name>.tsv.gz`, then the
/// `_deprecated_<name>` layout used for retired datasets upstream. Network
/// access is never needed when the file is pre-placed in the cache.
pub fn fetch(name: &str, cache: Option<&Path>) -> Result<PathBuf> {
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return Err(Error::Data(format!("suspicious dataset name '{name}'")));
    }
    let dir = cache_dir(cache);
    let target = dir.join(format!("{name}.tsv.gz"));
    if target.exists() {
        return Ok(target);
    }
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let base = std::env::var(BASE_URL_ENV).unwrap_or_else(|_| DEFAULT_BASE_URL.to_string());
    let candidates = [
        format!("{base}/{name}/{name}.tsv.gz"),
        format!("{base}/_deprecated_{name}/_deprecated_{name}.tsv.gz"),
    ];
    // The OS trust store also covers corporate mirrors with private CAs,
    // which the bundled webpki roots would reject.
    let agent = ureq::Agent::config_builder()
        .tls_config(
            ureq::tls::TlsConfig::builder()
                .root_certs(ureq::tls::RootCerts::PlatformVerifier)
                .build(),
        )
        .build()
        .new_agent();
    let mut last_err = String::new();
    for url in &candidates {
        match agent.get(url).call() {
            Ok(mut resp) => {
                let body = resp
                    .body_mut()
                    .read_to_vec()
                    .map_err(|e| Error::Fetch {
                        url: url.clone(),
                        reason: e.to_string(),
                    })?;
                let mut f = File::create(&target)
                    .map_err(|e| Error::io(target.display().to_string(), e))?;
                f.write_all(&body)
                    .map_err(|e| Error::io(target.display().to_string(), e))?;
                log::info!("fetched {name} ({} bytes) to {}", body.len(), target.display());
                return Ok(target);
            }
            Err(e) => last_err = e.to_string(),
        }
    }
    Err(Error::Fetch {
        url: candidates[0].clone(),
        reason: last_err,
    })
}

/// Two well-separated Gaussian-ish blobs in the plane, class 1 on the
/// positive side of x0 + x1 = 0 with margin. Every generated point is
/// correctly classified by that line, which makes the problem linearly
/// separable by construction.
pub fn two_blobs(n: usize, seed: u64) -> Dataset {
    let mut rng = stream(derive_seed(seed, &[0x626c_6f62]));
    let mut xs = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = (i % 2) as u8;
        let center = if class == 1 { 1.5 } else { -1.5 };
        xs.push(center + rng.random_range(-0.8..0.8));
        xs.push(center + rng.random_range(-0.8..0.8));
        labels.push(class);
    }
    Dataset {
        features: Array2::from_shape_vec((n, 2), xs).expect("shape matches"),
        labels,
        name: "two_blobs".into(),
        dropped_rows: 0,
    }
}
