//! The experiment harness.
//!
//! A run grid is dataset x unlabeled-proportion x strategy, repeated; each
//! cell repetition executes the whole pipeline: load, stratified split,
//! label masking, standardization, evolution, then the final protocol of
//! retraining every last-generation architecture on labeled train plus
//! validation data and scoring it once on the held-out test set.
//!
//! Results land in one records CSV (one row per individual per population
//! snapshot), a per-cell summary CSV, and two SVG charts. Reruns of the
//! same config reproduce the records byte for byte except the wall-time
//! column, which is why that column is last.

use crate::coverage::{CoverageConfig, Metric};
use crate::data::{load_pmlb, mask_labels, split, standardize, Dataset, DatasetSplit};
use crate::descriptor::{NetworkDescriptor, SearchConstraints};
use crate::error::{Error, Result};
use crate::evolution::{evolve, GaConfig};
use crate::fitness::{balanced_accuracy, evaluate, probs_to_labels, train_descriptor, FitnessSpec};
use crate::plot::{line_chart, Series};
use crate::rng::{derive_seed, tag_bytes};
use crate::train::{Optimizer, TrainConfig};
use ndarray::Axis;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const RECORDS_VERSION_LINE: &str = "# covevo records v1";

fn default_data_dir() -> PathBuf {
    PathBuf::from("data")
}

fn default_q_grid() -> Vec<f64> {
    vec![0.0, 0.2, 0.4, 0.6, 0.8]
}

fn default_repetitions() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub datasets: Vec<String>,
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    #[serde(default = "default_q_grid")]
    pub q_grid: Vec<f64>,
    pub strategies: Vec<String>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub global_seed: u64,
    /// Run grid cells on worker threads instead of sequentially. Output
    /// bytes are identical either way.
    #[serde(default)]
    pub parallel_cells: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaSection {
    pub population_size: usize,
    pub generations: usize,
    /// Materialized to population_size / 2 when absent.
    pub selection_size: Option<usize>,
    pub crossover_rate: f64,
    pub max_depth: usize,
    pub max_width: usize,
}

impl Default for GaSection {
    fn default() -> Self {
        GaSection {
            population_size: 20,
            generations: 30,
            selection_size: None,
            crossover_rate: 0.0,
            max_depth: 8,
            max_width: 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 50,
            batch_size: 10,
            learning_rate: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoverageSection {
    pub nc_threshold: f64,
    pub top_k: usize,
    pub sections: usize,
}

impl Default for CoverageSection {
    fn default() -> Self {
        CoverageSection {
            nc_threshold: 0.0,
            top_k: 1,
            sections: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub ga: GaSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub coverage: CoverageSection,
    #[serde(default)]
    pub split: SplitSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.materialize();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_toml(&text)
    }

    /// Fills every derived default so the serialized form is complete.
    fn materialize(&mut self) {
        if self.ga.selection_size.is_none() {
            self.ga.selection_size = Some((self.ga.population_size / 2).max(1));
        }
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if e.datasets.is_empty() {
            return Err(Error::Config("no datasets configured".into()));
        }
        if e.strategies.is_empty() {
            return Err(Error::Config("no strategies configured".into()));
        }
        if e.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if e.q_grid.is_empty() {
            return Err(Error::Config("empty q grid".into()));
        }
        for &q in &e.q_grid {
            if !(0.0..1.0).contains(&q) {
                return Err(Error::Config(format!("q must be in [0, 1), got {q}")));
            }
        }
        for s in &e.strategies {
            CellStrategy::parse(s)?;
        }
        self.ga_config(0).validate()?;
        self.train_config().validate()?;
        // The strictest metric settings must hold regardless of which
        // strategies are active.
        let mut cov = CoverageConfig::new(Metric::Kmn);
        cov.nc_threshold = self.coverage.nc_threshold;
        cov.top_k = self.coverage.top_k;
        cov.sections = self.coverage.sections;
        cov.validate()?;
        let s = &self.split;
        if s.train <= 0.0 || s.val <= 0.0 || s.test <= 0.0 {
            return Err(Error::Config("split ratios must be positive".into()));
        }
        if (s.train + s.val + s.test - 1.0).abs() > 1e-9 {
            return Err(Error::Config("split ratios must sum to 1".into()));
        }
        Ok(())
    }

    pub fn ga_config(&self, seed: u64) -> GaConfig {
        GaConfig {
            population_size: self.ga.population_size,
            generations: self.ga.generations,
            selection_size: self
                .ga
                .selection_size
                .unwrap_or((self.ga.population_size / 2).max(1)),
            crossover_rate: self.ga.crossover_rate,
            constraints: SearchConstraints::new(self.ga.max_depth.max(1), self.ga.max_width.max(1)),
            global_seed: seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            optimizer: Optimizer::Sgd,
            seed: 0,
        }
    }

    /// Grid cells in deterministic order. Any q = 0 entry collapses to a
    /// single fully supervised cell per dataset, because without unlabeled
    /// data all strategies coincide.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        let strategies: Vec<CellStrategy> = self
            .experiment
            .strategies
            .iter()
            .map(|s| CellStrategy::parse(s))
            .collect::<Result<_>>()?;
        let mut cells = Vec::new();
        let mut seen = BTreeSet::new();
        for dataset in &self.experiment.datasets {
            for &q in &self.experiment.q_grid {
                let active: Vec<CellStrategy> = if q == 0.0 {
                    vec![CellStrategy::Supervised]
                } else {
                    strategies.clone()
                };
                for strategy in active {
                    if seen.insert((dataset.clone(), q.to_bits(), strategy.label())) {
                        cells.push(Cell {
                            dataset: dataset.clone(),
                            q,
                            strategy,
                        });
                    }
                }
            }
        }
        Ok(cells)
    }

    pub fn resolved_toml(&self) -> Result<String> {
        let body = toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("config serialize: {e}")))?;
        Ok(format!("# resolved configuration, all defaults materialized\n{body}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellStrategy {
    Supervised,
    Coverage(Metric),
    Cert,
    Ret,
}

impl CellStrategy {
    pub fn parse(name: &str) -> Result<Self> {
        let lower = name.to_ascii_lowercase();
        match lower.as_str() {
            "supervised" => Ok(CellStrategy::Supervised),
            "cert" => Ok(CellStrategy::Cert),
            "ret" => Ok(CellStrategy::Ret),
            other => Metric::from_name(other)
                .map(CellStrategy::Coverage)
                .map_err(|_| Error::Config(format!("unknown strategy '{name}'"))),
        }
    }

    pub fn label(self) -> String {
        match self {
            CellStrategy::Supervised => "SUPERVISED".into(),
            CellStrategy::Coverage(m) => m.name().to_ascii_uppercase(),
            CellStrategy::Cert => "CERT".into(),
            CellStrategy::Ret => "RET".into(),
        }
    }

    pub fn spec(self, section: &CoverageSection) -> FitnessSpec {
        match self {
            CellStrategy::Supervised => FitnessSpec::supervised(),
            CellStrategy::Coverage(metric) => {
                let mut cov = CoverageConfig::new(metric);
                cov.nc_threshold = section.nc_threshold;
                cov.top_k = section.top_k;
                cov.sections = section.sections;
                FitnessSpec::coverage(cov)
            }
            CellStrategy::Cert => FitnessSpec::cert(),
            CellStrategy::Ret => FitnessSpec::ret(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Cell {
    pub dataset: String,
    pub q: f64,
    pub strategy: CellStrategy,
}

impl Cell {
    pub fn label(&self) -> String {
        format!("{} q={} {}", self.dataset, self.q, self.strategy.label())
    }

    fn dir_name(&self, rep: usize) -> String {
        format!(
            "{}_q{}_{}_rep{}",
            self.dataset,
            self.q,
            self.strategy.label().to_ascii_lowercase(),
            rep
        )
    }
}

/// One line of records.csv. The wall-time column stays last so reruns can
/// be compared by trimming it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub dataset: String,
    pub q: f64,
    pub strategy: String,
    pub rep: u32,
    pub seed: u64,
    pub generation: u32,
    pub individual: String,
    pub descriptor: String,
    pub fitness: f64,
    pub b_acc: f64,
    pub aux: Option<f64>,
    pub test_b_acc: Option<f64>,
    pub failed: bool,
    pub wall_ms: u64,
}

pub fn write_records(path: &Path, rows: &[RecordRow]) -> Result<()> {
    use std::io::Write as _;
    let mut file =
        fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    writeln!(file, "{RECORDS_VERSION_LINE}")
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut writer = csv::Writer::from_writer(file);
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| Error::Data(format!("records write: {e}")))?;
    }
    writer
        .flush()
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<RecordRow>> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let body: String = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n");
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    reader
        .deserialize()
        .map(|r| r.map_err(|e| Error::Data(format!("records parse: {e}"))))
        .collect()
}

/// The closing protocol: every architecture is rebuilt from scratch,
/// trained on labeled train plus validation data, and scored on the test
/// partition, which is read exactly once. A training blowup scores 0 with
/// the failure flag.
pub fn final_evaluate(
    descriptors: &[NetworkDescriptor],
    splits: &DatasetSplit,
    config: &TrainConfig,
    seed: u64,
) -> Result<Vec<(f64, bool)>> {
    let features = ndarray::concatenate(
        Axis(0),
        &[splits.train_labeled.0.view(), splits.val.0.view()],
    )
    .expect("feature widths match");
    let mut labels = splits.train_labeled.1.clone();
    labels.extend_from_slice(&splits.val.1);
    let (test_x, test_y) = splits.test();
    let mut out = Vec::with_capacity(descriptors.len());
    for (i, d) in descriptors.iter().enumerate() {
        let candidate_seed = derive_seed(seed, &[i as u64]);
        match train_descriptor(d, &features, &labels, config, candidate_seed)? {
            Some(net) => {
                let probs = net.predict_proba(test_x)?;
                let b = balanced_accuracy(&probs_to_labels(probs.as_slice().unwrap()), test_y)?;
                out.push((b, false));
            }
            None => out.push((0.0, true)),
        }
    }
    Ok(out)
}

fn locate_and_load(name: &str, data_dir: &Path) -> Result<Dataset> {
    for candidate in [
        data_dir.join(format!("{name}.tsv.gz")),
        data_dir.join(format!("{name}.tsv")),
    ] {
        if candidate.is_file() {
            return load_pmlb(candidate);
        }
    }
    log::info!("{name} not in {}, trying to fetch", data_dir.display());
    let fetched = crate::data::fetch(name, Some(data_dir))?;
    load_pmlb(fetched)
}

fn run_cell(
    cell: &Cell,
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    out_root: &Path,
) -> Result<Vec<RecordRow>> {
    let train_cfg = cfg.train_config();
    let spec = cell.strategy.spec(&cfg.coverage);
    spec.validate()?;
    let mut rows = Vec::new();
    for rep in 0..cfg.experiment.repetitions {
        let rep_seed = derive_seed(
            cfg.experiment.global_seed,
            &[
                tag_bytes(cell.dataset.as_bytes()),
                cell.q.to_bits(),
                tag_bytes(cell.strategy.label().as_bytes()),
                rep as u64,
            ],
        );
        let started = Instant::now();
        let ratios = (cfg.split.train, cfg.split.val, cfg.split.test);
        let (train_pool, val, test) = split(dataset, ratios, derive_seed(rep_seed, &[1]))?;
        let (labeled, unlabeled) = mask_labels(&train_pool, cell.q, derive_seed(rep_seed, &[2]))?;
        let splits = standardize(DatasetSplit::new(labeled, unlabeled, val, test, cell.q));
        let ga = cfg.ga_config(derive_seed(rep_seed, &[3]));
        let result = evolve(&ga, |d, s| evaluate(&spec, d, &splits, &train_cfg, s))?;

        let final_descriptors: Vec<NetworkDescriptor> = result
            .final_population()
            .iter()
            .map(|i| i.descriptor.clone())
            .collect();
        let finals = final_evaluate(
            &final_descriptors,
            &splits,
            &train_cfg,
            derive_seed(rep_seed, &[4]),
        )?;
        if splits.test_read_count() != 1 {
            return Err(Error::Evolution(format!(
                "test partition read {} times during one repetition",
                splits.test_read_count()
            )));
        }
        let wall_ms = started.elapsed().as_millis() as u64;

        let last = result.snapshots.len() - 1;
        let mut rep_rows = Vec::new();
        for (g, snapshot) in result.snapshots.iter().enumerate() {
            for (pos, ind) in snapshot.iter().enumerate() {
                let fv = ind.fitness.expect("snapshot individuals are evaluated");
                let (test_b_acc, final_failed) = if g == last {
                    let (b, fail) = finals[pos];
                    (Some(b), fail)
                } else {
                    (None, false)
                };
                rep_rows.push(RecordRow {
                    dataset: cell.dataset.clone(),
                    q: cell.q,
                    strategy: cell.strategy.label(),
                    rep: rep as u32,
                    seed: rep_seed,
                    generation: g as u32,
                    individual: format!("{}:{}", ind.id.0, ind.id.1),
                    descriptor: ind.descriptor.to_string(),
                    fitness: fv.f,
                    b_acc: fv.b_acc,
                    aux: fv.aux,
                    test_b_acc,
                    failed: fv.failed || final_failed,
                    wall_ms,
                });
            }
        }

        let run_dir = out_root.join("runs").join(cell.dir_name(rep));
        fs::create_dir_all(&run_dir)
            .map_err(|e| Error::io(run_dir.display().to_string(), e))?;
        let mut resolved = cfg.resolved_toml()?;
        resolved.push_str(&format!(
            "\n[cell]\ndataset = \"{}\"\nq = {}\nstrategy = \"{}\"\nrep = {}\nrep_seed = {}\n",
            cell.dataset,
            cell.q,
            cell.strategy.label(),
            rep,
            rep_seed
        ));
        let cfg_path = run_dir.join("resolved_config.txt");
        fs::write(&cfg_path, resolved).map_err(|e| Error::io(cfg_path.display().to_string(), e))?;
        write_records(&run_dir.join("records.csv"), &rep_rows)?;

        let best_test = rep_rows
            .iter()
            .filter_map(|r| r.test_b_acc)
            .fold(f64::NEG_INFINITY, f64::max);
        log::info!(
            "{} rep {rep}: best test b_acc {best_test:.4} in {wall_ms} ms",
            cell.label()
        );
        rows.extend(rep_rows);
    }
    Ok(rows)
}

#[derive(Debug)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub records_path: PathBuf,
    pub summary: Vec<SummaryRow>,
    pub cells_run: usize,
    pub failed_cells: Vec<String>,
}

/// Executes the whole grid. Per-cell failures are logged and skipped; the
/// outcome lists them so callers can exit nonzero.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let out = cfg.experiment.output_dir.clone();
    fs::create_dir_all(&out).map_err(|e| Error::io(out.display().to_string(), e))?;
    let resolved_path = out.join("resolved_config.txt");
    fs::write(&resolved_path, cfg.resolved_toml()?)
        .map_err(|e| Error::io(resolved_path.display().to_string(), e))?;

    let mut datasets: BTreeMap<String, Dataset> = BTreeMap::new();
    let mut load_errors: BTreeMap<String, String> = BTreeMap::new();
    for name in cfg
        .experiment
        .datasets
        .iter()
        .collect::<BTreeSet<_>>()
    {
        match locate_and_load(name, &cfg.experiment.data_dir) {
            Ok(d) => {
                log::info!(
                    "loaded {name}: {} instances, {} features",
                    d.features.nrows(),
                    d.features.ncols()
                );
                datasets.insert(name.clone(), d);
            }
            Err(e) => {
                log::error!("could not load {name}: {e}");
                load_errors.insert(name.clone(), e.to_string());
            }
        }
    }

    let cells = cfg.cells()?;
    let run_one = |cell: &Cell| -> Result<Vec<RecordRow>> {
        match datasets.get(&cell.dataset) {
            Some(d) => run_cell(cell, cfg, d, &out),
            None => Err(Error::Data(format!(
                "dataset {} unavailable: {}",
                cell.dataset,
                load_errors
                    .get(&cell.dataset)
                    .cloned()
                    .unwrap_or_else(|| "unknown".into())
            ))),
        }
    };
    let outputs: Vec<(String, Result<Vec<RecordRow>>)> = if cfg.experiment.parallel_cells {
        cells
            .par_iter()
            .map(|c| (c.label(), run_one(c)))
            .collect()
    } else {
        cells.iter().map(|c| (c.label(), run_one(c))).collect()
    };

    let mut rows = Vec::new();
    let mut failed_cells = Vec::new();
    for (label, result) in outputs {
        match result {
            Ok(r) => rows.extend(r),
            Err(e) => {
                log::error!("cell {label} failed: {e}");
                failed_cells.push(label);
            }
        }
    }
    let records_path = out.join("records.csv");
    write_records(&records_path, &rows)?;
    let summary = summarize(&out)?;
    Ok(RunOutcome {
        output_dir: out,
        records_path,
        summary: summary.rows,
        cells_run: cells.len() - failed_cells.len(),
        failed_cells,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub q: f64,
    pub strategy: String,
    pub repetitions: usize,
    pub mean_best_test_b_acc: f64,
    pub max_best_test_b_acc: f64,
}

/// Best final test accuracy per repetition, keyed by grid cell.
fn best_per_rep(records: &[RecordRow]) -> BTreeMap<(String, u64, String, u32), f64> {
    let mut best = BTreeMap::new();
    for r in records {
        if let Some(t) = r.test_b_acc {
            let entry = best
                .entry((r.dataset.clone(), r.q.to_bits(), r.strategy.clone(), r.rep))
                .or_insert(f64::NEG_INFINITY);
            if t > *entry {
                *entry = t;
            }
        }
    }
    best
}

/// Mean and max over repetitions of each cell's best final test accuracy.
pub fn summary_rows(records: &[RecordRow]) -> Vec<SummaryRow> {
    let mut cells: BTreeMap<(String, u64, String), Vec<f64>> = BTreeMap::new();
    for ((dataset, q_bits, strategy, _rep), v) in best_per_rep(records) {
        cells.entry((dataset, q_bits, strategy)).or_default().push(v);
    }
    cells
        .into_iter()
        .map(|((dataset, q_bits, strategy), bests)| SummaryRow {
            dataset,
            q: f64::from_bits(q_bits),
            strategy,
            repetitions: bests.len(),
            mean_best_test_b_acc: bests.iter().sum::<f64>() / bests.len() as f64,
            max_best_test_b_acc: bests.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
        .collect()
}

#[derive(Debug)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub summary_path: PathBuf,
    pub plot_paths: Vec<PathBuf>,
}

/// Rebuilds summary.csv and the two charts from an existing records.csv.
pub fn summarize(results_dir: &Path) -> Result<Summary> {
    let records = read_records(&results_dir.join("records.csv"))?;
    if records.is_empty() {
        return Err(Error::Data("no records to summarize".into()));
    }
    let rows = summary_rows(&records);

    let summary_path = results_dir.join("summary.csv");
    let mut writer = csv::Writer::from_path(&summary_path)
        .map_err(|e| Error::Data(format!("summary write: {e}")))?;
    for row in &rows {
        writer
            .serialize(row)
            .map_err(|e| Error::Data(format!("summary write: {e}")))?;
    }
    writer
        .flush()
        .map_err(|e| Error::io(summary_path.display().to_string(), e))?;

    let plots_dir = results_dir.join("plots");
    fs::create_dir_all(&plots_dir)
        .map_err(|e| Error::io(plots_dir.display().to_string(), e))?;

    // Chart 1: mean best test accuracy against the unlabeled proportion,
    // one series per strategy, averaged over datasets and repetitions.
    let best = best_per_rep(&records);
    let mut by_strategy: BTreeMap<String, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for ((_dataset, q_bits, strategy, _rep), v) in &best {
        by_strategy
            .entry(strategy.clone())
            .or_default()
            .entry(*q_bits)
            .or_default()
            .push(*v);
    }
    let accuracy_series: Vec<Series> = by_strategy
        .iter()
        .map(|(strategy, per_q)| Series {
            label: strategy.clone(),
            points: per_q
                .iter()
                .map(|(q_bits, vals)| {
                    (
                        f64::from_bits(*q_bits),
                        vals.iter().sum::<f64>() / vals.len() as f64,
                    )
                })
                .collect(),
        })
        .collect();
    let accuracy_path = plots_dir.join("accuracy_vs_q.svg");
    fs::write(
        &accuracy_path,
        line_chart(
            "test balanced accuracy vs unlabeled proportion",
            "q (unlabeled proportion)",
            "mean best test balanced accuracy",
            &accuracy_series,
        ),
    )
    .map_err(|e| Error::io(accuracy_path.display().to_string(), e))?;

    // Chart 2: best fitness per snapshot against cumulative evaluations,
    // averaged per strategy over every cell and repetition.
    let mut snapshot_best: BTreeMap<(String, u32, String, u64, u32), f64> = BTreeMap::new();
    for r in &records {
        let key = (
            r.strategy.clone(),
            r.generation,
            r.dataset.clone(),
            r.q.to_bits(),
            r.rep,
        );
        let entry = snapshot_best.entry(key).or_insert(f64::NEG_INFINITY);
        if r.fitness > *entry {
            *entry = r.fitness;
        }
    }
    let first = &records[0];
    let population_size = records
        .iter()
        .filter(|r| {
            r.dataset == first.dataset
                && r.q == first.q
                && r.strategy == first.strategy
                && r.rep == first.rep
                && r.generation == 0
        })
        .count()
        .max(1);
    let mut fitness_agg: BTreeMap<(String, u32), Vec<f64>> = BTreeMap::new();
    for ((strategy, generation, ..), v) in snapshot_best {
        fitness_agg
            .entry((strategy, generation))
            .or_default()
            .push(v);
    }
    let mut fitness_by_strategy: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for ((strategy, generation), vals) in fitness_agg {
        let evals = (generation as usize + 1) * population_size;
        fitness_by_strategy.entry(strategy).or_default().push((
            evals as f64,
            vals.iter().sum::<f64>() / vals.len() as f64,
        ));
    }
    let fitness_series: Vec<Series> = fitness_by_strategy
        .into_iter()
        .map(|(label, points)| Series { label, points })
        .collect();
    let fitness_path = plots_dir.join("fitness_vs_evaluations.svg");
    fs::write(
        &fitness_path,
        line_chart(
            "best fitness vs evaluations",
            "evaluations",
            "mean best fitness",
            &fitness_series,
        ),
    )
    .map_err(|e| Error::io(fitness_path.display().to_string(), e))?;

    Ok(Summary {
        rows,
        summary_path,
        plot_paths: vec![accuracy_path, fitness_path],
    })
}
