//! End-to-end experiment driver: builds the data, partition and prior from a
//! configuration, runs the federation, and writes the run artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::{
    dirichlet_partition, gen_longtail, iid_partition, shot_groups, train_test_split, Dataset,
    LongTailSpec, Partition, ShotGroups,
};
use crate::error::{Error, Result};
use crate::eval::{diagnostics, evaluate, Diagnostics, MetricsReport};
use crate::prior::{build_prior, load_embeddings, Prior};
use crate::rng::{stage_seed, Stage};
use crate::server::{initial_model, model_shape, run_federation, FederationInput, GlobalState};

/// Environment variable capping the client fan-out.
pub const THREADS_ENV: &str = "FEDMAS_THREADS";

pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()?
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub data: u64,
    pub split: u64,
    pub partition: u64,
    pub prior: u64,
    pub init: u64,
    pub train: u64,
}

impl StageSeeds {
    pub fn from_master(seed: u64) -> Self {
        StageSeeds {
            data: stage_seed(seed, Stage::Data),
            split: stage_seed(seed, Stage::Split),
            partition: stage_seed(seed, Stage::Partition),
            prior: stage_seed(seed, Stage::Prior),
            init: stage_seed(seed, Stage::Init),
            train: stage_seed(seed, Stage::Train),
        }
    }
}

/// The data side of an experiment.
#[derive(Debug, Clone)]
pub struct ExperimentSetup {
    pub train: Dataset,
    pub test: Dataset,
    pub partition: Partition,
    pub prior: Prior,
    pub shot_groups: ShotGroups,
    /// Class counts of the full generated dataset.
    pub class_counts: Vec<usize>,
    pub seeds: StageSeeds,
}

impl ExperimentSetup {
    pub fn input(&self) -> FederationInput<'_> {
        FederationInput {
            train: &self.train,
            test: &self.test,
            partition: &self.partition,
            prior: &self.prior,
            shot_groups: &self.shot_groups,
        }
    }
}

pub fn prepare(config: &ExperimentConfig) -> Result<ExperimentSetup> {
    config.validate()?;
    let seeds = StageSeeds::from_master(config.seed);
    let spec = LongTailSpec {
        num_classes: config.classes,
        n_max: config.n_max,
        imbalance_ratio: config.imbalance_ratio,
        feature_dim: config.feature_dim,
        class_separation: config.class_separation,
    };
    let full = gen_longtail(&spec, seeds.data)?;
    let n = full.len();
    let hi = config.shot_hi.unwrap_or(n / 20);
    let lo = config.shot_lo.unwrap_or(n / 200);
    let groups = shot_groups(full.class_counts(), hi, lo)?;
    let (train, test) = train_test_split(&full, config.test_fraction, seeds.split)?;
    let partition = if config.iid {
        iid_partition(&train, config.clients, seeds.partition)?
    } else {
        dirichlet_partition(
            &train,
            config.clients,
            config.dirichlet_alpha,
            seeds.partition,
        )?
    };
    let prior = match &config.prior_embeddings {
        Some(path) => Prior::Table(load_embeddings(path, Some(train.len()))?),
        None => Prior::Network(build_prior(
            config.feature_dim,
            config.embed_dim,
            seeds.prior,
        )?),
    };
    Ok(ExperimentSetup {
        class_counts: full.class_counts().to_vec(),
        train,
        test,
        partition,
        prior,
        shot_groups: groups,
        seeds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub config_text: String,
    pub code_version: String,
    pub seeds: StageSeeds,
    pub effective_lambda_f: f64,
    pub num_params: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub class_counts: Vec<usize>,
    pub client_sizes: Vec<usize>,
    pub shot_groups: ShotGroups,
    pub started_unix: u64,
    pub finished_unix: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub method: String,
    pub rounds: usize,
    pub metrics: MetricsReport,
    /// Least-squares slope of each client's rescue factor over rounds.
    pub rf_slope: Vec<f64>,
    pub fallback_rounds: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub state: GlobalState,
    pub final_metrics: FinalMetrics,
    pub diagnostics: Option<Diagnostics>,
    pub manifest: RunManifest,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Runs an experiment in memory.
pub fn execute(config: &ExperimentConfig, threads: Option<usize>) -> Result<RunOutcome> {
    let started_unix = unix_now();
    let setup = prepare(config)?;
    execute_with(config, &setup, threads, started_unix)
}

/// Runs an experiment on an already prepared setup.
pub fn execute_with(
    config: &ExperimentConfig,
    setup: &ExperimentSetup,
    threads: Option<usize>,
    started_unix: u64,
) -> Result<RunOutcome> {
    let shape = model_shape(config, &setup.train, setup.prior.embed_dim());
    let state = run_federation(config, setup.input(), threads)?;
    let template = initial_model(config, shape)?;
    let metrics = match state.history.last().and_then(|r| r.metrics.clone()) {
        Some(m) => m,
        None => evaluate(
            &template.from_vector(&state.params)?,
            &setup.test,
            &setup.shot_groups,
        )?,
    };
    let diagnostics = if state.history.is_empty() {
        None
    } else {
        Some(diagnostics(&state.history)?)
    };
    let final_metrics = FinalMetrics {
        method: config.method.to_string(),
        rounds: state.round,
        metrics,
        rf_slope: diagnostics
            .as_ref()
            .map(|d| d.rf_slope.clone())
            .unwrap_or_default(),
        fallback_rounds: state
            .history
            .iter()
            .filter(|r| r.fallback)
            .map(|r| r.round)
            .collect(),
    };
    let manifest = RunManifest {
        config: config.clone(),
        config_text: config.to_kv_string(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        seeds: setup.seeds,
        effective_lambda_f: config.effective_lambda_f(),
        num_params: template.num_params(),
        train_size: setup.train.len(),
        test_size: setup.test.len(),
        class_counts: setup.class_counts.clone(),
        client_sizes: setup.partition.assignments().iter().map(Vec::len).collect(),
        shot_groups: setup.shot_groups.clone(),
        started_unix,
        finished_unix: unix_now(),
    };
    Ok(RunOutcome {
        state,
        final_metrics,
        diagnostics,
        manifest,
    })
}

/// Float formatting used in every CSV: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// `rounds.csv`: one row per evaluated round.
pub fn rounds_csv(state: &GlobalState) -> String {
    let clients = state.history.first().map_or(0, |r| r.rf.len());
    let mut out =
        String::from("round,lr,balanced_acc,overall_acc,head_acc,medium_acc,tail_acc,all_avg");
    for c in 0..clients {
        let _ = write!(out, ",rf_{c},weight_{c}");
    }
    out.push('\n');
    for r in &state.history {
        let Some(m) = &r.metrics else { continue };
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.round,
            fmt_f64(r.lr),
            fmt_f64(m.balanced_acc),
            fmt_f64(m.overall_acc),
            fmt_opt(m.group_acc.head),
            fmt_opt(m.group_acc.medium),
            fmt_opt(m.group_acc.tail),
            fmt_f64(m.all_avg)
        );
        for (rf, w) in r.rf.iter().zip(&r.weights) {
            let _ = write!(out, ",{},{}", fmt_f64(*rf), fmt_f64(*w));
        }
        out.push('\n');
    }
    out
}

/// `diagnostics.csv`: one row per round and client.
pub fn diagnostics_csv(state: &GlobalState) -> String {
    let k = state
        .history
        .first()
        .and_then(|r| r.clients.first())
        .map_or(0, |c| c.w.len());
    let mut out = String::from("round,client,num_samples,rf,weight,contribution");
    for j in 0..k {
        let _ = write!(out, ",w_{j}");
    }
    for j in 0..k {
        let _ = write!(out, ",w_hat_{j}");
    }
    out.push('\n');
    for r in &state.history {
        for (c, s) in r.clients.iter().enumerate() {
            let _ = write!(
                out,
                "{},{},{},{},{},{}",
                r.round,
                s.client_id,
                s.num_samples,
                fmt_f64(s.rf),
                fmt_f64(r.weights[c]),
                fmt_f64(r.contribution[c])
            );
            for v in s.w.iter().chain(&s.w_hat) {
                let _ = write!(out, ",{}", fmt_opt(*v));
            }
            out.push('\n');
        }
    }
    out
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `manifest.json`, `config.txt`, `rounds.csv`, `final_metrics.json`
/// and `diagnostics.csv` into `dir`.
pub fn write_artifacts(outcome: &RunOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(
        &dir.join("manifest.json"),
        serde_json::to_string_pretty(&outcome.manifest)?,
    )?;
    write_file(&dir.join("config.txt"), &outcome.manifest.config_text)?;
    write_file(&dir.join("rounds.csv"), rounds_csv(&outcome.state))?;
    write_file(
        &dir.join("final_metrics.json"),
        serde_json::to_string_pretty(&outcome.final_metrics)?,
    )?;
    write_file(
        &dir.join("diagnostics.csv"),
        diagnostics_csv(&outcome.state),
    )
}

/// Runs one experiment and writes its artifacts to `config.output_dir`.
pub fn run(config: &ExperimentConfig, threads: Option<usize>) -> Result<RunOutcome> {
    let outcome = execute(config, threads)?;
    write_artifacts(&outcome, &config.output_dir)?;
    Ok(outcome)
}

/// Cross product of per-key override lists, e.g. `method=fedavg,fedmas;lambda_f=0,3`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Grid {
    pub axes: Vec<(String, Vec<String>)>,
}

impl Grid {
    pub fn parse(spec: &str) -> Result<Self> {
        let mut axes = Vec::new();
        let mut errors = Vec::new();
        for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            match part.split_once('=') {
                Some((k, vs)) => {
                    let key = crate::config::normalize_key(k);
                    let values: Vec<String> = vs
                        .split(',')
                        .map(|v| v.trim().to_string())
                        .filter(|v| !v.is_empty())
                        .collect();
                    if values.is_empty() {
                        errors.push(format!("grid axis `{key}` has no values"));
                    } else if !crate::config::KEYS.contains(&key.as_str()) {
                        errors.push(format!("grid axis `{key}` is not a configuration key"));
                    } else {
                        axes.push((key, values));
                    }
                }
                None => errors.push(format!("grid axis `{part}` is not `key=v1,v2,...`")),
            }
        }
        if errors.is_empty() {
            Ok(Grid { axes })
        } else {
            Err(Error::InvalidConfig(errors))
        }
    }

    /// Override sets in row-major order (last axis varies fastest). An empty
    /// grid yields one empty cell.
    pub fn cells(&self) -> Vec<Vec<(String, String)>> {
        self.axes
            .iter()
            .fold(vec![Vec::new()], |cells, (key, values)| {
                cells
                    .iter()
                    .flat_map(|cell| {
                        values.iter().map(move |v| {
                            let mut c = cell.clone();
                            c.push((key.clone(), v.clone()));
                            c
                        })
                    })
                    .collect()
            })
    }
}

/// Seed of replicate `replicate` of cell `cell`: the master seed xor the cell
/// index, with the replicate number in the upper half.
pub fn cell_seed(master: u64, cell: usize, replicate: usize) -> u64 {
    master ^ cell as u64 ^ ((replicate as u64) << 32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub index: usize,
    pub overrides: Vec<(String, String)>,
    pub dirs: Vec<PathBuf>,
    pub metrics: Vec<MetricsReport>,
}

const SUMMARY_METRICS: [&str; 6] = [
    "balanced_acc",
    "overall_acc",
    "head_acc",
    "medium_acc",
    "tail_acc",
    "all_avg",
];

fn metric_values(m: &MetricsReport) -> [Option<f64>; 6] {
    [
        Some(m.balanced_acc),
        Some(m.overall_acc),
        m.group_acc.head,
        m.group_acc.medium,
        m.group_acc.tail,
        Some(m.all_avg),
    ]
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some((mean, std))
}

pub fn summary_csv(grid: &Grid, cells: &[SweepCell]) -> String {
    let mut out = String::from("cell");
    for (k, _) in &grid.axes {
        let _ = write!(out, ",{k}");
    }
    out.push_str(",replicates");
    for m in SUMMARY_METRICS {
        let _ = write!(out, ",{m}_mean,{m}_std");
    }
    out.push('\n');
    for cell in cells {
        let _ = write!(out, "{}", cell.index);
        for (_, v) in &cell.overrides {
            let _ = write!(out, ",{v}");
        }
        let _ = write!(out, ",{}", cell.metrics.len());
        for i in 0..SUMMARY_METRICS.len() {
            let values: Vec<f64> = cell
                .metrics
                .iter()
                .filter_map(|m| metric_values(m)[i])
                .collect();
            match mean_std(&values) {
                Some((mean, std)) => {
                    let _ = write!(out, ",{},{}", fmt_f64(mean), fmt_f64(std));
                }
                None => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    out
}

/// Runs every grid cell `replicates` times, each in its own directory under
/// `config.output_dir`, and writes `summary.csv` there.
pub fn sweep(
    config: &ExperimentConfig,
    grid: &Grid,
    replicates: usize,
    threads: Option<usize>,
) -> Result<Vec<SweepCell>> {
    if replicates == 0 {
        return Err(Error::Config("a sweep needs at least one replicate".into()));
    }
    let root = config.output_dir.clone();
    let cells = grid.cells();
    // validate every cell before running any
    let mut configs = Vec::with_capacity(cells.len());
    let mut errors = Vec::new();
    for (i, overrides) in cells.iter().enumerate() {
        let mut c = config.clone();
        match c.apply_overrides(overrides).and_then(|_| c.validate()) {
            Ok(()) => configs.push(c),
            Err(Error::InvalidConfig(list)) => {
                errors.extend(list.into_iter().map(|e| format!("cell {i}: {e}")))
            }
            Err(e) => return Err(e),
        }
    }
    if !errors.is_empty() {
        return Err(Error::InvalidConfig(errors));
    }

    let mut results = Vec::with_capacity(cells.len());
    for (i, (overrides, base)) in cells.into_iter().zip(configs).enumerate() {
        let mut cell = SweepCell {
            index: i,
            overrides,
            dirs: Vec::new(),
            metrics: Vec::new(),
        };
        for rep in 0..replicates {
            let mut c = base.clone();
            c.seed = cell_seed(config.seed, i, rep);
            c.output_dir = root.join(format!("cell_{i:03}")).join(format!("rep_{rep}"));
            let outcome = run(&c, threads)?;
            cell.metrics.push(outcome.final_metrics.metrics);
            cell.dirs.push(c.output_dir);
        }
        results.push(cell);
    }
    fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    write_file(&root.join("summary.csv"), summary_csv(grid, &results))?;
    Ok(results)
}
