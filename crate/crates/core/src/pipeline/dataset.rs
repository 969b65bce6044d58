use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::plan::ExperimentPlan;
use crate::channel::{SymbolSequence, VelocityMode};
use crate::error::{Error, Result};
use crate::mle::KnownChannel;
use crate::nn::{make_windows, WindowBatch, WindowConfig};
use crate::sim::{derive_seed, run_batch, SimConfig};
use crate::topology::BranchTopology;
use crate::trace::{CountTrace, TraceMeta};

const MANIFEST: &str = "manifest.json";
const SPLIT_FILE: &str = "split.csv";
const PLAN_FILE: &str = "plan.json";
const CONFIG_FILE: &str = "dataset.json";

/// Keeps split draws apart from simulation seeds.
const SPLIT_SALT: u64 = 0x5b1f_7a3c_e2d4_9e01;

/// One simulated iteration as recorded in a run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: usize,
    pub file: String,
    pub seed: u64,
    pub sequences: Vec<String>,
}

/// Everything needed to interpret the traces of one simulated batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub topology: BranchTopology,
    pub distances_m: Vec<f64>,
    pub n_tx: u64,
    pub t_s: f64,
    pub dt_sample: f64,
    pub horizon: f64,
    pub seed: u64,
    pub iterations: Vec<IterationRecord>,
}

impl RunManifest {
    /// Simulates `cfg.n_iterations` iterations at `distances` and writes
    /// `iter_NNNN.csv` files plus `manifest.json` into `dir`.
    pub fn write_run(
        dir: &Path,
        cfg: &SimConfig,
        distances: &[f64],
        seed: u64,
    ) -> Result<RunManifest> {
        let traces = run_batch(cfg, distances, seed)?;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut iterations = Vec::with_capacity(traces.len());
        for (i, trace) in traces.iter().enumerate() {
            let file = format!("iter_{i:04}.csv");
            trace.write_csv(&dir.join(&file), "count")?;
            iterations.push(IterationRecord {
                index: i,
                file,
                seed: trace.meta.seed.unwrap_or(seed),
                sequences: trace.meta.sequences.clone(),
            });
        }
        let manifest = RunManifest {
            topology: cfg.topology.with_distances(distances)?,
            distances_m: distances.to_vec(),
            n_tx: cfg.n_tx,
            t_s: cfg.t_s,
            dt_sample: cfg.dt_sample,
            horizon: cfg.horizon,
            seed,
            iterations,
        };
        manifest.save(&dir.join(MANIFEST))?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    /// The iteration whose trace file has the given file name.
    pub fn record_for_file(&self, file_name: &str) -> Result<&IterationRecord> {
        self.iterations
            .iter()
            .find(|r| r.file == file_name)
            .ok_or_else(|| Error::Config(format!("manifest has no iteration for {file_name}")))
    }

    pub fn record(&self, iteration: usize) -> Result<&IterationRecord> {
        self.iterations.get(iteration).ok_or(Error::Lookup {
            index: iteration,
            len: self.iterations.len(),
        })
    }

    pub fn sequences(&self, record: &IterationRecord) -> Result<Vec<SymbolSequence>> {
        record
            .sequences
            .iter()
            .map(|s| SymbolSequence::parse(s))
            .collect()
    }

    /// The side information a likelihood estimator gets for one iteration.
    pub fn known_channel(
        &self,
        record: &IterationRecord,
        velocity_mode: VelocityMode,
    ) -> Result<KnownChannel> {
        Ok(KnownChannel {
            topology: self.topology.clone(),
            sequences: self.sequences(record)?,
            n_tx: self.n_tx as f64,
            t_s: self.t_s,
            velocity_mode,
            dt_sample: Some(self.dt_sample),
        })
    }

    /// Reads a trace of this run and attaches its provenance.
    pub fn read_trace(&self, dir: &Path, record: &IterationRecord) -> Result<CountTrace> {
        let mut trace = CountTrace::read_csv(&dir.join(&record.file))?;
        trace.meta = TraceMeta {
            distances_m: self.distances_m.clone(),
            seed: Some(record.seed),
            sequences: record.sequences.clone(),
            n_tx: self.n_tx,
            released: 0,
        };
        Ok(trace)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    #[serde(rename = "val")]
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Argument(format!("unknown split {other:?}"))),
        }
    }
}

/// 70/20/10 assignment of `iterations` runs of one configuration. Validation
/// and test get at least one run each once there are three runs.
pub fn assign_splits(iterations: usize, seed: u64) -> Vec<Split> {
    let mut n_val = (0.2 * iterations as f64).round() as usize;
    let mut n_test = (0.1 * iterations as f64).round() as usize;
    if iterations >= 3 {
        n_val = n_val.max(1);
        n_test = n_test.max(1);
    }
    n_val = n_val.min(iterations);
    n_test = n_test.min(iterations - n_val);
    let n_train = iterations - n_val - n_test;
    let mut order: Vec<usize> = (0..iterations).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut splits = vec![Split::Train; iterations];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Validation
        } else {
            Split::Test
        };
    }
    splits
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub config_id: usize,
    pub iteration: usize,
    pub split: Split,
}

/// Simulation settings shared by every configuration of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub sim: SimConfig,
    pub configs: Vec<String>,
}

/// A dataset directory: the plan, one run per distance configuration and
/// the split file.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub plan: ExperimentPlan,
    pub config: DatasetConfig,
    pub runs: Vec<RunManifest>,
    pub split: Vec<SplitEntry>,
}

fn config_dir_name(config: usize) -> String {
    format!("config_{config:03}")
}

/// Simulates every configuration of `plan` with the protocol in `base`
/// (its topology supplies flows and tube geometry) and writes the dataset
/// into `dir`.
pub fn build_dataset(plan: &ExperimentPlan, base: &SimConfig, dir: &Path) -> Result<Dataset> {
    plan.validate()?;
    if base.topology.branch_count() != plan.sources {
        return Err(Error::Config(format!(
            "plan has {} sources but the topology has {} branches",
            plan.sources,
            base.topology.branch_count()
        )));
    }
    let sim = SimConfig {
        n_iterations: plan.iterations,
        seed: plan.seed,
        ..base.clone()
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut runs = Vec::with_capacity(plan.distance_configs_cm.len());
    let mut split = Vec::new();
    let mut names = Vec::new();
    for c in 0..plan.distance_configs_cm.len() {
        let name = config_dir_name(c);
        let run = RunManifest::write_run(
            &dir.join(&name),
            &sim,
            &plan.distances_m(c),
            derive_seed(plan.seed, c as u64),
        )?;
        for (iteration, s) in assign_splits(
            plan.iterations,
            derive_seed(plan.seed ^ SPLIT_SALT, c as u64),
        )
        .into_iter()
        .enumerate()
        {
            split.push(SplitEntry {
                config_id: c,
                iteration,
                split: s,
            });
        }
        runs.push(run);
        names.push(name);
    }

    plan.save(&dir.join(PLAN_FILE))?;
    let config = DatasetConfig {
        sim,
        configs: names,
    };
    let path = dir.join(CONFIG_FILE);
    let text = serde_json::to_string_pretty(&config).map_err(|e| Error::json(&path, e))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    write_split(&dir.join(SPLIT_FILE), &split)?;
    Ok(Dataset {
        root: dir.to_path_buf(),
        plan: plan.clone(),
        config,
        runs,
        split,
    })
}

fn write_split(path: &Path, entries: &[SplitEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["config_id", "iteration", "split"])
        .map_err(|e| Error::csv(path, e))?;
    for e in entries {
        w.write_record([
            e.config_id.to_string(),
            e.iteration.to_string(),
            e.split.to_string(),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_split(path: &Path) -> Result<Vec<SplitEntry>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut out = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| Error::csv(path, e))?;
        let bad = || {
            Error::Config(format!(
                "{}: malformed split row {record:?}",
                path.display()
            ))
        };
        if record.len() != 3 {
            return Err(bad());
        }
        out.push(SplitEntry {
            config_id: record[0].parse().map_err(|_| bad())?,
            iteration: record[1].parse().map_err(|_| bad())?,
            split: record[2].parse()?,
        });
    }
    Ok(out)
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::Config(format!(
                "{} is not a dataset directory",
                dir.display()
            )));
        }
        let plan = ExperimentPlan::load(&dir.join(PLAN_FILE))?;
        let path = dir.join(CONFIG_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let config: DatasetConfig =
            serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        if config.configs.len() != plan.distance_configs_cm.len() {
            return Err(Error::Config(format!(
                "{}: configuration count disagrees with the plan",
                path.display()
            )));
        }
        let runs = config
            .configs
            .iter()
            .map(|name| RunManifest::load(&dir.join(name).join(MANIFEST)))
            .collect::<Result<Vec<_>>>()?;
        let split = read_split(&dir.join(SPLIT_FILE))?;
        for e in &split {
            let ok = runs
                .get(e.config_id)
                .is_some_and(|r| e.iteration < r.iterations.len());
            if !ok {
                return Err(Error::Config(format!(
                    "split entry for configuration {} iteration {} has no trace",
                    e.config_id, e.iteration
                )));
            }
        }
        Ok(Dataset {
            root: dir.to_path_buf(),
            plan,
            config,
            runs,
            split,
        })
    }

    pub fn branch_count(&self) -> usize {
        self.plan.sources
    }

    /// `(config_id, iteration)` pairs of a split, in file order.
    pub fn members(&self, split: Split) -> Vec<(usize, usize)> {
        self.split
            .iter()
            .filter(|e| e.split == split)
            .map(|e| (e.config_id, e.iteration))
            .collect()
    }

    pub fn run_dir(&self, config: usize) -> PathBuf {
        self.root.join(&self.config.configs[config])
    }

    pub fn load_trace(&self, config: usize, iteration: usize) -> Result<CountTrace> {
        let run = self.runs.get(config).ok_or(Error::Lookup {
            index: config,
            len: self.runs.len(),
        })?;
        run.read_trace(&self.run_dir(config), run.record(iteration)?)
    }

    /// Unscaled windows of every trace in a split, targets sorted ascending.
    pub fn windows(&self, split: Split, cfg: &WindowConfig) -> Result<WindowBatch> {
        let members = self.members(split);
        if members.is_empty() {
            return Err(Error::Argument(format!("{split} split is empty")));
        }
        let batches = members
            .iter()
            .map(|&(c, i)| {
                make_windows(&self.load_trace(c, i)?, cfg, 1.0, &self.runs[c].distances_m)
            })
            .collect::<Result<Vec<_>>>()?;
        WindowBatch::concat(&batches)
    }
}
