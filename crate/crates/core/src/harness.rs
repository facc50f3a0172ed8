//! Experiment orchestration: seeded instance sweeps, aggregate reports and the
//! collect/train/evaluate pipeline.

use std::fmt;
use std::fs;
use std::path::Path as FsPath;
use std::str::FromStr;
use std::time::Duration;

use rayon::prelude::*;
use thiserror::Error;

use crate::cbs::{solve, Limits, RunRecord, SearchConfig};
use crate::dataset::{collect, sample_nodes, CollectConfig, CollectReport, Dataset};
use crate::feature::FeatureMask;
use crate::gridmap::{GridMap, Instance, MapError};
use crate::oracle::{ConflictSelector, SelectorKind};
use crate::ranker::{evaluate, train, Evaluation, RankerError, RankingModel, TrainReport, DEFAULT_EPOCHS};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Ranker(#[from] RankerError),
    #[error("cannot access {path}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid selector `{0}`; expected random, o0, o1, o2 or model:PATH")]
    Selector(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no instances")]
    Empty,
}

/// SplitMix64 of `base` advanced by `stream`; used to derive independent
/// seeds for instances, selectors and phases.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mean runtime with every unsolved run counted as ten times the limit.
pub fn par10(runs: &[(bool, f64)], limit: f64) -> Result<f64, HarnessError> {
    if runs.is_empty() {
        return Err(HarnessError::Empty);
    }
    if limit <= 0.0 {
        return Err(HarnessError::Config(format!("time limit must be positive, got {limit}")));
    }
    let total: f64 = runs.iter().map(|&(solved, t)| if solved { t } else { 10.0 * limit }).sum();
    Ok(total / runs.len() as f64)
}

pub fn read_file(path: &FsPath) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.display().to_string(), source })
}

pub fn write_file(path: &FsPath, contents: &str) -> Result<(), HarnessError> {
    fs::write(path, contents).map_err(|source| HarnessError::Io { path: path.display().to_string(), source })
}

/// Parses a map file; its name is the file stem.
pub fn load_map(path: &FsPath) -> Result<(String, GridMap), HarnessError> {
    let map = GridMap::parse(&read_file(path)?)?;
    let name = path.file_stem().map_or_else(|| "map".to_string(), |s| s.to_string_lossy().into_owned());
    Ok((name, map))
}

/// Selector as written on the command line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SelectorSpec {
    Random,
    O0,
    O1,
    O2,
    Model(String),
}

impl FromStr for SelectorSpec {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(Self::Random),
            "o0" | "O0" => Ok(Self::O0),
            "o1" | "O1" => Ok(Self::O1),
            "o2" | "O2" => Ok(Self::O2),
            _ => match s.strip_prefix("model:") {
                Some(p) if !p.is_empty() => Ok(Self::Model(p.to_string())),
                _ => Err(HarnessError::Selector(s.to_string())),
            },
        }
    }
}

impl fmt::Display for SelectorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Random => f.write_str("random"),
            Self::O0 => f.write_str("o0"),
            Self::O1 => f.write_str("o1"),
            Self::O2 => f.write_str("o2"),
            Self::Model(p) => write!(f, "model:{p}"),
        }
    }
}

/// A selector ready to instantiate per run.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedSelector {
    pub name: String,
    pub kind: SelectorKind,
    pub model: Option<RankingModel>,
}

impl NamedSelector {
    pub fn builtin(kind: SelectorKind) -> Self {
        assert!(kind != SelectorKind::Learned);
        Self { name: kind.to_string(), kind, model: None }
    }

    pub fn learned(name: impl Into<String>, model: RankingModel) -> Self {
        Self { name: name.into(), kind: SelectorKind::Learned, model: Some(model) }
    }

    /// Resolves a spec, loading the model file if there is one.
    pub fn from_spec(spec: &SelectorSpec) -> Result<Self, HarnessError> {
        Ok(match spec {
            SelectorSpec::Random => Self::builtin(SelectorKind::Random),
            SelectorSpec::O0 => Self::builtin(SelectorKind::O0),
            SelectorSpec::O1 => Self::builtin(SelectorKind::O1),
            SelectorSpec::O2 => Self::builtin(SelectorKind::O2),
            SelectorSpec::Model(p) => {
                let model = RankingModel::parse(&read_file(FsPath::new(p))?)?;
                Self::learned(spec.to_string(), model)
            }
        })
    }

    pub fn instantiate(&self, seed: u64) -> ConflictSelector {
        match self.kind {
            SelectorKind::Random => ConflictSelector::random(seed),
            SelectorKind::O0 => ConflictSelector::o0(seed),
            SelectorKind::O1 => ConflictSelector::o1(seed),
            SelectorKind::O2 => ConflictSelector::o2(seed),
            SelectorKind::Learned => ConflictSelector::learned(self.model.clone().expect("model loaded"), seed),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub map_name: String,
    pub map: GridMap,
    pub agents: Vec<usize>,
    pub instances: usize,
    pub time_limit: Option<f64>,
    /// Cap on expanded CT nodes per run.
    pub node_limit: Option<usize>,
    pub selectors: Vec<NamedSelector>,
    pub seed: u64,
    pub search: SearchConfig,
}

impl ExperimentConfig {
    fn check(&self) -> Result<(), HarnessError> {
        if self.agents.is_empty() || self.agents.contains(&0) {
            return Err(HarnessError::Config("agent counts must be positive".into()));
        }
        if self.instances == 0 {
            return Err(HarnessError::Config("instance count must be positive".into()));
        }
        if self.selectors.is_empty() {
            return Err(HarnessError::Config("no selectors".into()));
        }
        if self.time_limit.is_some_and(|t| !(t > 0.0)) || self.node_limit == Some(0) {
            return Err(HarnessError::Config("limits must be positive".into()));
        }
        Ok(())
    }

    /// Seed of instance `j` at agent count `k`.
    pub fn instance_seed(&self, k: usize, j: usize) -> u64 {
        derive_seed(derive_seed(self.seed, k as u64), j as u64)
    }

    /// The instances of agent count `k`, in order.
    pub fn instances_for(&self, k: usize) -> Result<Vec<Instance>, MapError> {
        (0..self.instances).map(|j| self.map.generate_instance(k, self.instance_seed(k, j))).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub map: String,
    pub k: usize,
    pub instance_seed: u64,
    pub selector: String,
    pub record: RunRecord,
}

pub const RUN_CSV_HEADER: &str = "map,k,instance_seed,selector,solved,cost,runtime_s,oracle_time_s,ct_expanded,ct_generated";

impl fmt::Display for RunRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{},{}", self.map, self.k, self.instance_seed, self.selector, self.record)
    }
}

impl RunRow {
    /// The row without its wall-clock columns.
    pub fn deterministic_part(&self) -> String {
        let r = &self.record;
        let cost = r.cost.map(|c| c.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.map, self.k, self.instance_seed, self.selector, r.solved, cost, r.ct_expanded, r.ct_generated
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub map: String,
    pub k: usize,
    pub selector: String,
    pub success_pct: f64,
    /// Means over the instances solved by every selector at this `k`.
    pub mean_runtime_s: Option<f64>,
    pub mean_ct_expanded: Option<f64>,
    pub par10_s: Option<f64>,
    pub commonly_solved: usize,
}

pub const REPORT_CSV_HEADER: &str = "map,k,selector,success_pct,mean_runtime_s,mean_ct_expanded,par10_s,commonly_solved";

impl fmt::Display for ReportRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_default();
        write!(
            f,
            "{},{},{},{:.2},{},{},{},{}",
            self.map,
            self.k,
            self.selector,
            self.success_pct,
            opt(self.mean_runtime_s),
            opt(self.mean_ct_expanded),
            opt(self.par10_s),
            self.commonly_solved
        )
    }
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub runs: Vec<RunRow>,
    pub report: Vec<ReportRow>,
}

impl Experiment {
    pub fn runs_csv(&self) -> String {
        let mut out = format!("{RUN_CSV_HEADER}\n");
        for r in &self.runs {
            out.push_str(&format!("{r}\n"));
        }
        out
    }

    pub fn report_csv(&self) -> String {
        let mut out = format!("{REPORT_CSV_HEADER}\n");
        for r in &self.report {
            out.push_str(&format!("{r}\n"));
        }
        out
    }

    /// CT-expanded counts of one selector at one agent count, in instance order.
    pub fn ct_expanded(&self, k: usize, selector: &str) -> Vec<usize> {
        self.runs.iter().filter(|r| r.k == k && r.selector == selector).map(|r| r.record.ct_expanded).collect()
    }
}

/// Aggregates per-run rows of one agent count. `runs[s][i]` is selector `s`
/// on instance `i`.
pub fn aggregate(map: &str, k: usize, names: &[String], runs: &[Vec<RunRecord>], time_limit: Option<f64>) -> Vec<ReportRow> {
    let n = runs.first().map_or(0, Vec::len);
    let common: Vec<usize> = (0..n).filter(|&i| runs.iter().all(|r| r[i].solved)).collect();
    names
        .iter()
        .zip(runs)
        .map(|(name, recs)| {
            let solved = recs.iter().filter(|r| r.solved).count();
            let mean = |f: &dyn Fn(&RunRecord) -> f64| {
                (!common.is_empty()).then(|| common.iter().map(|&i| f(&recs[i])).sum::<f64>() / common.len() as f64)
            };
            let pairs: Vec<(bool, f64)> = recs.iter().map(|r| (r.solved, r.runtime_s)).collect();
            ReportRow {
                map: map.to_string(),
                k,
                selector: name.clone(),
                success_pct: if n == 0 { 0.0 } else { 100.0 * solved as f64 / n as f64 },
                mean_runtime_s: mean(&|r| r.runtime_s),
                mean_ct_expanded: mean(&|r| r.ct_expanded as f64),
                par10_s: time_limit.and_then(|l| par10(&pairs, l).ok()),
                commonly_solved: common.len(),
            }
        })
        .collect()
}

/// Solves every generated instance with every selector, in parallel over
/// runs; rows come back in (k, instance, selector) order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Experiment, HarnessError> {
    config.check()?;
    let limits = Limits { time: config.time_limit.map(Duration::from_secs_f64), nodes: config.node_limit };
    let mut runs = Vec::new();
    let mut report = Vec::new();
    let names: Vec<String> = config.selectors.iter().map(|s| s.name.clone()).collect();
    for &k in &config.agents {
        let instances = config.instances_for(k)?;
        let jobs: Vec<(usize, usize)> =
            (0..instances.len()).flat_map(|i| (0..config.selectors.len()).map(move |s| (i, s))).collect();
        let records: Vec<RunRecord> = jobs
            .par_iter()
            .map(|&(i, s)| {
                let inst = &instances[i];
                let mut selector = config.selectors[s].instantiate(derive_seed(inst.seed, 0x5E1));
                solve(&config.map, inst, &mut selector, limits, config.search).map(|o| o.record)
            })
            .collect::<Result<_, MapError>>()?;
        let mut per_selector = vec![Vec::with_capacity(instances.len()); config.selectors.len()];
        for (&(i, s), rec) in jobs.iter().zip(records) {
            runs.push(RunRow {
                map: config.map_name.clone(),
                k,
                instance_seed: instances[i].seed,
                selector: names[s].clone(),
                record: rec.clone(),
            });
            per_selector[s].push(rec);
        }
        report.extend(aggregate(&config.map_name, k, &names, &per_selector, config.time_limit));
    }
    Ok(Experiment { runs, report })
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Maps whose collected nodes form the training set; the test map itself
    /// for same-map training, other maps otherwise.
    pub train_maps: Vec<(String, GridMap)>,
    pub test_map: (String, GridMap),
    pub k_collect: usize,
    pub train_instances: usize,
    pub test_instances: usize,
    /// Total training nodes, split evenly across the training maps.
    pub samples: usize,
    pub c: f64,
    pub mask: FeatureMask,
    pub epochs: usize,
    pub collect_limits: Limits,
    pub search: SearchConfig,
    pub seed: u64,
    /// Optional final sweep of random and learned selection on the test map.
    pub eval_agents: Vec<usize>,
    pub eval_instances: usize,
    pub eval_node_limit: Option<usize>,
    pub eval_time_limit: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub model: RankingModel,
    pub training: TrainReport,
    pub train_collect: Vec<CollectReport>,
    pub test_collect: CollectReport,
    pub train_nodes: usize,
    pub evaluation: Evaluation,
    pub experiment: Option<Experiment>,
}

impl fmt::Display for PipelineReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let e = &self.evaluation;
        writeln!(f, "train_nodes={} test_nodes={}", self.train_nodes, e.nodes)?;
        writeln!(f, "swapped_pairs_pct={:.3}", e.swapped_pairs_pct)?;
        writeln!(f, "top_pick_pct={:.3}", e.top_pick_pct)?;
        write!(f, "random_pick_pct={:.3}", e.random_pick_pct)
    }
}

fn seeded_instances(map: &GridMap, k: usize, n: usize, seed: u64) -> Result<Vec<Instance>, MapError> {
    (0..n).map(|j| map.generate_instance(k, derive_seed(seed, j as u64))).collect()
}

/// Collects oracle data, trains on a node sample and evaluates on nodes
/// collected from held-out instances of the test map.
pub fn pipeline(config: &PipelineConfig) -> Result<PipelineReport, HarnessError> {
    if config.train_maps.is_empty() || config.samples == 0 {
        return Err(HarnessError::Config("need training maps and a positive sample count".into()));
    }
    let per_map = (config.samples / config.train_maps.len()).max(1);
    let collect_cfg = |seed| CollectConfig {
        oracle: SelectorKind::O1,
        limits: config.collect_limits,
        search: config.search,
        seed,
    };
    let mut parts = Vec::new();
    let mut train_collect = Vec::new();
    for (m, (name, map)) in config.train_maps.iter().enumerate() {
        let seed = derive_seed(config.seed, 100 + m as u64);
        let instances = seeded_instances(map, config.k_collect, config.train_instances, seed)?;
        let (ds, report) = collect(map, name, &instances, &collect_cfg(seed))?;
        train_collect.push(report);
        parts.push(sample_nodes(&ds, per_map, derive_seed(seed, 1)));
    }
    let train_set = Dataset::concat(parts);
    let training = train(&train_set, config.c, &config.mask, derive_seed(config.seed, 2), config.epochs)?;
    let model = training.model.clone();

    let (test_name, test_map) = &config.test_map;
    let test_seed = derive_seed(config.seed, 3);
    let instances = seeded_instances(test_map, config.k_collect, config.test_instances, test_seed)?;
    let (test_set, test_collect) = collect(test_map, test_name, &instances, &collect_cfg(test_seed))?;
    let evaluation = evaluate(&model, &test_set);

    let experiment = if config.eval_agents.is_empty() {
        None
    } else {
        let cfg = ExperimentConfig {
            map_name: test_name.clone(),
            map: test_map.clone(),
            agents: config.eval_agents.clone(),
            instances: config.eval_instances,
            time_limit: config.eval_time_limit,
            node_limit: config.eval_node_limit,
            selectors: vec![NamedSelector::builtin(SelectorKind::Random), NamedSelector::learned("learned", model.clone())],
            seed: derive_seed(config.seed, 4),
            search: config.search,
        };
        Some(run_experiment(&cfg)?)
    };
    Ok(PipelineReport {
        model,
        training,
        train_collect,
        test_collect,
        train_nodes: train_set.len(),
        evaluation,
        experiment,
    })
}

impl PipelineConfig {
    /// Defaults for the given maps; counts are desk-scale.
    pub fn new(train_maps: Vec<(String, GridMap)>, test_map: (String, GridMap), k_collect: usize) -> Self {
        Self {
            train_maps,
            test_map,
            k_collect,
            train_instances: 30,
            test_instances: 10,
            samples: 5000,
            c: crate::ranker::DEFAULT_C,
            mask: FeatureMask::none(),
            epochs: DEFAULT_EPOCHS,
            collect_limits: Limits { time: None, nodes: Some(2000) },
            search: SearchConfig::default(),
            seed: 0,
            eval_agents: Vec::new(),
            eval_instances: 25,
            eval_node_limit: Some(2000),
            eval_time_limit: None,
        }
    }
}
