use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use mlcbs::cbs::{format_solution, solve, Limits, SearchConfig};
use mlcbs::dataset::{collect, read_dataset, sample_nodes, write_dataset, CollectConfig, Dataset};
use mlcbs::feature::FeatureMask;
use mlcbs::gridmap::Instance;
use mlcbs::harness::{
    derive_seed, load_map, pipeline, read_file, run_experiment, write_file, ExperimentConfig, NamedSelector,
    PipelineConfig, SelectorSpec,
};
use mlcbs::oracle::SelectorKind;
use mlcbs::ranker::{evaluate, train_with, RankingModel, DEFAULT_C, DEFAULT_EPOCHS};

#[derive(Parser)]
#[command(
    name = "mlcbs",
    version,
    about = "Optimal MAPF with CBS and learned conflict selection",
    after_help = "Any subcommand also accepts `--config FILE`: one `flag value` (or bare `flag`) per line, \
                  `#` comments; flags also given on the command line take precedence."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct SolveLimits {
    /// Per-run wall-clock limit in seconds.
    #[arg(long = "time-limit")]
    time_limit: Option<f64>,
    /// Per-run cap on expanded CT nodes.
    #[arg(long = "node-limit")]
    node_limit: Option<usize>,
}

impl SolveLimits {
    fn limits(&self) -> Limits {
        Limits { time: self.time_limit.map(Duration::from_secs_f64), nodes: self.node_limit }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve one instance file and print the paths.
    Solve {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value = "o0")]
        selector: String,
        #[command(flatten)]
        limits: SolveLimits,
        #[command(flatten)]
        common: Common,
    },
    /// Generate seeded instance files.
    Gen {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        agents: usize,
        #[arg(long, default_value_t = 1)]
        instances: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Run the oracle on generated instances and write a dataset.
    Collect {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        agents: usize,
        #[arg(long, default_value_t = 30)]
        instances: usize,
        #[arg(long, default_value = "o1")]
        selector: String,
        #[command(flatten)]
        limits: SolveLimits,
        #[command(flatten)]
        common: Common,
    },
    /// Reservoir-sample nodes from one or more datasets.
    Sample {
        #[arg(required = true)]
        datasets: Vec<PathBuf>,
        /// Nodes drawn from each input dataset.
        #[arg(long)]
        samples: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Train a ranking model.
    Train {
        dataset: PathBuf,
        #[arg(long = "C", default_value_t = DEFAULT_C)]
        c: f64,
        #[arg(long = "feature-mask", default_value = "none")]
        feature_mask: String,
        #[arg(long, default_value_t = DEFAULT_EPOCHS)]
        epochs: usize,
        /// `dcd` (dual coordinate descent) or `sgd` (averaged subgradient).
        #[arg(long, default_value = "dcd")]
        optimizer: String,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a model on a dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        dataset: PathBuf,
        /// Also print the weights by decreasing magnitude.
        #[arg(long)]
        importance: bool,
    },
    /// Sweep selectors over seeded instances and write CSV reports.
    Bench {
        #[arg(long)]
        map: PathBuf,
        /// Comma-separated agent counts.
        #[arg(long, value_delimiter = ',')]
        agents: Vec<usize>,
        #[arg(long, default_value_t = 25)]
        instances: usize,
        /// Comma-separated selectors.
        #[arg(long, value_delimiter = ',', default_value = "random,o0,o1,o2")]
        selector: Vec<String>,
        #[command(flatten)]
        limits: SolveLimits,
        #[command(flatten)]
        common: Common,
    },
    /// Collect, sample, train and evaluate in one go.
    Pipeline {
        /// Test map; also the training map unless --train-map is given.
        #[arg(long)]
        map: PathBuf,
        /// Training maps for the other-maps setting (repeatable).
        #[arg(long = "train-map")]
        train_maps: Vec<PathBuf>,
        #[arg(long)]
        agents: usize,
        #[arg(long, default_value_t = 30)]
        instances: usize,
        #[arg(long = "test-instances", default_value_t = 10)]
        test_instances: usize,
        #[arg(long, default_value_t = 5000)]
        samples: usize,
        #[arg(long = "C", default_value_t = DEFAULT_C)]
        c: f64,
        #[arg(long = "feature-mask", default_value = "none")]
        feature_mask: String,
        /// Agent counts for a final random-vs-learned sweep.
        #[arg(long = "eval-agents", value_delimiter = ',')]
        eval_agents: Vec<usize>,
        #[command(flatten)]
        limits: SolveLimits,
        #[command(flatten)]
        common: Common,
    },
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => Ok(write_file(p, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn oracle_kind(spec: &str) -> Result<SelectorKind> {
    Ok(match spec.parse::<SelectorSpec>()? {
        SelectorSpec::O0 => SelectorKind::O0,
        SelectorSpec::O1 => SelectorKind::O1,
        SelectorSpec::O2 => SelectorKind::O2,
        other => bail!("{other} cannot label data; use o0, o1 or o2"),
    })
}

fn read_dataset_file(path: &Path) -> Result<Dataset> {
    let outcome = read_dataset(&read_file(path)?).with_context(|| path.display().to_string())?;
    if !outcome.duplicates.is_empty() {
        eprintln!("warning: {}: {} duplicate rows", path.display(), outcome.duplicates.len());
    }
    Ok(outcome.dataset)
}

/// Splices `--config FILE` contents into the argument list, skipping flags
/// that are given explicitly.
fn expand_config(mut args: Vec<String>) -> Result<Vec<String>> {
    let Some(pos) = args.iter().position(|a| a == "--config") else {
        return Ok(args);
    };
    let Some(path) = args.get(pos + 1).cloned() else {
        bail!("--config needs a file");
    };
    args.drain(pos..pos + 2);
    let given: Vec<&str> = args.iter().filter_map(|a| a.strip_prefix("--")).map(|a| a.split('=').next().unwrap_or(a)).collect();
    let mut extra = Vec::new();
    for line in read_file(Path::new(&path))?.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        let mut parts = line.splitn(2, char::is_whitespace);
        if let Some(flag) = parts.next().map(|f| f.trim_start_matches('-')).filter(|f| !f.is_empty()) {
            if given.contains(&flag) {
                continue;
            }
            extra.push(format!("--{flag}"));
            extra.extend(parts.next().map(|v| v.trim().to_string()));
        }
    }
    let at = 2.min(args.len());
    args.splice(at..at, extra);
    Ok(args)
}

fn main() -> Result<()> {
    let args = expand_config(std::env::args().collect())?;
    match Cli::parse_from(args).command {
        Command::Solve { map, instance, selector, limits, common } => {
            let (_, grid) = load_map(&map)?;
            let inst = Instance::parse(&grid, &read_file(&instance)?)?;
            inst.validate(&grid)?;
            let named = NamedSelector::from_spec(&selector.parse()?)?;
            let mut sel = named.instantiate(common.seed);
            let out = solve(&grid, &inst, &mut sel, limits.limits(), SearchConfig::default())?;
            let mut text = format!("# solved,cost,runtime_s,oracle_time_s,ct_expanded,ct_generated\n# {}\n", out.record);
            if let Some(paths) = &out.solution {
                text.push_str(&format_solution(paths));
            }
            emit(common.out.as_deref(), &text)?;
        }
        Command::Gen { map, agents, instances, common } => {
            let (_, grid) = load_map(&map)?;
            let mut text = String::new();
            for j in 0..instances {
                let inst = grid.generate_instance(agents, derive_seed(common.seed, j as u64))?;
                match &common.out {
                    Some(dir) if instances > 1 => {
                        std::fs::create_dir_all(dir)?;
                        write_file(&dir.join(format!("instance_{j}.txt")), &inst.to_text(&grid))?;
                    }
                    _ => text.push_str(&inst.to_text(&grid)),
                }
            }
            if !text.is_empty() {
                emit(common.out.as_deref(), &text)?;
            }
        }
        Command::Collect { map, agents, instances, selector, limits, common } => {
            let (name, grid) = load_map(&map)?;
            let insts: Vec<Instance> = (0..instances)
                .map(|j| grid.generate_instance(agents, derive_seed(common.seed, j as u64)))
                .collect::<Result<_, _>>()?;
            let cfg = CollectConfig {
                oracle: oracle_kind(&selector)?,
                limits: limits.limits(),
                search: SearchConfig::default(),
                seed: common.seed,
            };
            let (ds, report) = collect(&grid, &name, &insts, &cfg)?;
            if let Some(w) = report.warning() {
                eprintln!("warning: {w}");
            }
            eprintln!("solved {}/{} instances, {} nodes", report.solved, report.attempted, report.nodes);
            emit(common.out.as_deref(), &write_dataset(&ds))?;
        }
        Command::Sample { datasets, samples, common } => {
            let mut parts = Vec::new();
            for (i, p) in datasets.iter().enumerate() {
                let ds = read_dataset_file(p)?;
                parts.push(sample_nodes(&ds, samples, derive_seed(common.seed, i as u64)));
            }
            emit(common.out.as_deref(), &write_dataset(&Dataset::concat(parts)))?;
        }
        Command::Train { dataset, c, feature_mask, epochs, optimizer, common } => {
            let ds = read_dataset_file(&dataset)?;
            let mask: FeatureMask = feature_mask.parse()?;
            let report = train_with(&ds, c, &mask, common.seed, epochs, optimizer.parse()?)?;
            if let Some(last) = report.epoch_objective.last() {
                eprintln!("final objective {last:.6}");
            }
            emit(common.out.as_deref(), &report.model.to_text())?;
        }
        Command::Eval { model, dataset, importance } => {
            let m = RankingModel::parse(&read_file(&model)?)?;
            let ds = read_dataset_file(&dataset)?;
            let e = evaluate(&m, &ds);
            println!("nodes={}", e.nodes);
            println!("swapped_pairs_pct={:.3}", e.swapped_pairs_pct);
            println!("top_pick_pct={:.3}", e.top_pick_pct);
            println!("random_pick_pct={:.3}", e.random_pick_pct);
            if importance {
                for (i, w) in m.feature_importance() {
                    println!("{i} {w}");
                }
            }
        }
        Command::Bench { map, agents, instances, selector, limits, common } => {
            let (name, grid) = load_map(&map)?;
            let selectors = selector
                .iter()
                .map(|s| Ok(NamedSelector::from_spec(&s.parse()?)?))
                .collect::<Result<Vec<_>>>()?;
            let cfg = ExperimentConfig {
                map_name: name,
                map: grid,
                agents,
                instances,
                time_limit: limits.time_limit,
                node_limit: limits.node_limit,
                selectors,
                seed: common.seed,
                search: SearchConfig::default(),
            };
            let exp = run_experiment(&cfg)?;
            match &common.out {
                Some(p) => {
                    write_file(p, &exp.runs_csv())?;
                    write_file(&p.with_extension("report.csv"), &exp.report_csv())?;
                }
                None => print!("{}\n{}", exp.runs_csv(), exp.report_csv()),
            }
        }
        Command::Pipeline {
            map,
            train_maps,
            agents,
            instances,
            test_instances,
            samples,
            c,
            feature_mask,
            eval_agents,
            limits,
            common,
        } => {
            let test = load_map(&map)?;
            let train_maps = if train_maps.is_empty() {
                vec![test.clone()]
            } else {
                train_maps.iter().map(|p| load_map(p)).collect::<Result<_, _>>()?
            };
            let mut cfg = PipelineConfig::new(train_maps, test, agents);
            cfg.train_instances = instances;
            cfg.test_instances = test_instances;
            cfg.samples = samples;
            cfg.c = c;
            cfg.mask = feature_mask.parse()?;
            cfg.seed = common.seed;
            cfg.eval_agents = eval_agents;
            cfg.eval_instances = instances;
            if limits.time_limit.is_some() || limits.node_limit.is_some() {
                cfg.collect_limits = limits.limits();
                cfg.eval_node_limit = limits.node_limit;
                cfg.eval_time_limit = limits.time_limit;
            }
            let report = pipeline(&cfg)?;
            println!("{report}");
            if let Some(exp) = &report.experiment {
                print!("{}", exp.report_csv());
            }
            emit(common.out.as_deref(), &report.model.to_text())?;
        }
    }
    Ok(())
}
