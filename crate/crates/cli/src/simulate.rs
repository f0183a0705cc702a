//! `scs simulate`: Monte Carlo studies from a preset or a config file.

use std::path::PathBuf;

use clap::Args;
use scs_core::simulation::{self, Parallelism, SimulationConfig, SimulationResult, PRESETS};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::io::write_json;
use crate::manifest::RunManifest;

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    /// One of table1, table2, table3, table4, table6, table7.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    pub preset: Option<String>,
    /// JSON file holding one configuration or a list of them.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the replicate count of every setting.
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Semicolon-separated setting indices (0-based) or labels to keep.
    #[arg(long, value_delimiter = ';')]
    pub settings: Vec<String>,
    /// Worker threads; capped by SCS_THREADS.
    #[arg(long)]
    pub workers: Option<usize>,
    /// CSV table path; standard output when absent.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// JSON report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub manifest: RunManifest,
    pub results: Vec<SimulationResult>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ConfigFile {
    One(SimulationConfig),
    Many(Vec<SimulationConfig>),
}

/// Worker count after applying the SCS_THREADS cap.
pub fn worker_count(requested: Option<usize>, cap: Option<&str>) -> CliResult<usize> {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut n = requested.unwrap_or(available);
    if let Some(c) = cap {
        let c: usize = c
            .trim()
            .parse()
            .map_err(|_| CliError::input(format!("SCS_THREADS must be a positive integer, got '{c}'")))?;
        n = n.min(c.max(1));
    }
    Ok(n.max(1))
}

fn keep(settings: &[String], idx: usize, label: &str) -> bool {
    settings.is_empty() || settings.iter().any(|s| s.trim() == idx.to_string() || s.trim() == label)
}

pub fn configs(args: &SimulateArgs) -> CliResult<Vec<SimulationConfig>> {
    let mut all = match (&args.preset, &args.config) {
        (Some(name), _) => simulation::preset(name, args.seed).ok_or_else(|| {
            CliError::input(format!("unknown preset '{name}' (expected one of {})", PRESETS.join(", ")))
        })?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)?;
            match serde_json::from_str::<ConfigFile>(&text)? {
                ConfigFile::One(c) => vec![c],
                ConfigFile::Many(v) => v,
            }
        }
        (None, None) => return Err(CliError::input("either --preset or --config is required")),
    };
    if let Some(r) = args.reps {
        for c in &mut all {
            c.replications = r;
        }
    }
    let picked: Vec<SimulationConfig> = all
        .into_iter()
        .enumerate()
        .filter(|(k, c)| keep(&args.settings, *k, &c.dgp.label()))
        .map(|(_, c)| c)
        .collect();
    if picked.is_empty() {
        return Err(CliError::input("no setting matches --settings"));
    }
    for c in &picked {
        c.validate()?;
    }
    Ok(picked)
}

pub fn run_configs(configs: &[SimulationConfig], workers: usize) -> CliResult<Vec<SimulationResult>> {
    let par = Parallelism::workers(workers);
    configs
        .iter()
        .map(|c| simulation::run(c, par).map_err(CliError::from))
        .collect()
}

pub fn run(args: &SimulateArgs) -> CliResult<()> {
    let mut manifest = RunManifest::start("simulate", serde_json::to_value(args)?, Some(args.seed));
    if let Some(p) = &args.config {
        manifest.add_input(p)?;
    }
    let cfgs = configs(args)?;
    let workers = worker_count(args.workers, std::env::var("SCS_THREADS").ok().as_deref())?;
    log::info!("running {} setting(s) on {workers} worker(s)", cfgs.len());
    let results = run_configs(&cfgs, workers)?;
    match &args.csv {
        Some(p) => simulation::write_csv(&results, std::fs::File::create(p)?)?,
        None => simulation::write_csv(&results, std::io::stdout().lock())?,
    }
    if let Some(out) = &args.out {
        let report = SimulateReport {
            manifest: manifest.finish(),
            results,
        };
        write_json(&report, Some(out))?;
    }
    Ok(())
}
