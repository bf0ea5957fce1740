//! Replicated parameter sweeps and their aggregation.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::experiment::generators::{gen_basis_linear, gen_example};
use crate::instance::Instance;
use crate::linbandit::{run_is_rage, RageConfig};
use crate::mab::{default_max_batches, run_is_se, SeConfig};
use crate::optdesign::DesignOptions;
use crate::rng::replication_seed;
use crate::trace::{trace_csv_header, RunTrace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "se")]
    Se,
    #[serde(rename = "is-se")]
    IsSe,
    #[serde(rename = "rage")]
    Rage,
    #[serde(rename = "is-rage")]
    IsRage,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Self::Se => "se",
            Self::IsSe => "is-se",
            Self::Rage => "rage",
            Self::IsRage => "is-rage",
        }
    }

    /// Classical variants ignore `beta_sample` and run with 0.
    pub fn uses_beta_sample(self) -> bool {
        matches!(self, Self::IsSe | Self::IsRage)
    }

    pub fn is_linear(self) -> bool {
        matches!(self, Self::Rage | Self::IsRage)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceSource {
    Generator {
        example: u8,
        n: usize,
        #[serde(default = "unit")]
        noise_sd: f64,
        #[serde(default)]
        linear: bool,
    },
    /// Instance JSON; relative paths resolve against the spec's directory.
    File(PathBuf),
}

fn unit() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid {
    pub beta_conf: Vec<f64>,
    #[serde(default = "zero_list")]
    pub beta_sample: Vec<f64>,
    pub beta_grid: Vec<f64>,
    pub delta: Vec<f64>,
}

fn zero_list() -> Vec<f64> {
    vec![0.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub instance: InstanceSource,
    #[serde(alias = "algorithm", deserialize_with = "one_or_many")]
    pub algorithms: Vec<Algorithm>,
    pub grid: ParamGrid,
    pub replications: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_max_batches")]
    pub max_batches: usize,
    #[serde(default)]
    pub solver: DesignOptions,
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Algorithm>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(Algorithm),
        Many(Vec<Algorithm>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(a) => vec![a],
        OneOrMany::Many(v) => v,
    })
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.replications == 0 {
            return bad("replications must be at least 1");
        }
        if self.algorithms.is_empty() {
            return bad("no algorithm given");
        }
        let g = &self.grid;
        if g.beta_conf.is_empty() || g.beta_grid.is_empty() || g.delta.is_empty() {
            return bad("every grid list must be nonempty");
        }
        if self.algorithms.iter().any(|a| a.uses_beta_sample()) && g.beta_sample.is_empty() {
            return bad("beta_sample list is empty");
        }
        Ok(())
    }

    /// Grid points in sweep order: algorithm, beta_conf, beta_sample,
    /// beta_grid, delta. Classical algorithms get a single `beta_sample = 0`.
    pub fn grid_points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &algo in &self.algorithms {
            let samples = if algo.uses_beta_sample() {
                self.grid.beta_sample.clone()
            } else {
                vec![0.0]
            };
            for &beta_conf in &self.grid.beta_conf {
                for &beta_sample in &samples {
                    for &beta_grid in &self.grid.beta_grid {
                        for &delta in &self.grid.delta {
                            out.push(GridPoint {
                                algo,
                                beta_conf,
                                beta_sample,
                                beta_grid,
                                delta,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn load_instance(&self, base_dir: Option<&Path>) -> Result<Instance> {
        match &self.instance {
            InstanceSource::Generator {
                example,
                n,
                noise_sd,
                linear,
            } => Ok(if *linear {
                Instance::Linear(gen_basis_linear(*example, *n, *noise_sd)?)
            } else {
                Instance::Mab(gen_example(*example, *n, *noise_sd)?)
            }),
            InstanceSource::File(path) => {
                let path = match base_dir {
                    Some(dir) if path.is_relative() => dir.join(path),
                    _ => path.clone(),
                };
                Instance::from_json(&fs::read_to_string(path)?)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub algo: Algorithm,
    pub beta_conf: f64,
    pub beta_sample: f64,
    pub beta_grid: f64,
    pub delta: f64,
}

impl GridPoint {
    pub fn config_id(&self) -> String {
        format!(
            "{}_c{}_s{}_g{}_d{}",
            self.algo.name(),
            self.beta_conf,
            self.beta_sample,
            self.beta_grid,
            self.delta
        )
    }
}

/// Runs one algorithm on one instance.
pub fn run_single(
    instance: &Instance,
    point: &GridPoint,
    max_batches: usize,
    solver: &DesignOptions,
    seed: u64,
) -> Result<RunTrace> {
    if point.algo.is_linear() {
        let Instance::Linear(lin) = instance else {
            return Err(Error::InvalidConfig(format!(
                "{} needs a linear instance",
                point.algo.name()
            )));
        };
        let config = RageConfig {
            beta_conf: point.beta_conf,
            beta_sample: point.beta_sample,
            beta_grid: point.beta_grid,
            delta: point.delta,
            max_batches,
            solver: solver.clone(),
        };
        run_is_rage(lin, &config, seed)
    } else {
        let config = SeConfig {
            beta_conf: point.beta_conf,
            beta_sample: point.beta_sample,
            beta_grid: point.beta_grid,
            delta: point.delta,
            max_batches,
        };
        match instance {
            Instance::Mab(m) => run_is_se(m, &config, seed),
            Instance::Empirical(e) => run_is_se(e, &config, seed),
            Instance::Linear(_) => Err(Error::InvalidConfig(format!(
                "{} needs a multi-armed instance",
                point.algo.name()
            ))),
        }
    }
}

/// Outcome of one replication, as written to `runs.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_id: String,
    pub algo: Algorithm,
    pub beta_conf: f64,
    pub beta_sample: f64,
    pub beta_grid: f64,
    pub delta: f64,
    pub n: usize,
    pub replication: usize,
    pub seed: u64,
    pub total_samples: Option<u64>,
    pub total_batches: Option<usize>,
    pub returned_arm: Option<usize>,
    pub success: Option<bool>,
    pub error: Option<String>,
    #[serde(skip)]
    pub trace: Option<RunTrace>,
}

impl RunRecord {
    pub fn run_id(&self) -> String {
        format!("{}_rep{}", self.config_id, self.replication)
    }
}

/// One aggregate CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub algo: Algorithm,
    pub beta_conf: f64,
    pub beta_sample: f64,
    pub beta_grid: f64,
    pub delta: f64,
    pub n: usize,
    pub mean_samples: f64,
    pub var_samples: f64,
    pub mean_batches: f64,
    pub var_batches: f64,
    pub success_rate: f64,
    pub replications: usize,
}

/// Aggregate row plus bookkeeping for `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateSummary {
    pub config_id: String,
    #[serde(flatten)]
    pub row: AggregateRow,
    /// Replications that ended in an error.
    pub failures: usize,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub runs: Vec<RunRecord>,
    pub aggregates: Vec<AggregateSummary>,
}

/// Mean and unbiased variance; variance is 0 for fewer than two values and
/// both are NaN for none.
pub fn mean_var(values: &[f64]) -> (f64, f64) {
    let k = values.len();
    if k == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    if k == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, ss / (k - 1) as f64)
}

/// Groups runs by `config_id` in first-seen order. Sample and batch
/// statistics use completed runs; the success rate counts every replication.
pub fn aggregate(runs: &[RunRecord]) -> Vec<AggregateSummary> {
    let mut order: Vec<&str> = Vec::new();
    for r in runs {
        if !order.contains(&r.config_id.as_str()) {
            order.push(&r.config_id);
        }
    }
    order
        .into_iter()
        .map(|id| {
            let group: Vec<&RunRecord> = runs.iter().filter(|r| r.config_id == id).collect();
            let first = group[0];
            let samples: Vec<f64> = group.iter().filter_map(|r| r.total_samples).map(|v| v as f64).collect();
            let batches: Vec<f64> = group.iter().filter_map(|r| r.total_batches).map(|v| v as f64).collect();
            let (mean_samples, var_samples) = mean_var(&samples);
            let (mean_batches, var_batches) = mean_var(&batches);
            let successes = group.iter().filter(|r| r.success == Some(true)).count();
            AggregateSummary {
                config_id: id.to_string(),
                failures: group.iter().filter(|r| r.error.is_some()).count(),
                row: AggregateRow {
                    algo: first.algo,
                    beta_conf: first.beta_conf,
                    beta_sample: first.beta_sample,
                    beta_grid: first.beta_grid,
                    delta: first.delta,
                    n: first.n,
                    mean_samples,
                    var_samples,
                    mean_batches,
                    var_batches,
                    success_rate: successes as f64 / group.len() as f64,
                    replications: group.len(),
                },
            }
        })
        .collect()
}

/// Runs every (grid point, replication) pair. Replication `k` uses the same
/// seed at every grid point. `parallel = false` runs in sweep order on the
/// calling thread; results are identical either way.
pub fn execute(spec: &ExperimentSpec, base_dir: Option<&Path>, parallel: bool) -> Result<ExperimentResult> {
    spec.validate()?;
    let instance = spec.load_instance(base_dir)?;
    let n = instance.num_arms();
    let points = spec.grid_points();
    let jobs: Vec<(GridPoint, usize)> = points
        .iter()
        .flat_map(|p| (0..spec.replications).map(move |k| (*p, k)))
        .collect();
    let work = |&(point, k): &(GridPoint, usize)| {
        let seed = replication_seed(spec.base_seed, k as u64);
        let outcome = run_single(&instance, &point, spec.max_batches, &spec.solver, seed);
        let (trace, error) = match outcome {
            Ok(t) => (Some(t), None),
            Err(Error::BudgetExhausted { trace, .. }) => {
                (Some(*trace), Some(format!("batch cap of {} reached", spec.max_batches)))
            }
            Err(e) => (None, Some(e.to_string())),
        };
        let done = error.is_none();
        RunRecord {
            config_id: point.config_id(),
            algo: point.algo,
            beta_conf: point.beta_conf,
            beta_sample: point.beta_sample,
            beta_grid: point.beta_grid,
            delta: point.delta,
            n,
            replication: k,
            seed,
            total_samples: trace.as_ref().filter(|_| done).map(|t| t.total_samples),
            total_batches: trace.as_ref().filter(|_| done).map(|t| t.total_batches),
            returned_arm: trace.as_ref().and_then(|t| t.returned_arm),
            success: trace.as_ref().and_then(|t| t.success),
            error,
            trace,
        }
    };
    let runs: Vec<RunRecord> = if parallel {
        jobs.par_iter().map(work).collect()
    } else {
        jobs.iter().map(work).collect()
    };
    let aggregates = aggregate(&runs);
    Ok(ExperimentResult { runs, aggregates })
}

/// Writes `traces/<run_id>.json`, `traces.csv`, `runs.csv`,
/// `aggregate.csv` and `summary.json` under `out_dir`.
pub fn write_results(result: &ExperimentResult, out_dir: &Path) -> Result<()> {
    let trace_dir = out_dir.join("traces");
    fs::create_dir_all(&trace_dir)?;
    let linear = result.runs.iter().any(|r| r.algo.is_linear());
    let header = trace_csv_header(linear);
    let mut trace_csv = csv::WriterBuilder::new()
        .flexible(true)
        .from_path(out_dir.join("traces.csv"))?;
    trace_csv.write_record(&header)?;
    for run in &result.runs {
        if let Some(trace) = &run.trace {
            let id = run.run_id();
            fs::write(trace_dir.join(format!("{id}.json")), serde_json::to_string(trace)?)?;
            trace.write_csv_rows(&mut trace_csv, &id)?;
        }
    }
    trace_csv.flush()?;

    let mut runs_csv = csv::Writer::from_path(out_dir.join("runs.csv"))?;
    for run in &result.runs {
        runs_csv.serialize(run)?;
    }
    runs_csv.flush()?;

    write_aggregate_csv(&result.aggregates, &out_dir.join("aggregate.csv"))?;
    fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&result.aggregates)?,
    )?;
    Ok(())
}

pub fn write_aggregate_csv(rows: &[AggregateSummary], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(&r.row)?;
    }
    if rows.is_empty() {
        w.write_record(AGGREGATE_COLUMNS)?;
    }
    w.flush()?;
    Ok(())
}

pub const AGGREGATE_COLUMNS: [&str; 12] = [
    "algo",
    "beta_conf",
    "beta_sample",
    "beta_grid",
    "delta",
    "n",
    "mean_samples",
    "var_samples",
    "mean_batches",
    "var_batches",
    "success_rate",
    "replications",
];

/// Runs the sweep and writes all outputs.
pub fn run_experiment(spec: &ExperimentSpec, base_dir: Option<&Path>, out_dir: &Path) -> Result<ExperimentResult> {
    let result = execute(spec, base_dir, true)?;
    write_results(&result, out_dir)?;
    Ok(result)
}

/// Re-aggregates `runs.csv` from a results directory and writes the
/// aggregate CSV to `out`.
pub fn report(in_dir: &Path, out: &Path) -> Result<Vec<AggregateSummary>> {
    let mut rdr = csv::Reader::from_path(in_dir.join("runs.csv"))?;
    let runs = rdr.deserialize().collect::<std::result::Result<Vec<RunRecord>, _>>()?;
    let rows = aggregate(&runs);
    write_aggregate_csv(&rows, out)?;
    Ok(rows)
}

/// Whether `instance` and `algo` fit together; used to fail fast in the CLI.
pub fn compatible(instance: &Instance, algo: Algorithm) -> bool {
    match instance {
        Instance::Linear(_) => algo.is_linear(),
        Instance::Mab(_) | Instance::Empirical(_) => !algo.is_linear(),
    }
}
