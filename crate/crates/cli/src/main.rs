use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use batchbai::experiment::{
    basis_linear, compatible, gen_basis_linear, gen_example, load_ratings_csv, report, run_experiment, ExperimentSpec,
};
use batchbai::linbandit::half_differences;
use batchbai::{
    batch_complexity_linear, batch_complexity_mab, psi_star, solve_design, DesignOptions, GapProfile, Instance,
    LinearInstance,
};
use clap::{Parser, Subcommand};
use serde_json::json;

/// Batched best-arm identification experiments.
#[derive(Parser)]
#[command(name = "batchbai", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic instance.
    Gen {
        /// Example family: 1, 2 or 3.
        #[arg(long)]
        example: u8,
        #[arg(long)]
        n: usize,
        /// Embed the means in the standard basis as a linear instance.
        #[arg(long)]
        linear: bool,
        #[arg(long, default_value_t = 1.0)]
        noise_sd: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Batch-complexity recursion and bound of an instance.
    Complexity {
        #[arg(long)]
        instance: PathBuf,
        /// Use the linear recursion; bandit instances are embedded in the
        /// standard basis.
        #[arg(long)]
        linear: bool,
        /// Include the per-step sequences in the report.
        #[arg(long)]
        trace: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimal design over the pairwise differences of a set of arms.
    Design {
        /// Linear instance JSON.
        #[arg(long)]
        instance: PathBuf,
        /// `all` or comma-separated arm indices.
        #[arg(long, default_value = "all")]
        subset: String,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a replicated parameter sweep.
    Run {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Build empirical arms from a ratings CSV.
    IngestRatings {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value_t = 1000)]
        top_k: usize,
        /// Ratings kept per movie.
        #[arg(long, default_value_t = 50)]
        cap: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-aggregate the runs of a results directory.
    Report {
        #[arg(long)]
        in_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_instance(path: &Path) -> Result<Instance> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Instance::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn emit(value: &serde_json::Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn parse_subset(text: &str, n: usize) -> Result<Vec<usize>> {
    if text.trim() == "all" {
        return Ok((0..n).collect());
    }
    let mut ids = Vec::new();
    for part in text.split(',') {
        let id: usize = part.trim().parse().with_context(|| format!("bad arm index {part:?}"))?;
        if id >= n {
            bail!("arm {id} out of range, instance has {n} arms");
        }
        ids.push(id);
    }
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        bail!("subset needs at least two distinct arms");
    }
    Ok(ids)
}

fn complexity(instance: &Instance, linear: bool) -> Result<serde_json::Value> {
    let opts = DesignOptions::default();
    let report = match (instance, linear) {
        (Instance::Linear(l), _) => batch_complexity_linear(l, &opts)?,
        (Instance::Mab(m), true) => batch_complexity_linear(&basis_linear(m.means().to_vec(), m.noise_sd())?, &opts)?,
        (Instance::Mab(m), false) => batch_complexity_mab(&m.gap_profile())?,
        (Instance::Empirical(e), true) => batch_complexity_linear(&basis_linear(e.pool_means(), 1.0)?, &opts)?,
        (Instance::Empirical(e), false) => batch_complexity_mab(&GapProfile::from_means(&e.pool_means())?)?,
    };
    Ok(serde_json::to_value(report)?)
}

fn design(instance: &LinearInstance, subset: &[usize], tol: f64) -> Result<serde_json::Value> {
    let opts = DesignOptions {
        tol,
        ..DesignOptions::default()
    };
    let arms = instance.arms();
    let tests = half_differences(arms, subset);
    let design = solve_design(arms, &tests, &opts)?;
    let psi = psi_star(instance, &opts)?;
    Ok(json!({
        "subset": subset,
        "rho": design.rho,
        "lambda": design.lambda,
        "iterations": design.iterations,
        "gap_certificate": design.gap_certificate,
        "psi_star": psi,
    }))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Gen {
            example,
            n,
            linear,
            noise_sd,
            out,
        } => {
            let inst = if linear {
                Instance::Linear(gen_basis_linear(example, n, noise_sd)?)
            } else {
                Instance::Mab(gen_example(example, n, noise_sd)?)
            };
            fs::write(&out, inst.to_json()? + "\n").with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Complexity {
            instance,
            linear,
            trace,
            out,
        } => {
            let mut value = complexity(&read_instance(&instance)?, linear)?;
            if !trace {
                if let Some(map) = value.as_object_mut() {
                    for key in ["lbar_sequence", "u_sequence", "potential"] {
                        map.remove(key);
                    }
                }
            }
            emit(&value, out.as_deref())?;
        }
        Command::Design {
            instance,
            subset,
            tol,
            out,
        } => {
            let Instance::Linear(inst) = read_instance(&instance)? else {
                bail!("design needs a linear instance");
            };
            let subset = parse_subset(&subset, inst.arms().len())?;
            emit(&design(&inst, &subset, tol)?, out.as_deref())?;
        }
        Command::Run { spec, out_dir } => {
            let text = fs::read_to_string(&spec).with_context(|| format!("reading {}", spec.display()))?;
            let parsed = ExperimentSpec::from_json(&text).with_context(|| format!("parsing {}", spec.display()))?;
            parsed.validate()?;
            let base = spec.parent().filter(|p| !p.as_os_str().is_empty());
            let instance = parsed.load_instance(base)?;
            if let Some(algo) = parsed.algorithms.iter().find(|&&a| !compatible(&instance, a)) {
                bail!("algorithm {} does not fit this instance", algo.name());
            }
            fs::create_dir_all(&out_dir)?;
            let result = run_experiment(&parsed, base, &out_dir)?;
            let failures = result.runs.iter().filter(|r| r.error.is_some()).count();
            println!(
                "{} runs, {} configurations, {failures} failed; results in {}",
                result.runs.len(),
                result.aggregates.len(),
                out_dir.display()
            );
        }
        Command::IngestRatings { csv, top_k, cap, out } => {
            let arms = load_ratings_csv(&csv, top_k, cap).with_context(|| format!("loading {}", csv.display()))?;
            fs::write(&out, Instance::Empirical(arms).to_json()? + "\n")
                .with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Report { in_dir, out } => {
            let rows = report(&in_dir, &out)?;
            println!("{} configurations written to {}", rows.len(), out.display());
        }
    }
    Ok(())
}
