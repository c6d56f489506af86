//! Command-line interface.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use disparity_audit_core::data::GroupId;
use disparity_audit_core::groups::RegionGroupConfig;
use disparity_audit_core::synth::{generate, ScenarioSpec};

use crate::config::{EvaluationVersion, GroupMethod, Overrides, ResolvedConfig, RunConfig};
use crate::error::{AuditError, Result};
use crate::io;
use crate::pipeline::{self, ResultRow};
use crate::report::{self, Accounting};

#[derive(Debug, Parser)]
#[command(name = "disparity-audit", version, about = "Disaggregated disparity audits for multi-label classifiers")]
pub struct Cli {
    /// Worker threads for bootstrap evaluation (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides the config's `output`.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// baseline, v1, v2, v3, reliable or custom.
    #[arg(long)]
    pub preset: Option<EvaluationVersion>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Full pipeline: every artifact plus manifest.json.
    Run(RunArgs),
    /// Write assignments.csv and exclusions.csv.
    AssignGroups(RunArgs),
    /// Write each image's model-class targets to targets.jsonl.
    Map(RunArgs),
    /// Write per-concept sampling plans and thresholds to sample_plan.json.
    SamplePlan(RunArgs),
    /// Write results.csv, full_sample.csv and plotdata/.
    Evaluate(RunArgs),
    /// Per-estimate deltas between two results.csv files.
    Compare {
        run_a: PathBuf,
        run_b: PathBuf,
        /// Output CSV; printed to stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Text summary of a results.csv.
    Report {
        results: PathBuf,
        /// manifest.json for exclusion accounting; defaults to the sibling file.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        top: usize,
        /// Also write report.txt here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate a synthetic dataset and a ready-to-run config.
    Synth {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn resolve(args: &RunArgs) -> Result<(ResolvedConfig, PathBuf)> {
    if !args.config.is_file() {
        return Err(AuditError::config("config", format!("config file not found: {}", args.config.display())));
    }
    let cfg = RunConfig::load(&args.config)?;
    let base = args.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let resolved = cfg.resolve(&base, &Overrides { preset: args.preset, seed: args.seed })?;
    let output = match (&args.output, &cfg.output) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => io::resolve(&base, o),
        (None, None) => return Err(AuditError::config("config", "no output directory given")),
    };
    std::fs::create_dir_all(&output).map_err(|e| AuditError::io("config", &output, e))?;
    Ok((resolved, output))
}

pub fn execute(cli: Cli) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(AuditError::config("config", "--jobs must be at least 1"));
        }
        pool = pool.num_threads(j);
    }
    let pool = pool.build().map_err(|e| AuditError::internal("config", e))?;
    pool.install(|| dispatch(cli.command))
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run(args) => {
            let (cfg, out) = resolve(&args)?;
            let m = pipeline::run(&cfg, &out)?;
            println!(
                "{} estimates over {} concepts written to {}",
                m.result_rows,
                m.concepts.evaluated,
                out.display()
            );
        }
        Command::AssignGroups(args) => {
            let (cfg, out) = resolve(&args)?;
            let dataset = pipeline::load(&cfg)?;
            let (assignments, _) = pipeline::assign(&cfg, &dataset.images)?;
            pipeline::write_assignments(&out, &dataset, &assignments)?;
        }
        Command::Map(args) => {
            let (cfg, out) = resolve(&args)?;
            let dataset = pipeline::load(&cfg)?;
            let (targets, warnings) = pipeline::map_targets(&cfg, &dataset.images)?;
            for w in &warnings {
                log::warn!("mapping: {w:?}");
            }
            pipeline::write_targets(&out, &targets)?;
        }
        Command::SamplePlan(args) => {
            let (cfg, out) = resolve(&args)?;
            let prepared = pipeline::prepare(&cfg)?;
            io::write_json("sampling", &out.join("sample_plan.json"), &pipeline::sample_plans(&cfg, &prepared))?;
        }
        Command::Evaluate(args) => {
            let (cfg, out) = resolve(&args)?;
            let prepared = pipeline::prepare(&cfg)?;
            let result = pipeline::evaluate(&cfg, &prepared)?;
            pipeline::write_evaluation(&out, &cfg, &result)?;
        }
        Command::Compare { run_a, run_b, output } => {
            let a: Vec<ResultRow> = io::read_csv(&run_a)?;
            let b: Vec<ResultRow> = io::read_csv(&run_b)?;
            let rows = report::compare(&a, &b)?;
            let header = ["metric", "concept", "group_a", "group_b", "point_a", "point_b", "sign_flip", "magnitude_delta"];
            match output {
                Some(path) => io::write_csv_with_header("compare", &path, &header, &rows)?,
                None => {
                    let mut w = csv::Writer::from_writer(std::io::stdout());
                    for r in &rows {
                        w.serialize(r).map_err(|e| AuditError::internal("compare", e))?;
                    }
                    w.flush().map_err(|e| AuditError::io("compare", "<stdout>", e))?;
                }
            }
        }
        Command::Report { results, manifest, top, output } => {
            let rows: Vec<ResultRow> = io::read_csv(&results)?;
            let manifest = manifest.or_else(|| {
                let sibling = results.with_file_name("manifest.json");
                sibling.is_file().then_some(sibling)
            });
            let accounting = match manifest {
                Some(p) => {
                    let v: serde_json::Value = io::read_json(&p)?;
                    Some(Accounting::from_manifest(&v).ok_or_else(|| {
                        AuditError::data("report", format!("{}: missing assignment counts", p.display()))
                    })?)
                }
                None => None,
            };
            let text = report::report(&rows, top, accounting.as_ref());
            print!("{text}");
            if let Some(dir) = output {
                let path = dir.join("report.txt");
                std::fs::create_dir_all(&dir).map_err(|e| AuditError::io("report", &dir, e))?;
                std::fs::write(&path, text).map_err(|e| AuditError::io("report", &path, e))?;
            }
        }
        Command::Synth { scenario, output, seed } => synth(&scenario, &output, seed)?,
    }
    Ok(())
}

/// Writes annotations.jsonl, predictions.jsonl, groups.json and config.json.
pub fn synth(scenario: &Path, output: &Path, seed: Option<u64>) -> Result<()> {
    const STAGE: &str = "synth";
    let mut spec: ScenarioSpec = io::read_json(scenario)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let data = generate(&spec).map_err(|e| AuditError::config(STAGE, e))?;
    io::write_jsonl(STAGE, &output.join("annotations.jsonl"), &data.images)?;
    io::write_jsonl(STAGE, &output.join("predictions.jsonl"), &data.predictions)?;
    let region = RegionGroupConfig {
        country_to_group: spec.group_sizes.keys().map(|g| (g.to_string(), GroupId::clone(g))).collect(),
    };
    io::write_json(STAGE, &output.join("groups.json"), &region)?;
    let config = RunConfig {
        annotations: "annotations.jsonl".into(),
        predictions: "predictions.jsonl".into(),
        groups: GroupMethod::Metadata { region: "groups.json".into(), key: "group".into() },
        box_filter: None,
        apply_term_exclusions: None,
        mapping: None,
        strict_mapping: false,
        concepts: None,
        // Synthetic negatives carry no labels at all.
        remove_unlabeled_images: Some(false),
        metrics: Default::default(),
        sampling: crate::config::SamplingSection { seed: Some(spec.seed), ..Default::default() },
        evaluation_version: Some(EvaluationVersion::Reliable),
        output: Some("results".into()),
    };
    io::write_json(STAGE, &output.join("config.json"), &config)
}
