//! Command-line pipeline: `synth → generate → verify → run → aggregate`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::aggregate::{self, AggregateError, ResultRecord};
use crate::refmodel::{self, FeatureStore, ManifestRun, ModelError, TrainConfig};
use crate::schema::{load_table, AnnotationTable, AttributeSchema, SchemaError};
use crate::shiftgen::{
    enumerate_configs, sample_split, SamplingParams, ShiftError, SplitManifest, TestSize,
};
use crate::synth::{self, SynthError, SynthSpec};
use crate::verify::{verify_manifest, VerificationReport};

/// Algorithm name recorded for the built-in linear reference model.
pub const REFERENCE_ALGORITHM: &str = "linear-ref";
pub const RESULTS_FILE: &str = "results.csv";

#[derive(Debug, Error)]
pub enum CliError {
    /// Inputs were readable but violated a requirement, or verification failed.
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<SchemaError> for CliError {
    fn from(e: SchemaError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::InvalidSpec(_)
            | SynthError::JitterOutOfRange { .. }
            | SynthError::InvalidAssignment(_) => CliError::Validation(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<ShiftError> for CliError {
    fn from(e: ShiftError) -> Self {
        match e {
            ShiftError::Io(_) | ShiftError::Json(_) => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<AggregateError> for CliError {
    fn from(e: AggregateError) -> Self {
        match e {
            AggregateError::Io(_) | AggregateError::Csv(_) | AggregateError::Json(_) => {
                CliError::Io(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "shiftbench",
    version,
    about = "Controlled distribution-shift benchmark toolkit"
)]
pub struct Cli {
    /// Worker threads for per-manifest work (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic shapes dataset.
    Synth(SynthArgs),
    /// List every shift config of a schema.
    Enumerate(EnumerateArgs),
    /// Sample one split manifest per (config, seed).
    Generate(GenerateArgs),
    /// Re-check every manifest in a directory.
    Verify(VerifyArgs),
    /// Train and test the reference model on every manifest.
    Run(RunArgs),
    /// Reduce results CSVs to comparison views.
    Aggregate(AggregateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub per_cell: usize,
    #[arg(long, default_value_t = 64)]
    pub image_side: usize,
    #[arg(long, default_value_t = SynthSpec::default().max_jitter)]
    pub max_jitter: usize,
    #[arg(long, default_value_t = 0)]
    pub jitter_seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ParamArgs {
    /// Counterexample fraction for spurious correlation.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Geometric decay of the drifted attribute's marginal.
    #[arg(long)]
    pub ldd_decay: Option<f64>,
    /// Label skew within each drifted attribute value.
    #[arg(long)]
    pub ldd_skew: Option<f64>,
    /// Number of attribute values held out of the source.
    #[arg(long)]
    pub uds_holdout: Option<usize>,
    /// Test instances per combination, or `auto`.
    #[arg(long)]
    pub test_per_cell: Option<TestSize>,
    /// Train + validation instances.
    #[arg(long)]
    pub source_size: Option<usize>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
}

impl ParamArgs {
    pub fn params(&self) -> Result<SamplingParams, CliError> {
        let d = SamplingParams::default();
        let p = SamplingParams {
            source_size: self.source_size.unwrap_or(d.source_size),
            val_fraction: self.val_fraction.unwrap_or(d.val_fraction),
            counterexample_fraction: self.epsilon.unwrap_or(d.counterexample_fraction),
            ldd_decay: self.ldd_decay.unwrap_or(d.ldd_decay),
            ldd_label_skew: self.ldd_skew.unwrap_or(d.ldd_label_skew),
            uds_holdout: self.uds_holdout.unwrap_or(d.uds_holdout),
            test_per_cell: self.test_per_cell.unwrap_or(d.test_per_cell),
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Args)]
pub struct EnumerateArgs {
    /// Schema JSON path or built-in dataset name.
    #[arg(long)]
    pub schema: String,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    pub params: ParamArgs,
    /// Also write the configs as a JSON array.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    /// Schema JSON path or built-in dataset name; defaults to `schema.json`
    /// next to the annotations.
    #[arg(long)]
    pub schema: Option<String>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    pub params: ParamArgs,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub manifests: PathBuf,
    /// Report directory; defaults to `<manifests>/reports`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub manifests: PathBuf,
    /// Directory holding `<instance_id>.png`; defaults to `images/` next to
    /// the annotations.
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = refmodel::LEARNING_RATE_GRID)]
    pub lr_grid: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    /// One or more results CSVs.
    #[arg(long, required = true, num_args = 1..)]
    pub results: Vec<PathBuf>,
    /// Algorithm the deltas are measured against.
    #[arg(long)]
    pub baseline: Option<String>,
    /// Only records of this split enter the views.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
}

/// Resolved inputs shared by the data-consuming subcommands.
#[derive(Debug, Clone)]
pub struct RunPlan {
    pub schema: AttributeSchema,
    pub annotations: PathBuf,
    pub seeds: Vec<u64>,
    pub params: SamplingParams,
}

impl RunPlan {
    pub fn table(&self) -> Result<AnnotationTable, CliError> {
        Ok(load_table(&self.annotations, self.schema.clone())?)
    }
}

fn resolve_schema(
    arg: Option<&str>,
    annotations: Option<&Path>,
) -> Result<AttributeSchema, CliError> {
    match arg {
        Some(s) if Path::new(s).is_file() => Ok(AttributeSchema::load(s)?),
        Some(s) => Ok(AttributeSchema::builtin(s)?),
        None => {
            let dir = annotations.and_then(Path::parent).unwrap_or(Path::new("."));
            Ok(AttributeSchema::load(dir.join("schema.json"))?)
        }
    }
}

fn plan(data: &DataArgs, seeds: &[u64], params: SamplingParams) -> Result<RunPlan, CliError> {
    if seeds.is_empty() {
        return Err(CliError::Validation("at least one seed is required".into()));
    }
    if !data.annotations.is_file() {
        return Err(CliError::Io(format!(
            "annotations not found: {}",
            data.annotations.display()
        )));
    }
    Ok(RunPlan {
        schema: resolve_schema(data.schema.as_deref(), Some(&data.annotations))?,
        annotations: data.annotations.clone(),
        seeds: seeds.to_vec(),
        params,
    })
}

/// Manifest files of `dir`, sorted by name.
pub fn manifest_paths(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| p.is_file() && p.extension().is_some_and(|e| e == "json"));
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Io(format!("no manifests in {}", dir.display())));
    }
    Ok(paths)
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Io(e.to_string()))?;
    Ok(pool.install(f))
}

pub fn cmd_synth(args: &SynthArgs) -> Result<(), CliError> {
    let spec = SynthSpec {
        image_side: args.image_side,
        per_cell: args.per_cell,
        jitter_seed: args.jitter_seed,
        max_jitter: args.max_jitter,
    };
    let table = synth::generate_dataset(&spec, &args.out)?;
    println!(
        "wrote {} images to {}",
        table.len(),
        args.out.join("images").display()
    );
    Ok(())
}

pub fn cmd_enumerate(args: &EnumerateArgs) -> Result<(), CliError> {
    let schema = resolve_schema(Some(&args.schema), None)?;
    let params = args.params.params()?;
    let configs: Vec<_> = args
        .seeds
        .iter()
        .flat_map(|&seed| enumerate_configs(&schema, &params, seed))
        .collect();
    for c in &configs {
        println!("{}", c.config_id);
    }
    let shifted = configs.iter().filter(|c| !c.shift_set().is_empty()).count();
    println!("{} configs ({shifted} shifted)", configs.len());
    if let Some(out) = &args.out {
        fs::write(out, serde_json::to_string_pretty(&configs)? + "\n")?;
    }
    Ok(())
}

pub fn cmd_generate(args: &GenerateArgs, jobs: usize) -> Result<(), CliError> {
    let plan = plan(&args.data, &args.seeds, args.params.params()?)?;
    let table = plan.table()?;
    let configs: Vec<_> = plan
        .seeds
        .iter()
        .flat_map(|&seed| enumerate_configs(&plan.schema, &plan.params, seed))
        .collect();
    fs::create_dir_all(&args.out)?;
    let manifests = with_pool(jobs, || {
        configs
            .par_iter()
            .map(|c| {
                let m = sample_split(&table, c)?;
                m.save(args.out.join(m.file_name()))?;
                Ok(m)
            })
            .collect::<Result<Vec<SplitManifest>, ShiftError>>()
    })??;
    println!(
        "{:<64} {:>6} {:>5} {:>5} {:>6}",
        "config", "train", "val", "test", "m"
    );
    for m in &manifests {
        let c = &m.counts;
        println!(
            "{:<64} {:>6} {:>5} {:>5} {:>6}",
            m.config.config_id, c.train, c.val, c.test, c.test_per_cell
        );
    }
    println!(
        "{} manifests written to {}",
        manifests.len(),
        args.out.display()
    );
    Ok(())
}

pub fn cmd_verify(args: &VerifyArgs, jobs: usize) -> Result<(), CliError> {
    let plan = plan(&args.data, &[0], SamplingParams::default())?;
    let table = plan.table()?;
    let paths = manifest_paths(&args.manifests)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.manifests.join("reports"));
    fs::create_dir_all(&out)?;
    let reports = with_pool(jobs, || {
        paths
            .par_iter()
            .map(|p| {
                let m = SplitManifest::load(p)?;
                Ok((p.clone(), verify_manifest(&m, &table)))
            })
            .collect::<Result<Vec<(PathBuf, VerificationReport)>, ShiftError>>()
    })??;
    let mut failed = 0;
    for (path, report) in &reports {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("manifest");
        fs::write(
            out.join(format!("{stem}.verify.json")),
            serde_json::to_string_pretty(report)? + "\n",
        )?;
        print!("{}", report.render_table());
        if !report.passed() {
            failed += 1;
        }
    }
    println!(
        "{} of {} manifests passed",
        reports.len() - failed,
        reports.len()
    );
    if failed > 0 {
        return Err(CliError::Validation(format!(
            "{failed} manifest(s) failed verification"
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct RunHistory<'a> {
    manifest: &'a str,
    #[serde(flatten)]
    run: &'a ManifestRun,
}

pub fn cmd_run(args: &RunArgs, jobs: usize) -> Result<(), CliError> {
    let plan = plan(&args.data, &[0], SamplingParams::default())?;
    let table = plan.table()?;
    let paths = manifest_paths(&args.manifests)?;
    let images = match &args.images {
        Some(dir) => dir.clone(),
        None => plan
            .annotations
            .parent()
            .unwrap_or(Path::new("."))
            .join("images"),
    };
    let manifests = paths
        .iter()
        .map(|p| Ok(SplitManifest::load(p)?))
        .collect::<Result<Vec<_>, CliError>>()?;

    let mut ids: Vec<&str> = manifests
        .iter()
        .flat_map(|m| m.train_ids.iter().chain(&m.val_ids).chain(&m.test_ids))
        .map(String::as_str)
        .collect();
    ids.sort_unstable();
    ids.dedup();
    let store = with_pool(jobs, || load_features(&ids, &images))??;

    let base = TrainConfig::default();
    let runs = with_pool(jobs, || {
        manifests
            .par_iter()
            .map(|m| refmodel::run_manifest(&table, m, &store, &base, &args.lr_grid))
            .collect::<Result<Vec<_>, ModelError>>()
    })??;

    let histories = args.out.join("histories");
    fs::create_dir_all(&histories)?;
    let mut records = Vec::with_capacity(runs.len());
    for ((path, m), run) in paths.iter().zip(&manifests).zip(&runs) {
        let name = path
            .file_name()
            .and_then(|s| s.to_str())
            .unwrap_or("manifest.json");
        let history = RunHistory {
            manifest: name,
            run,
        };
        fs::write(
            histories.join(name),
            serde_json::to_string_pretty(&history)? + "\n",
        )?;
        records.push(ResultRecord {
            dataset: m.config.dataset.clone(),
            config_id: m.config.config_id.clone(),
            shift_set: m.config.shift_set(),
            attributes: m.config.attributes_label(),
            algorithm: REFERENCE_ALGORITHM.to_string(),
            pretrained: false,
            seed: m.config.seed,
            split: "test".to_string(),
            accuracy: run.test_accuracy,
        });
    }
    aggregate::validate_records(&records)?;
    let file = fs::File::create(args.out.join(RESULTS_FILE))?;
    aggregate::write_records(file, &records)?;
    println!(
        "{} runs; results in {}",
        records.len(),
        args.out.join(RESULTS_FILE).display()
    );
    Ok(())
}

fn load_features(ids: &[&str], images: &Path) -> Result<FeatureStore, CliError> {
    let features = ids
        .par_iter()
        .map(|id| {
            let raster = synth::load_png(images.join(format!("{id}.png")))?;
            let side = raster.side;
            Ok((side, refmodel::featurize(&raster, side)?))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let side = features.first().map_or(0, |f| f.0);
    if features.iter().any(|f| f.0 != side) {
        return Err(CliError::Validation("images have mixed sizes".into()));
    }
    let mut store = FeatureStore::new(3 * side * side);
    for (id, (_, x)) in ids.iter().zip(&features) {
        store.insert(*id, x)?;
    }
    Ok(store)
}

pub fn cmd_aggregate(args: &AggregateArgs) -> Result<(), CliError> {
    let mut records = Vec::new();
    for p in &args.results {
        records.extend(aggregate::load_records(p)?);
    }
    aggregate::validate_records(&records)?;
    records.retain(|r| r.split == args.split);
    let views = aggregate::compute_views(&records, args.baseline.as_deref())?;
    aggregate::write_views(&views, args.baseline.as_deref(), &args.out)?;
    println!("{:<12} {:>8} {:>8} {:>4}", "shift_set", "mean", "sem", "n");
    for m in &views.shift_type_means {
        let s = m.summary;
        println!(
            "{:<12} {:>8.4} {:>8.4} {:>4}",
            m.shift_set.to_string(),
            s.mean,
            s.dispersion,
            s.n
        );
    }
    println!("views written to {}", args.out.display());
    Ok(())
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Enumerate(a) => cmd_enumerate(a),
        Command::Generate(a) => cmd_generate(a, cli.jobs),
        Command::Verify(a) => cmd_verify(a, cli.jobs),
        Command::Run(a) => cmd_run(a, cli.jobs),
        Command::Aggregate(a) => cmd_aggregate(a),
    }
}
