//! Command-line front end. Every command writes `run_manifest.json` next to its
//! outputs; `replay` re-executes a command from one.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{generate, load_bundle, save_bundle, write_atomic, BundleManifest, GeneratorConfig, SplitBundle};
use crate::error::{config, Error};
use crate::harness::{
    self, compare_methods, evaluate, report, run_on, shot_sweep, summarize, train_base, EvalReport, RunOptions,
    Scores,
};
use crate::methods::{BaseModel, Method, MethodConfig};
use crate::model::{Classifier, ClassifierConfig};
use crate::optim::{AdamConfig, NormKind};

pub const RUN_MANIFEST: &str = "run_manifest.json";
pub const BASE_CKPT: &str = "base.ckpt";
pub const INIT_CKPT: &str = "init.ckpt";
pub const PATCHED_CKPT: &str = "patched.ckpt";
pub const BEFORE_FILE: &str = "before.json";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const REPORT_FILE: &str = "report.txt";
pub const TIMING_FILE: &str = "timing.txt";
pub const SWEEP_FILE: &str = "sweep.txt";

const SEED_ENV: &str = "PATCHBENCH_SEED";

#[derive(Debug, Parser)]
#[command(name = "patchbench", version, about = "Few-shot debugging of trained classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", content = "config", rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic bundle.
    Gen(GenArgs),
    /// Train the base model on a bundle's training split.
    Train(TrainArgs),
    /// Patch the base model with one method on the bundle's debugging split.
    Debug(DebugArgs),
    /// Run several methods over several seeds.
    Compare(CompareArgs),
    /// Run methods across shot counts with resampled debugging splits.
    Sweep(SweepArgs),
    /// Render tables from records files.
    Report(ReportArgs),
    /// Re-run the command recorded in a run manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "synthetic")]
    pub suite: String,
    #[arg(long, default_value_t = 10)]
    pub shots: usize,
    #[arg(long, default_value_t = 6000)]
    pub n_train: usize,
    #[arg(long, default_value_t = 1000)]
    pub n_test: usize,
    #[arg(long, default_value_t = 1000)]
    pub n_phenomenon: usize,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 40)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 36)]
    pub input_dim: usize,
    #[arg(long, default_value_t = 1.0)]
    pub heuristic_strength: f64,
}

impl GenArgs {
    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            vocab_size: self.vocab_size,
            input_dim: self.input_dim,
            num_classes: self.classes,
            n_train: self.n_train,
            n_test: self.n_test,
            n_phenomenon: self.n_phenomenon,
            shots: self.shots,
            heuristic_strength: self.heuristic_strength,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct AdamArgs {
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
}

impl AdamArgs {
    fn adam(&self) -> anyhow::Result<AdamConfig> {
        let adam = AdamConfig {
            learning_rate: self.lr,
            ..AdamConfig::default()
        };
        adam.validate()?;
        Ok(adam)
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = harness::BASE_HIDDEN)]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = harness::BASE_EPOCHS)]
    pub epochs: usize,
    #[arg(long, default_value_t = harness::BASE_BATCH_SIZE)]
    pub batch_size: usize,
    /// Seeds the initialization and the batch order.
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub adam: AdamArgs,
}

/// Method hyperparameters shared by `debug`, `compare` and `sweep`.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct MethodArgs {
    /// Ball radius for the constrained baselines.
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    /// Weight of the KL term.
    #[arg(long, default_value_t = 10.0)]
    pub lambda: f64,
    /// |W| as a multiple of the shot count.
    #[arg(long, default_value_t = 2)]
    pub w_mult: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 50)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 3)]
    pub slow_epochs: usize,
    /// Check the stopping rule after every batch.
    #[arg(long)]
    pub check_every_batch: bool,
    #[command(flatten)]
    pub adam: AdamArgs,
}

impl MethodArgs {
    fn config(&self, method: Method, seed: u64) -> anyhow::Result<MethodConfig> {
        let cfg = MethodConfig {
            method,
            delta: self.delta,
            lambda: self.lambda,
            w_multiplier: self.w_mult,
            batch_size: self.batch_size,
            max_epochs_fast: self.max_epochs,
            slow_epochs: self.slow_epochs,
            seed,
            check_every_batch: self.check_every_batch,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct DebugArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Directory written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_method)]
    pub method: Method,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub method_args: MethodArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CompareArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// `all` or a comma separated list of method names.
    #[arg(long, default_value = "all", value_parser = parse_methods)]
    pub methods: MethodList,
    /// Number of seeds; each redraws the debugging split.
    #[arg(long, default_value_t = 8)]
    pub seeds: u64,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub first_seed: u64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Run one job at a time so wall times are comparable.
    #[arg(long)]
    pub serial_timing: bool,
    #[command(flatten)]
    pub method_args: MethodArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "all", value_parser = parse_methods)]
    pub methods: MethodList,
    #[arg(long, value_delimiter = ',', default_values_t = [5, 10, 20])]
    pub shots: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    pub resamples: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub first_seed: u64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub method_args: MethodArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReportArgs {
    /// Records files; a `before.json` next to one adds the before-debugging row.
    #[arg(long, required = true, num_args = 1..)]
    pub records: Vec<PathBuf>,
    /// Also print the timing table.
    #[arg(long)]
    pub timing: bool,
    /// Write the tables here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write outputs here instead of the recorded location.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MethodList(pub Vec<Method>);

fn parse_method(s: &str) -> Result<Method, Error> {
    s.parse()
}

fn parse_methods(s: &str) -> Result<MethodList, Error> {
    if s == "all" {
        return Ok(MethodList(Method::ALL.to_vec()));
    }
    let methods = s.split(',').map(|m| m.trim().parse()).collect::<Result<Vec<Method>, _>>()?;
    if methods.is_empty() {
        return Err(config("no methods given"));
    }
    Ok(MethodList(methods))
}

/// Written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub artifacts: Vec<PathBuf>,
    pub version: String,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text).map_err(Error::from)?)
    }

    pub fn invocation(&self) -> anyhow::Result<Command> {
        let value = serde_json::json!({ "command": self.command, "config": self.config });
        Ok(serde_json::from_value(value).map_err(Error::from)?)
    }
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// What a command produced, for the manifest.
struct Produced {
    out: PathBuf,
    seeds: Vec<u64>,
    artifacts: Vec<PathBuf>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gen(_) => "gen",
            Command::Train(_) => "train",
            Command::Debug(_) => "debug",
            Command::Compare(_) => "compare",
            Command::Sweep(_) => "sweep",
            Command::Report(_) => "report",
            Command::Replay(_) => "replay",
        }
    }

    fn redirect(&mut self, out: PathBuf) -> anyhow::Result<()> {
        match self {
            Command::Gen(a) => a.out = out,
            Command::Train(a) => a.out = out,
            Command::Debug(a) => a.out = out,
            Command::Compare(a) => a.out = out,
            Command::Sweep(a) => a.out = out,
            Command::Report(a) => a.out = Some(out),
            Command::Replay(_) => bail!(config("a manifest cannot record a replay")),
        }
        Ok(())
    }
}

/// Parse `args` (program name first), run, and map the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for usage and configuration problems, 1 for anything else.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    let config = e
        .chain()
        .any(|c| c.downcast_ref::<Error>().is_some_and(Error::is_config));
    if config {
        2
    } else {
        1
    }
}

pub fn run(command: Command) -> anyhow::Result<()> {
    let command = match command {
        Command::Replay(r) => {
            let manifest = RunManifest::load(&r.manifest)?;
            let mut cmd = manifest.invocation()?;
            if let Some(out) = r.out {
                cmd.redirect(out)?;
            }
            cmd
        }
        other => other,
    };
    let started = unix_now();
    let produced = match &command {
        Command::Gen(a) => cmd_gen(a)?,
        Command::Train(a) => cmd_train(a)?,
        Command::Debug(a) => cmd_debug(a)?,
        Command::Compare(a) => cmd_compare(a)?,
        Command::Sweep(a) => cmd_sweep(a)?,
        Command::Report(a) => match cmd_report(a)? {
            Some(p) => p,
            None => return Ok(()),
        },
        Command::Replay(_) => bail!(config("a manifest cannot record a replay")),
    };
    let invocation = serde_json::to_value(&command).map_err(Error::from)?;
    let manifest = RunManifest {
        command: command.name().to_owned(),
        config: invocation["config"].clone(),
        seeds: produced.seeds,
        artifacts: produced.artifacts,
        version: env!("CARGO_PKG_VERSION").to_owned(),
        started_unix_s: started,
        finished_unix_s: unix_now(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(Error::from)?;
    write_atomic(&produced.out.join(RUN_MANIFEST), text.as_bytes())?;
    Ok(())
}

fn write_text(dir: &Path, name: &str, text: &str, artifacts: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    let path = dir.join(name);
    write_atomic(&path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))?;
    artifacts.push(path);
    Ok(())
}

fn cmd_gen(a: &GenArgs) -> anyhow::Result<Produced> {
    let generator = a.generator();
    let bundle = generate(&generator)?;
    let manifest = BundleManifest::new(a.suite.clone(), generator);
    save_bundle(&a.out, &bundle, &manifest).with_context(|| format!("writing bundle {}", a.out.display()))?;
    println!(
        "wrote {}: {} train, {} debug, {} test, {} debug-test",
        a.out.display(),
        bundle.train.len(),
        bundle.debug.len(),
        bundle.test.len(),
        bundle.debug_test.len()
    );
    Ok(Produced {
        out: a.out.clone(),
        seeds: vec![a.seed],
        artifacts: vec![a.out.clone()],
    })
}

fn read_bundle(dir: &Path) -> anyhow::Result<(SplitBundle, String)> {
    let loaded = load_bundle(dir).with_context(|| format!("loading bundle {}", dir.display()))?;
    Ok((loaded.bundle, loaded.manifest.suite))
}

fn cmd_train(a: &TrainArgs) -> anyhow::Result<Produced> {
    let (bundle, _) = read_bundle(&a.bundle)?;
    if a.epochs == 0 || a.batch_size == 0 {
        bail!(config("epochs and batch size must be at least 1"));
    }
    let input_dim = bundle.train.first().map(|x| x.features.len()).unwrap_or(0);
    let model = Classifier::new(ClassifierConfig {
        input_dim,
        hidden_dims: a.hidden.clone(),
        num_classes: infer_classes(&bundle),
        init_seed: a.seed,
    })?;
    let base = train_base(&model, &bundle, &a.adam.adam()?, a.epochs, a.batch_size)?;
    fs::create_dir_all(&a.out)?;
    let mut artifacts = Vec::new();
    for (name, params) in [(INIT_CKPT, &base.base.init), (BASE_CKPT, &base.base.trained)] {
        let path = a.out.join(name);
        Checkpoint {
            config: model.config().clone(),
            params: params.clone(),
        }
        .save(&path)?;
        artifacts.push(path);
    }
    let before = serde_json::to_string_pretty(&base.scores).map_err(Error::from)?;
    write_text(&a.out, BEFORE_FILE, &before, &mut artifacts)?;
    println!("{}", before_line(&base.scores));
    Ok(Produced {
        out: a.out.clone(),
        seeds: vec![a.seed],
        artifacts,
    })
}

pub fn before_line(s: &Scores) -> String {
    format!(
        "Before debugging ({:.3}, {:.3})",
        s.debug_accuracy, s.original_accuracy
    )
}

/// Largest native label plus one; entailment-labelled phenomena imply 3 classes.
fn infer_classes(bundle: &SplitBundle) -> usize {
    use crate::data::LabelSpace;
    let all = || bundle.train.iter().chain(&bundle.test).chain(&bundle.debug).chain(&bundle.debug_test);
    let native = all()
        .filter(|x| x.label_space == LabelSpace::Native)
        .map(|x| x.label + 1)
        .max()
        .unwrap_or(2);
    if all().any(|x| x.label_space == LabelSpace::Entailment) {
        native.max(3)
    } else {
        native.max(2)
    }
}

struct LoadedModel {
    model: Classifier,
    base: BaseModel,
    before: Scores,
}

fn load_model(dir: &Path, bundle: &SplitBundle) -> anyhow::Result<LoadedModel> {
    let trained = Checkpoint::load(&dir.join(BASE_CKPT))?;
    let init = Checkpoint::load(&dir.join(INIT_CKPT))?;
    if trained.config != init.config {
        bail!(config(format!(
            "{} and {} disagree on the architecture",
            BASE_CKPT, INIT_CKPT
        )));
    }
    let dim = bundle.train.first().map(|x| x.features.len()).unwrap_or(0);
    if dim != trained.config.input_dim {
        bail!(config(format!(
            "model expects {} features, bundle has {dim}",
            trained.config.input_dim
        )));
    }
    let model = Classifier::new(trained.config)?;
    let base = BaseModel {
        init: init.params,
        trained: trained.params,
    };
    let before = evaluate(&model, &base.trained, bundle)?;
    Ok(LoadedModel { model, base, before })
}

fn save_before(dir: &Path, suite: &str, before: &Scores, artifacts: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(&BeforeFile {
        suite: suite.to_owned(),
        scores: *before,
    })
    .map_err(Error::from)?;
    write_text(dir, BEFORE_FILE, &text, artifacts)
}

#[derive(Debug, Serialize, Deserialize)]
struct BeforeFile {
    suite: String,
    scores: Scores,
}

fn cmd_debug(a: &DebugArgs) -> anyhow::Result<Produced> {
    let method = a.method_args.config(a.method, a.seed)?;
    let adam = a.method_args.adam.adam()?;
    let (bundle, suite) = read_bundle(&a.bundle)?;
    let m = load_model(&a.model, &bundle)?;
    let run = run_on(&m.model, &bundle, &m.base, &method, &adam, &suite)?;
    let outcome = &run.outcome;
    // self-checks: the claimed stopping state and constraint actually hold
    if outcome.converged {
        let target: Vec<_> = bundle.debug.iter().chain(&outcome.in_danger).cloned().collect();
        if m.model.accuracy(&outcome.patched_params, &target)? < 1.0 {
            bail!("run reports convergence but its target set is not fully fit");
        }
    }
    let linf = outcome.patched_params.linf_distance(&m.base.trained);
    let l2 = outcome.patched_params.l2_distance(&m.base.trained);
    let bound = match a.method {
        Method::LinfConstrained => Some((NormKind::Linf, linf)),
        Method::L2Constrained => Some((NormKind::L2, l2)),
        _ => None,
    };
    if let Some((norm, dist)) = bound {
        if dist > method.delta + 1e-12 {
            bail!("{norm:?} deviation {dist} exceeds delta {}", method.delta);
        }
    }

    fs::create_dir_all(&a.out)?;
    let mut artifacts = Vec::new();
    let ckpt = a.out.join(PATCHED_CKPT);
    Checkpoint {
        config: m.model.config().clone(),
        params: outcome.patched_params.clone(),
    }
    .save(&ckpt)?;
    if Checkpoint::load(&ckpt)?.params != outcome.patched_params {
        bail!("patched checkpoint does not read back identically");
    }
    artifacts.push(ckpt);

    let records = [run.report.clone()];
    write_text(&a.out, RECORDS_FILE, &report::to_jsonl(&records)?, &mut artifacts)?;
    save_before(&a.out, &suite, &m.before, &mut artifacts)?;
    let mut text = report::accuracy_table(&records, &[(suite.clone(), m.before)]);
    text.push_str(&format!("\nconverged: {} after {} epochs\n", outcome.converged, outcome.epochs_used));
    if a.method == Method::InDanger {
        text.push_str(&format!(
            "w_found={} of {} requested, scan fraction {:.4}\n",
            outcome.w_found, outcome.w_requested, outcome.scan_fraction
        ));
    }
    text.push_str(&format!("max param deviation: linf {linf:.6}, l2 {l2:.6}\n"));
    write_text(&a.out, REPORT_FILE, &text, &mut artifacts)?;
    print!("{text}");
    Ok(Produced {
        out: a.out.clone(),
        seeds: vec![a.seed],
        artifacts,
    })
}

fn method_configs(list: &MethodList, args: &MethodArgs) -> anyhow::Result<Vec<MethodConfig>> {
    list.0.iter().map(|&m| args.config(m, 0)).collect()
}

fn cmd_compare(a: &CompareArgs) -> anyhow::Result<Produced> {
    if a.seeds == 0 || a.jobs == 0 {
        bail!(config("--seeds and --jobs must be at least 1"));
    }
    let methods = method_configs(&a.methods, &a.method_args)?;
    let adam = a.method_args.adam.adam()?;
    let (bundle, suite) = read_bundle(&a.bundle)?;
    let m = load_model(&a.model, &bundle)?;
    let seeds: Vec<u64> = (a.first_seed..a.first_seed + a.seeds).collect();
    let opts = RunOptions {
        suite: suite.clone(),
        jobs: if a.serial_timing { 1 } else { a.jobs },
    };
    let cmp = compare_methods(&m.model, &bundle, &m.base, &methods, &seeds, &adam, &opts)?;

    fs::create_dir_all(&a.out)?;
    let mut artifacts = Vec::new();
    write_text(&a.out, RECORDS_FILE, &report::to_jsonl(&cmp.records)?, &mut artifacts)?;
    save_before(&a.out, &suite, &cmp.before, &mut artifacts)?;
    let table = report::accuracy_table(&cmp.records, &[(suite.clone(), cmp.before)]);
    write_text(&a.out, REPORT_FILE, &table, &mut artifacts)?;
    let timing = report::timing_table(&cmp.summaries);
    write_text(&a.out, TIMING_FILE, &timing, &mut artifacts)?;
    print!("{table}\n{timing}");
    Ok(Produced {
        out: a.out.clone(),
        seeds,
        artifacts,
    })
}

fn cmd_sweep(a: &SweepArgs) -> anyhow::Result<Produced> {
    if a.jobs == 0 {
        bail!(config("--jobs must be at least 1"));
    }
    let methods = method_configs(&a.methods, &a.method_args)?;
    let adam = a.method_args.adam.adam()?;
    let (bundle, suite) = read_bundle(&a.bundle)?;
    let m = load_model(&a.model, &bundle)?;
    let opts = RunOptions {
        suite: suite.clone(),
        jobs: a.jobs,
    };
    let sweep = shot_sweep(
        &m.model,
        &bundle,
        &m.base,
        &methods,
        &a.shots,
        a.resamples,
        a.first_seed,
        &adam,
        &opts,
    )?;

    fs::create_dir_all(&a.out)?;
    let mut artifacts = Vec::new();
    write_text(&a.out, RECORDS_FILE, &report::to_jsonl(&sweep.records)?, &mut artifacts)?;
    save_before(&a.out, &suite, &m.before, &mut artifacts)?;
    let table = report::sweep_table(&sweep);
    write_text(&a.out, SWEEP_FILE, &table, &mut artifacts)?;
    print!("{table}");
    Ok(Produced {
        out: a.out.clone(),
        seeds: (a.first_seed..a.first_seed + a.resamples as u64).collect(),
        artifacts,
    })
}

fn cmd_report(a: &ReportArgs) -> anyhow::Result<Option<Produced>> {
    let mut records: Vec<EvalReport> = Vec::new();
    let mut before: Vec<(String, Scores)> = Vec::new();
    for path in &a.records {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        records.extend(report::parse_jsonl(&text).with_context(|| format!("parsing {}", path.display()))?);
        let sidecar = path.with_file_name(BEFORE_FILE);
        if let Ok(text) = fs::read_to_string(&sidecar) {
            if let Ok(b) = serde_json::from_str::<BeforeFile>(&text) {
                if !before.iter().any(|(s, _)| *s == b.suite) {
                    before.push((b.suite, b.scores));
                }
            }
        }
    }
    let mut text = report::accuracy_table(&records, &before);
    if a.timing {
        text.push('\n');
        text.push_str(&report::timing_table(&summarize(&records)));
    }
    match &a.out {
        None => {
            print!("{text}");
            Ok(None)
        }
        Some(file) => {
            let dir = file.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            fs::create_dir_all(dir)?;
            write_atomic(file, text.as_bytes())?;
            Ok(Some(Produced {
                out: dir.to_owned(),
                seeds: records.iter().map(|r| r.seed).collect(),
                artifacts: vec![file.clone()],
            }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("patchbench").chain(args.iter().copied()))
    }

    #[test]
    fn gen_defaults_match_generator_defaults() {
        let Command::Gen(a) = parse(&["gen", "--out", "d", "--seed", "0"]).unwrap().command else {
            panic!("not gen");
        };
        assert_eq!(a.generator(), GeneratorConfig::default());
    }

    #[test]
    fn method_defaults_match_method_config() {
        let Command::Debug(a) = parse(&[
            "debug", "--bundle", "b", "--model", "m", "--out", "o", "--method", "kl", "--seed", "3",
        ])
        .unwrap()
        .command
        else {
            panic!("not debug");
        };
        let got = a.method_args.config(a.method, a.seed).unwrap();
        assert_eq!(got, MethodConfig::new(Method::KlRegularized).with_seed(3));
        assert_eq!(a.method_args.adam.adam().unwrap(), AdamConfig::default());
    }

    #[test]
    fn unknown_method_lists_valid_ones() {
        let err = parse(&["debug", "--bundle", "b", "--model", "m", "--out", "o", "--method", "sgd"]).unwrap_err();
        let text = err.to_string();
        assert!(text.contains("in-danger") && text.contains("oversampling"), "{text}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn method_lists() {
        assert_eq!(parse_methods("all").unwrap().0, Method::ALL.to_vec());
        assert_eq!(
            parse_methods("linf,in-danger").unwrap().0,
            vec![Method::LinfConstrained, Method::InDanger]
        );
        assert!(parse_methods("linf,,kl").is_err());
    }

    #[test]
    fn invocation_round_trips_through_manifest() {
        let cmd = parse(&[
            "compare", "--bundle", "b", "--model", "m", "--out", "o", "--methods", "kl,l2", "--seeds", "3",
            "--first-seed", "5", "--lambda", "0",
        ])
        .unwrap()
        .command;
        let value = serde_json::to_value(&cmd).unwrap();
        let manifest = RunManifest {
            command: cmd.name().to_owned(),
            config: value["config"].clone(),
            seeds: vec![],
            artifacts: vec![],
            version: String::new(),
            started_unix_s: 0.0,
            finished_unix_s: 0.0,
        };
        let text = serde_json::to_string(&manifest).unwrap();
        let back: RunManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back.invocation().unwrap(), cmd);
    }

    #[test]
    fn config_errors_map_to_exit_two() {
        let e = anyhow::Error::from(config("bad")).context("while doing things");
        assert_eq!(exit_code(&e), 2);
        let e = anyhow::Error::from(Error::Audit("leak".into()));
        assert_eq!(exit_code(&e), 1);
        let e = anyhow::anyhow!("plain failure");
        assert_eq!(exit_code(&e), 1);
    }
}
