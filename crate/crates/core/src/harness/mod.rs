//! Experiment orchestration: base training, evaluation, multi-seed method
//! comparison and shot sweeps.

pub mod report;
pub mod stats;

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Example, ExampleKey, SplitBundle};
use crate::error::{config, Error, Result};
use crate::methods::{
    run_method, train_epochs, BaseModel, DebugOutcome, Method, MethodConfig, PhaseTiming,
    Schedule,
};
use crate::model::{Classifier, ParameterVector};
use crate::optim::AdamConfig;

pub use stats::{mean_std, MeanStd, Running};

/// Hidden layer widths of the task model.
pub const BASE_HIDDEN: [usize; 2] = [64, 64];
/// Epochs of task training on X.
pub const BASE_EPOCHS: usize = 3;
pub const BASE_BATCH_SIZE: usize = 16;

/// Accuracy on the phenomenon test set and on the original test set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub debug_accuracy: f64,
    pub original_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseReport {
    pub base: BaseModel,
    pub scores: Scores,
}

/// Train the task model from its seeded initialization on X.
pub fn train_base(
    model: &Classifier,
    bundle: &SplitBundle,
    adam: &AdamConfig,
    epochs: usize,
    batch_size: usize,
) -> Result<BaseReport> {
    let init = model.init_params();
    let data: Vec<&Example> = bundle.train.iter().collect();
    let schedule = Schedule {
        epochs,
        batch_size,
        seed: model.config().init_seed,
    };
    let trained = train_epochs(model, &init, &data, adam, schedule, "base")?;
    let scores = evaluate(model, &trained, bundle)?;
    Ok(BaseReport {
        base: BaseModel { init, trained },
        scores,
    })
}

pub fn evaluate(model: &Classifier, params: &ParameterVector, bundle: &SplitBundle) -> Result<Scores> {
    if bundle.test.is_empty() || bundle.debug_test.is_empty() {
        return Err(config("evaluation needs nonempty original and debugging test sets"));
    }
    Ok(Scores {
        debug_accuracy: model.accuracy(params, &bundle.debug_test)?,
        original_accuracy: model.accuracy(params, &bundle.test)?,
    })
}

/// [`evaluate`], refusing to score any example that was trained on.
pub fn evaluate_audited(
    model: &Classifier,
    params: &ParameterVector,
    bundle: &SplitBundle,
    trained_on: &[&[Example]],
) -> Result<Scores> {
    let seen: HashSet<ExampleKey> = trained_on
        .iter()
        .flat_map(|set| set.iter().map(Example::key))
        .collect();
    for (name, scored) in [("original test", &bundle.test), ("debugging test", &bundle.debug_test)] {
        if scored.iter().any(|x| seen.contains(&x.key())) {
            return Err(Error::Audit(format!(
                "the {name} set overlaps examples used for debugging"
            )));
        }
    }
    evaluate(model, params, bundle)
}

/// One scored debugging run; the record format of every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub suite: String,
    pub method: Method,
    pub seed: u64,
    pub shots: usize,
    pub debug_acc: f64,
    pub orig_acc: f64,
    pub wall_time_s: f64,
    pub epochs_used: usize,
    pub converged: bool,
    pub w_found: usize,
    pub scan_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<PhaseTiming>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    pub suite: String,
    /// Worker threads; 1 runs everything serially on the calling thread.
    pub jobs: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            suite: "synthetic".to_owned(),
            jobs: 1,
        }
    }
}

/// A finished run: the record plus the outcome it was computed from.
#[derive(Debug, Clone)]
pub struct Run {
    pub report: EvalReport,
    pub outcome: DebugOutcome,
}

/// Redraw the debugging split with `seed`, run the method with the same seed
/// and score it on the held-out sets.
#[allow(clippy::too_many_arguments)]
pub fn run_seeded(
    model: &Classifier,
    bundle: &SplitBundle,
    base: &BaseModel,
    method: &MethodConfig,
    adam: &AdamConfig,
    shots: usize,
    seed: u64,
    suite: &str,
) -> Result<Run> {
    let resampled = bundle.resample_debug(shots, seed)?;
    let method = method.clone().with_seed(seed);
    run_on(model, &resampled, base, &method, adam, suite)
}

/// Run on the bundle's debugging split as given.
pub fn run_on(
    model: &Classifier,
    bundle: &SplitBundle,
    base: &BaseModel,
    method: &MethodConfig,
    adam: &AdamConfig,
    suite: &str,
) -> Result<Run> {
    let outcome = run_method(model, bundle, base, method, adam)?;
    let scores = evaluate_audited(
        model,
        &outcome.patched_params,
        bundle,
        &[&bundle.debug, &outcome.in_danger],
    )?;
    let report = EvalReport {
        suite: suite.to_owned(),
        method: method.method,
        seed: method.seed,
        shots: bundle.debug.len(),
        debug_acc: scores.debug_accuracy,
        orig_acc: scores.original_accuracy,
        wall_time_s: outcome.wall_time_s,
        epochs_used: outcome.epochs_used,
        converged: outcome.converged,
        w_found: outcome.w_found,
        scan_fraction: outcome.scan_fraction,
        timing: outcome.timing,
    };
    Ok(Run { report, outcome })
}

fn run_tasks<T, R, F>(tasks: &[T], jobs: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    if jobs <= 1 {
        return tasks.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| config(format!("cannot start {jobs} worker threads: {e}")))?;
    pool.install(|| tasks.par_iter().map(&f).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub runs: usize,
    pub debug_acc: MeanStd,
    pub orig_acc: MeanStd,
    pub wall_time_s: f64,
    pub epochs_used: f64,
    pub converged_runs: usize,
    pub w_found: f64,
    pub scan_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<PhaseTiming>,
}

/// Per-method aggregates, in the order methods first appear.
pub fn summarize(records: &[EvalReport]) -> Vec<MethodSummary> {
    let mut methods: Vec<Method> = Vec::new();
    for r in records {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    methods
        .into_iter()
        .map(|method| {
            let rs: Vec<&EvalReport> = records.iter().filter(|r| r.method == method).collect();
            let avg = |f: &dyn Fn(&EvalReport) -> f64| mean_std(&rs.iter().map(|r| f(r)).collect::<Vec<_>>()).mean;
            let timings: Vec<PhaseTiming> = rs.iter().filter_map(|r| r.timing).collect();
            let timing = (!timings.is_empty()).then(|| {
                let n = timings.len() as f64;
                PhaseTiming {
                    debug_only_s: timings.iter().map(|t| t.debug_only_s).sum::<f64>() / n,
                    collect_s: timings.iter().map(|t| t.collect_s).sum::<f64>() / n,
                    final_s: timings.iter().map(|t| t.final_s).sum::<f64>() / n,
                }
            });
            MethodSummary {
                method,
                runs: rs.len(),
                debug_acc: mean_std(&rs.iter().map(|r| r.debug_acc).collect::<Vec<_>>()),
                orig_acc: mean_std(&rs.iter().map(|r| r.orig_acc).collect::<Vec<_>>()),
                wall_time_s: avg(&|r| r.wall_time_s),
                epochs_used: avg(&|r| r.epochs_used as f64),
                converged_runs: rs.iter().filter(|r| r.converged).count(),
                w_found: avg(&|r| r.w_found as f64),
                scan_fraction: avg(&|r| r.scan_fraction),
                timing,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub suite: String,
    pub before: Scores,
    pub records: Vec<EvalReport>,
    pub summaries: Vec<MethodSummary>,
}

/// Run every method once per seed. Each seed redraws the debugging split
/// (keeping its size) and seeds the method.
#[allow(clippy::too_many_arguments)]
pub fn compare_methods(
    model: &Classifier,
    bundle: &SplitBundle,
    base: &BaseModel,
    methods: &[MethodConfig],
    seeds: &[u64],
    adam: &AdamConfig,
    opts: &RunOptions,
) -> Result<Comparison> {
    if seeds.is_empty() {
        return Err(config("compare needs at least one seed"));
    }
    let shots = bundle.debug.len();
    if shots == 0 {
        return Err(config("the bundle has no debugging examples"));
    }
    let tasks: Vec<(&MethodConfig, u64)> = methods
        .iter()
        .flat_map(|m| seeds.iter().map(move |&s| (m, s)))
        .collect();
    let records = run_tasks(&tasks, opts.jobs, |(m, seed)| {
        run_seeded(model, bundle, base, m, adam, shots, *seed, &opts.suite).map(|r| r.report)
    })?;
    Ok(Comparison {
        suite: opts.suite.clone(),
        before: evaluate(model, &base.trained, bundle)?,
        summaries: summarize(&records),
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub shots: usize,
    pub summary: MethodSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub suite: String,
    pub shots: Vec<usize>,
    pub n_resamples: usize,
    pub cells: Vec<SweepCell>,
    pub records: Vec<EvalReport>,
}

impl SweepReport {
    pub fn cell(&self, shots: usize, method: Method) -> Option<&MethodSummary> {
        self.cells
            .iter()
            .find(|c| c.shots == shots && c.summary.method == method)
            .map(|c| &c.summary)
    }
}

/// For each shot count, redraw X′ from the phenomenon pool `n_resamples`
/// times (seeds `first_seed..`) and run every method on each draw.
#[allow(clippy::too_many_arguments)]
pub fn shot_sweep(
    model: &Classifier,
    bundle: &SplitBundle,
    base: &BaseModel,
    methods: &[MethodConfig],
    shots: &[usize],
    n_resamples: usize,
    first_seed: u64,
    adam: &AdamConfig,
    opts: &RunOptions,
) -> Result<SweepReport> {
    if n_resamples < 2 {
        return Err(config("a sweep needs at least 2 resamples"));
    }
    if shots.is_empty() || shots.contains(&0) {
        return Err(config("shot counts must be positive"));
    }
    let pool = bundle.debug.len() + bundle.debug_test.len();
    if let Some(&max) = shots.iter().max() {
        if max >= pool {
            return Err(config(format!(
                "phenomenon pool of {pool} is too small for {max} shots"
            )));
        }
    }
    let tasks: Vec<(usize, &MethodConfig, u64)> = shots
        .iter()
        .flat_map(|&k| {
            methods.iter().flat_map(move |m| {
                (0..n_resamples as u64).map(move |r| (k, m, first_seed + r))
            })
        })
        .collect();
    let records = run_tasks(&tasks, opts.jobs, |&(k, m, seed)| {
        run_seeded(model, bundle, base, m, adam, k, seed, &opts.suite).map(|r| r.report)
    })?;
    let mut cells = Vec::new();
    for &k in shots {
        let at_k: Vec<EvalReport> = records.iter().filter(|r| r.shots == k).cloned().collect();
        cells.extend(
            summarize(&at_k)
                .into_iter()
                .map(|summary| SweepCell { shots: k, summary }),
        );
    }
    Ok(SweepReport {
        suite: opts.suite.clone(),
        shots: shots.to_vec(),
        n_resamples,
        cells,
        records,
    })
}
