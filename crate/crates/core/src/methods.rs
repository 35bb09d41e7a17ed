//! Debugging procedures: the in-danger rehearsal method and its fast and slow
//! baselines. Every procedure maps (bundle, base model) to patched parameters.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Example, SplitBundle};
use crate::error::{config, invalid, Error, Result};
use crate::model::{Classifier, ParameterVector};
use crate::optim::{AdamConfig, AdamState, BallConstraint, NormKind};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    DebugOnly,
    #[serde(rename = "l2")]
    L2Constrained,
    #[serde(rename = "linf")]
    LinfConstrained,
    #[serde(rename = "kl")]
    KlRegularized,
    InDanger,
    MixedIn,
    Oversampling,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::DebugOnly,
        Method::L2Constrained,
        Method::LinfConstrained,
        Method::KlRegularized,
        Method::InDanger,
        Method::MixedIn,
        Method::Oversampling,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::DebugOnly => "debug-only",
            Method::L2Constrained => "l2",
            Method::LinfConstrained => "linf",
            Method::KlRegularized => "kl",
            Method::InDanger => "in-danger",
            Method::MixedIn => "mixed-in",
            Method::Oversampling => "oversampling",
        }
    }

    /// Row label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            Method::DebugOnly => "Debug only",
            Method::L2Constrained => "L2",
            Method::LinfConstrained => "Linf",
            Method::KlRegularized => "K-L",
            Method::InDanger => "In-danger (ours)",
            Method::MixedIn => "Mixed in",
            Method::Oversampling => "Oversampling",
        }
    }

    /// Fast methods never take a full pass of gradient steps over X.
    pub fn is_fast(self) -> bool {
        !matches!(self, Method::MixedIn | Method::Oversampling)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                config(format!(
                    "unknown method {s:?}; valid methods: {}",
                    valid.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub method: Method,
    /// Ball radius for the constrained baselines.
    pub delta: f64,
    /// Weight of the KL term.
    pub lambda: f64,
    /// |W| = w_multiplier * |X′|.
    pub w_multiplier: usize,
    pub batch_size: usize,
    pub max_epochs_fast: usize,
    pub slow_epochs: usize,
    pub seed: u64,
    /// Check the stopping rule after every batch instead of every epoch.
    pub check_every_batch: bool,
}

impl MethodConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            delta: 0.1,
            lambda: 10.0,
            w_multiplier: 2,
            batch_size: 16,
            max_epochs_fast: 50,
            slow_epochs: 3,
            seed: 0,
            check_every_batch: false,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.w_multiplier < 1 {
            return Err(config("w_multiplier must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(config("batch_size must be at least 1"));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(config(format!("delta must be finite and >= 0, got {}", self.delta)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// The two starting points a debugging run may need.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseModel {
    /// Seeded initialization from before task training (start of the slow baselines).
    pub init: ParameterVector,
    /// Task-trained parameters being debugged.
    pub trained: ParameterVector,
}

/// Time spent in each phase of the in-danger method.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub debug_only_s: f64,
    pub collect_s: f64,
    pub final_s: f64,
}

impl PhaseTiming {
    pub fn total(&self) -> f64 {
        self.debug_only_s + self.collect_s + self.final_s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DebugOutcome {
    pub patched_params: ParameterVector,
    /// Every example of the target subset is argmax-correct under `patched_params`.
    pub converged: bool,
    pub epochs_used: usize,
    pub w_requested: usize,
    pub w_found: usize,
    pub scan_fraction: f64,
    pub wall_time_s: f64,
    /// The rehearsed in-danger examples (in-danger method only).
    pub in_danger: Vec<Example>,
    pub timing: Option<PhaseTiming>,
}

impl DebugOutcome {
    fn finetuned(params: ParameterVector, converged: bool, epochs: usize) -> Self {
        Self {
            patched_params: params,
            converged,
            epochs_used: epochs,
            w_requested: 0,
            w_found: 0,
            scan_fraction: 0.0,
            wall_time_s: 0.0,
            in_danger: Vec::new(),
            timing: None,
        }
    }
}

/// Frozen anchor model whose predictions on `pool` the KL term preserves.
#[derive(Debug, Clone, Copy)]
pub struct KlAnchor<'a> {
    pub params: &'a ParameterVector,
    pub pool: &'a [Example],
    pub lambda: f64,
}

/// Mean over the batch of KL(anchor || current).
pub fn kl_term(
    model: &Classifier,
    anchor: &ParameterVector,
    current: &ParameterVector,
    batch: &[Example],
) -> Result<f64> {
    let probs = model.probabilities(anchor, batch)?;
    let refs: Vec<&Example> = batch.iter().collect();
    model
        .kl_and_gradient(current, &refs, &probs, false)
        .map(|(kl, _)| kl)
}

fn check_finite(params: &ParameterVector, what: &str) -> Result<()> {
    if params.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("parameters after {what}")))
    }
}

/// Repeated full epochs of Adam over `train_subset` until every example in
/// it is argmax-correct, or `max_epochs_fast` epochs have run.
///
/// Randomness comes from streams named after `stream`, so two runs that share
/// a stream label shuffle identically whatever else they sample.
#[allow(clippy::too_many_arguments)]
pub fn intensive_finetune(
    model: &Classifier,
    start: &ParameterVector,
    train_subset: &[Example],
    adam: &AdamConfig,
    method: &MethodConfig,
    constraint: Option<&BallConstraint>,
    kl_anchor: Option<KlAnchor<'_>>,
    stream: &str,
) -> Result<DebugOutcome> {
    if train_subset.is_empty() {
        return Err(config("intensive fine-tuning needs a nonempty training subset"));
    }
    method.validate()?;
    adam.validate()?;
    let mut params = start.clone();
    if model.all_correct(&params, train_subset)? {
        return Ok(DebugOutcome::finetuned(params, true, 0));
    }
    if let Some(kl) = &kl_anchor {
        if kl.pool.is_empty() {
            return Err(config("KL anchor set is empty"));
        }
    }

    let mut shuffle_rng = rng::stream(method.seed, &format!("{stream}/shuffle"));
    let mut anchor_rng = rng::stream(method.seed, &format!("{stream}/kl-anchor"));
    let mut state = AdamState::new(params.len());
    let mut order: Vec<usize> = (0..train_subset.len()).collect();

    for epoch in 1..=method.max_epochs_fast {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(method.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train_subset[i]).collect();
            let (_, mut grad) = model.batch_loss(&params, &batch, true)?;
            if let Some(kl) = &kl_anchor {
                let n = batch.len().min(kl.pool.len());
                let picks = rand::seq::index::sample(&mut anchor_rng, kl.pool.len(), n);
                if kl.lambda != 0.0 {
                    let anchor_batch: Vec<&Example> =
                        picks.into_iter().map(|i| &kl.pool[i]).collect();
                    let anchor_probs = anchor_batch
                        .iter()
                        .map(|x| model.predict(kl.params, x).map(|p| p.probabilities))
                        .collect::<Result<Vec<_>>>()?;
                    let (_, kl_grad) =
                        model.kl_and_gradient(&params, &anchor_batch, &anchor_probs, true)?;
                    for (g, k) in grad.values_mut().iter_mut().zip(kl_grad.values()) {
                        *g += kl.lambda * k;
                    }
                }
            }
            state.update(&mut params, &grad, adam)?;
            if let Some(ball) = constraint {
                ball.project_in_place(&mut params)?;
            }
            check_finite(&params, "an Adam step")?;
            if method.check_every_batch && model.all_correct(&params, train_subset)? {
                return Ok(DebugOutcome::finetuned(params, true, epoch));
            }
        }
        if model.all_correct(&params, train_subset)? {
            return Ok(DebugOutcome::finetuned(params, true, epoch));
        }
    }
    Ok(DebugOutcome::finetuned(params, false, method.max_epochs_fast))
}

/// Walk a seeded shuffle of `pool`, keeping examples the original model gets
/// right and the debugged model gets wrong, until `count` are found.
/// Returns them with the fraction of `pool` that was examined.
pub fn collect_in_danger(
    model: &Classifier,
    original: &ParameterVector,
    debugged: &ParameterVector,
    pool: &[Example],
    count: usize,
    seed: u64,
) -> Result<(Vec<Example>, f64)> {
    if count == 0 {
        return Err(config("in-danger count must be at least 1"));
    }
    if pool.is_empty() {
        return Ok((Vec::new(), 1.0));
    }
    let mut rng = rng::stream(seed, "in-danger/scan");
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut found = Vec::with_capacity(count);
    let mut scanned = 0;
    // incremental Fisher-Yates: only the visited prefix gets shuffled
    for i in 0..pool.len() {
        let j = rng.random_range(i..pool.len());
        order.swap(i, j);
        let x = &pool[order[i]];
        scanned += 1;
        if !model.is_correct(debugged, x)? && model.is_correct(original, x)? {
            found.push(x.clone());
            if found.len() == count {
                break;
            }
        }
    }
    Ok((found, scanned as f64 / pool.len() as f64))
}

fn seconds_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

/// Run one debugging procedure on `bundle`, starting from `base`.
pub fn run_method(
    model: &Classifier,
    bundle: &SplitBundle,
    base: &BaseModel,
    method: &MethodConfig,
    adam: &AdamConfig,
) -> Result<DebugOutcome> {
    method.validate()?;
    if bundle.debug.is_empty() {
        return Err(config(format!(
            "method {} needs at least one debugging example",
            method.method
        )));
    }
    if base.trained.len() != model.param_count() || base.init.len() != model.param_count() {
        return Err(invalid("base checkpoint does not match the model architecture"));
    }
    let started = Instant::now();
    let theta = &base.trained;
    let x_debug = &bundle.debug;
    let mut outcome = match method.method {
        Method::DebugOnly => {
            intensive_finetune(model, theta, x_debug, adam, method, None, None, "finetune")?
        }
        Method::L2Constrained | Method::LinfConstrained => {
            let norm = if method.method == Method::L2Constrained {
                NormKind::L2
            } else {
                NormKind::Linf
            };
            let ball = BallConstraint::new(norm, method.delta, theta.clone())?;
            intensive_finetune(model, theta, x_debug, adam, method, Some(&ball), None, "finetune")?
        }
        Method::KlRegularized => {
            let anchor = KlAnchor {
                params: theta,
                pool: &bundle.train,
                lambda: method.lambda,
            };
            intensive_finetune(model, theta, x_debug, adam, method, None, Some(anchor), "finetune")?
        }
        Method::InDanger => {
            let debug_only =
                intensive_finetune(model, theta, x_debug, adam, method, None, None, "finetune")?;
            let after_debug = Instant::now();
            let requested = method.w_multiplier * x_debug.len();
            let (w, scan_fraction) = collect_in_danger(
                model,
                theta,
                &debug_only.patched_params,
                &bundle.train,
                requested,
                method.seed,
            )?;
            let after_collect = Instant::now();
            let subset: Vec<Example> = x_debug.iter().chain(&w).cloned().collect();
            let mut outcome = intensive_finetune(
                model,
                theta,
                &subset,
                adam,
                method,
                None,
                None,
                "finetune-final",
            )?;
            let done = Instant::now();
            outcome.timing = Some(PhaseTiming {
                debug_only_s: (after_debug - started).as_secs_f64(),
                collect_s: (after_collect - after_debug).as_secs_f64(),
                final_s: (done - after_collect).as_secs_f64(),
            });
            outcome.w_requested = requested;
            outcome.w_found = w.len();
            outcome.scan_fraction = scan_fraction;
            outcome.in_danger = w;
            outcome
        }
        Method::MixedIn => {
            let data: Vec<&Example> = x_debug.iter().chain(&bundle.train).collect();
            let schedule = Schedule {
                epochs: method.slow_epochs,
                batch_size: method.batch_size,
                seed: method.seed,
            };
            let params = train_epochs(model, &base.init, &data, adam, schedule, "slow")?;
            let converged = model.all_correct(&params, x_debug)?;
            DebugOutcome::finetuned(params, converged, method.slow_epochs)
        }
        Method::Oversampling => {
            let params = oversample(model, &base.init, bundle, adam, method)?;
            let converged = model.all_correct(&params, x_debug)?;
            DebugOutcome::finetuned(params, converged, method.slow_epochs)
        }
    };
    outcome.wall_time_s = seconds_since(started);
    Ok(outcome)
}

/// Epoch count, batch size and seed for plain minibatch training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

/// Plain minibatch Adam training, reshuffling `data` every epoch.
pub fn train_epochs(
    model: &Classifier,
    start: &ParameterVector,
    data: &[&Example],
    adam: &AdamConfig,
    schedule: Schedule,
    stream: &str,
) -> Result<ParameterVector> {
    adam.validate()?;
    if schedule.batch_size == 0 {
        return Err(config("batch_size must be at least 1"));
    }
    let mut rng = rng::stream(schedule.seed, &format!("{stream}/shuffle"));
    let mut params = start.clone();
    let mut state = AdamState::new(params.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..schedule.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(schedule.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| data[i]).collect();
            let (_, grad) = model.batch_loss(&params, &batch, true)?;
            state.update(&mut params, &grad, adam)?;
        }
        check_finite(&params, "an epoch of training")?;
    }
    Ok(params)
}

/// Epochs over X where each batch interleaves X examples (without
/// replacement) with as many X′ examples drawn with replacement.
fn oversample(
    model: &Classifier,
    start: &ParameterVector,
    bundle: &SplitBundle,
    adam: &AdamConfig,
    method: &MethodConfig,
) -> Result<ParameterVector> {
    adam.validate()?;
    let half = (method.batch_size / 2).max(1);
    let mut shuffle_rng = rng::stream(method.seed, "slow/shuffle");
    let mut debug_rng = rng::stream(method.seed, "slow/debug-draw");
    let mut params = start.clone();
    let mut state = AdamState::new(params.len());
    let mut order: Vec<usize> = (0..bundle.train.len()).collect();
    let x_debug = &bundle.debug;
    for _ in 0..method.slow_epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(half) {
            let mut batch: Vec<&Example> = Vec::with_capacity(2 * chunk.len());
            for &i in chunk {
                batch.push(&bundle.train[i]);
                batch.push(&x_debug[debug_rng.random_range(0..x_debug.len())]);
            }
            let (_, grad) = model.batch_loss(&params, &batch, true)?;
            state.update(&mut params, &grad, adam)?;
        }
        check_finite(&params, "an epoch of oversampled training")?;
    }
    Ok(params)
}
