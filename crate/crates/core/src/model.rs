//! Small dense classifier: ReLU hidden layers, softmax head.
//!
//! Parameters live in one flat [`ParameterVector`]. For each layer the weight
//! matrix is stored row-major (`outputs x inputs`) followed by its bias.
//! Every function here is a pure function of its arguments.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Example, LabelSpace};
use crate::error::{config, invalid, Error, Result};
use crate::rng;

/// Default floor applied to probabilities before taking a log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn linf_distance(&self, other: &ParameterVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn l2_distance(&self, other: &ParameterVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl From<Vec<f64>> for ParameterVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    pub init_seed: u64,
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(config(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if self.input_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(config("all layer dimensions must be at least 1"));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut widths = Vec::with_capacity(self.hidden_dims.len() + 2);
        widths.push(self.input_dim);
        widths.extend_from_slice(&self.hidden_dims);
        widths.push(self.num_classes);
        widths
    }

    pub fn param_count(&self) -> usize {
        self.widths().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

impl fmt::Display for ClassifierConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.input_dim)?;
        for h in &self.hidden_dims {
            write!(f, "-{h}")?;
        }
        write!(f, "-{} (seed {})", self.num_classes, self.init_seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    pub logits: Vec<f64>,
}

impl Prediction {
    pub fn from_logits(logits: Vec<f64>) -> Self {
        let probabilities = softmax(&logits);
        Self {
            probabilities,
            logits,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.probabilities.len()
    }

    /// Most probable class; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.probabilities)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Collapse a 3+ class entailment-style prediction into (entailment, non-entailment).
///
/// The non-entailment logit is the log-sum-exp of every non-entailment logit,
/// so the softmax of the returned logits reproduces the summed probabilities.
pub fn collapse_nonentailment(pred: &Prediction, entail_class: usize) -> Result<Prediction> {
    let classes = pred.num_classes();
    if classes < 3 {
        return Err(invalid(format!(
            "non-entailment collapse needs at least 3 classes, got {classes}"
        )));
    }
    if entail_class >= classes {
        return Err(invalid(format!(
            "entailment class {entail_class} out of range for {classes} classes"
        )));
    }
    let others: Vec<f64> = (0..classes)
        .filter(|&k| k != entail_class)
        .map(|k| pred.logits[k])
        .collect();
    let nonent_logit = log_sum_exp(&others);
    let p_nonent: f64 = (0..classes)
        .filter(|&k| k != entail_class)
        .map(|k| pred.probabilities[k])
        .sum();
    let p_entail = pred.probabilities[entail_class];
    let total = p_entail + p_nonent;
    Ok(Prediction {
        probabilities: vec![p_entail / total, p_nonent / total],
        logits: vec![pred.logits[entail_class], nonent_logit],
    })
}

/// Log of the collapsed non-entailment probability, computed from logits.
pub fn log_nonentailment(logits: &[f64], entail_class: usize) -> f64 {
    let others: Vec<f64> = logits
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != entail_class)
        .map(|(_, &l)| l)
        .collect();
    log_sum_exp(&others) - log_sum_exp(logits)
}

/// Which form of the per-example loss to train on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// `-log p(x, y)`.
    #[default]
    CrossEntropy,
    /// `-p(x, y) log p(x, y)`; kept for exactness experiments only.
    EntropyWeighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    pub prob_floor: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::CrossEntropy,
            prob_floor: PROB_FLOOR,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    inputs: usize,
    outputs: usize,
    weights: usize,
    bias: usize,
}

/// Set of classes whose total probability is the "true class" probability.
#[derive(Debug, Clone, Copy)]
enum Target {
    Class(usize),
    AllBut(usize),
}

impl Target {
    fn contains(self, k: usize) -> bool {
        match self {
            Target::Class(c) => k == c,
            Target::AllBut(c) => k != c,
        }
    }

    fn is_single(self) -> bool {
        matches!(self, Target::Class(_))
    }
}

struct Activations {
    /// Input to each layer (post-ReLU for hidden layers).
    inputs: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Classifier {
    config: ClassifierConfig,
    layers: Vec<Layer>,
    loss: LossConfig,
}

impl Classifier {
    pub fn new(config: ClassifierConfig) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::new();
        let mut offset = 0;
        for w in config.widths().windows(2) {
            let (inputs, outputs) = (w[0], w[1]);
            layers.push(Layer {
                inputs,
                outputs,
                weights: offset,
                bias: offset + inputs * outputs,
            });
            offset += inputs * outputs + outputs;
        }
        Ok(Self {
            config,
            layers,
            loss: LossConfig::default(),
        })
    }

    pub fn with_loss(mut self, loss: LossConfig) -> Self {
        self.loss = loss;
        self
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn loss_config(&self) -> LossConfig {
        self.loss
    }

    pub fn param_count(&self) -> usize {
        self.config.param_count()
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    /// Seeded Glorot-uniform weights, zero biases.
    pub fn init_params(&self) -> ParameterVector {
        let mut rng = rng::stream(self.config.init_seed, "model/init");
        let mut values = vec![0.0; self.param_count()];
        for layer in &self.layers {
            let a = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut values[layer.weights..layer.bias] {
                *w = rng.random_range(-a..=a);
            }
        }
        ParameterVector(values)
    }

    fn check_params(&self, params: &ParameterVector) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(invalid(format!(
                "parameter vector has {} values, architecture {} needs {}",
                params.len(),
                self.config,
                self.param_count()
            )));
        }
        Ok(())
    }

    fn check_features(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.config.input_dim {
            return Err(invalid(format!(
                "example has {} features, model expects {}",
                features.len(),
                self.config.input_dim
            )));
        }
        Ok(())
    }

    fn target(&self, x: &Example) -> Result<Target> {
        let classes = self.config.num_classes;
        match x.label_space {
            LabelSpace::Native if x.label < classes => Ok(Target::Class(x.label)),
            LabelSpace::Entailment if x.label < 2 => {
                if classes >= 3 && x.label == 1 {
                    Ok(Target::AllBut(0))
                } else {
                    Ok(Target::Class(x.label))
                }
            }
            _ => Err(invalid(format!(
                "label {} ({:?}) out of range for {} classes",
                x.label, x.label_space, classes
            ))),
        }
    }

    fn run(&self, params: &[f64], features: &[f64]) -> Activations {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut current = features.to_vec();
        let last = self.layers.len() - 1;
        for (idx, layer) in self.layers.iter().enumerate() {
            let w = &params[layer.weights..layer.bias];
            let b = &params[layer.bias..layer.bias + layer.outputs];
            let mut out = b.to_vec();
            for (o, z) in out.iter_mut().enumerate() {
                let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
                *z += row.iter().zip(&current).map(|(a, c)| a * c).sum::<f64>();
            }
            if idx != last {
                for z in &mut out {
                    *z = z.max(0.0);
                }
            }
            inputs.push(std::mem::replace(&mut current, out));
        }
        Activations {
            inputs,
            logits: current,
        }
    }

    /// Accumulate `scale * dL/dparams` given `dL/dlogits` for one example.
    fn backprop(
        &self,
        params: &[f64],
        acts: &Activations,
        dlogits: &[f64],
        scale: f64,
        grad: &mut [f64],
    ) {
        let mut delta: Vec<f64> = dlogits.iter().map(|d| d * scale).collect();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let input = &acts.inputs[idx];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = layer.weights + o * layer.inputs;
                for (g, &a) in grad[row..row + layer.inputs].iter_mut().zip(input) {
                    *g += d * a;
                }
                grad[layer.bias + o] += d;
            }
            if idx == 0 {
                break;
            }
            let w = &params[layer.weights..layer.bias];
            let mut prev = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
                for (p, &wv) in prev.iter_mut().zip(row) {
                    *p += wv * d;
                }
            }
            for (p, &a) in prev.iter_mut().zip(input) {
                if a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }

    pub fn forward(&self, params: &ParameterVector, features: &[f64]) -> Result<Prediction> {
        self.check_params(params)?;
        self.check_features(features)?;
        let acts = self.run(params.values(), features);
        Ok(Prediction::from_logits(acts.logits))
    }

    pub fn predict(&self, params: &ParameterVector, x: &Example) -> Result<Prediction> {
        self.forward(params, &x.features)
    }

    /// Predicted label in the example's own label space.
    pub fn predicted_label(&self, params: &ParameterVector, x: &Example) -> Result<usize> {
        let pred = self.predict(params, x)?;
        match x.label_space {
            LabelSpace::Entailment if self.config.num_classes >= 3 => {
                Ok(collapse_nonentailment(&pred, 0)?.argmax())
            }
            _ => Ok(pred.argmax()),
        }
    }

    pub fn is_correct(&self, params: &ParameterVector, x: &Example) -> Result<bool> {
        self.target(x)?;
        Ok(self.predicted_label(params, x)? == x.label)
    }

    /// Fraction of `examples` classified correctly. Empty input scores 0.
    pub fn accuracy(&self, params: &ParameterVector, examples: &[Example]) -> Result<f64> {
        if examples.is_empty() {
            return Ok(0.0);
        }
        let mut correct = 0usize;
        for x in examples {
            if self.is_correct(params, x)? {
                correct += 1;
            }
        }
        Ok(correct as f64 / examples.len() as f64)
    }

    pub fn all_correct(&self, params: &ParameterVector, examples: &[Example]) -> Result<bool> {
        for x in examples {
            if !self.is_correct(params, x)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Per-example loss and its derivative with respect to the logits.
    fn example_loss(&self, logits: &[f64], target: Target) -> (f64, Vec<f64>) {
        let probs = softmax(logits);
        let p_target: f64 = (0..probs.len())
            .filter(|&k| target.contains(k))
            .map(|k| probs[k])
            .sum();
        let log_p = match target {
            Target::Class(c) => logits[c] - log_sum_exp(logits),
            Target::AllBut(c) => log_nonentailment(logits, c),
        };
        let floor = self.loss.prob_floor;
        let clamped = log_p < floor.ln();
        // dp_target/dlogit_k = [k in target] p_k - p_target p_k
        let dp = |k: usize| {
            let inside = if target.contains(k) { probs[k] } else { 0.0 };
            inside - p_target * probs[k]
        };
        match self.loss.kind {
            LossKind::CrossEntropy => {
                if clamped {
                    return (-floor.ln(), vec![0.0; logits.len()]);
                }
                let grad = (0..probs.len())
                    .map(|k| {
                        if target.is_single() {
                            probs[k] - if target.contains(k) { 1.0 } else { 0.0 }
                        } else if target.contains(k) {
                            probs[k] - probs[k] / p_target
                        } else {
                            probs[k]
                        }
                    })
                    .collect();
                (-log_p, grad)
            }
            LossKind::EntropyWeighted => {
                let log_p = log_p.max(floor.ln());
                let p = log_p.exp();
                let scale = -(log_p + 1.0);
                let grad = (0..probs.len())
                    .map(|k| if clamped { 0.0 } else { scale * dp(k) })
                    .collect();
                (-p * log_p, grad)
            }
        }
    }

    pub fn loss(&self, params: &ParameterVector, batch: &[Example]) -> Result<f64> {
        let refs: Vec<&Example> = batch.iter().collect();
        self.batch_loss(params, &refs, false).map(|(l, _)| l)
    }

    pub fn gradient(&self, params: &ParameterVector, batch: &[Example]) -> Result<ParameterVector> {
        self.loss_and_gradient(params, batch).map(|(_, g)| g)
    }

    /// Mean loss over the batch and its analytic gradient.
    pub fn loss_and_gradient(
        &self,
        params: &ParameterVector,
        batch: &[Example],
    ) -> Result<(f64, ParameterVector)> {
        let refs: Vec<&Example> = batch.iter().collect();
        self.batch_loss(params, &refs, true)
    }

    pub(crate) fn batch_loss(
        &self,
        params: &ParameterVector,
        batch: &[&Example],
        with_grad: bool,
    ) -> Result<(f64, ParameterVector)> {
        if batch.is_empty() {
            return Err(invalid("loss needs a nonempty batch"));
        }
        self.check_params(params)?;
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        let mut grad = vec![0.0; if with_grad { params.len() } else { 0 }];
        for x in batch {
            self.check_features(&x.features)?;
            let target = self.target(x)?;
            let acts = self.run(params.values(), &x.features);
            let (loss, dlogits) = self.example_loss(&acts.logits, target);
            total += loss;
            if with_grad {
                self.backprop(params.values(), &acts, &dlogits, scale, &mut grad);
            }
        }
        let loss = total * scale;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("batch loss is {loss}")));
        }
        Ok((loss, ParameterVector(grad)))
    }

    /// Mean KL(anchor || current) over the batch, and its gradient with respect
    /// to the current parameters. `anchor_probs` holds the frozen anchor
    /// distribution for each example.
    pub(crate) fn kl_and_gradient(
        &self,
        params: &ParameterVector,
        batch: &[&Example],
        anchor_probs: &[Vec<f64>],
        with_grad: bool,
    ) -> Result<(f64, ParameterVector)> {
        if batch.is_empty() {
            return Err(invalid("KL term needs a nonempty batch"));
        }
        self.check_params(params)?;
        let floor = self.loss.prob_floor;
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        let mut grad = vec![0.0; if with_grad { params.len() } else { 0 }];
        for (x, anchor) in batch.iter().zip(anchor_probs) {
            self.check_features(&x.features)?;
            let acts = self.run(params.values(), &x.features);
            let current = softmax(&acts.logits);
            let mut kl = 0.0;
            let mut anchor_mass = 0.0;
            let mut floored = vec![false; current.len()];
            for k in 0..current.len() {
                if anchor[k] > 0.0 {
                    floored[k] = current[k] < floor;
                    kl += anchor[k] * (anchor[k].ln() - current[k].max(floor).ln());
                    if !floored[k] {
                        anchor_mass += anchor[k];
                    }
                }
            }
            total += kl;
            if with_grad {
                // d/dl_k of -sum_y a_y log q_y over unfloored y
                let dlogits: Vec<f64> = (0..current.len())
                    .map(|k| {
                        let own = if floored[k] { 0.0 } else { anchor[k] };
                        anchor_mass * current[k] - own
                    })
                    .collect();
                self.backprop(params.values(), &acts, &dlogits, scale, &mut grad);
            }
        }
        let kl = total * scale;
        if !kl.is_finite() {
            return Err(Error::NonFinite(format!("KL term is {kl}")));
        }
        Ok((kl, ParameterVector(grad)))
    }

    pub fn probabilities(&self, params: &ParameterVector, batch: &[Example]) -> Result<Vec<Vec<f64>>> {
        batch
            .iter()
            .map(|x| self.predict(params, x).map(|p| p.probabilities))
            .collect()
    }
}

/// Outcome of comparing analytic gradients to central finite differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub max_abs_error: f64,
    pub worst_coordinate: usize,
    pub coordinates: usize,
    /// Coordinates left out because the stencil crossed a ReLU kink, where
    /// the central difference does not estimate the derivative.
    pub skipped_kinks: usize,
}

/// Step used by [`grad_check`].
pub const FD_STEP: f64 = 1e-5;
/// Relative error denominators are floored here so vanishing coordinates
/// are judged on absolute error.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Check [`Classifier::gradient`] against central differences on a random
/// batch and random parameters, both derived from `seed`.
pub fn grad_check(config: &ClassifierConfig, seed: u64) -> Result<GradCheckReport> {
    let mut cfg = config.clone();
    cfg.init_seed = seed;
    let model = Classifier::new(cfg)?;
    let mut rng = rng::stream(seed, "grad-check/batch");
    let params = model.init_params();
    let mut params = params.into_inner();
    for p in &mut params {
        *p += rng.random_range(-0.1..0.1);
    }
    let params = ParameterVector(params);
    let batch: Vec<Example> = (0..4)
        .map(|_| {
            let features = (0..model.config.input_dim)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            Example::original(features, rng.random_range(0..model.num_classes()))
        })
        .collect();
    let analytic = model.gradient(&params, &batch)?;
    // which hidden units are on, per example
    let pattern = |p: &ParameterVector| -> Vec<bool> {
        batch
            .iter()
            .flat_map(|x| {
                let acts = model.run(p.values(), &x.features);
                acts.inputs.into_iter().skip(1).flatten().map(|a| a > 0.0)
            })
            .collect()
    };
    let at_params = pattern(&params);
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        max_abs_error: 0.0,
        worst_coordinate: 0,
        coordinates: params.len(),
        skipped_kinks: 0,
    };
    let mut probe = params.clone();
    for i in 0..params.len() {
        let orig = probe.values()[i];
        probe.values_mut()[i] = orig + FD_STEP;
        let plus = model.loss(&probe, &batch)?;
        let kink_above = pattern(&probe) != at_params;
        probe.values_mut()[i] = orig - FD_STEP;
        let minus = model.loss(&probe, &batch)?;
        let kink_below = pattern(&probe) != at_params;
        probe.values_mut()[i] = orig;
        if kink_above || kink_below {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let a = analytic.values()[i];
        let rel = relative_error(a, numeric);
        report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
        if rel > report.max_relative_error {
            report.max_relative_error = rel;
            report.worst_coordinate = i;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(hidden: Vec<usize>, classes: usize) -> ClassifierConfig {
        ClassifierConfig {
            input_dim: 5,
            hidden_dims: hidden,
            num_classes: classes,
            init_seed: 11,
        }
    }

    fn ex(features: Vec<f64>, label: usize) -> Example {
        Example::original(features, label)
    }

    #[test]
    fn zero_params_give_uniform_probabilities() {
        for classes in [2, 3, 5] {
            let model = Classifier::new(cfg(vec![4], classes)).unwrap();
            let params = ParameterVector::zeros(model.param_count());
            let pred = model.forward(&params, &[1.0, -2.0, 0.5, 3.0, 0.0]).unwrap();
            for p in pred.probabilities {
                assert!((p - 1.0 / classes as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn softmax_closed_form() {
        let pred = Prediction::from_logits(vec![0.0, 3f64.ln()]);
        assert!((pred.probabilities[0] - 0.25).abs() < 1e-15);
        assert!((pred.probabilities[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn forward_is_deterministic() {
        let model = Classifier::new(cfg(vec![6, 3], 3)).unwrap();
        let params = model.init_params();
        let x = [0.3, -1.0, 2.0, 0.0, 1.5];
        let a = model.forward(&params, &x).unwrap();
        let b = model.forward(&params, &x).unwrap();
        let bits = |p: &Prediction| p.logits.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(params, Classifier::new(cfg(vec![6, 3], 3)).unwrap().init_params());
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let model = Classifier::new(cfg(vec![], 2)).unwrap();
        let params = model.init_params();
        assert!(matches!(
            model.forward(&params, &[1.0, 2.0]),
            Err(Error::InvalidInput(_))
        ));
        let short = ParameterVector::zeros(3);
        assert!(model.forward(&short, &[0.0; 5]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(Classifier::new(cfg(vec![], 1)).is_err());
        assert!(Classifier::new(cfg(vec![0], 2)).is_err());
        assert_eq!(cfg(vec![3], 2).param_count(), 5 * 3 + 3 + 3 * 2 + 2);
    }

    /// Linear model whose logits are exactly the given values for x = e_0.
    fn linear_with_logits(logits: &[f64]) -> (Classifier, ParameterVector) {
        let classes = logits.len();
        let model = Classifier::new(ClassifierConfig {
            input_dim: 1,
            hidden_dims: vec![],
            num_classes: classes,
            init_seed: 0,
        })
        .unwrap();
        let mut values = vec![0.0; model.param_count()];
        values[classes..].copy_from_slice(logits);
        (model, ParameterVector::new(values))
    }

    #[test]
    fn loss_of_certain_prediction_is_zero() {
        let (model, params) = linear_with_logits(&[0.0, 800.0]);
        let loss = model.loss(&params, &[ex(vec![0.0], 1)]).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn loss_of_inverse_e_probability_is_one() {
        // p1 = e^-1 with logits (0, l1): e^l1 / (1 + e^l1) = e^-1
        let l1 = (1.0f64 / (std::f64::consts::E - 1.0)).ln();
        let (model, params) = linear_with_logits(&[0.0, l1]);
        let loss = model.loss(&params, &[ex(vec![0.0], 1)]).unwrap();
        assert!((loss - 1.0).abs() < 1e-14, "{loss}");
    }

    #[test]
    fn loss_is_floored() {
        let (model, params) = linear_with_logits(&[0.0, 1000.0]);
        let loss = model.loss(&params, &[ex(vec![0.0], 0)]).unwrap();
        assert!((loss - (-PROB_FLOOR.ln())).abs() < 1e-12);
        let grad = model.gradient(&params, &[ex(vec![0.0], 0)]).unwrap();
        assert!(grad.is_finite());
    }

    #[test]
    fn empty_batch_is_rejected() {
        let model = Classifier::new(cfg(vec![], 2)).unwrap();
        assert!(model.loss(&model.init_params(), &[]).is_err());
    }

    fn batch3() -> Vec<Example> {
        vec![
            ex(vec![0.1, 0.2, -0.3, 1.0, 0.0], 0),
            ex(vec![1.1, -0.2, 0.3, 0.0, 2.0], 1),
            ex(vec![-0.5, 0.7, 0.9, -1.0, 0.4], 2),
        ]
    }

    #[test]
    fn batch_loss_is_mean_of_singletons() {
        let model = Classifier::new(cfg(vec![4], 3)).unwrap();
        let params = model.init_params();
        let batch = batch3();
        let oracle: f64 = batch
            .iter()
            .map(|x| model.loss(&params, std::slice::from_ref(x)).unwrap())
            .sum::<f64>()
            / 3.0;
        let loss = model.loss(&params, &batch).unwrap();
        assert!((loss - oracle).abs() < 1e-14);
    }

    #[test]
    fn duplicated_batch_has_same_gradient() {
        let model = Classifier::new(cfg(vec![4], 3)).unwrap();
        let params = model.init_params();
        let batch = batch3();
        let doubled: Vec<Example> = batch.iter().chain(batch.iter()).cloned().collect();
        let g1 = model.gradient(&params, &batch).unwrap();
        let g2 = model.gradient(&params, &doubled).unwrap();
        for (a, b) in g1.values().iter().zip(g2.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn collapse_of_equal_logits() {
        let pred = Prediction::from_logits(vec![0.4, 0.4, 0.4]);
        let c = collapse_nonentailment(&pred, 0).unwrap();
        assert!((c.probabilities[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn collapse_sums_non_entailment_mass() {
        let logits: Vec<f64> = [0.5f64, 0.3, 0.2].iter().map(|p| p.ln()).collect();
        let pred = Prediction::from_logits(logits);
        let c = collapse_nonentailment(&pred, 0).unwrap();
        assert!((c.probabilities[1] - 0.5).abs() < 1e-12);
        assert!((c.probabilities[0] - 0.5).abs() < 1e-12);
        let other = collapse_nonentailment(&pred, 2).unwrap();
        assert!((other.probabilities[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn collapse_rejects_two_classes() {
        let pred = Prediction::from_logits(vec![0.0, 1.0]);
        assert!(collapse_nonentailment(&pred, 0).is_err());
        let pred3 = Prediction::from_logits(vec![0.0, 1.0, 2.0]);
        assert!(collapse_nonentailment(&pred3, 3).is_err());
    }

    #[test]
    fn entropy_weighted_loss_matches_definition() {
        let (model, params) = linear_with_logits(&[0.0, 0.7]);
        let model = model.with_loss(LossConfig {
            kind: LossKind::EntropyWeighted,
            prob_floor: PROB_FLOOR,
        });
        let p = 0.7f64.exp() / (1.0 + 0.7f64.exp());
        let loss = model.loss(&params, &[ex(vec![0.0], 1)]).unwrap();
        assert!((loss - (-p * p.ln())).abs() < 1e-14);
    }

    #[test]
    fn grad_check_skips_stencils_across_kinks() {
        // seed 2 puts one hidden pre-activation within FD_STEP of zero
        let cfg = ClassifierConfig {
            input_dim: 6,
            hidden_dims: vec![16, 8, 4],
            num_classes: 2,
            init_seed: 0,
        };
        let report = grad_check(&cfg, 2).unwrap();
        assert!(report.skipped_kinks >= 1, "{report:?}");
        assert!(report.skipped_kinks * 100 <= report.coordinates, "{report:?}");
        assert!(report.max_relative_error < 1e-4, "{report:?}");
        let linear = grad_check(&cfg_linear(), 2).unwrap();
        assert_eq!(linear.skipped_kinks, 0);
    }

    fn cfg_linear() -> ClassifierConfig {
        cfg(vec![], 3)
    }

    #[test]
    fn grad_check_default_architectures() {
        for hidden in [vec![], vec![8], vec![6, 4]] {
            let report = grad_check(&cfg(hidden.clone(), 3), 1).unwrap();
            assert!(
                report.max_relative_error < 1e-4,
                "{hidden:?}: {report:?}"
            );
        }
    }
}
