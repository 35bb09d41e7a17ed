//! Synthetic shortcut-vs-rule task.
//!
//! Examples are bag-of-words counts. Each class owns a small group of signal
//! tokens and the true label is the class whose group occurs most often.
//! Each class also owns a shortcut token, which in the original data appears
//! with the example's own class (at rate `heuristic_strength`), so a model
//! trained there leans on it. Phenomenon examples come from a fixed template
//! (a few shared filler tokens) in which the shortcut names a wrong class and
//! the rule wins by a single count, which is exactly where the
//! shortcut-reliant base model fails.

use std::collections::HashSet;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Example, LabelSpace, Origin, SplitBundle};
use crate::error::{config, Result};
use crate::rng::{self, StreamRng};

const GROUP_SIZE: usize = 3;
/// Shared template tokens, followed by one marker token per phenomenon half.
const TEMPLATE_SHARED: usize = 2;
const TEMPLATE_LEN: usize = TEMPLATE_SHARED + 2;
const MIN_NOISE_TOKENS: usize = 4;
/// Share of original examples carrying a shortcut token at all.
const SHORTCUT_RATE: f64 = 0.8;
/// Occurrences of each template token and of the shortcut in a phenomenon example.
const TEMPLATE_COUNT: usize = 3;
const MARKER_COUNT: usize = 9;
const PHENOMENON_SHORTCUT_COUNT: usize = 2;
const PHENOMENON_FILLER_MAX: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub vocab_size: usize,
    pub input_dim: usize,
    pub num_classes: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub n_phenomenon: usize,
    pub shots: usize,
    pub heuristic_strength: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            vocab_size: 40,
            input_dim: 36,
            num_classes: 2,
            n_train: 6000,
            n_test: 1000,
            n_phenomenon: 1000,
            shots: 10,
            heuristic_strength: 1.0,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn layout(&self) -> TokenLayout {
        TokenLayout {
            num_classes: self.num_classes,
            vocab_size: self.vocab_size,
            input_dim: self.input_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.num_classes) {
            return Err(config(format!(
                "num_classes must be 2 or 3, got {}",
                self.num_classes
            )));
        }
        if self.n_train == 0 || self.n_test == 0 || self.n_phenomenon == 0 {
            return Err(config("example counts must be positive"));
        }
        if self.shots >= self.n_phenomenon {
            return Err(config(format!(
                "shots ({}) must be smaller than n_phenomenon ({})",
                self.shots, self.n_phenomenon
            )));
        }
        if !(0.0..=1.0).contains(&self.heuristic_strength) {
            return Err(config(format!(
                "heuristic_strength must lie in [0, 1], got {}",
                self.heuristic_strength
            )));
        }
        let layout = self.layout();
        let designated = layout.designated();
        if self.vocab_size < designated + MIN_NOISE_TOKENS {
            return Err(config(format!(
                "vocab_size must be at least {} for {} classes",
                designated + MIN_NOISE_TOKENS,
                self.num_classes
            )));
        }
        if self.input_dim < designated + 1 {
            return Err(config(format!(
                "input_dim must be at least {} so designated tokens keep their own features",
                designated + 1
            )));
        }
        Ok(())
    }
}

/// Where each kind of token lives in the vocabulary and feature space.
///
/// Tokens `[0, classes * 3)` are signal groups, the next `classes` tokens are
/// shortcuts, then the template filler tokens; the rest are noise. Designated
/// tokens own one feature each; noise tokens hash into the remaining features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenLayout {
    pub num_classes: usize,
    pub vocab_size: usize,
    pub input_dim: usize,
}

impl TokenLayout {
    pub fn signal_group(&self, class: usize) -> Range<usize> {
        class * GROUP_SIZE..(class + 1) * GROUP_SIZE
    }

    pub fn shortcut(&self, class: usize) -> usize {
        self.num_classes * GROUP_SIZE + class
    }

    fn first_filler(&self) -> usize {
        self.num_classes * (GROUP_SIZE + 1)
    }

    pub fn template(&self) -> Range<usize> {
        self.first_filler()..self.first_filler() + TEMPLATE_LEN
    }

    /// Marker token of one phenomenon half.
    pub fn marker(&self, entail_side: bool) -> usize {
        self.first_filler() + TEMPLATE_SHARED + usize::from(!entail_side)
    }

    /// Filler tokens (template tokens included) that carry no label signal.
    pub fn filler(&self) -> Range<usize> {
        self.first_filler()..self.vocab_size
    }

    fn designated(&self) -> usize {
        self.first_filler() + TEMPLATE_LEN
    }

    /// Class named by the shortcut tokens present, if exactly one is.
    pub fn shortcut_class(&self, features: &[f64]) -> Option<usize> {
        let present: Vec<usize> = (0..self.num_classes)
            .filter(|&c| features[self.feature(self.shortcut(c))] > 0.0)
            .collect();
        match present[..] {
            [c] => Some(c),
            _ => None,
        }
    }

    /// Designated tokens own their feature. Noise tokens take the remaining
    /// features in order, and any left over wrap around onto the signal
    /// features, so the features show a noisy view of the rule.
    pub fn feature(&self, token: usize) -> usize {
        let d = self.designated();
        if token < d {
            return token;
        }
        let j = token - d;
        let own = self.input_dim - d;
        if j < own {
            d + j
        } else {
            (j - own) % (self.num_classes * GROUP_SIZE)
        }
    }

    /// Label given by the ground-truth rule: the class whose signal group
    /// occurs most often (lowest class on ties). Takes token counts per
    /// group, which the features only show up to hashing collisions.
    pub fn rule_label(&self, group_totals: &[usize]) -> usize {
        let mut best = 0;
        for (c, &n) in group_totals.iter().enumerate().take(self.num_classes) {
            if n > group_totals[best] {
                best = c;
            }
        }
        best
    }
}

struct Draft {
    features: Vec<f64>,
    /// Signal token counts per class, before hashing.
    groups: Vec<usize>,
}

impl Draft {
    fn new(layout: &TokenLayout) -> Self {
        Self {
            features: vec![0.0; layout.input_dim],
            groups: vec![0; layout.num_classes],
        }
    }

    fn add(&mut self, layout: &TokenLayout, token: usize, count: usize) {
        self.features[layout.feature(token)] += count as f64;
    }

    /// Spread `count` occurrences over a class's signal tokens.
    fn add_group(&mut self, layout: &TokenLayout, class: usize, count: usize, rng: &mut StreamRng) {
        let group = layout.signal_group(class);
        for _ in 0..count {
            let t = rng.random_range(group.clone());
            self.add(layout, t, 1);
        }
        self.groups[class] += count;
    }

    fn add_noise(&mut self, layout: &TokenLayout, len: usize, rng: &mut StreamRng) {
        let filler = layout.filler();
        for _ in 0..len {
            let t = rng.random_range(filler.clone());
            self.add(layout, t, 1);
        }
    }
}

/// Group counts where `winner` beats every other class by at least `margin`
/// and `runner_up` (if any) trails by exactly `margin`.
fn group_counts(
    classes: usize,
    winner: usize,
    runner_up: Option<usize>,
    base: usize,
    margin: usize,
    rng: &mut StreamRng,
) -> Vec<usize> {
    (0..classes)
        .map(|c| {
            if c == winner {
                base + margin
            } else if Some(c) == runner_up {
                base
            } else {
                rng.random_range(0..=base)
            }
        })
        .collect()
}

fn original_example(
    layout: &TokenLayout,
    label: usize,
    strength: f64,
    rng: &mut StreamRng,
) -> (Example, Vec<usize>) {
    let mut draft = Draft::new(layout);
    let base = rng.random_range(0..=2);
    let margin = rng.random_range(1..=3);
    let counts = group_counts(layout.num_classes, label, None, base, margin, rng);
    for (c, &n) in counts.iter().enumerate() {
        draft.add_group(layout, c, n, rng);
    }
    if rng.random_bool(SHORTCUT_RATE) {
        let shortcut = if rng.random_bool(strength) {
            label
        } else {
            rng.random_range(0..layout.num_classes)
        };
        draft.add(layout, layout.shortcut(shortcut), 1);
    }
    let len = rng.random_range(4..=10);
    draft.add_noise(layout, len, rng);
    (Example::original(draft.features, label), draft.groups)
}

/// Template example where the shortcut contradicts the rule, which wins by one.
/// `entail_side` picks which half of the phenomenon: class 0 carrying another
/// class's shortcut, or a non-zero class carrying class 0's shortcut.
fn phenomenon_example(
    layout: &TokenLayout,
    entail_side: bool,
    rng: &mut StreamRng,
) -> (Example, Vec<usize>) {
    let classes = layout.num_classes;
    let mut draft = Draft::new(layout);
    let (winner, runner_up) = if entail_side {
        (0, rng.random_range(1..classes))
    } else {
        (rng.random_range(1..classes), 0)
    };
    let counts = group_counts(classes, winner, Some(runner_up), 0, 1, rng);
    for (c, &n) in counts.iter().enumerate() {
        draft.add_group(layout, c, n, rng);
    }
    let shortcut = if entail_side {
        rng.random_range(1..classes)
    } else {
        0
    };
    draft.add(layout, layout.shortcut(shortcut), PHENOMENON_SHORTCUT_COUNT);
    for t in layout.template().take(TEMPLATE_SHARED) {
        draft.add(layout, t, TEMPLATE_COUNT);
    }
    draft.add(layout, layout.marker(entail_side), MARKER_COUNT);
    // only noise tokens with a feature of their own, so the rule stays intact
    let len = rng.random_range(0..=PHENOMENON_FILLER_MAX);
    for _ in 0..len {
        let t = rng.random_range(layout.designated()..layout.input_dim);
        draft.add(layout, t, 1);
    }
    let (label, label_space) = if classes >= 3 {
        (usize::from(!entail_side), LabelSpace::Entailment)
    } else {
        (winner, LabelSpace::Native)
    };
    let x = Example {
        features: draft.features,
        label,
        label_space,
        origin: Origin::Phenomenon,
    };
    (x, draft.groups)
}

/// Draws distinct examples until `n` are collected.
fn distinct(
    n: usize,
    seen: &mut HashSet<Vec<u64>>,
    mut make: impl FnMut(usize) -> Example,
) -> Result<Vec<Example>> {
    let mut out = Vec::with_capacity(n);
    let budget = 50 * n + 1000;
    let mut attempts = 0;
    while out.len() < n {
        attempts += 1;
        if attempts > budget {
            return Err(config(format!(
                "vocabulary too small to draw {n} distinct examples"
            )));
        }
        let x = make(out.len());
        let key: Vec<u64> = x.features.iter().map(|f| f.to_bits()).collect();
        if seen.insert(key) {
            out.push(x);
        }
    }
    Ok(out)
}

/// Balanced labels `i mod classes`, shuffled.
fn balanced_labels(n: usize, classes: usize, rng: &mut StreamRng) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(rng);
    labels
}

pub fn generate(cfg: &GeneratorConfig) -> Result<SplitBundle> {
    cfg.validate()?;
    let layout = cfg.layout();
    let mut seen = HashSet::new();

    let mut rng = rng::stream(cfg.seed, "gen/original");
    let mut originals = Vec::new();
    for n in [cfg.n_train, cfg.n_test] {
        let labels = balanced_labels(n, cfg.num_classes, &mut rng);
        let split = distinct(n, &mut seen, |i| {
            original_example(&layout, labels[i], cfg.heuristic_strength, &mut rng).0
        })?;
        originals.push(split);
    }
    let test = originals.pop().unwrap_or_default();
    let train = originals.pop().unwrap_or_default();

    let mut rng = rng::stream(cfg.seed, "gen/phenomenon");
    let sides = balanced_labels(cfg.n_phenomenon, 2, &mut rng);
    let pool = distinct(cfg.n_phenomenon, &mut seen, |i| {
        phenomenon_example(&layout, sides[i] == 0, &mut rng).0
    })?;

    // stratified so the debugging set is label-balanced too
    let mut rng = rng::stream(cfg.seed, "gen/split");
    let mut by_label: Vec<Vec<Example>> = vec![Vec::new(); 2];
    for x in pool {
        let side = usize::from(x.label != 0);
        by_label[side].push(x);
    }
    let mut debug = Vec::with_capacity(cfg.shots);
    let mut debug_test = Vec::new();
    for (side, mut group) in by_label.into_iter().enumerate() {
        group.shuffle(&mut rng);
        let take = (cfg.shots + 1 - side) / 2;
        let take = take.min(group.len());
        debug_test.extend(group.split_off(take));
        debug.extend(group);
    }
    if debug.len() != cfg.shots {
        return Err(config("phenomenon pool too unbalanced for the requested shots"));
    }
    debug.shuffle(&mut rng);
    debug_test.shuffle(&mut rng);

    let bundle = SplitBundle {
        train,
        debug,
        test,
        debug_test,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Uniform split of `pool` into `shots` debugging examples and the rest.
pub fn sample_debug_set(
    pool: &[Example],
    shots: usize,
    seed: u64,
) -> Result<(Vec<Example>, Vec<Example>)> {
    if shots >= pool.len() {
        return Err(config(format!(
            "cannot take {shots} debugging examples from a pool of {}",
            pool.len()
        )));
    }
    let mut rng = rng::stream(seed, "debug-set");
    let chosen: HashSet<usize> = rand::seq::index::sample(&mut rng, pool.len(), shots)
        .into_iter()
        .collect();
    let mut debug = Vec::with_capacity(shots);
    let mut rest = Vec::with_capacity(pool.len() - shots);
    for (i, x) in pool.iter().enumerate() {
        if chosen.contains(&i) {
            debug.push(x.clone());
        } else {
            rest.push(x.clone());
        }
    }
    Ok((debug, rest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            n_train: 400,
            n_test: 200,
            n_phenomenon: 120,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate(&GeneratorConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn default_split_shapes() {
        let cfg = small();
        let b = generate(&cfg).unwrap();
        b.validate().unwrap();
        assert_eq!(b.debug.len(), 10);
        assert_eq!(b.train.len(), cfg.n_train);
        assert_eq!(b.test.len(), cfg.n_test);
        assert_eq!(b.debug_test.len(), cfg.n_phenomenon - 10);
    }

    #[test]
    fn labels_are_balanced() {
        for classes in [2, 3] {
            let b = generate(&GeneratorConfig {
                num_classes: classes,
                n_train: 401,
                ..small()
            })
            .unwrap();
            for split in [&b.train, &b.test] {
                let mut counts = vec![0usize; classes];
                for x in split.iter() {
                    counts[x.label] += 1;
                }
                let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
                assert!(hi - lo <= 1, "{counts:?}");
            }
            for split in [&b.debug, &b.debug_test] {
                let ones = split.iter().filter(|x| x.label == 1).count();
                let zeros = split.len() - ones;
                assert!(ones.abs_diff(zeros) <= 1);
            }
        }
    }

    /// Rule applied to the hashed features rather than the token counts.
    fn feature_rule(layout: &TokenLayout, x: &Example) -> usize {
        let totals: Vec<f64> = (0..layout.num_classes)
            .map(|c| layout.signal_group(c).map(|t| x.features[layout.feature(t)]).sum())
            .collect();
        crate::model::argmax(&totals)
    }

    #[test]
    fn labels_follow_the_rule_on_tokens() {
        for classes in [2, 3] {
            let layout = GeneratorConfig { num_classes: classes, ..small() }.layout();
            let mut rng = rng::stream(9, "test");
            let mut disagree = 0;
            for i in 0..600 {
                let (x, groups) = original_example(&layout, i % classes, 1.0, &mut rng);
                assert_eq!(layout.rule_label(&groups), x.label);
                disagree += usize::from(feature_rule(&layout, &x) != x.label);
                let (x, groups) = phenomenon_example(&layout, i % 2 == 0, &mut rng);
                let truth = layout.rule_label(&groups);
                // the rule wins by exactly one
                let runner_up = groups.iter().enumerate().filter(|(c, _)| *c != truth).map(|(_, &g)| g).max().unwrap();
                assert_eq!(groups[truth], runner_up + 1);
                let expected = if classes >= 3 { usize::from(truth != 0) } else { truth };
                assert_eq!(x.label, expected);
                assert_eq!(truth == 0, i % 2 == 0);
            }
            // collisions blur the rule for some originals, but not most
            assert!(disagree > 0 && disagree < 200, "{disagree}");
        }
    }

    #[test]
    fn phenomenon_shortcut_names_a_wrong_class() {
        let cfg = small();
        let layout = cfg.layout();
        let b = generate(&cfg).unwrap();
        for x in b.debug.iter().chain(&b.debug_test) {
            let shortcut = layout.shortcut_class(&x.features).unwrap();
            assert_ne!(shortcut, x.label);
            assert_eq!(shortcut == 0, x.label != 0);
        }
    }

    #[test]
    fn shortcut_tracks_label_at_full_strength() {
        let cfg = small();
        let layout = cfg.layout();
        let b = generate(&cfg).unwrap();
        let carried: Vec<&Example> = b
            .train
            .iter()
            .filter(|x| layout.shortcut_class(&x.features).is_some())
            .collect();
        let share = carried.len() as f64 / b.train.len() as f64;
        assert!((share - SHORTCUT_RATE).abs() < 0.1, "{share}");
        for x in carried {
            assert_eq!(layout.shortcut_class(&x.features), Some(x.label));
        }
        let weak = GeneratorConfig { heuristic_strength: 0.0, ..small() };
        let b = generate(&weak).unwrap();
        let (agree, carried) = b.train.iter().fold((0, 0), |(a, n), x| {
            match weak.layout().shortcut_class(&x.features) {
                Some(c) => (a + usize::from(c == x.label), n + 1),
                None => (a, n),
            }
        });
        let rate = agree as f64 / carried as f64;
        assert!((rate - 0.5).abs() < 0.1, "{rate}");
    }

    #[test]
    fn three_class_phenomenon_uses_entailment_labels() {
        let cfg = GeneratorConfig {
            num_classes: 3,
            ..small()
        };
        let layout = cfg.layout();
        let b = generate(&cfg).unwrap();
        assert!(b.train.iter().any(|x| x.label == 2));
        for x in b.debug.iter().chain(&b.debug_test) {
            assert_eq!(x.label_space, LabelSpace::Entailment);
            let shortcut = layout.shortcut_class(&x.features).unwrap();
            assert_eq!(x.label, usize::from(shortcut == 0));
        }
    }

    #[test]
    fn infeasible_configs_are_rejected() {
        let bad = [
            GeneratorConfig { shots: 120, ..small() },
            GeneratorConfig { num_classes: 4, ..small() },
            GeneratorConfig { n_train: 0, ..small() },
            GeneratorConfig { heuristic_strength: 1.5, ..small() },
            GeneratorConfig { vocab_size: 8, ..small() },
            GeneratorConfig { input_dim: 8, ..small() },
        ];
        for cfg in bad {
            assert!(generate(&cfg).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn overflow_noise_lands_on_signal_features() {
        let cfg = GeneratorConfig {
            vocab_size: 60,
            input_dim: 20,
            ..small()
        };
        let layout = cfg.layout();
        let designated = layout.template().end;
        for t in 0..60 {
            let f = layout.feature(t);
            assert!(f < 20);
            if t < 20 {
                // designated tokens, then noise tokens with a feature of their own
                assert_eq!(f, t, "designated ends at {designated}");
            } else {
                // shortcut and template features never collide
                assert!(f < 6, "{t} -> {f}");
            }
        }
        let b = generate(&cfg).unwrap();
        assert_eq!(b.train[0].features.len(), 20);
    }

    #[test]
    fn debug_sampling() {
        let pool = generate(&small()).unwrap().phenomenon_pool();
        let (d, rest) = sample_debug_set(&pool, 0, 3).unwrap();
        assert!(d.is_empty());
        assert_eq!(rest.len(), pool.len());
        let (d1, r1) = sample_debug_set(&pool, 10, 3).unwrap();
        let (d2, _) = sample_debug_set(&pool, 10, 3).unwrap();
        let (d3, _) = sample_debug_set(&pool, 10, 4).unwrap();
        assert_eq!(d1, d2);
        assert_ne!(d1, d3);
        assert_eq!(r1.len(), pool.len() - 10);
        assert!(sample_debug_set(&pool, pool.len(), 3).is_err());
    }

    #[test]
    fn sampling_thousand_leaves_nine_ninety() {
        let pool = generate(&GeneratorConfig {
            n_phenomenon: 1000,
            ..small()
        })
        .unwrap()
        .phenomenon_pool();
        let (d, rest) = sample_debug_set(&pool, 10, 0).unwrap();
        assert_eq!((d.len(), rest.len()), (10, 990));
    }
}
