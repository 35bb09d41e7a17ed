//! Examples, the four-way split, the synthetic phenomenon generator and
//! bundle files.

mod generate;
mod io;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub use generate::{generate, sample_debug_set, GeneratorConfig, TokenLayout};
pub use io::{load_bundle, save_bundle, BundleManifest, LoadedBundle, MANIFEST_FILE};
pub(crate) use io::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Original,
    Phenomenon,
}

impl Origin {
    pub fn tag(self) -> &'static str {
        match self {
            Origin::Original => "original",
            Origin::Phenomenon => "phenomenon",
        }
    }
}

/// How `Example::label` is to be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSpace {
    /// A class index of the model.
    #[default]
    Native,
    /// 0 = entailment, 1 = non-entailment. Scored against 3+ class models by
    /// collapsing every class other than 0 into non-entailment.
    Entailment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: usize,
    pub label_space: LabelSpace,
    pub origin: Origin,
}

/// Exact content identity of an example (feature bits, label, tags).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ExampleKey {
    features: Vec<u64>,
    label: usize,
    label_space: LabelSpace,
    origin: Origin,
}

impl Example {
    pub fn original(features: Vec<f64>, label: usize) -> Self {
        Self {
            features,
            label,
            label_space: LabelSpace::Native,
            origin: Origin::Original,
        }
    }

    pub fn key(&self) -> ExampleKey {
        ExampleKey {
            features: self.features.iter().map(|f| f.to_bits()).collect(),
            label: self.label,
            label_space: self.label_space,
            origin: self.origin,
        }
    }
}

/// Training set X, debugging set X′, original test set and debugging test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitBundle {
    pub train: Vec<Example>,
    pub debug: Vec<Example>,
    pub test: Vec<Example>,
    pub debug_test: Vec<Example>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Debug,
    Test,
    DebugTest,
}

impl SplitName {
    pub const ALL: [SplitName; 4] = [
        SplitName::Train,
        SplitName::Debug,
        SplitName::Test,
        SplitName::DebugTest,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            SplitName::Train => "X.tsv",
            SplitName::Debug => "Xdebug.tsv",
            SplitName::Test => "Xtest.tsv",
            SplitName::DebugTest => "Xdebugtest.tsv",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_name().trim_end_matches(".tsv"))
    }
}

impl SplitBundle {
    pub fn split(&self, name: SplitName) -> &[Example] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Debug => &self.debug,
            SplitName::Test => &self.test,
            SplitName::DebugTest => &self.debug_test,
        }
    }

    pub(crate) fn split_mut(&mut self, name: SplitName) -> &mut Vec<Example> {
        match name {
            SplitName::Train => &mut self.train,
            SplitName::Debug => &mut self.debug,
            SplitName::Test => &mut self.test,
            SplitName::DebugTest => &mut self.debug_test,
        }
    }

    /// The phenomenon pool the debugging split was drawn from.
    pub fn phenomenon_pool(&self) -> Vec<Example> {
        self.debug.iter().chain(&self.debug_test).cloned().collect()
    }

    /// Same bundle with the debugging split redrawn from its phenomenon pool.
    pub fn resample_debug(&self, shots: usize, seed: u64) -> Result<SplitBundle> {
        let (debug, debug_test) = sample_debug_set(&self.phenomenon_pool(), shots, seed)?;
        Ok(SplitBundle {
            train: self.train.clone(),
            debug,
            test: self.test.clone(),
            debug_test,
        })
    }

    /// Pairwise disjointness by content, and phenomenon examples confined to
    /// the debugging splits.
    pub fn validate(&self) -> Result<()> {
        let mut seen: HashSet<ExampleKey> = HashSet::new();
        for name in SplitName::ALL {
            let mut own = HashSet::new();
            for x in self.split(name) {
                let key = x.key();
                if seen.contains(&key) {
                    return Err(invalid(format!(
                        "split {name} shares an example with another split"
                    )));
                }
                own.insert(key);
            }
            seen.extend(own);
        }
        for name in [SplitName::Train, SplitName::Test] {
            if self.split(name).iter().any(|x| x.origin == Origin::Phenomenon) {
                return Err(invalid(format!(
                    "split {name} contains phenomenon examples"
                )));
            }
        }
        Ok(())
    }
}
