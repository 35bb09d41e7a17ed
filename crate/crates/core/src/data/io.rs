//! Bundle directories: one `label<TAB>origin<TAB>f1,f2,...` file per split
//! plus `manifest.json`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Example, GeneratorConfig, LabelSpace, Origin, SplitBundle, SplitName};
use crate::error::{invalid, Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format_version: u32,
    pub suite: String,
    pub generator: GeneratorConfig,
}

impl BundleManifest {
    pub fn new(suite: impl Into<String>, generator: GeneratorConfig) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            suite: suite.into(),
            generator,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedBundle {
    pub bundle: SplitBundle,
    pub manifest: BundleManifest,
}

fn format_label(x: &Example) -> String {
    match (x.label_space, x.label) {
        (LabelSpace::Entailment, 0) => "entail".to_owned(),
        (LabelSpace::Entailment, _) => "nonent".to_owned(),
        (LabelSpace::Native, label) => label.to_string(),
    }
}

fn format_split(examples: &[Example]) -> String {
    let mut out = String::new();
    for x in examples {
        out.push_str(&format_label(x));
        out.push('\t');
        out.push_str(x.origin.tag());
        out.push('\t');
        for (i, f) in x.features.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            // `{}` prints the shortest string that parses back to the same f64
            let _ = write!(out, "{f}");
        }
        out.push('\n');
    }
    out
}

/// Write files to a temporary name first so readers never see half a file.
pub(crate) fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_bundle(dir: &Path, bundle: &SplitBundle, manifest: &BundleManifest) -> Result<()> {
    fs::create_dir_all(dir)?;
    for name in SplitName::ALL {
        write_atomic(
            &dir.join(name.file_name()),
            format_split(bundle.split(name)).as_bytes(),
        )?;
    }
    let mut json = serde_json::to_string_pretty(manifest)?;
    json.push('\n');
    write_atomic(&dir.join(MANIFEST_FILE), json.as_bytes())
}

fn parse_line(line: &str, manifest: &BundleManifest) -> std::result::Result<Example, String> {
    let mut cols = line.split('\t');
    let (Some(label), Some(origin), Some(features), None) =
        (cols.next(), cols.next(), cols.next(), cols.next())
    else {
        return Err("expected 3 tab-separated columns".to_owned());
    };
    let classes = manifest.generator.num_classes;
    let (label, label_space) = match label {
        "entail" => (0, LabelSpace::Entailment),
        "nonent" => (1, LabelSpace::Entailment),
        other => {
            let label: usize = other
                .parse()
                .map_err(|_| format!("unknown label {other:?}"))?;
            if label >= classes {
                return Err(format!(
                    "label {label} out of range for {classes} classes"
                ));
            }
            (label, LabelSpace::Native)
        }
    };
    let origin = match origin {
        "original" => Origin::Original,
        "phenomenon" => Origin::Phenomenon,
        other => return Err(format!("unknown origin tag {other:?}")),
    };
    let features = features
        .split(',')
        .map(|f| {
            f.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("bad feature value {f:?}"))
        })
        .collect::<std::result::Result<Vec<f64>, String>>()?;
    let dim = manifest.generator.input_dim;
    if features.len() != dim {
        return Err(format!(
            "dimension mismatch: {} features, expected {dim}",
            features.len()
        ));
    }
    Ok(Example {
        features,
        label,
        label_space,
        origin,
    })
}

fn load_split(path: &Path, manifest: &BundleManifest) -> Result<Vec<Example>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.is_empty())
        .map(|(i, line)| {
            parse_line(line, manifest).map_err(|message| Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                message,
            })
        })
        .collect()
}

pub fn load_bundle(dir: &Path) -> Result<LoadedBundle> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest: BundleManifest =
        serde_json::from_str(&fs::read_to_string(&manifest_path)?).map_err(|e| Error::Parse {
            path: manifest_path.clone(),
            line: e.line(),
            message: e.to_string(),
        })?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(invalid(format!(
            "unsupported bundle format version {}",
            manifest.format_version
        )));
    }
    let mut bundle = SplitBundle {
        train: Vec::new(),
        debug: Vec::new(),
        test: Vec::new(),
        debug_test: Vec::new(),
    };
    for name in SplitName::ALL {
        *bundle.split_mut(name) = load_split(&dir.join(name.file_name()), &manifest)?;
    }
    bundle.validate()?;
    Ok(LoadedBundle { bundle, manifest })
}
