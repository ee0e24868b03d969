//! Run configuration files and the preset catalogue.
//!
//! Custom presets live under `$MEMROOF_PRESET_DIR` as JSON files:
//! `models/*.json` (a model), `hierarchies/*.json` (a hierarchy, named by
//! file stem) and `experiments/*.json` (an experiment spec).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{self, ExperimentSpec, ModelRef, BUILTIN_EXPERIMENTS};
use crate::hardware::{self, Hierarchy, HIERARCHY_PRESETS};
use crate::placement::PlacementPolicy;
use crate::roofline::TpsMode;
use crate::workload::{ModelSpec, PhaseSpec, MODEL_PRESETS};

pub const PRESET_DIR_ENV: &str = "MEMROOF_PRESET_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Table,
    Csv,
    Json,
}

/// Hierarchy by preset name, shorthand, or full description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HierarchyRef {
    Named(String),
    Inline(Hierarchy),
}

/// Built-in policy name or explicit residency map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolicyRef {
    Named(String),
    Custom(PlacementPolicy),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: Format,
}

/// Everything `estimate` needs, as stored in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelRef,
    pub phase: PhaseSpec,
    pub hierarchy: HierarchyRef,
    pub policy: PolicyRef,
    #[serde(default)]
    pub tps_mode: TpsMode,
    #[serde(default)]
    pub output: OutputSpec,
}

/// Reads a JSON document; errors carry the file name and the field path.
pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| {
        Error::config(
            format!("{}:{}:{}", path.display(), e.line(), e.column()),
            e.to_string(),
        )
    })
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        load_json(path)
    }
}

/// Built-in plus user-supplied presets.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    pub models: BTreeMap<String, ModelSpec>,
    pub hierarchies: BTreeMap<String, Hierarchy>,
    pub experiments: BTreeMap<String, ExperimentSpec>,
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}

impl Catalog {
    /// Custom presets from `dir`; a missing or empty directory yields none.
    pub fn load(dir: Option<&Path>) -> Result<Self> {
        let mut c = Catalog::default();
        let Some(dir) = dir else {
            return Ok(c);
        };
        for f in json_files(&dir.join("models"))? {
            let m: ModelSpec = load_json(&f)?;
            m.validate()?;
            c.models.insert(m.name.clone(), m);
        }
        for f in json_files(&dir.join("hierarchies"))? {
            let h: Hierarchy = load_json(&f)?;
            h.validate()?;
            let name = f.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            c.hierarchies.insert(name, h);
        }
        for f in json_files(&dir.join("experiments"))? {
            let e: ExperimentSpec = load_json(&f)?;
            c.experiments.insert(e.name.clone(), e);
        }
        Ok(c)
    }

    pub fn from_env() -> Result<Self> {
        let dir = std::env::var_os(PRESET_DIR_ENV).map(PathBuf::from);
        Self::load(dir.as_deref())
    }

    fn unknown(kind: &'static str, name: &str, builtin: &[&str], custom: impl Iterator<Item = String>) -> Error {
        Error::UnknownPreset {
            kind,
            name: name.into(),
            valid: builtin.iter().map(|s| s.to_string()).chain(custom).collect(),
        }
    }

    pub fn model(&self, r: &ModelRef) -> Result<ModelSpec> {
        match r {
            ModelRef::Inline(m) => {
                m.validate()?;
                Ok(m.clone())
            }
            ModelRef::Preset(name) => match ModelSpec::preset(name) {
                Ok(m) => Ok(m),
                Err(_) => self
                    .models
                    .get(name)
                    .cloned()
                    .ok_or_else(|| Self::unknown("model", name, MODEL_PRESETS, self.models.keys().cloned())),
            },
        }
    }

    /// A hierarchy preset name (built-in or custom), else shorthand.
    pub fn hierarchy(&self, r: &HierarchyRef) -> Result<Hierarchy> {
        match r {
            HierarchyRef::Inline(h) => {
                h.validate()?;
                Ok(h.clone())
            }
            HierarchyRef::Named(s) => {
                if let Some(h) = self.hierarchies.get(s) {
                    return Ok(h.clone());
                }
                if HIERARCHY_PRESETS.contains(&s.as_str()) {
                    if let hardware::Preset::Hierarchy(h) = hardware::preset(s)? {
                        return Ok(h);
                    }
                }
                Hierarchy::from_shorthand(s)
            }
        }
    }

    pub fn policy(&self, r: &PolicyRef) -> Result<PlacementPolicy> {
        match r {
            PolicyRef::Named(n) => PlacementPolicy::named(n),
            PolicyRef::Custom(p) => {
                p.validate()?;
                Ok(p.clone())
            }
        }
    }

    /// Built-in or custom experiment, with a custom model inlined so the
    /// spec is self-contained.
    pub fn experiment(&self, name: &str) -> Result<ExperimentSpec> {
        let mut spec = match experiments::builtin(name) {
            Ok(s) => s,
            Err(_) => self
                .experiments
                .get(name)
                .cloned()
                .ok_or_else(|| Self::unknown("experiment", name, BUILTIN_EXPERIMENTS, self.experiments.keys().cloned()))?,
        };
        self.inline_model(&mut spec)?;
        Ok(spec)
    }

    pub fn inline_model(&self, spec: &mut ExperimentSpec) -> Result<()> {
        if let ModelRef::Preset(name) = &spec.model {
            if ModelSpec::preset(name).is_err() {
                spec.model = ModelRef::Inline(self.model(&spec.model)?);
            }
        }
        Ok(())
    }
}

/// Writes `bytes` to `path` via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::config("output", "path has no file name"))?;
    let tmp = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}
