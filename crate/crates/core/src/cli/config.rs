//! Run configuration assembled from defaults, a profile, command-line flags
//! and an optional TOML file. Keys set in the file win over flags; each such
//! conflict is logged as a warning.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::appearance::AppearanceConfig;
use crate::dataset::SceneSpec;
use crate::error::{Error, Result};
use crate::geometry::{GeometryConfig, GridSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Sized for one CPU core and a few GB of memory.
    #[default]
    Desk,
    /// Full-scale grids and textures.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
    pub profile: Profile,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Marching-tetrahedra lattice used to extract stage-1 meshes.
    pub extract_resolution: usize,
    pub scene: SceneSpec,
    pub geometry: GeometryConfig,
    pub appearance: AppearanceConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::for_profile(Profile::Desk)
    }
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let mut c = RunConfig {
            seed: 0,
            threads: 0,
            profile,
            dataset: None,
            out: None,
            extract_resolution: 128,
            scene: SceneSpec::default(),
            geometry: GeometryConfig::default(),
            appearance: AppearanceConfig::default(),
        };
        if profile == Profile::Full {
            c.geometry.field.grid = GridSchedule::full();
            c.extract_resolution = 512;
            c.appearance.resolution = 1024;
            c.appearance.face_budget = 50_000;
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.extract_resolution < 8 {
            return Err(Error::validation("extract_resolution must be at least 8"));
        }
        self.geometry.validate()?;
        self.appearance.validate()
    }
}

/// A value coming from a command-line flag, addressed by its key path.
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub path: Vec<&'static str>,
    pub value: toml::Value,
    /// Flag spelling, for messages.
    pub flag: &'static str,
}

impl Override {
    pub fn new(flag: &'static str, path: &[&'static str], value: impl Into<toml::Value>) -> Self {
        Override {
            path: path.to_vec(),
            value: value.into(),
            flag,
        }
    }

    pub fn from_serde<T: Serialize>(flag: &'static str, path: &[&'static str], value: &T) -> Self {
        Override {
            path: path.to_vec(),
            value: toml::Value::try_from(value).expect("flag value serializes"),
            flag,
        }
    }
}

fn lookup<'v>(root: &'v toml::Value, path: &[&str]) -> Option<&'v toml::Value> {
    path.iter().try_fold(root, |v, k| v.get(k))
}

fn set(root: &mut toml::Value, path: &[&str], value: toml::Value) {
    let mut cur = root;
    for k in &path[..path.len() - 1] {
        let table = cur.as_table_mut().expect("config nodes are tables");
        cur = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    cur.as_table_mut()
        .expect("config nodes are tables")
        .insert(path[path.len() - 1].to_string(), value);
}

/// Recursively overlay `top` onto `base`; tables merge, anything else
/// replaces. Tables carrying a `kind` tag are enum variants and replace whole,
/// so fields of the old variant cannot leak into the new one.
fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) if !t.contains_key("kind") => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_table() && v.is_table() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

pub fn parse_config_file(path: &Path) -> Result<toml::Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_text(&text, &path.display().to_string())
}

pub fn parse_config_text(text: &str, origin: &str) -> Result<toml::Value> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::validation(format!("{origin}: {e}")))?;
    Ok(toml::Value::Table(table))
}

/// Warnings produced while resolving, one per flag overridden by the file.
pub type Warnings = Vec<String>;

/// Defaults ← profile ← flags ← file. The top-level seed also seeds every
/// stage unless the file sets a stage seed itself.
pub fn resolve(overrides: &[Override], file: Option<&toml::Value>) -> Result<(RunConfig, Warnings)> {
    let mut warnings = Vec::new();
    let flag_profile = overrides
        .iter()
        .find(|o| o.path == ["profile"])
        .map(|o| o.value.clone());
    let file_profile = file.and_then(|f| f.get("profile")).cloned();
    let profile_value = file_profile.or(flag_profile).unwrap_or_else(|| "desk".into());
    let profile: Profile = profile_value
        .try_into()
        .map_err(|e: toml::de::Error| Error::validation(format!("profile: {e}")))?;

    let mut tree = toml::Value::try_from(RunConfig::for_profile(profile)).expect("config serializes");
    for o in overrides {
        set(&mut tree, &o.path, o.value.clone());
    }
    if let Some(f) = file {
        for o in overrides {
            if let Some(v) = lookup(f, &o.path) {
                if *v != o.value {
                    warnings.push(format!(
                        "{} = {} from the config file overrides {} {}",
                        o.path.join("."),
                        v,
                        o.flag,
                        o.value
                    ));
                }
            }
        }
        merge(&mut tree, f.clone());
    }
    let mut config: RunConfig = tree
        .try_into()
        .map_err(|e: toml::de::Error| Error::validation(format!("config: {}", e.message())))?;
    let explicit = |stage: &str| file.and_then(|f| lookup(f, &[stage, "seed"])).is_some();
    if !explicit("scene") {
        config.scene.seed = config.seed;
    }
    if !explicit("geometry") {
        config.geometry.seed = config.seed;
    }
    if !explicit("appearance") {
        config.appearance.seed = config.seed;
    }
    config.validate()?;
    Ok((config, warnings))
}
