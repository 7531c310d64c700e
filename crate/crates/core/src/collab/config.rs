use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::octree::BuildConfig;

use super::{Actor, Role};

/// Environment variable naming the config file when none is given.
pub const CONFIG_ENV: &str = "CLOUDATELIER_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid project config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct User {
    pub name: String,
    pub token: String,
    pub role: Role,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BuildOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing_div: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_capacity: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_depth: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProjectConfig {
    pub project_id: String,
    /// Holds the index (manifest, nodes, byproduct) and the `collab` state.
    /// Relative paths are resolved against the config file's directory.
    pub data_dir: PathBuf,
    pub users: Vec<User>,
    #[serde(default)]
    pub build: BuildOverrides,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_threshold: Option<u64>,
    #[serde(default = "default_max_curators")]
    pub max_curators: usize,
    /// Ops between two snapshots of the collab state.
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: u64,
}

fn default_max_curators() -> usize {
    3
}

fn default_snapshot_every() -> u64 {
    256
}

impl ProjectConfig {
    pub fn new(
        project_id: impl Into<String>,
        data_dir: impl Into<PathBuf>,
        users: Vec<User>,
    ) -> Self {
        ProjectConfig {
            project_id: project_id.into(),
            data_dir: data_dir.into(),
            users,
            build: BuildOverrides::default(),
            chunk_threshold: None,
            max_curators: default_max_curators(),
            snapshot_every: default_snapshot_every(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let bytes = fs::read(path)?;
        let mut cfg: ProjectConfig = serde_json::from_slice(&bytes)
            .map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?;
        if cfg.data_dir.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            cfg.data_dir = base.join(&cfg.data_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        self.validate()?;
        let mut json = serde_json::to_vec_pretty(self).expect("config serializes");
        json.push(b'\n');
        fs::write(path, json)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.project_id.is_empty()
            || !self
                .project_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return bad(format!(
                "project id {:?} must be non-empty and use only letters, digits, '-' and '_'",
                self.project_id
            ));
        }
        let curators = self
            .users
            .iter()
            .filter(|u| u.role == Role::Curator)
            .count();
        if curators == 0 {
            return bad("a project needs at least one curator".into());
        }
        if curators > self.max_curators {
            return bad(format!(
                "{curators} curators exceed the limit of {}",
                self.max_curators
            ));
        }
        let mut names = HashSet::new();
        let mut tokens = HashSet::new();
        for u in &self.users {
            if !names.insert(&u.name) {
                return bad(format!("duplicate user name {:?}", u.name));
            }
            if u.token.is_empty() || !tokens.insert(&u.token) {
                return bad(format!("user {:?} needs a unique, non-empty token", u.name));
            }
        }
        if self.snapshot_every == 0 {
            return bad("snapshotEvery must be at least 1".into());
        }
        Ok(())
    }

    pub fn authenticate(&self, token: &str) -> Option<Actor> {
        self.users
            .iter()
            .find(|u| u.token == token)
            .map(|u| Actor::new(u.name.clone(), u.role))
    }

    /// Applies the overrides on top of `base`.
    pub fn build_config(&self, base: BuildConfig) -> BuildConfig {
        BuildConfig {
            root_spacing_divisor: self.build.spacing_div.unwrap_or(base.root_spacing_divisor),
            node_capacity: self.build.node_capacity.unwrap_or(base.node_capacity),
            max_depth: self.build.max_depth.unwrap_or(base.max_depth),
            chunk_threshold: self.chunk_threshold.unwrap_or(base.chunk_threshold),
            ..base
        }
    }
}
