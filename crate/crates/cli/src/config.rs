//! Optional TOML configuration. Command-line flags take precedence over
//! values read here.
//!
//! ```toml
//! store = "data/store"
//!
//! [weights]
//! encoder = "weights/encoder.l2vw"
//! decoder = "weights/decoder.l2vw"
//! similarity = "weights/similarity.l2vw"
//!
//! [query]
//! k = 10
//! t = 40
//! seed = 0
//!
//! [server]
//! bind = "127.0.0.1:8080"
//! ```

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Deserialize;

use scanquery::engine::WeightPaths;

pub const DEFAULT_STORE: &str = "scanquery-store";
pub const DEFAULT_K: usize = 10;
pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    pub store: Option<PathBuf>,
    #[serde(default)]
    pub weights: WeightsSection,
    #[serde(default)]
    pub query: QuerySection,
    #[serde(default)]
    pub server: ServerSection,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSection {
    pub encoder: Option<PathBuf>,
    pub decoder: Option<PathBuf>,
    pub similarity: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuerySection {
    pub k: Option<usize>,
    pub t: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerSection {
    pub bind: Option<String>,
}

impl CliConfig {
    /// Paths inside the file are taken relative to the file's directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: CliConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.store);
        rebase(&mut cfg.weights.encoder);
        rebase(&mut cfg.weights.decoder);
        rebase(&mut cfg.weights.similarity);
        Ok(cfg)
    }
}

/// Global flags that can also come from the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub store: Option<PathBuf>,
    pub encoder: Option<PathBuf>,
    pub decoder: Option<PathBuf>,
    pub similarity: Option<PathBuf>,
}

/// The effective settings after applying flags over the file.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub store: PathBuf,
    pub weights: WeightPaths,
    pub k: usize,
    pub t: Option<usize>,
    pub seed: u64,
    pub bind: String,
}

impl Settings {
    pub fn resolve(file: CliConfig, flags: Overrides) -> Self {
        Self {
            store: flags.store.or(file.store).unwrap_or_else(|| PathBuf::from(DEFAULT_STORE)),
            weights: WeightPaths {
                encoder: flags.encoder.or(file.weights.encoder),
                decoder: flags.decoder.or(file.weights.decoder),
                similarity: flags.similarity.or(file.weights.similarity),
            },
            k: file.query.k.unwrap_or(DEFAULT_K),
            t: file.query.t,
            seed: file.query.seed.unwrap_or(0),
            bind: file.server.bind.unwrap_or_else(|| DEFAULT_BIND.into()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_and_paths_are_rebased() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(
            &path,
            "store = \"s\"\n[weights]\nencoder = \"e.l2vw\"\nsimilarity = \"/abs/sim.l2vw\"\n[query]\nk = 7\n",
        )
        .unwrap();
        let file = CliConfig::load(&path).unwrap();
        assert_eq!(file.store.as_deref(), Some(dir.path().join("s").as_path()));
        let flags = Overrides { encoder: Some("flag.l2vw".into()), ..Overrides::default() };
        let s = Settings::resolve(file, flags);
        assert_eq!(s.weights.encoder, Some(PathBuf::from("flag.l2vw")));
        assert_eq!(s.weights.similarity, Some(PathBuf::from("/abs/sim.l2vw")));
        assert_eq!(s.k, 7);
        assert_eq!(s.bind, DEFAULT_BIND);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, "stor = \"typo\"\n").unwrap();
        assert!(CliConfig::load(&path).is_err());
    }
}
