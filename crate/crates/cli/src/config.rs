//! Experiment config files (TOML) and seed-list resolution.

use std::path::Path;

use hepo_core::trainer::TrainConfig;

pub const SEED_ENV: &str = "HEPO_LAB_SEED";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("bad seed list `{0}` (use e.g. `3`, `1,2,5` or `0..10`)")]
    Seeds(String),
}

pub fn parse_config(text: &str, origin: &str) -> Result<TrainConfig, ConfigError> {
    let config: TrainConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
        path: origin.to_string(),
        message: e.to_string().trim_end().to_string(),
    })?;
    config.validate().map_err(|e| ConfigError::Invalid {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<TrainConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text, &path.display().to_string())
}

/// Serializes a config with every default spelled out.
pub fn render_config(config: &TrainConfig) -> String {
    toml::to_string(config).expect("configs always serialize")
}

/// Parses `3`, `1,2,5`, `0..10` or mixtures like `0..3,7`.
pub fn parse_seeds(spec: &str) -> Result<Vec<u64>, ConfigError> {
    let bad = || ConfigError::Seeds(spec.to_string());
    let mut seeds = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim().parse().map_err(|_| bad())?;
            if b <= a {
                return Err(bad());
            }
            seeds.extend(a..b);
        } else {
            seeds.push(part.parse().map_err(|_| bad())?);
        }
    }
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

/// Flag first, then the environment variable, then the config.
pub fn resolve_seeds(flag: Option<&str>, env: Option<&str>, config: &[u64]) -> Result<Vec<u64>, ConfigError> {
    match (flag, env) {
        (Some(s), _) => parse_seeds(s),
        (None, Some(s)) if !s.trim().is_empty() => parse_seeds(s),
        _ => Ok(config.to_vec()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[env]
kind = "sparse_chain"
length = 5
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = parse_config(MINIMAL, "inline").unwrap();
        assert_eq!(c.alpha.lr, 0.01);
        assert_eq!(c.ppo.clip_eps, 0.2);
        assert_eq!(c.baselines.lambda, 1.0);
    }

    #[test]
    fn rendered_config_round_trips() {
        let c = parse_config(MINIMAL, "inline").unwrap();
        let text = render_config(&c);
        assert_eq!(parse_config(&text, "rendered").unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = parse_config(&format!("{MINIMAL}\n[ppo]\nclip_epsilon = 0.1\n"), "x").unwrap_err();
        assert!(err.to_string().contains("clip_epsilon"), "{err}");
        let err = parse_config(&format!("{MINIMAL}wobble = 3\n"), "x").unwrap_err();
        assert!(err.to_string().contains("wobble"), "{err}");
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("3").unwrap(), vec![3]);
        assert_eq!(parse_seeds("1, 2,5").unwrap(), vec![1, 2, 5]);
        assert_eq!(parse_seeds("0..3,7").unwrap(), vec![0, 1, 2, 7]);
        assert!(parse_seeds("x").is_err());
        assert!(parse_seeds("4..2").is_err());
    }

    #[test]
    fn seed_precedence() {
        let cfg = [9];
        assert_eq!(resolve_seeds(Some("1"), Some("2"), &cfg).unwrap(), vec![1]);
        assert_eq!(resolve_seeds(None, Some("2"), &cfg).unwrap(), vec![2]);
        assert_eq!(resolve_seeds(None, None, &cfg).unwrap(), vec![9]);
    }
}
