use std::path::Path;

use anyhow::{Context, Result};
use retouch_core::TrainConfig;

/// Built-in defaults, then the config file, then command-line flags.
pub fn resolve_train_config(file: Option<&Path>, steps: Option<u64>, seed: Option<u64>) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        cfg.apply_text(&text).with_context(|| format!("in {}", path.display()))?;
    }
    if let Some(s) = steps {
        cfg.total_steps = s;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_per_key() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "# toy\nseed = 5\ntotal_steps = 10\ngamma = 0.9\n").unwrap();
        let d = TrainConfig::default();

        let only_defaults = resolve_train_config(None, None, None).unwrap();
        assert_eq!(only_defaults, d);

        let from_file = resolve_train_config(Some(&path), None, None).unwrap();
        assert_eq!((from_file.seed, from_file.total_steps, from_file.gamma), (5, 10, 0.9));
        assert_eq!(from_file.batch_size, d.batch_size);

        let flags = resolve_train_config(Some(&path), Some(99), Some(7)).unwrap();
        assert_eq!((flags.seed, flags.total_steps, flags.gamma), (7, 99, 0.9));

        let flags_only = resolve_train_config(None, Some(3), None).unwrap();
        assert_eq!((flags_only.seed, flags_only.total_steps), (d.seed, 3));
    }

    #[test]
    fn bad_files_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.conf");
        std::fs::write(&path, "learning_speed = 3\n").unwrap();
        assert!(resolve_train_config(Some(&path), None, None).is_err());
        std::fs::write(&path, "gamma = 2\n").unwrap();
        assert!(resolve_train_config(Some(&path), None, None).is_err());
        assert!(resolve_train_config(Some(&dir.path().join("absent")), None, None).is_err());
    }
}
