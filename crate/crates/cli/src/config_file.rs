//! `key = value` config files, applied as if their entries were flags
//! written before the command line's own, so explicit flags win.
//!
//! ```text
//! # simulate.conf
//! strategies = hp,lc,random
//! sizes = 500, 1000, 2000
//! target_ir = 0.8
//! synthetic = true
//! ```

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

/// Parses a config file into `--key=value` arguments. `true` becomes a bare
/// switch and `false` drops the key.
pub fn config_args(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read config file {}", path.display()))?;
    let mut args = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split_once('#').map_or(raw, |(before, _)| before).trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("{}:{}: expected key = value", path.display(), n + 1);
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim().trim_matches('"').replace(", ", ",");
        if key.is_empty() || key == "config" {
            bail!("{}:{}: invalid key {key:?}", path.display(), n + 1);
        }
        match value.as_str() {
            "true" => args.push(format!("--{key}")),
            "false" => {}
            _ => args.push(format!("--{key}={value}")),
        }
    }
    Ok(args)
}

/// Splices config-file arguments in right after the subcommand name.
pub fn expand_argv(argv: Vec<String>) -> Result<Vec<String>> {
    let mut config = None;
    let mut rest = Vec::with_capacity(argv.len());
    let mut it = argv.into_iter();
    while let Some(arg) = it.next() {
        if arg == "--config" {
            config = Some(it.next().context("--config needs a path")?);
        } else if let Some(path) = arg.strip_prefix("--config=") {
            config = Some(path.to_string());
        } else {
            rest.push(arg);
        }
    }
    let Some(path) = config else { return Ok(rest) };
    let extra = config_args(Path::new(&path))?;
    // argv[0] is the binary; the first non-flag after it is the subcommand
    let sub = rest.iter().skip(1).position(|a| !a.starts_with('-')).map(|i| i + 2);
    let at = sub.unwrap_or(rest.len());
    rest.splice(at..at, extra);
    Ok(rest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_entries_precede_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.conf");
        fs::write(&path, "# comment\ntarget_ir = 0.9\nsizes = 500, 1000\nsynthetic = true\nverbose = false\n").unwrap();
        let argv: Vec<String> = ["screen", "simulate", "--config", path.to_str().unwrap(), "--target-ir", "0.7"]
            .into_iter()
            .map(String::from)
            .collect();
        assert_eq!(
            expand_argv(argv).unwrap(),
            ["screen", "simulate", "--target-ir=0.9", "--sizes=500,1000", "--synthetic", "--target-ir", "0.7"]
        );
    }

    #[test]
    fn malformed_lines_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.conf");
        fs::write(&path, "just words\n").unwrap();
        assert!(config_args(&path).unwrap_err().to_string().contains(":1:"));
        assert!(config_args(&dir.path().join("missing")).is_err());
    }
}
