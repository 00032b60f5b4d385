//! `--config FILE`: a JSON object whose keys are flag names. Its entries are
//! spliced into the argument list ahead of the user's own flags, so that
//! with last-one-wins parsing explicit flags take precedence.

use anyhow::{bail, Context, Result};
use serde_json::Value;

const SUBCOMMANDS: [&str; 7] = [
    "generate",
    "train-score",
    "order",
    "prune",
    "sweep",
    "sgm-train",
    "sgm-sample",
];

/// Rewrites `argv` to `[bin, subcommand, config flags..., user flags...]`
/// when a config file is given; otherwise returns it unchanged.
pub fn merge_config_file(argv: Vec<String>) -> Result<Vec<String>> {
    let Some(path) = find_config_path(&argv) else {
        return Ok(argv);
    };
    let Some(sub) = argv.iter().skip(1).position(|a| SUBCOMMANDS.contains(&a.as_str())) else {
        // let the parser report the missing subcommand
        return Ok(argv);
    };
    let sub = sub + 1;
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading config file {}", path))?;
    let extra = config_args(&text).with_context(|| format!("config file {path}"))?;
    let mut out = Vec::with_capacity(argv.len() + extra.len());
    out.push(argv[0].clone());
    out.push(argv[sub].clone());
    out.extend(extra);
    out.extend(argv[1..sub].iter().cloned());
    out.extend(argv[sub + 1..].iter().cloned());
    Ok(out)
}

fn find_config_path(argv: &[String]) -> Option<String> {
    let mut found = None;
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        if a == "--" {
            break;
        }
        if a == "--config" {
            found = it.next().cloned();
        } else if let Some(v) = a.strip_prefix("--config=") {
            found = Some(v.to_string());
        }
    }
    found
}

/// Flag tokens for a JSON object: `true` becomes a bare switch, `false` and
/// `null` are omitted, arrays are comma-joined.
pub fn config_args(text: &str) -> Result<Vec<String>> {
    let value: Value = serde_json::from_str(text)?;
    let Value::Object(map) = value else {
        bail!("expected a JSON object of flag values");
    };
    let mut out = Vec::new();
    for (key, v) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        if flag == "--config" {
            bail!("config files cannot include other config files");
        }
        match v {
            Value::Bool(true) => out.push(flag),
            Value::Bool(false) | Value::Null => {}
            Value::Array(items) => {
                let parts = items.iter().map(scalar).collect::<Result<Vec<_>>>()?;
                out.push(flag);
                out.push(parts.join(","));
            }
            other => {
                out.push(flag);
                out.push(scalar(&other)?);
            }
        }
    }
    Ok(out)
}

fn scalar(v: &Value) -> Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        other => bail!("unsupported config value {other}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn json_becomes_flags() {
        let args = config_args(r#"{"d": 3, "edge_prob": 0.5, "verbose": true, "timing": false, "grid": [5, 10]}"#).unwrap();
        assert_eq!(args, argv("--d 3 --edge-prob 0.5 --grid 5,10 --verbose"));
    }

    #[test]
    fn non_object_is_rejected() {
        assert!(config_args("[1, 2]").is_err());
        assert!(config_args(r#"{"config": "x.json"}"#).is_err());
    }

    #[test]
    fn without_config_argv_is_untouched() {
        let a = argv("bin generate --d 3");
        assert_eq!(merge_config_file(a.clone()).unwrap(), a);
    }

    #[test]
    fn config_flags_precede_user_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"d": 4, "n": 50}"#).unwrap();
        let a = vec![
            "bin".to_string(),
            "--seed".to_string(),
            "7".to_string(),
            "generate".to_string(),
            "--config".to_string(),
            path.display().to_string(),
            "--d".to_string(),
            "3".to_string(),
        ];
        let merged = merge_config_file(a).unwrap();
        assert_eq!(&merged[..6], &argv("bin generate --d 4 --n 50")[..]);
        assert_eq!(&merged[6..8], &argv("--seed 7")[..]);
        assert_eq!(merged.last().unwrap(), "3");
    }
}
