//! `--config FILE` support: `key = value` lines become flags inserted right
//! after the subcommand, so anything given on the command line wins.

use std::fs;

use anyhow::{bail, Context, Result};

/// Reads the `--config` value out of `args`, if any.
fn config_path(args: &[String]) -> Option<String> {
    let mut iter = args.iter();
    while let Some(a) = iter.next() {
        if a == "--config" {
            return iter.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_owned());
        }
    }
    None
}

/// Parses `key = value` lines. Blank lines and `#` comments are ignored.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("config line {}: expected key = value", i + 1);
        };
        let key = key.trim().replace('_', "-");
        if key.is_empty() {
            bail!("config line {}: empty key", i + 1);
        }
        out.push((key, value.trim().to_owned()));
    }
    Ok(out)
}

fn as_flags(entries: &[(String, String)]) -> Vec<String> {
    let mut flags = Vec::new();
    for (key, value) in entries {
        match value.as_str() {
            "true" => flags.push(format!("--{key}")),
            "false" => {}
            _ => {
                flags.push(format!("--{key}"));
                flags.push(value.clone());
            }
        }
    }
    flags
}

/// Position of the first positional argument, skipping the value of a
/// leading `--config`.
fn subcommand_index(args: &[String]) -> Option<usize> {
    let mut i = 1;
    while i < args.len() {
        if args[i] == "--config" {
            i += 2;
        } else if args[i].starts_with('-') {
            i += 1;
        } else {
            return Some(i);
        }
    }
    None
}

/// Returns `args` with the config file's entries spliced in after the
/// subcommand name. Without `--config` the arguments pass through.
pub fn merge_config(args: Vec<String>) -> Result<Vec<String>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path).with_context(|| format!("cannot read config file {path}"))?;
    let flags = as_flags(&parse_config(&text).with_context(|| format!("in config file {path}"))?);
    let Some(sub) = subcommand_index(&args) else {
        return Ok(args);
    };
    let mut merged = args[..=sub].to_vec();
    merged.extend(flags);
    merged.extend_from_slice(&args[sub + 1..]);
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_lines_become_flags() {
        let entries = parse_config("# grid\nreplicates = 5\nseed=7 # inline\n\nbase_seed = 3\nexclusive = true\nquiet = false\n").unwrap();
        assert_eq!(
            as_flags(&entries),
            ["--replicates", "5", "--seed", "7", "--base-seed", "3", "--exclusive"]
        );
        assert!(parse_config("just words").is_err());
    }

    #[test]
    fn subcommand_found_after_a_leading_config() {
        let args: Vec<String> = ["covexplain", "--config", "c.txt", "ablate", "--k", "3"].iter().map(|s| s.to_string()).collect();
        assert_eq!(subcommand_index(&args), Some(3));
    }

    #[test]
    fn no_config_passes_through() {
        let args: Vec<String> = ["covexplain", "split", "--k", "3"].iter().map(|s| s.to_string()).collect();
        assert_eq!(merge_config(args.clone()).unwrap(), args);
    }
}
