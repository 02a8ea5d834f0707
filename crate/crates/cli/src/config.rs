//! `--config` files: flat `key = value` lines whose keys are the long flag
//! names of the subcommand. Values from the file are placed before the
//! command-line arguments, so flags given explicitly take precedence.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::Command;

pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("config line {}: expected `key = value`, got `{raw}`", no + 1);
        };
        let key = key.trim().replace('_', "-");
        if key.is_empty() {
            bail!("config line {}: empty key", no + 1);
        }
        out.push((key, value.trim().to_string()));
    }
    Ok(out)
}

/// Finds `--config <path>` (or `--config=<path>`) after the subcommand name.
fn config_path(args: &[OsString]) -> Option<(usize, usize, OsString)> {
    for (i, a) in args.iter().enumerate().skip(1) {
        let s = a.to_string_lossy();
        if s == "--" {
            return None;
        }
        if s == "--config" {
            return args.get(i + 1).map(|p| (i, 2, p.clone()));
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some((i, 1, p.into()));
        }
    }
    None
}

/// Expands a `--config` file into flags placed right after the subcommand name.
pub fn expand_args(cmd: &Command, mut args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some((pos, width, path)) = config_path(&args) else {
        return Ok(args);
    };
    let Some(sub_name) = args.get(1).map(|s| s.to_string_lossy().into_owned()) else {
        return Ok(args);
    };
    let Some(sub) = cmd.find_subcommand(&sub_name) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(Path::new(&path))
        .with_context(|| format!("reading config {}", Path::new(&path).display()))?;
    let mut injected: Vec<OsString> = Vec::new();
    for (key, value) in parse_config(&text)? {
        let Some(arg) = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()) && key != "config")
        else {
            bail!("unknown config key `{key}` for `{sub_name}`");
        };
        let takes_value = arg.get_num_args().is_none_or(|n| n.takes_values());
        if takes_value {
            injected.push(format!("--{key}").into());
            injected.push(value.into());
        } else {
            match value.as_str() {
                "true" | "yes" | "1" => injected.push(format!("--{key}").into()),
                "false" | "no" | "0" => {}
                other => bail!("config key `{key}` is a switch; expected true or false, got `{other}`"),
            }
        }
    }
    args.drain(pos..pos + width);
    args.splice(2..2, injected);
    Ok(args)
}
