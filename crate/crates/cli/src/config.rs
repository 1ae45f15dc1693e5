//! `--config` files: `key=value` lines that act as extra flags.
//!
//! Each entry becomes `--key=value` appended after the command line, and the
//! parser keeps the last occurrence of a flag, so file entries win over flags
//! typed on the command line. `key=true` turns on a switch, `key=false` leaves
//! it off. Underscores in keys are accepted in place of dashes.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use crate::Failure;

fn config_path(args: &[OsString]) -> Result<Option<PathBuf>, Failure> {
    let mut iter = args.iter();
    while let Some(a) = iter.next() {
        let Some(a) = a.to_str() else { continue };
        if a == "--config" {
            return match iter.next() {
                Some(p) => Ok(Some(PathBuf::from(p))),
                None => Err(Failure::Usage("--config needs a file path".into())),
            };
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Ok(Some(PathBuf::from(p)));
        }
    }
    Ok(None)
}

/// Parses the file contents into flag arguments.
pub fn config_flags(text: &str) -> Result<Vec<OsString>, Failure> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Failure::Usage(format!("config line {}: expected key=value", n + 1)));
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key.is_empty() || key == "config" {
            return Err(Failure::Usage(format!("config line {}: invalid key", n + 1)));
        }
        match value {
            "true" => out.push(format!("--{key}").into()),
            "false" => {}
            v => out.push(format!("--{key}={v}").into()),
        }
    }
    Ok(out)
}

/// Returns the process arguments with the config entries appended.
pub fn expand_args(mut args: Vec<OsString>) -> Result<Vec<OsString>, Failure> {
    if let Some(path) = config_path(&args)? {
        let text = fs::read_to_string(&path).map_err(|e| pcflow::Error::io(&path, e))?;
        args.extend(config_flags(&text)?);
    }
    Ok(args)
}
