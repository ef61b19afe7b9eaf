//! `key=value` configuration files, merged into the argument list so that
//! flags given on the command line take precedence.

use std::path::Path;

/// Parses `key = value` lines; `#` starts a comment line. Keys are flag
/// names without the leading dashes.
pub fn parse(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key=value", n + 1))?;
        let k = k.trim().trim_start_matches("--");
        if k.is_empty() || k.contains(char::is_whitespace) {
            return Err(format!("line {}: invalid key `{k}`", n + 1));
        }
        if k == "config" {
            return Err(format!(
                "line {}: config files cannot include other config files",
                n + 1
            ));
        }
        out.push((k.to_owned(), v.trim().to_owned()));
    }
    Ok(out)
}

/// Flags for the parsed entries. `true` becomes a bare switch and `false`
/// drops the entry.
pub fn to_flags(entries: &[(String, String)]) -> Vec<String> {
    let mut out = Vec::new();
    for (k, v) in entries {
        match v.as_str() {
            "true" => out.push(format!("--{k}")),
            "false" => {}
            _ => {
                out.push(format!("--{k}"));
                out.push(v.clone());
            }
        }
    }
    out
}

/// Finds `--config PATH` / `--config=PATH` in `args`.
pub fn find_config(args: &[String]) -> Option<String> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_owned());
        }
    }
    None
}

/// Index of the subcommand, skipping global flags and their values.
fn subcommand_position(args: &[String]) -> Option<usize> {
    let mut i = 1;
    while i < args.len() {
        match args[i].as_str() {
            "--config" | "--threads" => i += 2,
            a if a.starts_with('-') => i += 1,
            _ => return Some(i),
        }
    }
    None
}

/// Inserts the flags of the config file named in `args` directly after the
/// subcommand, ahead of the user's own flags.
pub fn expand(args: Vec<String>) -> Result<Vec<String>, ConfigError> {
    let Some(path) = find_config(&args) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| ConfigError::Read(path.clone(), e.to_string()))?;
    let entries = parse(&text).map_err(|e| ConfigError::Syntax(path.clone(), e))?;
    let flags = to_flags(&entries);
    let Some(sub) = subcommand_position(&args) else {
        return Ok(args);
    };
    let mut out = args[..=sub].to_vec();
    out.extend(flags);
    out.extend_from_slice(&args[sub + 1..]);
    Ok(out)
}

#[derive(Debug)]
pub enum ConfigError {
    Read(String, String),
    Syntax(String, String),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Read(p, e) => write!(f, "cannot read config file {}: {e}", Path::new(p).display()),
            ConfigError::Syntax(p, e) => write!(f, "config file {}: {e}", Path::new(p).display()),
        }
    }
}
