//! Flat `key=value` config files. Keys are either global flag names
//! (`seed=3`) or `subcommand.flag` (`train.epochs=12`); a `[subcommand]`
//! header prefixes the keys below it. Values fill in flags missing from the
//! command line, so flags always win.

use std::ffi::OsString;
use std::path::Path;

use clap::{ArgAction, Command};

#[derive(Debug, PartialEq)]
pub struct Entry {
    pub section: Option<String>,
    pub key: String,
    pub value: String,
    pub line: usize,
}

pub fn parse(text: &str) -> Result<Vec<Entry>, String> {
    let mut section: Option<String> = None;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = Some(name.trim().to_string());
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key=value, got `{line}`", i + 1))?;
        let k = k.trim().replace('_', "-");
        let (sec, key) = match k.split_once('.') {
            Some((s, k)) => (Some(s.to_string()), k.to_string()),
            None => (section.clone(), k),
        };
        let value = v.trim().trim_matches('"').to_string();
        out.push(Entry {
            section: sec,
            key,
            value,
            line: i + 1,
        });
    }
    Ok(out)
}

/// Value of `--config` in `argv`, if any.
pub fn config_path(argv: &[OsString]) -> Option<OsString> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(v.into());
        }
    }
    None
}

fn has_flag(argv: &[OsString], long: &str) -> bool {
    let flag = format!("--{long}");
    let prefix = format!("--{long}=");
    argv.iter().any(|a| {
        let s = a.to_string_lossy();
        s == flag || s.starts_with(&prefix)
    })
}

/// Appends config values as flags for every flag absent from `argv`.
pub fn inject(cmd: &Command, argv: Vec<OsString>, path: &Path) -> Result<Vec<OsString>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("--config {}: {e}", path.display()))?;
    let entries = parse(&text)?;
    let sub_name = argv
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .find(|a| cmd.find_subcommand(a).is_some());
    let mut argv = argv;
    for e in entries {
        let target = match &e.section {
            None => cmd,
            Some(s) => match cmd.find_subcommand(s) {
                Some(sub) => {
                    if sub_name.as_deref() != Some(s.as_str()) {
                        continue;
                    }
                    sub
                }
                None => return Err(format!("config line {}: unknown subcommand `{s}`", e.line)),
            },
        };
        let arg = target
            .get_arguments()
            .find(|a| a.get_long() == Some(e.key.as_str()))
            .ok_or_else(|| format!("config line {}: unknown flag `--{}`", e.line, e.key))?;
        if e.key == "config" || has_flag(&argv, &e.key) {
            continue;
        }
        match arg.get_action() {
            ArgAction::SetTrue => match e.value.as_str() {
                "true" => argv.push(format!("--{}", e.key).into()),
                "false" => {}
                other => return Err(format!("config line {}: `{}` must be true or false, got `{other}`", e.line, e.key)),
            },
            _ => {
                argv.push(format!("--{}", e.key).into());
                argv.push(e.value.into());
            }
        }
    }
    Ok(argv)
}
