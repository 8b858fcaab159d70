//! Tiny flag parser: positional subcommand words followed by `--flag value`
//! pairs (booleans take no value).

use mvcaa_core::error::{Error, Result};
use std::collections::BTreeMap;

pub struct Args {
    pub words: Vec<String>,
    flags: BTreeMap<String, String>,
    bools: Vec<String>,
}

const BOOL_FLAGS: &[&str] = &["--f64", "--json", "--image-cond", "--no-caa"];

impl Args {
    pub fn parse(argv: &[String]) -> Result<Args> {
        let mut words = Vec::new();
        let mut flags = BTreeMap::new();
        let mut bools = Vec::new();
        let mut i = 0;
        while i < argv.len() {
            let a = &argv[i];
            if let Some(name) = a.strip_prefix("--") {
                if BOOL_FLAGS.contains(&a.as_str()) {
                    bools.push(name.to_string());
                    i += 1;
                } else {
                    let value = argv
                        .get(i + 1)
                        .ok_or_else(|| Error::Invalid(format!("flag {a} needs a value")))?;
                    flags.insert(name.to_string(), value.clone());
                    i += 2;
                }
            } else {
                words.push(a.clone());
                i += 1;
            }
        }
        Ok(Args { words, flags, bools })
    }

    pub fn flag(&self, name: &str) -> Option<&str> {
        self.flags.get(name).map(|s| s.as_str())
    }

    pub fn req(&self, name: &str) -> Result<&str> {
        self.flag(name).ok_or_else(|| Error::Invalid(format!("missing required flag --{name}")))
    }

    pub fn bool(&self, name: &str) -> bool {
        self.bools.iter().any(|b| b == name)
    }

    pub fn usize_or(&self, name: &str, default: usize) -> Result<usize> {
        match self.flag(name) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| Error::Invalid(format!("--{name} wants an integer, got {v}"))),
        }
    }

    pub fn u64_or(&self, name: &str, default: u64) -> Result<u64> {
        match self.flag(name) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| Error::Invalid(format!("--{name} wants an integer, got {v}"))),
        }
    }

    pub fn f64_or(&self, name: &str, default: f64) -> Result<f64> {
        match self.flag(name) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| Error::Invalid(format!("--{name} wants a number, got {v}"))),
        }
    }

    pub fn usize_list(&self, name: &str) -> Result<Option<Vec<usize>>> {
        match self.flag(name) {
            None => Ok(None),
            Some(v) => {
                let parsed: std::result::Result<Vec<usize>, _> = v.split(',').map(|p| p.trim().parse()).collect();
                parsed
                    .map(Some)
                    .map_err(|_| Error::Invalid(format!("--{name} wants a comma-separated integer list, got {v}")))
            }
        }
    }
}
