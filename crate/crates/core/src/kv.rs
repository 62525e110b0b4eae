//! Plain `key = value` text: one entry per line, `#` starts a comment.

use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

pub fn parse(text: &str) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(Error::Config {
                line,
                msg: format!("expected `key = value`, found `{content}`"),
            });
        };
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Config {
                line,
                msg: "empty key".into(),
            });
        }
        if out.iter().any(|e: &Entry| e.key == key) {
            return Err(Error::Config {
                line,
                msg: format!("duplicate key `{key}`"),
            });
        }
        out.push(Entry {
            key: key.to_string(),
            value: value.trim().to_string(),
            line,
        });
    }
    Ok(out)
}

/// Parses `entry.value`, reporting the line on failure.
pub fn value<T>(entry: &Entry) -> Result<T>
where
    T: FromStr,
    T::Err: Display,
{
    entry.value.parse().map_err(|e: T::Err| Error::Config {
        line: entry.line,
        msg: format!("bad value `{}` for `{}`: {e}", entry.value, entry.key),
    })
}

pub fn bool_value(entry: &Entry) -> Result<bool> {
    match entry.value.as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::Config {
            line: entry.line,
            msg: format!("bad boolean `{other}` for `{}`", entry.key),
        }),
    }
}

/// Formats a float so that parsing it back is exact.
pub fn float(v: f64) -> String {
    format!("{v:?}")
}
