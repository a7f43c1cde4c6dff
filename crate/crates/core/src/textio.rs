//! Shared helpers for the line-oriented text formats.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Result, SamdpError};

/// A versioned header line such as `#samdp-traj v1 D=8`.
#[derive(Debug, Clone)]
pub(crate) struct Header {
    fields: Vec<(String, String)>,
}

impl Header {
    pub(crate) fn parse(path: &str, line: Option<&str>, tag: &str) -> Result<Self> {
        let expected = format!("#{tag} v1");
        let line = line.map(str::trim_end).unwrap_or("");
        let mut parts = line.split_ascii_whitespace();
        let found_tag = parts.next().unwrap_or("");
        let found_ver = parts.next().unwrap_or("");
        if found_tag != format!("#{tag}") || found_ver != "v1" {
            return Err(SamdpError::FormatMismatch {
                path: path.to_string(),
                expected,
                found: line.chars().take(60).collect(),
            });
        }
        let mut fields = Vec::new();
        for p in parts {
            let (k, v) = p.split_once('=').ok_or_else(|| SamdpError::Parse {
                path: path.to_string(),
                line: 1,
                message: format!("malformed header field `{p}`"),
            })?;
            fields.push((k.to_string(), v.to_string()));
        }
        Ok(Header { fields })
    }

    pub(crate) fn get(&self, key: &str) -> Option<&str> {
        self.fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub(crate) fn require<T: std::str::FromStr>(&self, path: &str, key: &str) -> Result<T> {
        let raw = self.get(key).ok_or_else(|| SamdpError::Parse {
            path: path.to_string(),
            line: 1,
            message: format!("header is missing `{key}=`"),
        })?;
        raw.parse().map_err(|_| SamdpError::Parse {
            path: path.to_string(),
            line: 1,
            message: format!("header field `{key}={raw}` is not valid"),
        })
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| SamdpError::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| SamdpError::io(parent, e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| SamdpError::io(path, e))
}

pub(crate) fn parse_f64(path: &str, line: usize, tok: &str) -> Result<f64> {
    tok.parse::<f64>().map_err(|_| SamdpError::Parse {
        path: path.to_string(),
        line,
        message: format!("`{tok}` is not a real number"),
    })
}

pub(crate) fn parse_usize(path: &str, line: usize, tok: &str) -> Result<usize> {
    tok.parse::<usize>().map_err(|_| SamdpError::Parse {
        path: path.to_string(),
        line,
        message: format!("`{tok}` is not a non-negative integer"),
    })
}

/// Shortest decimal that round-trips to the same `f64`.
pub(crate) fn push_real(out: &mut String, v: f64) {
    let _ = write!(out, "{v}");
}

/// Fixed 17-significant-digit scientific rendering.
pub(crate) fn push_real17(out: &mut String, v: f64) {
    let _ = write!(out, "{v:.16e}");
}

pub(crate) fn push_row(out: &mut String, row: &[f64], exact17: bool) {
    for (i, v) in row.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        if exact17 {
            push_real17(out, *v);
        } else {
            push_real(out, *v);
        }
    }
    out.push('\n');
}

pub(crate) fn parse_row(path: &str, line: usize, text: &str, expected: usize) -> Result<Vec<f64>> {
    let row = text
        .split_ascii_whitespace()
        .map(|t| parse_f64(path, line, t))
        .collect::<Result<Vec<_>>>()?;
    if row.len() != expected {
        return Err(SamdpError::Parse {
            path: path.to_string(),
            line,
            message: format!("expected {expected} values, found {}", row.len()),
        });
    }
    Ok(row)
}
