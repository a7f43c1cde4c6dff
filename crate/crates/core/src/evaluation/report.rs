use std::fmt::Display;
use std::path::Path;

use crate::error::{Result, SamdpError};
use crate::textio::{self, Header};

pub const REPORT_TAG: &str = "samdp-report";

/// Ordered `key=value` summary, one pair per line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValueReport {
    entries: Vec<(String, String)>,
}

impl KeyValueReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: &str, value: impl Display) {
        let v = value.to_string();
        debug_assert!(!key.contains(['=', '\n']) && !v.contains('\n'));
        self.entries.push((key.to_string(), v));
    }

    /// Real number in 17-significant-digit form so it survives a round trip.
    pub fn push_real(&mut self, key: &str, v: f64) {
        self.push(key, format!("{v:.16e}"));
    }

    pub fn push_opt_real(&mut self, key: &str, v: Option<f64>) {
        match v {
            Some(v) => self.push_real(key, v),
            None => self.push(key, "undefined"),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(|v| v.parse().ok())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn extend(&mut self, other: &KeyValueReport) {
        self.entries.extend(other.entries.iter().cloned());
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("#{REPORT_TAG} v1\n");
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        Header::parse(origin, lines.next().map(|(_, l)| l), REPORT_TAG)?;
        let mut entries = Vec::new();
        for (idx, line) in lines {
            let (k, v) = line.split_once('=').ok_or_else(|| SamdpError::Parse {
                path: origin.to_string(),
                line: idx + 1,
                message: "expected key=value".into(),
            })?;
            entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(KeyValueReport { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        textio::write_text(path, &self.to_text())
    }

    pub fn load(path: &Path) -> Result<Self> {
        KeyValueReport::parse(&textio::read_text(path)?, &path.display().to_string())
    }
}
