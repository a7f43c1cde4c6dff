//! Recorded policy trajectories: loading, validation and episode views.
//!
//! A trajectory file is UTF-8 text with a `#samdp-traj v1 D=<int>` header
//! followed by one step per line:
//!
//! ```text
//! episode step value reward action terminal f_1 ... f_D
//! ```
//!
//! The reward on a line is the reward received when leaving that state.

use std::ops::Range;
use std::path::Path;

use crate::error::{Result, SamdpError};
use crate::matrix::Matrix;
use crate::textio::{self, Header};

pub const TRAJ_TAG: &str = "samdp-traj";

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub episode_id: usize,
    pub step_index: usize,
    pub features: Vec<f64>,
    pub value_estimate: f64,
    pub reward: f64,
    pub action: usize,
    pub terminal: bool,
}

/// Validated, immutable sequence of step records grouped into contiguous episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    records: Vec<StepRecord>,
    episode_offsets: Vec<usize>,
    feature_dim: usize,
}

impl TrajectoryDataset {
    /// Validates records and indexes their episodes.
    pub fn from_records(records: Vec<StepRecord>) -> Result<Self> {
        let feature_dim = records.first().map_or(0, |r| r.features.len());
        let mut offsets = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (i, rec) in records.iter().enumerate() {
            if rec.features.len() != feature_dim {
                return Err(SamdpError::invalid(format!(
                    "record {i}: feature dimension {} differs from {feature_dim}",
                    rec.features.len()
                )));
            }
            check_record(rec).map_err(|m| SamdpError::invalid(format!("record {i}: {m}")))?;
            let new_episode = i == 0 || records[i - 1].episode_id != rec.episode_id;
            if new_episode {
                if !seen.insert(rec.episode_id) {
                    return Err(SamdpError::invalid(format!(
                        "record {i}: episode {} is not contiguous",
                        rec.episode_id
                    )));
                }
                offsets.push(i);
            } else if records[i - 1].terminal {
                return Err(SamdpError::invalid(format!(
                    "record {}: terminal flag set before the end of episode {}",
                    i - 1,
                    rec.episode_id
                )));
            }
            let expected_step = if new_episode { 0 } else { records[i - 1].step_index + 1 };
            if rec.step_index != expected_step {
                return Err(SamdpError::invalid(format!(
                    "record {i}: step index {} in episode {} should be {expected_step}",
                    rec.step_index, rec.episode_id
                )));
            }
        }
        Ok(TrajectoryDataset {
            records,
            episode_offsets: offsets,
            feature_dim,
        })
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn episode_offsets(&self) -> &[usize] {
        &self.episode_offsets
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn total_steps(&self) -> usize {
        self.records.len()
    }

    pub fn num_episodes(&self) -> usize {
        self.episode_offsets.len()
    }

    /// Index range of episode `j` (position in the dataset, not episode id).
    pub fn episode_range(&self, j: usize) -> Range<usize> {
        let start = self.episode_offsets[j];
        let end = self
            .episode_offsets
            .get(j + 1)
            .copied()
            .unwrap_or(self.records.len());
        start..end
    }

    pub fn episode_ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.num_episodes()).map(|j| self.episode_range(j))
    }

    pub fn episode_id(&self, j: usize) -> usize {
        self.records[self.episode_offsets[j]].episode_id
    }

    /// Whether episode `j` ended in a terminal state (as opposed to being cut off).
    pub fn episode_terminated(&self, j: usize) -> bool {
        let r = self.episode_range(j);
        r.end > r.start && self.records[r.end - 1].terminal
    }

    pub fn features(&self) -> Matrix {
        let mut m = Matrix::zeros(self.records.len(), self.feature_dim);
        for (i, r) in self.records.iter().enumerate() {
            m.row_mut(i).copy_from_slice(&r.features);
        }
        m
    }

    pub fn values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.value_estimate).collect()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.reward).collect()
    }

    /// Builds a dataset holding only the listed episodes, in the given order.
    pub fn subset_episodes(&self, episodes: &[usize]) -> Result<Self> {
        let mut records = Vec::new();
        for &j in episodes {
            records.extend_from_slice(&self.records[self.episode_range(j)]);
        }
        TrajectoryDataset::from_records(records)
    }

    /// Serializes to the trajectory text format.
    pub fn to_text(&self) -> String {
        let mut out = format!("#{TRAJ_TAG} v1 D={}\n", self.feature_dim);
        for r in &self.records {
            out.push_str(&format!(
                "{} {} {} {} {} {}",
                r.episode_id,
                r.step_index,
                r.value_estimate,
                r.reward,
                r.action,
                u8::from(r.terminal)
            ));
            for f in &r.features {
                out.push(' ');
                textio::push_real(&mut out, *f);
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        textio::write_text(path, &self.to_text())
    }

    /// Parses the trajectory text format; `origin` names the source in errors.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = Header::parse(origin, lines.next(), TRAJ_TAG)?;
        let dim: usize = header.require(origin, "D")?;
        let mut records = Vec::new();
        for (idx, line) in lines.enumerate() {
            let line_no = idx + 2;
            if line.trim().is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split(' ').collect();
            if toks.len() < 6 {
                return Err(SamdpError::Parse {
                    path: origin.to_string(),
                    line: line_no,
                    message: format!("expected at least 6 fields, found {}", toks.len()),
                });
            }
            let record_no = records.len();
            if toks.len() != 6 + dim {
                return Err(SamdpError::Parse {
                    path: origin.to_string(),
                    line: line_no,
                    message: format!(
                        "record {record_no}: feature dimension {} does not match D={dim}",
                        toks.len() - 6
                    ),
                });
            }
            let terminal = match toks[5] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(SamdpError::Parse {
                        path: origin.to_string(),
                        line: line_no,
                        message: format!("terminal flag must be 0 or 1, found `{other}`"),
                    })
                }
            };
            let features = toks[6..]
                .iter()
                .map(|t| textio::parse_f64(origin, line_no, t))
                .collect::<Result<Vec<_>>>()?;
            let rec = StepRecord {
                episode_id: textio::parse_usize(origin, line_no, toks[0])?,
                step_index: textio::parse_usize(origin, line_no, toks[1])?,
                value_estimate: textio::parse_f64(origin, line_no, toks[2])?,
                reward: textio::parse_f64(origin, line_no, toks[3])?,
                action: textio::parse_usize(origin, line_no, toks[4])?,
                terminal,
                features,
            };
            if let Err(m) = check_record(&rec) {
                return Err(SamdpError::Parse {
                    path: origin.to_string(),
                    line: line_no,
                    message: m,
                });
            }
            records.push(rec);
        }
        let ds = TrajectoryDataset::from_records(records).map_err(|e| match e {
            SamdpError::Invalid(m) => SamdpError::Parse {
                path: origin.to_string(),
                line: record_line(&m),
                message: m,
            },
            other => other,
        })?;
        if ds.total_steps() > 0 && ds.feature_dim != dim {
            return Err(SamdpError::invalid("feature dimension disagrees with header"));
        }
        Ok(TrajectoryDataset {
            feature_dim: dim,
            ..ds
        })
    }
}

fn check_record(rec: &StepRecord) -> std::result::Result<(), String> {
    if !rec.value_estimate.is_finite() {
        return Err("value estimate is not finite".into());
    }
    if !rec.reward.is_finite() {
        return Err("reward is not finite".into());
    }
    if rec.features.iter().any(|f| !f.is_finite()) {
        return Err("features contain non-finite values".into());
    }
    Ok(())
}

// Validation messages start with "record <i>:"; records sit one line below their index + header.
fn record_line(msg: &str) -> usize {
    msg.strip_prefix("record ")
        .and_then(|s| s.split(':').next())
        .and_then(|n| n.parse::<usize>().ok())
        .map_or(0, |n| n + 2)
}

/// Reads and validates a trajectory file.
pub fn load_dataset(path: &Path) -> Result<TrajectoryDataset> {
    let text = textio::read_text(path)?;
    TrajectoryDataset::parse(&text, &path.display().to_string())
}

/// Undiscounted return of every episode, in dataset order.
pub fn episode_returns(dataset: &TrajectoryDataset) -> Vec<f64> {
    dataset
        .episode_ranges()
        .map(|r| dataset.records()[r].iter().map(|s| s.reward).sum())
        .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn rec(ep: usize, step: usize, reward: f64, terminal: bool, f: &[f64]) -> StepRecord {
        StepRecord {
            episode_id: ep,
            step_index: step,
            features: f.to_vec(),
            value_estimate: 0.5,
            reward,
            action: 0,
            terminal,
        }
    }

    fn two_episode_text() -> String {
        "#samdp-traj v1 D=2\n\
         0 0 0.1 0 1 0 1.0 2.0\n\
         0 1 0.2 0 2 0 1.5 2.5\n\
         0 2 0.3 1 0 1 2.0 3.0\n\
         1 0 0.4 0 3 0 -1 1e-3\n\
         1 1 0.5 0 1 0 0.0 0.5\n"
            .to_string()
    }

    #[test]
    fn loads_two_episodes() {
        let ds = TrajectoryDataset::parse(&two_episode_text(), "mem").unwrap();
        assert_eq!(ds.episode_offsets(), &[0, 3]);
        assert_eq!(ds.total_steps(), 5);
        assert_eq!(ds.feature_dim(), 2);
        assert!(ds.episode_terminated(0));
        assert!(!ds.episode_terminated(1));
        assert_eq!(ds.records()[3].features, vec![-1.0, 1e-3]);
    }

    #[test]
    fn rejects_dimension_mismatch_naming_record() {
        let mut text = String::from("#samdp-traj v1 D=8\n");
        for i in 0..6 {
            let dim = if i == 4 { 7 } else { 8 };
            text.push_str(&format!("0 {i} 0 0 0 0"));
            for _ in 0..dim {
                text.push_str(" 0.5");
            }
            text.push('\n');
        }
        let err = TrajectoryDataset::parse(&text, "mem").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("record 4"), "{msg}");
        assert!(msg.contains("line 6"), "{msg}");
    }

    #[test]
    fn rejects_non_consecutive_steps() {
        let text = "#samdp-traj v1 D=1\n0 0 0 0 0 0 1\n0 2 0 0 0 0 1\n";
        let err = TrajectoryDataset::parse(text, "mem").unwrap_err();
        assert!(err.to_string().contains("step index"), "{err}");
        assert!(matches!(err, SamdpError::Parse { line: 3, .. }));
    }

    #[test]
    fn rejects_terminal_mid_episode() {
        let text = "#samdp-traj v1 D=1\n0 0 0 0 0 1 1\n0 1 0 0 0 0 1\n";
        let err = TrajectoryDataset::parse(text, "mem").unwrap_err();
        assert!(err.to_string().contains("terminal"), "{err}");
    }

    #[test]
    fn rejects_malformed_line_with_line_number() {
        let text = "#samdp-traj v1 D=1\n0 0 0 0 0 0 1\n0 1 x 0 0 0 1\n";
        match TrajectoryDataset::parse(text, "mem").unwrap_err() {
            SamdpError::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn rejects_non_contiguous_episode() {
        let text = "#samdp-traj v1 D=1\n0 0 0 0 0 0 1\n1 0 0 0 0 0 1\n0 0 0 0 0 0 1\n";
        assert!(TrajectoryDataset::parse(text, "mem").is_err());
    }

    #[test]
    fn rejects_wrong_header() {
        let err = TrajectoryDataset::parse("#samdp-embed v1 N=3\n", "mem").unwrap_err();
        assert!(matches!(err, SamdpError::FormatMismatch { .. }));
        let err = TrajectoryDataset::parse("#samdp-traj v2 D=3\n", "mem").unwrap_err();
        assert!(matches!(err, SamdpError::FormatMismatch { .. }));
    }

    #[test]
    fn returns_sum_rewards() {
        let recs = vec![
            rec(0, 0, 0.0, false, &[0.0]),
            rec(0, 1, 0.0, false, &[0.0]),
            rec(0, 2, 1.0, true, &[0.0]),
            rec(1, 0, 0.0, false, &[0.0]),
            rec(1, 1, 0.0, false, &[0.0]),
        ];
        let ds = TrajectoryDataset::from_records(recs).unwrap();
        assert_eq!(episode_returns(&ds), vec![1.0, 0.0]);
    }

    #[test]
    fn text_round_trip_is_byte_identical() {
        let ds = TrajectoryDataset::parse(&two_episode_text(), "mem").unwrap();
        let text = ds.to_text();
        let again = TrajectoryDataset::parse(&text, "mem").unwrap();
        assert_eq!(ds, again);
        assert_eq!(text, again.to_text());
    }
}
