//! Online monitoring of new episodes against models of good and bad behaviour.
//!
//! New states are mapped to clusters in PCA space (t-SNE has no out-of-sample
//! map), short cluster visits are filtered causally, and every skill
//! transition adds its log-probability under the top-k and bottom-k matrices.
//! An episode is ejected once the bad model explains it better.

use std::path::Path;

use rayon::prelude::*;

use crate::aggregation::cluster_means;
use crate::embedding::PcaModel;
use crate::error::{Result, SamdpError};
use crate::matrix::{sq_dist, Matrix};
use crate::textio::{self, Header};
use crate::trajectory::{episode_returns, TrajectoryDataset};

pub const PROJECTION_TAG: &str = "samdp-projection";
pub const EJECT_TAG: &str = "samdp-eject";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EjectConfig {
    pub k_extreme: usize,
    pub likelihood_floor: f64,
    pub min_transitions: usize,
}

impl Default for EjectConfig {
    fn default() -> Self {
        EjectConfig {
            k_extreme: 20,
            likelihood_floor: 1e-3,
            min_transitions: 3,
        }
    }
}

impl EjectConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.likelihood_floor > 0.0 && self.likelihood_floor < 1.0) {
            return Err(SamdpError::Config("likelihood_floor must lie in (0, 1)".into()));
        }
        if self.min_transitions == 0 {
            return Err(SamdpError::Config("min_transitions must be at least 1".into()));
        }
        if self.k_extreme == 0 {
            return Err(SamdpError::Config("k_extreme must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-cluster means of the training steps in PCA space.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionModel {
    pub means: Matrix,
}

impl ProjectionModel {
    /// `reduced` holds the PCA coordinates of the training steps.
    pub fn fit(reduced: &Matrix, labels: &[usize], k: usize) -> Result<Self> {
        if reduced.rows() != labels.len() {
            return Err(SamdpError::invalid("labels and PCA rows differ in length"));
        }
        Ok(ProjectionModel {
            means: cluster_means(reduced, labels, k),
        })
    }

    /// Nearest cluster mean to an already reduced vector; ties go to the lower id.
    /// Empty clusters are never chosen.
    pub fn nearest(&self, reduced: &[f64]) -> Result<usize> {
        if reduced.len() != self.means.cols() {
            return Err(SamdpError::invalid(format!(
                "vector has {} dims, projection expects {}",
                reduced.len(),
                self.means.cols()
            )));
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, m) in self.means.iter_rows().enumerate() {
            if !m[0].is_finite() {
                continue;
            }
            let d = sq_dist(m, reduced);
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((i, d));
            }
        }
        best.map(|b| b.0)
            .ok_or_else(|| SamdpError::invalid("projection has no non-empty cluster"))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "#{PROJECTION_TAG} v1 K={} d={}\n",
            self.means.rows(),
            self.means.cols()
        );
        for row in self.means.iter_rows() {
            textio::push_row(&mut out, row, true);
        }
        out
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let header = Header::parse(origin, lines.next().map(|(_, l)| l), PROJECTION_TAG)?;
        let k: usize = header.require(origin, "K")?;
        let d: usize = header.require(origin, "d")?;
        let mut data = Vec::with_capacity(k * d);
        for (idx, line) in lines.by_ref().take(k) {
            data.extend(textio::parse_row(origin, idx + 1, line, d)?);
        }
        if data.len() != k * d {
            return Err(SamdpError::Parse {
                path: origin.to_string(),
                line: 1,
                message: format!("expected {k} mean rows"),
            });
        }
        Ok(ProjectionModel {
            means: Matrix::from_vec(k, d, data)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        textio::write_text(path, &self.to_text())
    }

    pub fn load(path: &Path) -> Result<Self> {
        ProjectionModel::parse(&textio::read_text(path)?, &path.display().to_string())
    }
}

/// Maps a raw feature vector to a cluster through the stored PCA basis.
pub fn project_state(features: &[f64], pca: &PcaModel, projection: &ProjectionModel) -> Result<usize> {
    projection.nearest(&pca.transform_row(features)?)
}

/// Causal counterpart of the offline flicker rule: a cluster is reported only
/// after it has been seen for `f` consecutive steps.
#[derive(Debug, Clone)]
pub struct FlickerFilter {
    f: usize,
    candidate: Option<usize>,
    run: usize,
}

impl FlickerFilter {
    pub fn new(f: usize) -> Self {
        FlickerFilter {
            f: f.max(1),
            candidate: None,
            run: 0,
        }
    }

    /// Feeds one step's cluster; returns it once it has persisted long enough.
    pub fn push(&mut self, cluster: usize) -> Option<usize> {
        if self.candidate == Some(cluster) {
            self.run += 1;
        } else {
            self.candidate = Some(cluster);
            self.run = 1;
        }
        (self.run >= self.f).then_some(cluster)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MonitorState {
    pub current_cluster: Option<usize>,
    pub transition_log: Vec<(usize, usize)>,
    pub loglik_plus: f64,
    pub loglik_minus: f64,
    pub ejected: bool,
    /// Number of logged transitions when the eject fired.
    pub ejected_at: Option<usize>,
}

/// Probability of `from -> to` with unobserved entries raised to `floor`.
///
/// Off-diagonal zeros get `floor` and the observed entries share the rest of
/// the mass in proportion to their values. A row without data is uniform.
pub fn floored_probability(t: &Matrix, from: usize, to: usize, floor: f64) -> f64 {
    let k = t.cols();
    if k < 2 {
        return 1.0;
    }
    let row = t.row(from);
    let (mut mass, mut zeros) = (0.0, 0usize);
    for (j, &x) in row.iter().enumerate() {
        if j == from {
            continue;
        }
        if x > 0.0 {
            mass += x;
        } else {
            zeros += 1;
        }
    }
    if mass <= 0.0 {
        return 1.0 / (k - 1) as f64;
    }
    let x = row[to];
    if x > 0.0 {
        x / mass * (1.0 - floor * zeros as f64).max(floor)
    } else {
        floor
    }
}

/// Advances the monitor by one (already flicker-filtered) cluster observation.
pub fn step_monitor(
    mut state: MonitorState,
    cluster: usize,
    t_plus: &Matrix,
    t_minus: &Matrix,
    config: &EjectConfig,
) -> MonitorState {
    if state.ejected {
        return state;
    }
    match state.current_cluster {
        Some(from) if from != cluster => {
            let floor = config.likelihood_floor;
            state.loglik_plus += floored_probability(t_plus, from, cluster, floor).ln();
            state.loglik_minus += floored_probability(t_minus, from, cluster, floor).ln();
            state.transition_log.push((from, cluster));
            if state.transition_log.len() >= config.min_transitions && state.loglik_minus > state.loglik_plus {
                state.ejected = true;
                state.ejected_at = Some(state.transition_log.len());
            }
        }
        _ => {}
    }
    state.current_cluster = Some(cluster);
    state
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeVerdict {
    pub episode_id: usize,
    pub ejected: bool,
    pub at_transition: usize,
    pub episode_return: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EjectOutcome {
    pub verdicts: Vec<EpisodeVerdict>,
    pub mean_return_all: f64,
    /// `None` when every episode was ejected.
    pub mean_return_unterminated: Option<f64>,
}

impl EjectOutcome {
    pub fn to_text(&self) -> String {
        let mut out = format!("#{EJECT_TAG} v1 episodes={}\n", self.verdicts.len());
        for v in &self.verdicts {
            out.push_str(&format!(
                "episode={} ejected={} at_transition={} return={}\n",
                v.episode_id, v.ejected as u8, v.at_transition, v.episode_return
            ));
        }
        out.push_str(&format!("mean_return_all={:.16e}\n", self.mean_return_all));
        match self.mean_return_unterminated {
            Some(m) => out.push_str(&format!("mean_return_unterminated={m:.16e}\n")),
            None => out.push_str("mean_return_unterminated=undefined\n"),
        }
        out
    }
}

/// Runs the monitor on one episode given its per-step clusters.
pub fn monitor_episode(
    clusters: &[usize],
    f_flicker: usize,
    t_plus: &Matrix,
    t_minus: &Matrix,
    config: &EjectConfig,
) -> MonitorState {
    let mut filter = FlickerFilter::new(f_flicker);
    let mut state = MonitorState::default();
    for &c in clusters {
        if let Some(c) = filter.push(c) {
            state = step_monitor(state, c, t_plus, t_minus, config);
            if state.ejected {
                break;
            }
        }
    }
    state
}

/// Projects every step of `dataset` and monitors each episode.
pub fn evaluate_eject(
    dataset: &TrajectoryDataset,
    pca: &PcaModel,
    projection: &ProjectionModel,
    t_plus: &Matrix,
    t_minus: &Matrix,
    f_flicker: usize,
    config: &EjectConfig,
) -> Result<EjectOutcome> {
    config.validate()?;
    let k = projection.means.rows();
    if t_plus.rows() != k || t_minus.rows() != k {
        return Err(SamdpError::invalid("extreme matrices and projection disagree on K"));
    }
    let returns = episode_returns(dataset);
    let verdicts: Vec<EpisodeVerdict> = (0..dataset.num_episodes())
        .into_par_iter()
        .map(|j| {
            let clusters = dataset.records()[dataset.episode_range(j)]
                .iter()
                .map(|r| project_state(&r.features, pca, projection))
                .collect::<Result<Vec<_>>>()?;
            let state = monitor_episode(&clusters, f_flicker, t_plus, t_minus, config);
            Ok(EpisodeVerdict {
                episode_id: dataset.episode_id(j),
                ejected: state.ejected,
                at_transition: state.ejected_at.unwrap_or(state.transition_log.len()),
                episode_return: returns[j],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let survivors: Vec<f64> = verdicts
        .iter()
        .filter(|v| !v.ejected)
        .map(|v| v.episode_return)
        .collect();
    if survivors.is_empty() {
        log::warn!("every episode was ejected; survivor mean is undefined");
    }
    Ok(EjectOutcome {
        mean_return_all: mean(&returns),
        mean_return_unterminated: (!survivors.is_empty()).then(|| mean(&survivors)),
        verdicts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[[f64; 3]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn identical_models_never_eject() {
        let t = m(&[[0.0, 0.5, 0.5], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let cfg = EjectConfig { min_transitions: 1, ..Default::default() };
        let s = monitor_episode(&[0, 1, 0, 2, 1, 0, 2], 1, &t, &t, &cfg);
        assert!(!s.ejected);
        assert_eq!(s.loglik_plus, s.loglik_minus);
        assert_eq!(s.transition_log.len(), 6);
    }

    #[test]
    fn single_likely_transition_keeps_going() {
        let plus = m(&[[0.0, 0.9, 0.1], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]]);
        let minus = m(&[[0.0, 0.0, 1.0], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]]);
        let cfg = EjectConfig { min_transitions: 1, ..Default::default() };
        let s = monitor_episode(&[0, 1], 1, &plus, &minus, &cfg);
        assert!(!s.ejected);
        assert!((s.loglik_minus - 1e-3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn ejects_on_third_doubly_likely_transition() {
        // every transition twice as likely under the bad model
        let plus = m(&[[0.0, 0.4, 0.6], [0.6, 0.0, 0.4], [0.4, 0.6, 0.0]]);
        let minus = m(&[[0.0, 0.8, 0.2], [0.2, 0.0, 0.8], [0.8, 0.2, 0.0]]);
        let cfg = EjectConfig { min_transitions: 3, ..Default::default() };
        let s = monitor_episode(&[0, 1, 2, 0, 1], 1, &plus, &minus, &cfg);
        assert!(s.ejected);
        assert_eq!(s.ejected_at, Some(3));
        assert_eq!(s.transition_log, vec![(0, 1), (1, 2), (2, 0)]);
        let expected = 3.0 * 2.0f64.ln();
        let got = (s.loglik_minus - s.loglik_plus).abs();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn floor_and_renormalize() {
        let t = m(&[[0.0, 0.75, 0.25], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]]);
        assert_eq!(floored_probability(&t, 1, 0, 0.01), 0.01);
        assert!((floored_probability(&t, 1, 2, 0.01) - 0.99).abs() < 1e-15);
        assert_eq!(floored_probability(&t, 0, 1, 0.01), 0.75);
        assert_eq!(floored_probability(&t, 2, 0, 0.01), 0.5);
    }

    #[test]
    fn flicker_filter_is_causal() {
        let mut f = FlickerFilter::new(2);
        let out: Vec<Option<usize>> = [0, 0, 1, 0, 2, 2, 2].iter().map(|&c| f.push(c)).collect();
        assert_eq!(out, vec![None, Some(0), None, None, None, Some(2), Some(2)]);
    }

    #[test]
    fn nearest_prefers_lower_id_on_tie() {
        let p = ProjectionModel {
            means: Matrix::from_rows(&[[1.0, 0.0], [-1.0, 0.0], [5.0, 5.0]]).unwrap(),
        };
        assert_eq!(p.nearest(&[0.0, 0.0]).unwrap(), 0);
        assert_eq!(p.nearest(&[5.0, 5.0]).unwrap(), 2);
        assert!(p.nearest(&[0.0]).is_err());
        let back = ProjectionModel::parse(&p.to_text(), "mem").unwrap();
        assert_eq!(back, p);
    }
}
