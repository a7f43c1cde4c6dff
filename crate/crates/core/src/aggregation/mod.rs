//! Aggregation of embedded states into SAMDP states.
//!
//! Plain K-means plus three temporally aware variants: a windowed
//! (spatio-temporal) assignment step, an entropy-regularized assignment step,
//! and agglomerative clustering with an entropy-aware linkage.

mod agglomerative;
mod episodes;
mod kmeans;
mod transitions;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

pub use agglomerative::{agglomerative_entropy, agglomerative_entropy_from};
pub use episodes::EpisodeBounds;
pub use kmeans::{
    assign_nearest, assign_spatiotemporal, kmeans, kmeans_entropy_regularized,
    kmeans_spatiotemporal,
};
pub use transitions::{label_change_entropy, LabelTransitions};

use crate::embedding::EmbeddedDataset;
use crate::error::{Result, SamdpError};
use crate::matrix::{sq_dist, Matrix};
use crate::textio::{self, Header};

pub const CLUSTERS_TAG: &str = "samdp-clusters";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Kmeans,
    Spatiotemporal,
    EntropyRegularized,
    AgglomerativeEntropy,
}

impl FromStr for Algorithm {
    type Err = SamdpError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "kmeans" => Algorithm::Kmeans,
            "spatiotemporal" => Algorithm::Spatiotemporal,
            "entropy_regularized" => Algorithm::EntropyRegularized,
            "agglomerative_entropy" => Algorithm::AgglomerativeEntropy,
            other => {
                return Err(SamdpError::Config(format!(
                    "unknown clustering algorithm `{other}`"
                )))
            }
        })
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Kmeans => "kmeans",
            Algorithm::Spatiotemporal => "spatiotemporal",
            Algorithm::EntropyRegularized => "entropy_regularized",
            Algorithm::AgglomerativeEntropy => "agglomerative_entropy",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    pub algorithm: Algorithm,
    pub k: usize,
    /// Window half-width for the spatio-temporal assignment.
    pub w: usize,
    /// Weight of the entropy term in the regularized assignment.
    pub d_penalty: f64,
    /// Mixing weight between distance and entropy in the agglomerative linkage.
    pub lambda: f64,
    pub max_iters: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            algorithm: Algorithm::Spatiotemporal,
            k: 20,
            w: 3,
            d_penalty: 1.0,
            lambda: 0.5,
            max_iters: 100,
            restarts: 5,
            seed: 0,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(SamdpError::invalid(format!("K must be at least 2, got {}", self.k)));
        }
        if !(self.d_penalty >= 0.0) || !self.d_penalty.is_finite() {
            return Err(SamdpError::invalid("d_penalty must be a finite non-negative real"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(SamdpError::invalid("lambda must lie in [0, 1]"));
        }
        if self.max_iters == 0 || self.restarts == 0 {
            return Err(SamdpError::invalid("max_iters and restarts must be positive"));
        }
        Ok(())
    }
}

/// Result of one clustering run.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub centroids: Matrix,
    pub labels: Vec<usize>,
    /// Sum of squared distances from each point to its own centroid.
    pub inertia: f64,
    pub config: ClusterConfig,
    pub converged: bool,
    pub iterations_run: usize,
    /// Objective after each update step of the winning restart.
    pub objective_history: Vec<f64>,
}

impl ClusterModel {
    /// Builds a model from labels alone, with centroids at cluster means.
    pub fn from_labels(points: &Matrix, labels: Vec<usize>, config: ClusterConfig) -> Result<Self> {
        if labels.len() != points.rows() {
            return Err(SamdpError::invalid("labels and points differ in length"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= config.k) {
            return Err(SamdpError::invalid(format!("label {bad} out of range for K={}", config.k)));
        }
        let centroids = cluster_means(points, &labels, config.k);
        let inertia = own_inertia(points, &centroids, &labels);
        Ok(ClusterModel {
            centroids,
            labels,
            inertia,
            config,
            converged: true,
            iterations_run: 0,
            objective_history: Vec::new(),
        })
    }

    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    pub fn recompute_inertia(&self, points: &Matrix) -> f64 {
        own_inertia(points, &self.centroids, &self.labels)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "#{CLUSTERS_TAG} v1 K={} N={} algorithm={} w={}\n",
            self.k(),
            self.labels.len(),
            self.config.algorithm,
            self.config.w
        );
        for c in self.centroids.iter_rows() {
            textio::push_row(&mut out, c, false);
        }
        for l in &self.labels {
            out.push_str(&l.to_string());
            out.push('\n');
        }
        out
    }

    /// Parses a cluster file; `points` supplies the data needed to recompute inertia.
    pub fn parse(text: &str, origin: &str, points: Option<&Matrix>) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let header = Header::parse(origin, lines.next().map(|(_, l)| l), CLUSTERS_TAG)?;
        let k: usize = header.require(origin, "K")?;
        let n: usize = header.require(origin, "N")?;
        let algorithm = match header.get("algorithm") {
            Some(a) => a.parse()?,
            None => Algorithm::Kmeans,
        };
        let w = header.get("w").and_then(|v| v.parse().ok()).unwrap_or(0);
        let mut rows = Vec::with_capacity(k);
        for _ in 0..k {
            let (idx, line) = lines.next().ok_or_else(|| SamdpError::Parse {
                path: origin.to_string(),
                line: rows.len() + 2,
                message: "missing centroid line".into(),
            })?;
            let row = line
                .split_ascii_whitespace()
                .map(|t| textio::parse_f64(origin, idx + 1, t))
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        let mut labels = Vec::with_capacity(n);
        for (idx, line) in lines {
            let l = textio::parse_usize(origin, idx + 1, line.trim())?;
            if l >= k {
                return Err(SamdpError::Parse {
                    path: origin.to_string(),
                    line: idx + 1,
                    message: format!("label {l} out of range for K={k}"),
                });
            }
            labels.push(l);
        }
        if labels.len() != n {
            return Err(SamdpError::Parse {
                path: origin.to_string(),
                line: 1,
                message: format!("header declares N={n} but {} labels follow", labels.len()),
            });
        }
        let centroids = Matrix::from_rows(&rows)?;
        let inertia = points.map_or(f64::NAN, |p| own_inertia(p, &centroids, &labels));
        Ok(ClusterModel {
            centroids,
            labels,
            inertia,
            config: ClusterConfig {
                algorithm,
                k,
                w,
                ..ClusterConfig::default()
            },
            converged: true,
            iterations_run: 0,
            objective_history: Vec::new(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        textio::write_text(path, &self.to_text())
    }

    pub fn load(path: &Path, points: Option<&Matrix>) -> Result<Self> {
        ClusterModel::parse(&textio::read_text(path)?, &path.display().to_string(), points)
    }
}

/// Dispatches to the configured clustering algorithm.
pub fn cluster(
    points: &EmbeddedDataset,
    config: &ClusterConfig,
    episode_offsets: &[usize],
) -> Result<ClusterModel> {
    match config.algorithm {
        Algorithm::Kmeans => kmeans(points, config),
        Algorithm::Spatiotemporal => kmeans_spatiotemporal(points, config, episode_offsets),
        Algorithm::EntropyRegularized => kmeans_entropy_regularized(points, config, episode_offsets),
        Algorithm::AgglomerativeEntropy => {
            agglomerative_entropy(points, episode_offsets, config.k, config.lambda)
        }
    }
}

pub(crate) fn cluster_means(points: &Matrix, labels: &[usize], k: usize) -> Matrix {
    let dim = points.cols();
    let mut sums = Matrix::zeros(k, dim);
    let mut counts = vec![0usize; k];
    for (row, &l) in points.iter_rows().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums.row_mut(l).iter_mut().zip(row) {
            *s += v;
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        let row = sums.row_mut(c);
        if n == 0 {
            row.iter_mut().for_each(|v| *v = f64::NAN);
        } else {
            row.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    sums
}

pub(crate) fn own_inertia(points: &Matrix, centroids: &Matrix, labels: &[usize]) -> f64 {
    points
        .iter_rows()
        .zip(labels)
        .map(|(p, &l)| sq_dist(p, centroids.row(l)))
        .sum()
}
